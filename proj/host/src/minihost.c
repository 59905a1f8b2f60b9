#define _GNU_SOURCE
#include "minihost.h"

#include <dlfcn.h>
#include <errno.h>
#include <math.h>
#include <pthread.h>
#include <setjmp.h>
#include <stdarg.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

struct binding {
  mh_cell symbol;
  mh_cell value;
};

struct mh_cell_s {
  uint8_t kind;
  uint8_t mark;
  uint8_t poison;
  uint8_t permanent;
  uint8_t has_dim;
  int32_t dim[2];
  int64_t length;
  mh_cell names;
  mh_cell next; /* heap list */
  union {
    double* reals;
    int32_t* ints;
    char** strings;
    mh_cell* elems;
    char* symbol_name;
    struct {
      struct binding* items;
      int64_t count;
      int64_t capacity;
      mh_cell parent;
    } env;
    struct {
      char* name;
      mh_fn fn;
      int32_t arity;
    } callable;
  } u;
};

struct mh_routine_s {
  char* name;
  mh_fn fn;
  int32_t arity;
  int32_t valid;
  mh_library library;
  struct mh_routine_s* next_in_bucket;
};

struct mh_library_s {
  void* handle;
  char* path;
};

struct jump_target {
  sigjmp_buf buf;
  struct jump_target* prev;
  int64_t raise_depth;
};

#define ROUTINE_BUCKETS 1024
#define SYMBOL_BUCKETS 1024
#define QUARANTINE_CAPACITY 65536
#define ERROR_CAPACITY 4096

struct symbol_entry {
  mh_cell symbol;
  struct symbol_entry* next;
};

static struct {
  int initialized;
  pthread_t owner;

  mh_cell heap;
  int64_t live;
  int64_t allocs_since_gc;
  int64_t gc_threshold;
  int64_t cell_limit;
  int64_t gc_count;
  int torture;

  mh_cell* quarantine;
  int64_t quarantine_head;
  int64_t quarantine_size;

  mh_cell* stack;
  int64_t depth;
  int64_t stack_capacity;

  mh_cell null_cell;
  mh_cell global_env;
  struct symbol_entry* symbols[SYMBOL_BUCKETS];
  struct mh_routine_s* routines[ROUTINE_BUCKETS];
  mh_library loading;

  struct jump_target* top;
  char error[ERROR_CAPACITY];
  int64_t last_imbalance;

  uint64_t rng_state;
  int32_t rng_active;

  mh_console_fn console;
  void* console_user;
  int32_t interrupt;
} H;

/* ---------------------------------------------------------------- checks */

static void fatal(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  fputs("minihost: fatal: ", stderr);
  vfprintf(stderr, fmt, ap);
  fputc('\n', stderr);
  va_end(ap);
  fflush(stderr);
  abort();
}

static void check_thread(void) {
  if (!H.initialized) fatal("runtime used before mh_init");
  if (!pthread_equal(H.owner, pthread_self())) fatal("runtime entered from a foreign thread");
}

static mh_cell check_cell(mh_cell c, const char* where) {
  if (c == NULL) fatal("%s: null cell reference", where);
  if (c->poison) fatal("%s: access to collected cell %p", where, (void*)c);
  return c;
}

#define CHECK(c) check_cell((c), __func__)

static void raisef(const char* fmt, ...) __attribute__((noreturn, format(printf, 1, 2)));
static void raisef(const char* fmt, ...) {
  char buf[ERROR_CAPACITY];
  va_list ap;
  va_start(ap, fmt);
  vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  mh_error(buf);
}

static const char* kind_name(int32_t kind) {
  switch (kind) {
    case MH_NULL: return "null";
    case MH_REAL: return "real";
    case MH_INTEGER: return "integer";
    case MH_LOGICAL: return "logical";
    case MH_STRING: return "string";
    case MH_SYMBOL: return "symbol";
    case MH_LIST: return "list";
    case MH_ENVIRONMENT: return "environment";
    case MH_CALLABLE: return "callable";
    default: return "unknown";
  }
}

static int is_vector_kind(int32_t kind) {
  return kind == MH_REAL || kind == MH_INTEGER || kind == MH_LOGICAL || kind == MH_STRING ||
         kind == MH_LIST;
}

static int is_atomic_kind(int32_t kind) {
  return kind == MH_REAL || kind == MH_INTEGER || kind == MH_LOGICAL || kind == MH_STRING;
}

static char* dup_text(const char* s) {
  size_t n = strlen(s) + 1;
  char* out = malloc(n);
  if (!out) fatal("out of memory");
  memcpy(out, s, n);
  return out;
}

static uint64_t hash_text(const char* s) {
  uint64_t h = 1469598103934665603ull;
  for (; *s; ++s) {
    h ^= (unsigned char)*s;
    h *= 1099511628211ull;
  }
  return h;
}

/* ------------------------------------------------------------- collector */

static void free_payload(mh_cell c) {
  switch (c->kind) {
    case MH_REAL: free(c->u.reals); break;
    case MH_INTEGER:
    case MH_LOGICAL: free(c->u.ints); break;
    case MH_STRING:
      for (int64_t i = 0; i < c->length; ++i) free(c->u.strings[i]);
      free(c->u.strings);
      break;
    case MH_LIST: free(c->u.elems); break;
    case MH_SYMBOL: free(c->u.symbol_name); break;
    case MH_ENVIRONMENT: free(c->u.env.items); break;
    case MH_CALLABLE: free(c->u.callable.name); break;
    default: break;
  }
  memset(&c->u, 0, sizeof c->u);
}

static void quarantine(mh_cell c) {
  if (H.quarantine_size == QUARANTINE_CAPACITY) {
    free(H.quarantine[H.quarantine_head]);
    H.quarantine[H.quarantine_head] = c;
    H.quarantine_head = (H.quarantine_head + 1) % QUARANTINE_CAPACITY;
    return;
  }
  H.quarantine[(H.quarantine_head + H.quarantine_size) % QUARANTINE_CAPACITY] = c;
  H.quarantine_size++;
}

struct mark_stack {
  mh_cell* items;
  int64_t size;
  int64_t capacity;
};

static void mark_push(struct mark_stack* s, mh_cell c) {
  if (c == NULL || c->mark) return;
  if (c->poison) fatal("collector reached collected cell %p", (void*)c);
  c->mark = 1;
  if (s->size == s->capacity) {
    s->capacity = s->capacity ? s->capacity * 2 : 256;
    s->items = realloc(s->items, (size_t)s->capacity * sizeof(mh_cell));
    if (!s->items) fatal("out of memory while marking");
  }
  s->items[s->size++] = c;
}

static void mark_from_roots(void) {
  struct mark_stack s = {0};
  mark_push(&s, H.null_cell);
  mark_push(&s, H.global_env);
  for (int i = 0; i < SYMBOL_BUCKETS; ++i)
    for (struct symbol_entry* e = H.symbols[i]; e; e = e->next) mark_push(&s, e->symbol);
  for (int64_t i = 0; i < H.depth; ++i) mark_push(&s, H.stack[i]);
  while (s.size > 0) {
    mh_cell c = s.items[--s.size];
    mark_push(&s, c->names);
    if (c->kind == MH_LIST) {
      for (int64_t i = 0; i < c->length; ++i) mark_push(&s, c->u.elems[i]);
    } else if (c->kind == MH_ENVIRONMENT) {
      mark_push(&s, c->u.env.parent);
      for (int64_t i = 0; i < c->u.env.count; ++i) {
        mark_push(&s, c->u.env.items[i].symbol);
        mark_push(&s, c->u.env.items[i].value);
      }
    }
  }
  free(s.items);
}

void mh_gc(void) {
  check_thread();
  mark_from_roots();
  mh_cell* link = &H.heap;
  while (*link) {
    mh_cell c = *link;
    if (c->mark || c->permanent) {
      c->mark = 0;
      link = &c->next;
      continue;
    }
    *link = c->next;
    free_payload(c);
    c->poison = 1;
    c->next = NULL;
    c->names = NULL;
    H.live--;
    quarantine(c);
  }
  H.allocs_since_gc = 0;
  H.gc_count++;
}

static mh_cell new_cell(int32_t kind) {
  if (H.torture || H.allocs_since_gc >= H.gc_threshold) mh_gc();
  if (H.live >= H.cell_limit) {
    mh_gc();
    if (H.live >= H.cell_limit) raisef("cannot allocate %s cell: cell limit reached", kind_name(kind));
  }
  mh_cell c = calloc(1, sizeof *c);
  if (!c) raisef("cannot allocate %s cell", kind_name(kind));
  c->kind = (uint8_t)kind;
  c->next = H.heap;
  H.heap = c;
  H.live++;
  H.allocs_since_gc++;
  return c;
}

static mh_cell new_permanent(int32_t kind) {
  mh_cell c = calloc(1, sizeof *c);
  if (!c) fatal("out of memory");
  c->kind = (uint8_t)kind;
  c->permanent = 1;
  /* Permanent cells stay on the heap list so the sweep clears their marks. */
  c->next = H.heap;
  H.heap = c;
  return c;
}

/* -------------------------------------------------------------- lifecycle */

void mh_init(void) {
  if (H.initialized) return;
  H.initialized = 1;
  H.owner = pthread_self();
  H.gc_threshold = 100000;
  H.cell_limit = INT64_MAX;
  const char* torture = getenv("HOSTBRIDGE_TORTURE");
  H.torture = torture && strcmp(torture, "1") == 0;
  H.quarantine = calloc(QUARANTINE_CAPACITY, sizeof(mh_cell));
  H.stack_capacity = 1024;
  H.stack = malloc((size_t)H.stack_capacity * sizeof(mh_cell));
  if (!H.quarantine || !H.stack) fatal("out of memory during init");
  H.null_cell = new_permanent(MH_NULL);
  H.global_env = new_permanent(MH_ENVIRONMENT);
  H.global_env->u.env.parent = NULL;
  H.error[0] = '\0';
  mh_rng_set_seed(0);
}

void mh_set_torture(int32_t enabled) {
  check_thread();
  H.torture = enabled != 0;
}

int32_t mh_torture_enabled(void) { return H.torture; }

void mh_set_gc_threshold(int64_t allocations) {
  check_thread();
  H.gc_threshold = allocations < 1 ? 1 : allocations;
}

void mh_set_cell_limit(int64_t cells) {
  check_thread();
  H.cell_limit = cells < 0 ? INT64_MAX : cells;
}

int64_t mh_live_cells(void) { return H.live; }
int64_t mh_gc_count(void) { return H.gc_count; }

/* ------------------------------------------------------------- inspection */

mh_cell mh_null(void) { return H.null_cell; }
int32_t mh_kind_of(mh_cell cell) { return CHECK(cell)->kind; }

int64_t mh_length(mh_cell cell) {
  CHECK(cell);
  if (is_vector_kind(cell->kind)) return cell->length;
  if (cell->kind == MH_ENVIRONMENT) return cell->u.env.count;
  return cell->kind == MH_NULL ? 0 : 1;
}

int32_t mh_is_real(mh_cell cell) { return CHECK(cell)->kind == MH_REAL; }
int32_t mh_is_integer(mh_cell cell) { return CHECK(cell)->kind == MH_INTEGER; }
int32_t mh_is_logical(mh_cell cell) { return CHECK(cell)->kind == MH_LOGICAL; }
int32_t mh_is_null(mh_cell cell) { return CHECK(cell)->kind == MH_NULL; }

double mh_na_real(void) {
  uint64_t bits = 0x7FF8000000000000ull | MH_NA_REAL_PAYLOAD;
  double x;
  memcpy(&x, &bits, sizeof x);
  return x;
}

int32_t mh_is_na_real(double x) {
  if (!isnan(x)) return 0;
  uint64_t bits;
  memcpy(&bits, &x, sizeof bits);
  return (uint32_t)(bits & 0xFFFFFFFFu) == MH_NA_REAL_PAYLOAD;
}

/* ------------------------------------------------------------- allocation */

mh_cell mh_alloc_vector(int32_t kind, int64_t length) {
  check_thread();
  if (!is_vector_kind(kind)) raisef("cannot allocate a vector of kind %s", kind_name(kind));
  if (length < 0) raisef("negative length vectors are not allowed");
  size_t elem = kind == MH_REAL ? sizeof(double)
                : (kind == MH_INTEGER || kind == MH_LOGICAL) ? sizeof(int32_t)
                : kind == MH_STRING ? sizeof(char*)
                                    : sizeof(mh_cell);
  if ((uint64_t)length > (uint64_t)(SIZE_MAX / 2) / elem)
    raisef("cannot allocate vector of length %lld", (long long)length);
  mh_cell c = new_cell(kind);
  void* payload = calloc(length > 0 ? (size_t)length : 1, elem);
  if (!payload) {
    /* The header stays on the heap as garbage for the next collection. */
    c->kind = MH_NULL;
    raisef("cannot allocate vector of length %lld", (long long)length);
  }
  c->length = length;
  switch (kind) {
    case MH_REAL: c->u.reals = payload; break;
    case MH_INTEGER:
    case MH_LOGICAL: c->u.ints = payload; break;
    case MH_STRING: c->u.strings = payload; break;
    default:
      c->u.elems = payload;
      for (int64_t i = 0; i < length; ++i) c->u.elems[i] = H.null_cell;
      break;
  }
  return c;
}

/* ---------------------------------------------------------- protect stack */

mh_cell mh_protect(mh_cell cell) {
  check_thread();
  CHECK(cell);
  if (H.depth == H.stack_capacity) {
    H.stack_capacity *= 2;
    H.stack = realloc(H.stack, (size_t)H.stack_capacity * sizeof(mh_cell));
    if (!H.stack) fatal("out of memory growing the protect stack");
  }
  H.stack[H.depth++] = cell;
  return cell;
}

void mh_unprotect(int32_t n) {
  check_thread();
  if (n < 0 || n > H.depth)
    fatal("protect stack underflow: unprotect(%d) with depth %lld", n, (long long)H.depth);
  H.depth -= n;
}

int64_t mh_protect_depth(void) { return H.depth; }

/* --------------------------------------------------------------- coercion */

/* Element coercion table:
 *   integer/logical -> real : NA -> NA_real, otherwise exact widening
 *   real -> integer         : NaN/NA or out of range -> NA, otherwise truncation toward zero
 *   real -> logical         : NaN/NA -> NA, 0 -> 0, otherwise 1
 *   integer -> logical      : NA -> NA, 0 -> 0, otherwise 1
 *   logical -> integer      : identity
 *   string -> real          : full strtod parse, "NA" or failure -> NA_real
 *   string -> integer/logical: via real; "TRUE"/"FALSE" also accepted for logical
 *   any -> string           : "NA" for NA, %.15g for reals, decimal for integers
 */
static double int_to_real(int32_t v) { return v == MH_NA_INTEGER ? mh_na_real() : (double)v; }

static int32_t real_to_int(double v) {
  if (isnan(v) || v >= 2147483648.0 || v <= -2147483649.0) return MH_NA_INTEGER;
  double t = trunc(v);
  if (t <= (double)MH_NA_INTEGER) return MH_NA_INTEGER;
  return (int32_t)t;
}

static int32_t real_to_logical(double v) { return isnan(v) ? MH_NA_INTEGER : v != 0.0; }
static int32_t int_to_logical(int32_t v) { return v == MH_NA_INTEGER ? MH_NA_INTEGER : v != 0; }

static double string_to_real(const char* s) {
  if (s == NULL || *s == '\0' || strcmp(s, "NA") == 0) return mh_na_real();
  char* end = NULL;
  errno = 0;
  double v = strtod(s, &end);
  while (end && (*end == ' ' || *end == '\t')) ++end;
  if (end == s || (end && *end != '\0')) return mh_na_real();
  return v;
}

static int32_t string_to_logical(const char* s) {
  if (s && (strcmp(s, "TRUE") == 0 || strcmp(s, "true") == 0 || strcmp(s, "T") == 0)) return 1;
  if (s && (strcmp(s, "FALSE") == 0 || strcmp(s, "false") == 0 || strcmp(s, "F") == 0)) return 0;
  return real_to_logical(string_to_real(s));
}

static double element_as_real(mh_cell c, int64_t i) {
  switch (c->kind) {
    case MH_REAL: return c->u.reals[i];
    case MH_INTEGER:
    case MH_LOGICAL: return int_to_real(c->u.ints[i]);
    case MH_STRING: return string_to_real(c->u.strings[i]);
    default: return mh_na_real();
  }
}

static int32_t element_as_integer(mh_cell c, int64_t i) {
  switch (c->kind) {
    case MH_REAL: return real_to_int(c->u.reals[i]);
    case MH_INTEGER:
    case MH_LOGICAL: return c->u.ints[i];
    case MH_STRING: return real_to_int(string_to_real(c->u.strings[i]));
    default: return MH_NA_INTEGER;
  }
}

static int32_t element_as_logical(mh_cell c, int64_t i) {
  switch (c->kind) {
    case MH_REAL: return real_to_logical(c->u.reals[i]);
    case MH_INTEGER: return int_to_logical(c->u.ints[i]);
    case MH_LOGICAL: return c->u.ints[i];
    case MH_STRING: return string_to_logical(c->u.strings[i]);
    default: return MH_NA_INTEGER;
  }
}

static char* element_as_string(mh_cell c, int64_t i) {
  char buf[64];
  switch (c->kind) {
    case MH_REAL:
      if (isnan(c->u.reals[i]) && mh_is_na_real(c->u.reals[i])) return dup_text("NA");
      snprintf(buf, sizeof buf, "%.15g", c->u.reals[i]);
      return dup_text(buf);
    case MH_INTEGER:
      if (c->u.ints[i] == MH_NA_INTEGER) return dup_text("NA");
      snprintf(buf, sizeof buf, "%d", c->u.ints[i]);
      return dup_text(buf);
    case MH_LOGICAL:
      if (c->u.ints[i] == MH_NA_INTEGER) return dup_text("NA");
      return dup_text(c->u.ints[i] ? "TRUE" : "FALSE");
    case MH_STRING: return dup_text(c->u.strings[i] ? c->u.strings[i] : "");
    default: return dup_text("NA");
  }
}

static void require_scalar_source(mh_cell cell, const char* what) {
  if (cell->kind == MH_NULL || is_atomic_kind(cell->kind)) return;
  raisef("cannot coerce %s to %s", kind_name(cell->kind), what);
}

double mh_as_real(mh_cell cell) {
  check_thread();
  CHECK(cell);
  require_scalar_source(cell, "real");
  if (cell->kind == MH_NULL || cell->length == 0) return mh_na_real();
  return element_as_real(cell, 0);
}

int32_t mh_as_integer(mh_cell cell) {
  check_thread();
  CHECK(cell);
  require_scalar_source(cell, "integer");
  if (cell->kind == MH_NULL || cell->length == 0) return MH_NA_INTEGER;
  return element_as_integer(cell, 0);
}

int32_t mh_as_logical(mh_cell cell) {
  check_thread();
  CHECK(cell);
  require_scalar_source(cell, "logical");
  if (cell->kind == MH_NULL || cell->length == 0) return MH_NA_INTEGER;
  return element_as_logical(cell, 0);
}

void* mh_raw_view(mh_cell cell, int32_t kind) {
  CHECK(cell);
  if (cell->kind != kind)
    raisef("raw view of kind %s requested for a %s cell", kind_name(kind), kind_name(cell->kind));
  switch (kind) {
    case MH_REAL: return cell->u.reals;
    case MH_INTEGER:
    case MH_LOGICAL: return cell->u.ints;
    case MH_STRING: return cell->u.strings;
    case MH_LIST: return cell->u.elems;
    default: raisef("no raw view for kind %s", kind_name(kind));
  }
}

mh_cell mh_coerce(mh_cell cell, int32_t kind) {
  check_thread();
  CHECK(cell);
  if (!is_atomic_kind(cell->kind)) raisef("cannot coerce a %s cell", kind_name(cell->kind));
  if (!is_atomic_kind(kind)) raisef("cannot coerce to kind %s", kind_name(kind));
  if (cell->kind == kind) return cell;
  mh_protect(cell);
  mh_cell out = mh_alloc_vector(kind, cell->length);
  for (int64_t i = 0; i < cell->length; ++i) {
    switch (kind) {
      case MH_REAL: out->u.reals[i] = element_as_real(cell, i); break;
      case MH_INTEGER: out->u.ints[i] = element_as_integer(cell, i); break;
      case MH_LOGICAL: out->u.ints[i] = element_as_logical(cell, i); break;
      default: out->u.strings[i] = element_as_string(cell, i); break;
    }
  }
  out->names = cell->names;
  out->has_dim = cell->has_dim;
  out->dim[0] = cell->dim[0];
  out->dim[1] = cell->dim[1];
  mh_unprotect(1);
  return out;
}

/* ------------------------------------------------- strings, lists, attrs */

static void check_index(mh_cell cell, int32_t kind, int64_t index) {
  if (cell->kind != kind) raisef("expected a %s cell, got %s", kind_name(kind), kind_name(cell->kind));
  if (index < 0 || index >= cell->length)
    raisef("index %lld out of range for length %lld", (long long)index, (long long)cell->length);
}

const char* mh_string_get(mh_cell cell, int64_t index) {
  CHECK(cell);
  check_index(cell, MH_STRING, index);
  return cell->u.strings[index] ? cell->u.strings[index] : "";
}

void mh_string_set(mh_cell cell, int64_t index, const char* text) {
  CHECK(cell);
  check_index(cell, MH_STRING, index);
  char* copy = dup_text(text ? text : "");
  free(cell->u.strings[index]);
  cell->u.strings[index] = copy;
}

mh_cell mh_list_get(mh_cell cell, int64_t index) {
  CHECK(cell);
  check_index(cell, MH_LIST, index);
  return cell->u.elems[index];
}

void mh_list_set(mh_cell cell, int64_t index, mh_cell value) {
  CHECK(cell);
  CHECK(value);
  check_index(cell, MH_LIST, index);
  cell->u.elems[index] = value;
}

mh_cell mh_get_names(mh_cell cell) {
  CHECK(cell);
  return cell->names ? cell->names : H.null_cell;
}

void mh_set_names(mh_cell cell, mh_cell names) {
  CHECK(cell);
  CHECK(names);
  if (!is_vector_kind(cell->kind)) raisef("names are only supported on vectors and lists");
  if (names->kind == MH_NULL) {
    cell->names = NULL;
    return;
  }
  if (names->kind != MH_STRING) raisef("names must be a string vector");
  if (names->length != cell->length)
    raisef("names length %lld does not match object length %lld", (long long)names->length,
           (long long)cell->length);
  cell->names = names;
}

void mh_set_dim(mh_cell cell, int32_t nrow, int32_t ncol) {
  CHECK(cell);
  if (!is_atomic_kind(cell->kind)) raisef("dimensions are only supported on atomic vectors");
  if (nrow < 0 || ncol < 0 || (int64_t)nrow * ncol != cell->length)
    raisef("dims [%d x %d] do not match the length of object [%lld]", nrow, ncol,
           (long long)cell->length);
  cell->has_dim = 1;
  cell->dim[0] = nrow;
  cell->dim[1] = ncol;
}

int32_t mh_get_dim(mh_cell cell, int32_t* nrow, int32_t* ncol) {
  CHECK(cell);
  if (!cell->has_dim) return 0;
  if (nrow) *nrow = cell->dim[0];
  if (ncol) *ncol = cell->dim[1];
  return 1;
}

/* ---------------------------------------------------- symbols, env, eval */

mh_cell mh_install(const char* name) {
  check_thread();
  if (name == NULL || *name == '\0') raisef("attempt to use zero-length variable name");
  uint64_t h = hash_text(name) % SYMBOL_BUCKETS;
  for (struct symbol_entry* e = H.symbols[h]; e; e = e->next)
    if (strcmp(e->symbol->u.symbol_name, name) == 0) return e->symbol;
  mh_cell sym = new_permanent(MH_SYMBOL);
  sym->u.symbol_name = dup_text(name);
  struct symbol_entry* e = malloc(sizeof *e);
  if (!e) fatal("out of memory");
  e->symbol = sym;
  e->next = H.symbols[h];
  H.symbols[h] = e;
  return sym;
}

const char* mh_symbol_name(mh_cell symbol) {
  CHECK(symbol);
  if (symbol->kind != MH_SYMBOL) raisef("expected a symbol, got %s", kind_name(symbol->kind));
  return symbol->u.symbol_name;
}

mh_cell mh_global_env(void) { return H.global_env; }

mh_cell mh_new_env(mh_cell parent) {
  check_thread();
  CHECK(parent);
  if (parent->kind != MH_ENVIRONMENT && parent->kind != MH_NULL)
    raisef("parent must be an environment");
  mh_protect(parent);
  mh_cell env = new_cell(MH_ENVIRONMENT);
  env->u.env.parent = parent->kind == MH_NULL ? NULL : parent;
  mh_unprotect(1);
  return env;
}

void mh_define_var(mh_cell symbol, mh_cell value, mh_cell env) {
  check_thread();
  CHECK(symbol);
  CHECK(value);
  CHECK(env);
  if (symbol->kind != MH_SYMBOL) raisef("invalid first argument: expected a symbol");
  if (env->kind != MH_ENVIRONMENT) raisef("invalid environment argument");
  for (int64_t i = 0; i < env->u.env.count; ++i) {
    if (env->u.env.items[i].symbol == symbol) {
      env->u.env.items[i].value = value;
      return;
    }
  }
  if (env->u.env.count == env->u.env.capacity) {
    int64_t cap = env->u.env.capacity ? env->u.env.capacity * 2 : 8;
    struct binding* items = realloc(env->u.env.items, (size_t)cap * sizeof *items);
    if (!items) raisef("cannot grow environment");
    env->u.env.items = items;
    env->u.env.capacity = cap;
  }
  env->u.env.items[env->u.env.count++] = (struct binding){symbol, value};
}

mh_cell mh_find_var(mh_cell symbol, mh_cell env) {
  CHECK(symbol);
  CHECK(env);
  if (symbol->kind != MH_SYMBOL) raisef("invalid first argument: expected a symbol");
  if (env->kind != MH_ENVIRONMENT) raisef("invalid environment argument");
  for (mh_cell e = env; e; e = e->u.env.parent)
    for (int64_t i = 0; i < e->u.env.count; ++i)
      if (e->u.env.items[i].symbol == symbol) return e->u.env.items[i].value;
  return NULL;
}

mh_cell mh_new_callable(const char* name, mh_fn fn, int32_t arity) {
  check_thread();
  if (fn == NULL) raisef("callable requires a function pointer");
  if (arity < 0 || arity > MH_MAX_ARITY) raisef("unsupported arity %d", arity);
  mh_cell c = new_cell(MH_CALLABLE);
  c->u.callable.name = dup_text(name ? name : "<anonymous>");
  c->u.callable.fn = fn;
  c->u.callable.arity = arity;
  return c;
}

typedef mh_cell (*fn0)(void);
typedef mh_cell (*fn1)(mh_cell);
typedef mh_cell (*fn2)(mh_cell, mh_cell);
typedef mh_cell (*fn3)(mh_cell, mh_cell, mh_cell);
typedef mh_cell (*fn4)(mh_cell, mh_cell, mh_cell, mh_cell);
typedef mh_cell (*fn5)(mh_cell, mh_cell, mh_cell, mh_cell, mh_cell);
typedef mh_cell (*fn6)(mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell);
typedef mh_cell (*fn7)(mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell);
typedef mh_cell (*fn8)(mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell);
typedef mh_cell (*fn9)(mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell,
                       mh_cell);
typedef mh_cell (*fn10)(mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell,
                        mh_cell, mh_cell);
typedef mh_cell (*fn11)(mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell,
                        mh_cell, mh_cell, mh_cell);
typedef mh_cell (*fn12)(mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell, mh_cell,
                        mh_cell, mh_cell, mh_cell, mh_cell);

static mh_cell invoke(mh_fn fn, int32_t n, const mh_cell* a) {
  switch (n) {
    case 0: return ((fn0)fn)();
    case 1: return ((fn1)fn)(a[0]);
    case 2: return ((fn2)fn)(a[0], a[1]);
    case 3: return ((fn3)fn)(a[0], a[1], a[2]);
    case 4: return ((fn4)fn)(a[0], a[1], a[2], a[3]);
    case 5: return ((fn5)fn)(a[0], a[1], a[2], a[3], a[4]);
    case 6: return ((fn6)fn)(a[0], a[1], a[2], a[3], a[4], a[5]);
    case 7: return ((fn7)fn)(a[0], a[1], a[2], a[3], a[4], a[5], a[6]);
    case 8: return ((fn8)fn)(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]);
    case 9: return ((fn9)fn)(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]);
    case 10: return ((fn10)fn)(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9]);
    case 11: return ((fn11)fn)(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9], a[10]);
    case 12:
      return ((fn12)fn)(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9], a[10], a[11]);
    default: raisef("unsupported arity %d", n);
  }
}

static mh_cell checked_result(mh_cell result) {
  if (result == NULL) raisef("foreign function returned a null reference");
  return CHECK(result);
}

static mh_cell eval_form(mh_cell expr, mh_cell env) {
  if (expr->kind == MH_CALLABLE) {
    if (expr->u.callable.arity != 0)
      raisef("callable '%s' expects %d arguments", expr->u.callable.name, expr->u.callable.arity);
    return checked_result(invoke(expr->u.callable.fn, 0, NULL));
  }
  if (expr->kind != MH_LIST || expr->length == 0 || CHECK(expr->u.elems[0])->kind != MH_CALLABLE)
    raisef("attempt to apply non-function");
  mh_cell head = expr->u.elems[0];
  int32_t n = (int32_t)(expr->length - 1);
  if (n != head->u.callable.arity)
    raisef("callable '%s' expects %d arguments, got %d", head->u.callable.name,
           head->u.callable.arity, n);
  mh_cell args[MH_MAX_ARITY];
  for (int32_t i = 0; i < n; ++i) {
    mh_cell sym = CHECK(expr->u.elems[i + 1]);
    if (sym->kind != MH_SYMBOL) raisef("call form arguments must be symbols");
    mh_cell value = mh_find_var(sym, env);
    if (value == NULL) raisef("object '%s' not found", sym->u.symbol_name);
    args[i] = mh_protect(value);
  }
  return checked_result(invoke(head->u.callable.fn, n, args));
}

/* ----------------------------------------------------------------- errors */

void mh_error(const char* message) {
  if (message != H.error) snprintf(H.error, sizeof H.error, "%s", message ? message : "");
  if (H.top == NULL) fatal("error outside of any boundary: %s", H.error);
  H.top->raise_depth = H.depth;
  siglongjmp(H.top->buf, 1);
}

int32_t mh_try(mh_try_fn fn, void* data, const char** error) {
  check_thread();
  struct jump_target target;
  volatile int64_t base = H.depth;
  target.prev = H.top;
  H.top = &target;
  if (sigsetjmp(target.buf, 0) == 0) {
    fn(data);
    H.top = target.prev;
    if (error) *error = "";
    return 1;
  }
  H.top = target.prev;
  H.depth = base;
  if (error) *error = H.error;
  return 0;
}

mh_cell mh_try_eval(mh_cell expr, mh_cell env, int32_t* ok) {
  check_thread();
  CHECK(expr);
  CHECK(env);
  struct jump_target target;
  volatile int64_t base = H.depth;
  mh_cell volatile result = H.null_cell;
  volatile int32_t success = 0;
  mh_protect(expr);
  mh_protect(env);
  target.prev = H.top;
  H.top = &target;
  if (sigsetjmp(target.buf, 0) == 0) {
    if (env->kind != MH_ENVIRONMENT) raisef("invalid environment argument");
    result = eval_form(expr, env);
    success = 1;
  }
  H.top = target.prev;
  H.depth = base;
  if (ok) *ok = success;
  return success ? result : H.null_cell;
}

/* -------------------------------------------------------------------- RNG */

static uint64_t splitmix64(uint64_t* x) {
  uint64_t z = (*x += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

static uint64_t rng_next(void) {
  uint64_t x = H.rng_state;
  x ^= x >> 12;
  x ^= x << 25;
  x ^= x >> 27;
  H.rng_state = x;
  return x * 0x2545F4914F6CDD1Dull;
}

static void require_rng_window(void) {
  if (H.rng_active <= 0) raisef("random number generator used outside of a get/put window");
}

void mh_rng_set_seed(uint64_t seed) {
  uint64_t s = seed;
  H.rng_state = splitmix64(&s);
  if (H.rng_state == 0) H.rng_state = 0x9E3779B97F4A7C15ull;
}

void mh_rng_get(void) {
  check_thread();
  H.rng_active++;
}

void mh_rng_put(void) {
  check_thread();
  if (H.rng_active <= 0) raisef("PutRNGstate without a matching GetRNGstate");
  H.rng_active--;
}

/* Uniform on the open interval (0, 1). */
static double open_unit(void) { return ((double)(rng_next() >> 11) + 0.5) * 0x1.0p-53; }

double mh_rng_unif(void) {
  require_rng_window();
  return open_unit();
}

double mh_rng_norm(double mean, double sd) {
  require_rng_window();
  double u1 = open_unit();
  double u2 = open_unit();
  double z = sqrt(-2.0 * log(u1)) * cos(6.283185307179586476925286766559 * u2);
  return mean + sd * z;
}

void mh_rng_unif_bytes(uint8_t* out, int64_t n) {
  require_rng_window();
  if (n < 0) raisef("negative byte count");
  for (int64_t i = 0; i < n; i += 8) {
    uint64_t word = rng_next();
    for (int64_t j = 0; j < 8 && i + j < n; ++j) out[i + j] = (uint8_t)(word >> (8 * j));
  }
}

/* ---------------------------------------------------- console, interrupts */

static void stdout_sink(const char* text, void* user) {
  (void)user;
  fputs(text, stdout);
  fflush(stdout);
}

void mh_set_console(mh_console_fn sink, void* user) {
  H.console = sink;
  H.console_user = user;
}

void mh_print(const char* text) {
  check_thread();
  if (H.interrupt) {
    H.interrupt = 0;
    raisef("interrupted");
  }
  (H.console ? H.console : stdout_sink)(text ? text : "", H.console_user);
}

int32_t mh_interrupt_pending(void) { return H.interrupt; }
void mh_set_interrupt(int32_t pending) { H.interrupt = pending != 0; }

/* ----------------------------------------------------------- registration */

static struct mh_routine_s* find_routine(const char* name) {
  for (struct mh_routine_s* r = H.routines[hash_text(name) % ROUTINE_BUCKETS]; r;
       r = r->next_in_bucket)
    if (strcmp(r->name, name) == 0) return r;
  return NULL;
}

void mh_register(const char* name, mh_fn fn, int32_t arity) {
  check_thread();
  if (name == NULL || *name == '\0') raisef("cannot register an unnamed function");
  if (fn == NULL) raisef("cannot register '%s' without a function pointer", name);
  if (arity < 0 || arity > MH_MAX_ARITY) raisef("unsupported arity %d for '%s'", arity, name);
  struct mh_routine_s* r = find_routine(name);
  if (r == NULL) {
    r = calloc(1, sizeof *r);
    if (!r) fatal("out of memory");
    r->name = dup_text(name);
    uint64_t h = hash_text(name) % ROUTINE_BUCKETS;
    r->next_in_bucket = H.routines[h];
    H.routines[h] = r;
  }
  r->fn = fn;
  r->arity = arity;
  r->valid = 1;
  r->library = H.loading;
}

mh_routine mh_lookup(const char* name) {
  struct mh_routine_s* r = name ? find_routine(name) : NULL;
  return r && r->valid ? r : NULL;
}

static void set_error(const char** error, const char* message) {
  snprintf(H.error, sizeof H.error, "%s", message);
  if (error) *error = H.error;
}

static mh_cell boundary_invoke(mh_fn fn, const mh_cell* args, int32_t nargs, const char** error) {
  check_thread();
  for (int32_t i = 0; i < nargs; ++i) CHECK(args[i]);
  struct jump_target target;
  volatile int64_t base = H.depth;
  mh_cell volatile result = H.null_cell;
  for (int32_t i = 0; i < nargs; ++i) mh_protect(args[i]);
  int64_t entry_depth = H.depth;
  target.prev = H.top;
  H.top = &target;
  if (sigsetjmp(target.buf, 0) == 0) {
    mh_cell out = invoke(fn, nargs, args);
    H.last_imbalance = H.depth - entry_depth;
    result = checked_result(out);
    H.top = target.prev;
    H.depth = base;
    if (error) *error = "";
    return result;
  }
  H.top = target.prev;
  H.last_imbalance = target.raise_depth - entry_depth;
  H.depth = base;
  if (error) *error = H.error;
  return H.null_cell;
}

mh_cell mh_call_routine(mh_routine routine, const mh_cell* args, int32_t nargs,
                        const char** error) {
  if (routine == NULL || !routine->valid) {
    set_error(error, "unknown function");
    return H.null_cell;
  }
  if (nargs != routine->arity) {
    set_error(error, "arity mismatch");
    return H.null_cell;
  }
  return boundary_invoke(routine->fn, args, nargs, error);
}

mh_cell mh_call(const char* name, const mh_cell* args, int32_t nargs, const char** error) {
  return mh_call_routine(mh_lookup(name), args, nargs, error);
}

mh_cell mh_call_native(mh_library library, const char* symbol, const mh_cell* args, int32_t nargs,
                       const char** error) {
  mh_fn fn = NULL;
  if (library && symbol) {
    void* address = dlsym(library->handle, symbol);
    memcpy(&fn, &address, sizeof fn);
  }
  if (fn == NULL) {
    set_error(error, "unknown function");
    return H.null_cell;
  }
  if (nargs < 0 || nargs > MH_MAX_ARITY) {
    set_error(error, "arity mismatch");
    return H.null_cell;
  }
  return boundary_invoke(fn, args, nargs, error);
}

int64_t mh_last_call_imbalance(void) { return H.last_imbalance; }

/* -------------------------------------------------------------- libraries */

static void invalidate_library(mh_library library) {
  for (int i = 0; i < ROUTINE_BUCKETS; ++i)
    for (struct mh_routine_s* r = H.routines[i]; r; r = r->next_in_bucket)
      if (r->library == library) r->valid = 0;
}

static void run_entry(void* data) {
  void (*entry)(void);
  memcpy(&entry, data, sizeof entry);
  entry();
}

mh_library mh_load_library(const char* path, const char** error) {
  check_thread();
  void* handle = dlopen(path, RTLD_NOW | RTLD_LOCAL);
  if (handle == NULL) {
    const char* why = dlerror();
    set_error(error, why ? why : "cannot load library");
    return NULL;
  }
  void* entry = dlsym(handle, "hostbridge_register");
  if (entry == NULL) {
    dlclose(handle);
    char buf[ERROR_CAPACITY];
    snprintf(buf, sizeof buf, "%s: missing entry point hostbridge_register", path);
    set_error(error, buf);
    return NULL;
  }
  mh_library library = calloc(1, sizeof *library);
  if (!library) fatal("out of memory");
  library->handle = handle;
  library->path = dup_text(path);
  mh_library previous = H.loading;
  H.loading = library;
  const char* why = NULL;
  int32_t ok = mh_try(run_entry, &entry, &why);
  H.loading = previous;
  if (!ok) {
    invalidate_library(library);
    dlclose(handle);
    free(library->path);
    free(library);
    if (error) *error = why;
    return NULL;
  }
  if (error) *error = "";
  return library;
}

void mh_unload_library(mh_library library) {
  check_thread();
  if (library == NULL) return;
  invalidate_library(library);
  dlclose(library->handle);
  free(library->path);
  free(library);
}
