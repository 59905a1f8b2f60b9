/*
 * minihost: a miniature single-threaded managed runtime with an R-like C API.
 *
 * Every entry point must be called from the thread that called mh_init().
 * Functions documented as "may raise" perform a non-local exit (siglongjmp)
 * to the innermost active boundary (mh_call*, mh_try, mh_try_eval) on error.
 * Raising with no active boundary aborts the process.
 */
#ifndef MINIHOST_H
#define MINIHOST_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct mh_cell_s* mh_cell;
typedef struct mh_library_s* mh_library;
typedef struct mh_routine_s* mh_routine;

/* Generic native function pointer; the real signature takes `arity` mh_cell
 * arguments and returns an mh_cell. */
typedef mh_cell (*mh_fn)(void);
typedef void (*mh_try_fn)(void* data);
typedef void (*mh_console_fn)(const char* text, void* user);

enum {
  MH_NULL = 0,
  MH_REAL = 1,
  MH_INTEGER = 2,
  MH_LOGICAL = 3,
  MH_STRING = 4,
  MH_SYMBOL = 5,
  MH_LIST = 6,
  MH_ENVIRONMENT = 7,
  MH_CALLABLE = 8
};

#define MH_MAX_ARITY 12
#define MH_NA_INTEGER INT32_MIN
#define MH_NA_REAL_PAYLOAD 1954u

/* Runtime lifecycle and collector control. mh_init is idempotent and reads
 * HOSTBRIDGE_TORTURE from the environment on first call. */
void mh_init(void);
void mh_set_torture(int32_t enabled);
int32_t mh_torture_enabled(void);
void mh_set_gc_threshold(int64_t allocations);
void mh_set_cell_limit(int64_t cells);
void mh_gc(void);
int64_t mh_live_cells(void);
int64_t mh_gc_count(void);

/* Cell inspection. None of these raise. */
mh_cell mh_null(void);
int32_t mh_kind_of(mh_cell cell);
int64_t mh_length(mh_cell cell);
int32_t mh_is_real(mh_cell cell);
int32_t mh_is_integer(mh_cell cell);
int32_t mh_is_logical(mh_cell cell);
int32_t mh_is_null(mh_cell cell);

/* NA sentinels. */
double mh_na_real(void);
int32_t mh_is_na_real(double x);

/* Allocation: zero-initialized vectors of kind REAL, INTEGER, LOGICAL,
 * STRING (empty strings) or LIST (null elements). May raise. */
mh_cell mh_alloc_vector(int32_t kind, int64_t length);

/* Protect stack. mh_unprotect aborts on underflow. */
mh_cell mh_protect(mh_cell cell);
void mh_unprotect(int32_t n);
int64_t mh_protect_depth(void);

/* Scalar coercion of element 0. Raise on symbol, list, environment, callable. */
double mh_as_real(mh_cell cell);
int32_t mh_as_integer(mh_cell cell);
int32_t mh_as_logical(mh_cell cell);

/* Direct storage: double* for REAL, int32_t* for INTEGER/LOGICAL. Raises
 * when the cell kind differs from `kind`. */
void* mh_raw_view(mh_cell cell, int32_t kind);

/* Returns `cell` when already of `kind`, otherwise a fresh unprotected copy
 * carrying the same names and dimensions. May raise. */
mh_cell mh_coerce(mh_cell cell, int32_t kind);

/* Strings, lists, attributes. Out-of-range or wrong-kind access raises. */
const char* mh_string_get(mh_cell cell, int64_t index);
void mh_string_set(mh_cell cell, int64_t index, const char* text);
mh_cell mh_list_get(mh_cell cell, int64_t index);
void mh_list_set(mh_cell cell, int64_t index, mh_cell value);
mh_cell mh_get_names(mh_cell cell);
void mh_set_names(mh_cell cell, mh_cell names);
void mh_set_dim(mh_cell cell, int32_t nrow, int32_t ncol);
int32_t mh_get_dim(mh_cell cell, int32_t* nrow, int32_t* ncol);

/* Symbols and environments. */
mh_cell mh_install(const char* name);
const char* mh_symbol_name(mh_cell symbol);
mh_cell mh_global_env(void);
mh_cell mh_new_env(mh_cell parent);
void mh_define_var(mh_cell symbol, mh_cell value, mh_cell env);
/* Returns NULL (not mh_null()) when unbound. */
mh_cell mh_find_var(mh_cell symbol, mh_cell env);

/* Evaluation. A call form is a list whose element 0 is a callable and whose
 * remaining elements are symbols resolved in `env`. Errors are caught and
 * reported through *ok = 0 with an mh_null() result. */
mh_cell mh_new_callable(const char* name, mh_fn fn, int32_t arity);
mh_cell mh_try_eval(mh_cell expr, mh_cell env, int32_t* ok);

/* Errors. mh_error copies `message` and jumps; it never returns. */
#if defined(__cplusplus)
[[noreturn]]
#else
_Noreturn
#endif
void mh_error(const char* message);
/* Runs fn(data) under a boundary. Returns 1 on success; on error returns 0,
 * sets *error to the message and restores the protect depth. */
int32_t mh_try(mh_try_fn fn, void* data, const char** error);

/* RNG: splitmix64-seeded xorshift64*, Box-Muller normals. */
void mh_rng_set_seed(uint64_t seed);
void mh_rng_get(void);
void mh_rng_put(void);
double mh_rng_unif(void);
double mh_rng_norm(double mean, double sd);
void mh_rng_unif_bytes(uint8_t* out, int64_t n);

/* Console and interrupts. mh_print raises "interrupted" (after clearing the
 * flag) when an interrupt is pending. */
void mh_set_console(mh_console_fn sink, void* user);
void mh_print(const char* text);
int32_t mh_interrupt_pending(void);
void mh_set_interrupt(int32_t pending);

/* Registration and top-level calls. On return *error is "" on success or a
 * message owned by the host, valid until the next boundary call. */
void mh_register(const char* name, mh_fn fn, int32_t arity);
mh_routine mh_lookup(const char* name);
mh_cell mh_call(const char* name, const mh_cell* args, int32_t nargs, const char** error);
mh_cell mh_call_routine(mh_routine routine, const mh_cell* args, int32_t nargs, const char** error);
/* Resolves `symbol` in `library` on every call (no caching). */
mh_cell mh_call_native(mh_library library, const char* symbol, const mh_cell* args, int32_t nargs,
                       const char** error);
/* Protect depth left behind by the callee of the most recent top-level call,
 * measured when it returned or raised, relative to its entry depth. */
int64_t mh_last_call_imbalance(void);

/* Shared libraries exporting `void hostbridge_register(void)`. */
mh_library mh_load_library(const char* path, const char** error);
void mh_unload_library(mh_library library);

#ifdef __cplusplus
}
#endif

#endif /* MINIHOST_H */
