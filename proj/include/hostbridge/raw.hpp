// Unchecked declarations of the minihost C ABI.
//
// Mirrors minihost.h one-to-one, hand-written so guest code does not need the
// host's headers. Nothing here checks kinds, tracks protection or guards
// against non-local exits: any call that can raise will jump straight over
// the caller's frames. Use hostbridge::Value and friends unless you know the
// call cannot raise. tests/raw_bindings_test.cpp includes both headers in one
// translation unit, so any signature drift is a compile error.
#pragma once

#include <cstdint>

extern "C" {
struct mh_cell_s;
struct mh_library_s;
struct mh_routine_s;
}

namespace hostbridge::raw {

using mh_cell = ::mh_cell_s*;
using mh_library = ::mh_library_s*;
using mh_routine = ::mh_routine_s*;
using mh_fn = mh_cell (*)();
using mh_try_fn = void (*)(void*);
using mh_console_fn = void (*)(const char*, void*);

inline constexpr std::int32_t MH_NULL = 0;
inline constexpr std::int32_t MH_REAL = 1;
inline constexpr std::int32_t MH_INTEGER = 2;
inline constexpr std::int32_t MH_LOGICAL = 3;
inline constexpr std::int32_t MH_STRING = 4;
inline constexpr std::int32_t MH_SYMBOL = 5;
inline constexpr std::int32_t MH_LIST = 6;
inline constexpr std::int32_t MH_ENVIRONMENT = 7;
inline constexpr std::int32_t MH_CALLABLE = 8;

inline constexpr std::int32_t max_arity = 12;
inline constexpr std::int32_t na_integer = INT32_MIN;
inline constexpr std::uint32_t na_real_payload = 1954u;

extern "C" {
void mh_init(void);
void mh_set_torture(std::int32_t enabled);
std::int32_t mh_torture_enabled(void);
void mh_set_gc_threshold(std::int64_t allocations);
void mh_set_cell_limit(std::int64_t cells);
void mh_gc(void);
std::int64_t mh_live_cells(void);
std::int64_t mh_gc_count(void);

mh_cell mh_null(void);
std::int32_t mh_kind_of(mh_cell cell);
std::int64_t mh_length(mh_cell cell);
std::int32_t mh_is_real(mh_cell cell);
std::int32_t mh_is_integer(mh_cell cell);
std::int32_t mh_is_logical(mh_cell cell);
std::int32_t mh_is_null(mh_cell cell);

double mh_na_real(void);
std::int32_t mh_is_na_real(double x);

mh_cell mh_alloc_vector(std::int32_t kind, std::int64_t length);

mh_cell mh_protect(mh_cell cell);
void mh_unprotect(std::int32_t n);
std::int64_t mh_protect_depth(void);

double mh_as_real(mh_cell cell);
std::int32_t mh_as_integer(mh_cell cell);
std::int32_t mh_as_logical(mh_cell cell);

void* mh_raw_view(mh_cell cell, std::int32_t kind);
mh_cell mh_coerce(mh_cell cell, std::int32_t kind);

const char* mh_string_get(mh_cell cell, std::int64_t index);
void mh_string_set(mh_cell cell, std::int64_t index, const char* text);
mh_cell mh_list_get(mh_cell cell, std::int64_t index);
void mh_list_set(mh_cell cell, std::int64_t index, mh_cell value);
mh_cell mh_get_names(mh_cell cell);
void mh_set_names(mh_cell cell, mh_cell names);
void mh_set_dim(mh_cell cell, std::int32_t nrow, std::int32_t ncol);
std::int32_t mh_get_dim(mh_cell cell, std::int32_t* nrow, std::int32_t* ncol);

mh_cell mh_install(const char* name);
const char* mh_symbol_name(mh_cell symbol);
mh_cell mh_global_env(void);
mh_cell mh_new_env(mh_cell parent);
void mh_define_var(mh_cell symbol, mh_cell value, mh_cell env);
mh_cell mh_find_var(mh_cell symbol, mh_cell env);

mh_cell mh_new_callable(const char* name, mh_fn fn, std::int32_t arity);
mh_cell mh_try_eval(mh_cell expr, mh_cell env, std::int32_t* ok);

[[noreturn]] void mh_error(const char* message);
std::int32_t mh_try(mh_try_fn fn, void* data, const char** error);

void mh_rng_set_seed(std::uint64_t seed);
void mh_rng_get(void);
void mh_rng_put(void);
double mh_rng_unif(void);
double mh_rng_norm(double mean, double sd);
void mh_rng_unif_bytes(std::uint8_t* out, std::int64_t n);

void mh_set_console(mh_console_fn sink, void* user);
void mh_print(const char* text);
std::int32_t mh_interrupt_pending(void);
void mh_set_interrupt(std::int32_t pending);

void mh_register(const char* name, mh_fn fn, std::int32_t arity);
mh_routine mh_lookup(const char* name);
mh_cell mh_call(const char* name, const mh_cell* args, std::int32_t nargs, const char** error);
mh_cell mh_call_routine(mh_routine routine, const mh_cell* args, std::int32_t nargs,
                        const char** error);
mh_cell mh_call_native(mh_library library, const char* symbol, const mh_cell* args,
                       std::int32_t nargs, const char** error);
std::int64_t mh_last_call_imbalance(void);

mh_library mh_load_library(const char* path, const char** error);
void mh_unload_library(mh_library library);
}

}  // namespace hostbridge::raw
