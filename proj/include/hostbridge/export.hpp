// HOSTBRIDGE_EXPORT: turns a guest function over Values into a host-callable
// symbol.
//
//   HOSTBRIDGE_EXPORT(convolve2, a, b) {
//     auto [ab, xab] = Value::new_vector_double(..., pc);
//     ...
//     return ab;
//   }
//
// expands to an unmangled `extern "C" mh_cell convolve2(mh_cell a, mh_cell b)`
// whose body
//   1. creates a Guard named `pc` for the wrapped body,
//   2. runs the body with every exception caught,
//   3. on return releases the guard and hands the result to the host,
//   4. on a caught panic releases the guard and then, as the very last action
//      of the shim frame, raises a host error naming the message and the
//      panic site. The jump therefore crosses no live guest frame.
#pragma once

#include <cstdio>
#include <exception>
#include <type_traits>

#include "hostbridge/guard.hpp"
#include "hostbridge/raw.hpp"
#include "hostbridge/result.hpp"
#include "hostbridge/value.hpp"

namespace hostbridge::detail {

inline constexpr std::size_t panic_message_capacity = 4096;
inline char panic_message[panic_message_capacity];

inline void record_panic(const char* message, const std::source_location* where) noexcept {
  if (where != nullptr) {
    std::snprintf(panic_message, panic_message_capacity, "panicked at '%s', %s:%u:%u", message,
                  where->file_name(), static_cast<unsigned>(where->line()),
                  static_cast<unsigned>(where->column()));
  } else {
    std::snprintf(panic_message, panic_message_capacity, "panicked at '%s'", message);
  }
}

template <typename Body>
bool run_guarded(Body& body, raw::mh_cell& out) noexcept {
  static_assert(std::is_same_v<std::invoke_result_t<Body&, Guard&>, Value>,
                "exported functions must return hostbridge::Value");
  try {
    Guard pc;
    const Value result = body(pc);
    out = result.raw();
    return true;
  } catch (const Panic& p) {
    record_panic(p.what(), &p.where());
  } catch (const std::exception& e) {
    record_panic(e.what(), nullptr);
  } catch (...) {
    record_panic("panic of unknown type", nullptr);
  }
  return false;
}

template <typename Body>
raw::mh_cell invoke_export(Body body) noexcept {
  raw::mh_cell out = nullptr;
  if (run_guarded(body, out)) return out;
  raw::mh_error(panic_message);
}

}  // namespace hostbridge::detail

#define HOSTBRIDGE_DETAIL_PARENS ()
#define HOSTBRIDGE_DETAIL_EXPAND(...) \
  HOSTBRIDGE_DETAIL_EXPAND3(HOSTBRIDGE_DETAIL_EXPAND3(HOSTBRIDGE_DETAIL_EXPAND3(__VA_ARGS__)))
#define HOSTBRIDGE_DETAIL_EXPAND3(...) \
  HOSTBRIDGE_DETAIL_EXPAND2(HOSTBRIDGE_DETAIL_EXPAND2(HOSTBRIDGE_DETAIL_EXPAND2(__VA_ARGS__)))
#define HOSTBRIDGE_DETAIL_EXPAND2(...) \
  HOSTBRIDGE_DETAIL_EXPAND1(HOSTBRIDGE_DETAIL_EXPAND1(HOSTBRIDGE_DETAIL_EXPAND1(__VA_ARGS__)))
#define HOSTBRIDGE_DETAIL_EXPAND1(...) __VA_ARGS__

// Applies m to every argument: m(a) m(b) ...
#define HOSTBRIDGE_DETAIL_FOR_EACH(m, ...) \
  __VA_OPT__(HOSTBRIDGE_DETAIL_EXPAND(HOSTBRIDGE_DETAIL_FOR_EACH_STEP(m, __VA_ARGS__)))
#define HOSTBRIDGE_DETAIL_FOR_EACH_STEP(m, a, ...) \
  m(a) __VA_OPT__(HOSTBRIDGE_DETAIL_FOR_EACH_AGAIN HOSTBRIDGE_DETAIL_PARENS(m, __VA_ARGS__))
#define HOSTBRIDGE_DETAIL_FOR_EACH_AGAIN() HOSTBRIDGE_DETAIL_FOR_EACH_STEP

// Applies m to every argument, comma separated: m(a), m(b), ...
#define HOSTBRIDGE_DETAIL_FOR_EACH_LIST(m, ...) \
  __VA_OPT__(HOSTBRIDGE_DETAIL_EXPAND(HOSTBRIDGE_DETAIL_FOR_EACH_LIST_STEP(m, __VA_ARGS__)))
#define HOSTBRIDGE_DETAIL_FOR_EACH_LIST_STEP(m, a, ...) \
  m(a) __VA_OPT__(, HOSTBRIDGE_DETAIL_FOR_EACH_LIST_AGAIN HOSTBRIDGE_DETAIL_PARENS(m, __VA_ARGS__))
#define HOSTBRIDGE_DETAIL_FOR_EACH_LIST_AGAIN() HOSTBRIDGE_DETAIL_FOR_EACH_LIST_STEP

#define HOSTBRIDGE_DETAIL_RAW_PARAM(name) ::hostbridge::raw::mh_cell name
#define HOSTBRIDGE_DETAIL_VALUE_PARAM(name) , ::hostbridge::Value name
#define HOSTBRIDGE_DETAIL_FORWARD(name) , ::hostbridge::Value(name)

#define HOSTBRIDGE_EXPORT(name, ...)                                                     \
  static ::hostbridge::Value hostbridge_body_##name(                                     \
      [[maybe_unused]] ::hostbridge::Guard& pc                                           \
          HOSTBRIDGE_DETAIL_FOR_EACH(HOSTBRIDGE_DETAIL_VALUE_PARAM, __VA_ARGS__));       \
  extern "C" ::hostbridge::raw::mh_cell name(                                            \
      HOSTBRIDGE_DETAIL_FOR_EACH_LIST(HOSTBRIDGE_DETAIL_RAW_PARAM, __VA_ARGS__)) {       \
    return ::hostbridge::detail::invoke_export([&](::hostbridge::Guard& pc) {            \
      return hostbridge_body_##name(                                                     \
          pc HOSTBRIDGE_DETAIL_FOR_EACH(HOSTBRIDGE_DETAIL_FORWARD, __VA_ARGS__));        \
    });                                                                                  \
  }                                                                                      \
  static ::hostbridge::Value hostbridge_body_##name(                                     \
      [[maybe_unused]] ::hostbridge::Guard& pc                                           \
          HOSTBRIDGE_DETAIL_FOR_EACH(HOSTBRIDGE_DETAIL_VALUE_PARAM, __VA_ARGS__))

namespace hostbridge {

/// Registers an exported function with the host. Intended for the
/// `hostbridge_register` entry point of a loadable library.
template <typename... Cells>
void register_function(const char* name, raw::mh_cell (*fn)(Cells...)) {
  static_assert((std::is_same_v<Cells, raw::mh_cell> && ...),
                "registered functions take host cell references only");
  raw::mh_register(name, reinterpret_cast<raw::mh_fn>(reinterpret_cast<void (*)()>(fn)),
                   static_cast<std::int32_t>(sizeof...(Cells)));
}

}  // namespace hostbridge
