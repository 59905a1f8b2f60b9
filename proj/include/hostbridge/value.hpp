#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>

#include "hostbridge/guard.hpp"
#include "hostbridge/raw.hpp"
#include "hostbridge/result.hpp"

namespace hostbridge {

using Kind = std::int32_t;

inline const char* kind_name(Kind kind) noexcept {
  switch (kind) {
    case raw::MH_NULL: return "null";
    case raw::MH_REAL: return "real";
    case raw::MH_INTEGER: return "integer";
    case raw::MH_LOGICAL: return "logical";
    case raw::MH_STRING: return "string";
    case raw::MH_SYMBOL: return "symbol";
    case raw::MH_LIST: return "list";
    case raw::MH_ENVIRONMENT: return "environment";
    case raw::MH_CALLABLE: return "callable";
    default: return "unknown";
  }
}

namespace detail {

inline raw::mh_cell alloc_or_panic(Kind kind, std::size_t length, Guard& pc) {
  if (length > static_cast<std::size_t>(std::numeric_limits<std::int64_t>::max()))
    panic("vector length " + std::to_string(length) + " is too large");
  raw::mh_cell cell = nullptr;
  const auto n = static_cast<std::int64_t>(length);
  auto alloc = [&] { cell = raw::mh_alloc_vector(kind, n); };
  const char* error = nullptr;
  if (!host_try(alloc, &error)) panic(std::string("host allocation failed: ") + error);
  return pc.protect(cell);
}

inline std::int32_t checked_dim(std::size_t n) {
  if (n > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()))
    panic("matrix dimension " + std::to_string(n) + " is too large");
  return static_cast<std::int32_t>(n);
}

}  // namespace detail

/// A host cell reference. Same size and cost as the raw reference; all the
/// methods are kind-checked so none of them can cause a host jump.
class Value {
 public:
  constexpr explicit Value(raw::mh_cell cell) noexcept : cell_(cell) {}

  constexpr raw::mh_cell raw() const noexcept { return cell_; }
  friend constexpr bool operator==(Value, Value) noexcept = default;

  static Value null() noexcept { return Value(raw::mh_null()); }
  static Value global_env() noexcept { return Value(raw::mh_global_env()); }

  // -- NA sentinels ---------------------------------------------------------

  static constexpr std::int32_t na_integer() noexcept { return raw::na_integer; }
  static constexpr double na_real() noexcept {
    return std::bit_cast<double>(std::uint64_t{0x7FF8000000000000} | raw::na_real_payload);
  }
  static constexpr bool is_na_integer(std::int32_t x) noexcept { return x == raw::na_integer; }
  static bool is_na_real(double x) noexcept {
    return std::isnan(x) &&
           static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(x)) == raw::na_real_payload;
  }

  // -- construction ---------------------------------------------------------

  static Value new_scalar_double(double x, Guard& pc) {
    auto [value, view] = new_vector_double(1, pc);
    view[0] = x;
    return value;
  }

  static Value new_scalar_integer(std::int32_t x, Guard& pc) {
    auto [value, view] = new_vector_integer(1, pc);
    view[0] = x;
    return value;
  }

  static Value new_scalar_logical(bool x, Guard& pc) {
    auto [value, view] = new_vector_logical(1, pc);
    view[0] = x ? 1 : 0;
    return value;
  }

  static std::pair<Value, std::span<double>> new_vector_double(std::size_t length, Guard& pc) {
    raw::mh_cell cell = detail::alloc_or_panic(raw::MH_REAL, length, pc);
    return {Value(cell), {static_cast<double*>(raw::mh_raw_view(cell, raw::MH_REAL)), length}};
  }

  static std::pair<Value, std::span<std::int32_t>> new_vector_integer(std::size_t length,
                                                                      Guard& pc) {
    raw::mh_cell cell = detail::alloc_or_panic(raw::MH_INTEGER, length, pc);
    return {Value(cell),
            {static_cast<std::int32_t*>(raw::mh_raw_view(cell, raw::MH_INTEGER)), length}};
  }

  static std::pair<Value, std::span<std::int32_t>> new_vector_logical(std::size_t length,
                                                                      Guard& pc) {
    raw::mh_cell cell = detail::alloc_or_panic(raw::MH_LOGICAL, length, pc);
    return {Value(cell),
            {static_cast<std::int32_t*>(raw::mh_raw_view(cell, raw::MH_LOGICAL)), length}};
  }

  /// Column-major storage; the dimensions are recorded on the cell.
  static std::pair<Value, std::span<double>> new_matrix_double(std::size_t nrow, std::size_t ncol,
                                                               Guard& pc) {
    const auto rows = detail::checked_dim(nrow);
    const auto cols = detail::checked_dim(ncol);
    auto result = new_vector_double(nrow * ncol, pc);
    raw::mh_set_dim(result.first.raw(), rows, cols);
    return result;
  }

  static std::pair<Value, std::span<std::int32_t>> new_matrix_integer(std::size_t nrow,
                                                                      std::size_t ncol,
                                                                      Guard& pc) {
    const auto rows = detail::checked_dim(nrow);
    const auto cols = detail::checked_dim(ncol);
    auto result = new_vector_integer(nrow * ncol, pc);
    raw::mh_set_dim(result.first.raw(), rows, cols);
    return result;
  }

  static Value new_string_array(std::span<const std::string_view> texts, Guard& pc) {
    raw::mh_cell cell = detail::alloc_or_panic(raw::MH_STRING, texts.size(), pc);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const std::string text(texts[i]);
      raw::mh_string_set(cell, static_cast<std::int64_t>(i), text.c_str());
    }
    return Value(cell);
  }

  static Value new_string_array(std::initializer_list<std::string_view> texts, Guard& pc) {
    return new_string_array(std::span<const std::string_view>(texts.begin(), texts.size()), pc);
  }

  static Value new_list(std::size_t length, Guard& pc) {
    return Value(detail::alloc_or_panic(raw::MH_LIST, length, pc));
  }

  static Value new_symbol(std::string_view name, Guard& pc) {
    if (name.empty()) panic("symbol names must be nonempty");
    const std::string text(name);
    return Value(pc.protect(raw::mh_install(text.c_str())));
  }

  static Value new_environment(Value parent, Guard& pc) {
    if (!parent.is_environment() && !parent.is_null())
      panic(std::string("environment parent must be an environment, got ") + parent.kind_name());
    raw::mh_cell env = nullptr;
    auto make = [&] { env = raw::mh_new_env(parent.raw()); };
    const char* error = nullptr;
    if (!detail::host_try(make, &error)) panic(std::string("host allocation failed: ") + error);
    return Value(pc.protect(env));
  }

  // -- queries --------------------------------------------------------------

  Kind kind() const noexcept { return raw::mh_kind_of(cell_); }
  const char* kind_name() const noexcept { return hostbridge::kind_name(kind()); }

  bool is_null() const noexcept { return kind() == raw::MH_NULL; }
  bool is_double() const noexcept { return kind() == raw::MH_REAL; }
  bool is_integer() const noexcept { return kind() == raw::MH_INTEGER; }
  bool is_logical() const noexcept { return kind() == raw::MH_LOGICAL; }
  bool is_string() const noexcept { return kind() == raw::MH_STRING; }
  bool is_symbol() const noexcept { return kind() == raw::MH_SYMBOL; }
  bool is_list() const noexcept { return kind() == raw::MH_LIST; }
  bool is_environment() const noexcept { return kind() == raw::MH_ENVIRONMENT; }
  bool is_callable() const noexcept { return kind() == raw::MH_CALLABLE; }
  bool is_double_or_integer() const noexcept { return is_double() || is_integer(); }

  std::size_t len() const noexcept { return static_cast<std::size_t>(raw::mh_length(cell_)); }

  Result<std::size_t> nrow() const { return dim(0); }
  Result<std::size_t> ncol() const { return dim(1); }

  bool is_square_matrix() const noexcept {
    std::int32_t rows = 0;
    std::int32_t cols = 0;
    return raw::mh_get_dim(cell_, &rows, &cols) != 0 && rows == cols;
  }

  // -- views (no allocation) ------------------------------------------------

  Result<std::span<double>> slice_double() const {
    if (!is_double()) return mismatch("real");
    return std::span<double>(static_cast<double*>(raw::mh_raw_view(cell_, raw::MH_REAL)), len());
  }

  Result<std::span<std::int32_t>> slice_integer() const {
    if (!is_integer()) return mismatch("integer");
    return std::span<std::int32_t>(
        static_cast<std::int32_t*>(raw::mh_raw_view(cell_, raw::MH_INTEGER)), len());
  }

  Result<std::span<std::int32_t>> slice_logical() const {
    if (!is_logical()) return mismatch("logical");
    return std::span<std::int32_t>(
        static_cast<std::int32_t*>(raw::mh_raw_view(cell_, raw::MH_LOGICAL)), len());
  }

  // -- coercion -------------------------------------------------------------

  /// Returns this value itself when it already holds doubles, otherwise a
  /// protected converted copy of an integer or logical vector.
  Result<std::pair<Value, std::span<double>>> coerce_double(Guard& pc) const {
    if (is_double()) return std::pair{*this, slice_double().value()};
    if (!is_integer() && !is_logical())
      return Error{std::string("cannot coerce ") + kind_name() + " to real"};
    auto converted = coerce_to(raw::MH_REAL, pc);
    if (!converted.ok()) return converted.error();
    Value v = converted.value();
    return std::pair{v, v.slice_double().value()};
  }

  Result<std::pair<Value, std::span<std::int32_t>>> coerce_integer(Guard& pc) const {
    if (is_integer()) return std::pair{*this, slice_integer().value()};
    if (!is_double() && !is_logical())
      return Error{std::string("cannot coerce ") + kind_name() + " to integer"};
    auto converted = coerce_to(raw::MH_INTEGER, pc);
    if (!converted.ok()) return converted.error();
    Value v = converted.value();
    return std::pair{v, v.slice_integer().value()};
  }

  // -- scalar extraction ----------------------------------------------------

  Result<double> as_f64() const {
    if (!scalar_source()) return Error{std::string("cannot convert ") + kind_name() + " to f64"};
    return raw::mh_as_real(cell_);
  }

  Result<std::int32_t> as_i32() const {
    if (!scalar_source()) return Error{std::string("cannot convert ") + kind_name() + " to i32"};
    return raw::mh_as_integer(cell_);
  }

  Result<bool> as_bool() const {
    if (!scalar_source()) return Error{std::string("cannot convert ") + kind_name() + " to bool"};
    const std::int32_t x = raw::mh_as_logical(cell_);
    if (is_na_integer(x)) return Error{"missing value where a logical is needed"};
    return x != 0;
  }

  Result<std::string> string_element(std::size_t i) const {
    if (!is_string()) return mismatch("string");
    if (i >= len()) return out_of_range(i);
    return std::string(raw::mh_string_get(cell_, static_cast<std::int64_t>(i)));
  }

  // -- symbols and evaluation ----------------------------------------------

  /// Binds this symbol to `value` in `env`.
  void assign(Value value, Value env) const {
    if (!is_symbol()) panic(std::string("assign requires a symbol, got ") + kind_name());
    if (!env.is_environment())
      panic(std::string("assign requires an environment, got ") + env.kind_name());
    auto bind = [&] { raw::mh_define_var(cell_, value.raw(), env.raw()); };
    const char* error = nullptr;
    if (!detail::host_try(bind, &error)) panic(std::string("assign failed: ") + error);
  }

  /// Evaluates a callable or call form in `env` with host errors caught.
  Result<Value> eval(Value env, Guard& pc) const {
    if (!env.is_environment())
      return Error{std::string("eval requires an environment, got ") + env.kind_name()};
    std::int32_t ok = 0;
    raw::mh_cell result = raw::mh_try_eval(cell_, env.raw(), &ok);
    if (!ok) return Error{"evaluation raised a host error"};
    return Value(pc.protect(result));
  }

  // -- lists and names ------------------------------------------------------

  void set_list_element(std::size_t i, Value v) const {
    if (!is_list()) panic(std::string("set_list_element requires a list, got ") + kind_name());
    if (i >= len())
      panic("list index " + std::to_string(i) + " out of range for length " +
            std::to_string(len()));
    raw::mh_list_set(cell_, static_cast<std::int64_t>(i), v.raw());
  }

  Result<Value> list_element(std::size_t i) const {
    if (!is_list()) return mismatch("list");
    if (i >= len()) return out_of_range(i);
    return Value(raw::mh_list_get(cell_, static_cast<std::int64_t>(i)));
  }

  Result<Value> list_element(std::string_view name) const {
    if (!is_list()) return mismatch("list");
    Value labels = names();
    if (labels.is_string()) {
      for (std::size_t i = 0; i < labels.len(); ++i)
        if (labels.string_element(i).value() == name)
          return Value(raw::mh_list_get(cell_, static_cast<std::int64_t>(i)));
    }
    return Error{"no element named '" + std::string(name) + "'"};
  }

  void names_gets(Value names) const {
    if (!is_list() && !is_double() && !is_integer() && !is_logical() && !is_string())
      panic(std::string("names_gets requires a vector or list, got ") + kind_name());
    if (!names.is_string()) panic(std::string("names must be a string array, got ") +
                                  names.kind_name());
    if (names.len() != len())
      panic("names length " + std::to_string(names.len()) + " does not match length " +
            std::to_string(len()));
    raw::mh_set_names(cell_, names.raw());
  }

  Value names() const noexcept { return Value(raw::mh_get_names(cell_)); }

 private:
  bool scalar_source() const noexcept {
    const Kind k = kind();
    return k == raw::MH_REAL || k == raw::MH_INTEGER || k == raw::MH_LOGICAL ||
           k == raw::MH_STRING || k == raw::MH_NULL;
  }

  Result<std::size_t> dim(int which) const {
    std::int32_t d[2] = {0, 0};
    if (raw::mh_get_dim(cell_, &d[0], &d[1]) == 0) return Error{"not a matrix"};
    return static_cast<std::size_t>(d[which]);
  }

  Result<Value> coerce_to(Kind kind, Guard& pc) const {
    raw::mh_cell out = nullptr;
    auto convert = [&] { out = raw::mh_coerce(cell_, kind); };
    const char* error = nullptr;
    if (!detail::host_try(convert, &error)) return Error{error};
    return Value(pc.protect(out));
  }

  Error mismatch(const char* wanted) const {
    return Error{std::string("expected a ") + wanted + " vector, got " + kind_name()};
  }
  Error out_of_range(std::size_t i) const {
    return Error{"index " + std::to_string(i) + " out of range for length " +
                 std::to_string(len())};
  }

  raw::mh_cell cell_;
};

static_assert(sizeof(Value) == sizeof(raw::mh_cell));
static_assert(std::is_trivially_copyable_v<Value>);
static_assert(std::is_standard_layout_v<Value>);

}  // namespace hostbridge
