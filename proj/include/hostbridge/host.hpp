// Host-side conveniences for driving guest libraries from C++: building
// argument cells, calling registered functions and reading results back.
// Host errors raised while building cells are rethrown as HostError.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hostbridge/guard.hpp"
#include "hostbridge/raw.hpp"

namespace hostbridge::host {

class HostError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Protects cells for the lifetime of the scope and restores the protect
/// depth it started from.
class ProtectScope {
 public:
  ProtectScope() noexcept : base_(raw::mh_protect_depth()) {}
  ProtectScope(const ProtectScope&) = delete;
  ProtectScope& operator=(const ProtectScope&) = delete;
  ~ProtectScope() {
    const auto extra = raw::mh_protect_depth() - base_;
    if (extra > 0) raw::mh_unprotect(static_cast<std::int32_t>(extra));
  }

  raw::mh_cell keep(raw::mh_cell cell) noexcept { return raw::mh_protect(cell); }

 private:
  std::int64_t base_;
};

template <typename F>
raw::mh_cell checked(F body) {
  raw::mh_cell out = nullptr;
  auto run = [&out, &body] { out = body(); };
  const char* error = nullptr;
  if (!detail::host_try(run, &error)) throw HostError(error);
  return out;
}

inline raw::mh_cell doubles(std::span<const double> values) {
  return checked([values] {
    raw::mh_cell cell = raw::mh_alloc_vector(raw::MH_REAL, static_cast<std::int64_t>(values.size()));
    auto* out = static_cast<double*>(raw::mh_raw_view(cell, raw::MH_REAL));
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i];
    return cell;
  });
}

inline raw::mh_cell doubles(std::initializer_list<double> values) {
  return doubles(std::span<const double>(values.begin(), values.size()));
}

inline raw::mh_cell integers(std::span<const std::int32_t> values) {
  return checked([values] {
    raw::mh_cell cell =
        raw::mh_alloc_vector(raw::MH_INTEGER, static_cast<std::int64_t>(values.size()));
    auto* out = static_cast<std::int32_t*>(raw::mh_raw_view(cell, raw::MH_INTEGER));
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i];
    return cell;
  });
}

inline raw::mh_cell integers(std::initializer_list<std::int32_t> values) {
  return integers(std::span<const std::int32_t>(values.begin(), values.size()));
}

inline raw::mh_cell text(std::string_view value) {
  const std::string copy(value);
  return checked([&copy] {
    raw::mh_cell cell = raw::mh_alloc_vector(raw::MH_STRING, 1);
    raw::mh_string_set(cell, 0, copy.c_str());
    return cell;
  });
}

/// A call form `(callable symbol...)` evaluated by the host evaluator.
inline raw::mh_cell call_form(raw::mh_cell callable, std::initializer_list<std::string_view> symbols) {
  std::vector<std::string> names(symbols.begin(), symbols.end());
  return checked([callable, &names] {
    raw::mh_protect(callable);
    raw::mh_cell form = raw::mh_protect(
        raw::mh_alloc_vector(raw::MH_LIST, static_cast<std::int64_t>(names.size() + 1)));
    raw::mh_list_set(form, 0, callable);
    for (std::size_t i = 0; i < names.size(); ++i)
      raw::mh_list_set(form, static_cast<std::int64_t>(i + 1), raw::mh_install(names[i].c_str()));
    raw::mh_unprotect(2);
    return form;
  });
}

/// Copies a real or integer result into doubles; NA integers become NaN.
inline std::vector<double> read_doubles(raw::mh_cell cell) {
  const auto n = static_cast<std::size_t>(raw::mh_length(cell));
  std::vector<double> out(n);
  if (raw::mh_is_real(cell) != 0) {
    const auto* in = static_cast<const double*>(raw::mh_raw_view(cell, raw::MH_REAL));
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i];
  } else if (raw::mh_is_integer(cell) != 0) {
    const auto* in = static_cast<const std::int32_t*>(raw::mh_raw_view(cell, raw::MH_INTEGER));
    for (std::size_t i = 0; i < n; ++i)
      out[i] = in[i] == raw::na_integer ? raw::mh_na_real() : static_cast<double>(in[i]);
  } else {
    throw HostError("result is not numeric");
  }
  return out;
}

struct CallOutcome {
  raw::mh_cell value = nullptr;
  std::string error;       // empty on success
  std::int64_t imbalance = 0;  // protect depth the callee left behind

  bool ok() const noexcept { return error.empty(); }
};

inline CallOutcome finish(raw::mh_cell value, const char* error) {
  return {value, error == nullptr ? std::string() : std::string(error), raw::mh_last_call_imbalance()};
}

inline CallOutcome call(std::string_view name, std::span<const raw::mh_cell> args) {
  const std::string key(name);
  const char* error = nullptr;
  raw::mh_cell out =
      raw::mh_call(key.c_str(), args.data(), static_cast<std::int32_t>(args.size()), &error);
  return finish(out, error);
}

inline CallOutcome call(std::string_view name, std::initializer_list<raw::mh_cell> args) {
  return call(name, std::span<const raw::mh_cell>(args.begin(), args.size()));
}

inline CallOutcome call(raw::mh_routine routine, std::span<const raw::mh_cell> args) {
  const char* error = nullptr;
  raw::mh_cell out = raw::mh_call_routine(routine, args.data(),
                                          static_cast<std::int32_t>(args.size()), &error);
  return finish(out, error);
}

}  // namespace hostbridge::host
