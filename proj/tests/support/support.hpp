// Shared setup and independent oracles for the test suites.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <hostbridge/host.hpp>
#include <hostbridge/raw.hpp>

namespace support {

namespace raw = hostbridge::raw;

/// Initializes the host and loads the sample guest library once per process.
inline raw::mh_library samples() {
  static raw::mh_library library = [] {
    raw::mh_init();
    const char* error = nullptr;
    raw::mh_library lib = raw::mh_load_library(HOSTBRIDGE_SAMPLES_LIBRARY, &error);
    if (lib == nullptr) throw std::runtime_error(std::string("cannot load samples: ") + error);
    return lib;
  }();
  return library;
}

/// Full convolution written as out[k] = sum_i a[i] * b[k - i].
inline std::vector<double> convolution_oracle(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  std::vector<double> out(a.size() + b.size() - 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (k >= i && k - i < b.size()) sum += a[i] * b[k - i];
    }
    out[k] = sum;
  }
  return out;
}

/// Plain bisection on a C++ function, independent of the host evaluator.
template <typename F>
double bisection_oracle(F f, double lo, double hi, double tol) {
  double flo = f(lo);
  while (std::abs(hi - lo) >= tol) {
    const double mid = 0.5 * (lo + hi);
    const double fmid = f(mid);
    if (fmid == 0.0) return mid;
    if ((flo < 0.0) == (fmid < 0.0)) {
      lo = mid;
      flo = fmid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline double norm_oracle(std::span<const double> x) {
  long double ss = 0.0L;
  for (double v : x) ss += static_cast<long double>(v) * v;
  return static_cast<double>(std::sqrt(ss));
}

inline bool close_relative(double got, double want, double tol) {
  if (want == 0.0) return got == 0.0;
  return std::abs(got - want) <= tol * std::abs(want);
}

/// x^2 - 4 as a host-native callable of one argument.
extern "C" inline raw::mh_cell support_square_minus_four(raw::mh_cell x) {
  const double v = raw::mh_as_real(x);
  raw::mh_cell out = raw::mh_alloc_vector(raw::MH_REAL, 1);
  *static_cast<double*>(raw::mh_raw_view(out, raw::MH_REAL)) = v * v - 4.0;
  return out;
}

/// A host callable that always raises.
extern "C" inline raw::mh_cell support_failing(raw::mh_cell) { raw::mh_error("callback failed"); }

template <typename Fn>
raw::mh_cell callable(const char* name, Fn* fn, std::int32_t arity) {
  auto* generic = reinterpret_cast<void (*)()>(fn);
  return hostbridge::host::checked(
      [&] { return raw::mh_new_callable(name, reinterpret_cast<raw::mh_fn>(generic), arity); });
}

/// The call form `(f x)` for a callable of one argument.
template <typename Fn>
raw::mh_cell unary_form(const char* name, Fn* fn) {
  hostbridge::host::ProtectScope scope;
  raw::mh_cell f = scope.keep(callable(name, fn, 1));
  return hostbridge::host::call_form(f, {"x"});
}

inline raw::mh_cell new_env() {
  return hostbridge::host::checked([] { return raw::mh_new_env(raw::mh_global_env()); });
}

}  // namespace support
