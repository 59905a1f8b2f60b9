// Call-overhead benchmark: the Euclidean norm of a short vector computed by
//   native     a host-native function, called through a cached routine
//   bridged    the guest euclid_norm, called through a cached routine
//   uncached   the guest euclid_norm, with a symbol lookup on every call
// Calls run in batches of 100, interleaved across variants so drift hits all
// of them alike. The first 10% of batches are warm-up and are not reported.
#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hostbridge/host.hpp"
#include "hostbridge/raw.hpp"

namespace hostbridge::bench {

/// The host-native baseline, written directly against the host API.
extern "C" inline raw::mh_cell hostbridge_native_euclid_norm(raw::mh_cell x) {
  const auto n = raw::mh_length(x);
  const auto* values = static_cast<const double*>(raw::mh_raw_view(x, raw::MH_REAL));
  double ss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) ss = ss + values[i] * values[i];
  raw::mh_cell out = raw::mh_alloc_vector(raw::MH_REAL, 1);
  *static_cast<double*>(raw::mh_raw_view(out, raw::MH_REAL)) = std::sqrt(ss);
  return out;
}

inline constexpr std::size_t batch_size = 100;
inline constexpr const char* native_name = "native_euclid_norm";
inline constexpr const char* guest_name = "euclid_norm";

struct VariantStats {
  std::string label;
  double min_ns = 0.0;
  double mean_ns = 0.0;
  double median_ns = 0.0;
};

struct BenchReport {
  std::size_t iterations = 0;  // calls per variant, warm-up included
  std::size_t vector_length = 0;
  std::vector<VariantStats> variants;
  bool outputs_identical = true;
  double result = 0.0;

  const VariantStats& variant(std::string_view label) const {
    for (const auto& v : variants) {
      if (v.label == label) return v;
    }
    throw std::out_of_range("no variant " + std::string(label));
  }
};

namespace detail {

inline VariantStats summarize(std::string label, std::vector<double> per_call) {
  VariantStats s{std::move(label)};
  if (per_call.empty()) return s;
  std::sort(per_call.begin(), per_call.end());
  s.min_ns = per_call.front();
  s.mean_ns = std::accumulate(per_call.begin(), per_call.end(), 0.0) / static_cast<double>(per_call.size());
  const std::size_t mid = per_call.size() / 2;
  s.median_ns = per_call.size() % 2 == 1 ? per_call[mid] : 0.5 * (per_call[mid - 1] + per_call[mid]);
  return s;
}

}  // namespace detail

/// Runs the benchmark against an already loaded guest library that exports
/// and registers `euclid_norm`. Registers the native variant if needed.
inline BenchReport run_benchmark(std::size_t iterations, std::size_t vector_length,
                                 raw::mh_library library, std::uint64_t seed = 42) {
  if (iterations < batch_size) throw std::invalid_argument("need at least 100 iterations");
  auto* native_fn = reinterpret_cast<void (*)()>(&hostbridge_native_euclid_norm);
  raw::mh_register(native_name, reinterpret_cast<raw::mh_fn>(native_fn), 1);
  raw::mh_routine native = raw::mh_lookup(native_name);
  raw::mh_routine bridged = raw::mh_lookup(guest_name);
  if (bridged == nullptr) throw std::runtime_error("euclid_norm is not registered");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::vector<double> input(vector_length);
  for (double& v : input) v = unif(rng);

  host::ProtectScope scope;
  raw::mh_cell x = scope.keep(host::doubles(input));
  const raw::mh_cell args[1] = {x};

  BenchReport report;
  report.vector_length = vector_length;
  const std::size_t batches = (iterations + batch_size - 1) / batch_size;
  report.iterations = batches * batch_size;
  const std::size_t warmup = batches / 10;

  std::uint64_t expected = 0;
  bool have_expected = false;
  auto check = [&](raw::mh_cell out, const char* error) {
    if (error == nullptr || *error != '\0' || out == nullptr || raw::mh_length(out) != 1) {
      report.outputs_identical = false;
      return;
    }
    const double value = *static_cast<const double*>(raw::mh_raw_view(out, raw::MH_REAL));
    const auto bits = std::bit_cast<std::uint64_t>(value);
    if (!have_expected) {
      expected = bits;
      have_expected = true;
      report.result = value;
    } else if (bits != expected) {
      report.outputs_identical = false;
    }
  };

  std::vector<double> times[3];
  for (auto& t : times) t.reserve(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    for (int variant = 0; variant < 3; ++variant) {
      const char* error = nullptr;
      raw::mh_cell out = nullptr;
      const auto start = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < batch_size; ++i) {
        switch (variant) {
          case 0: out = raw::mh_call_routine(native, args, 1, &error); break;
          case 1: out = raw::mh_call_routine(bridged, args, 1, &error); break;
          default: out = raw::mh_call_native(library, guest_name, args, 1, &error); break;
        }
      }
      const auto elapsed = std::chrono::steady_clock::now() - start;
      check(out, error);
      if (b >= warmup) {
        times[variant].push_back(std::chrono::duration<double, std::nano>(elapsed).count() /
                                 static_cast<double>(batch_size));
      }
    }
  }
  report.variants = {detail::summarize("native", std::move(times[0])),
                     detail::summarize("bridged", std::move(times[1])),
                     detail::summarize("uncached", std::move(times[2]))};
  return report;
}

inline std::string format_text(const BenchReport& r) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %12s %12s %12s\n", "variant", "min (ns)", "mean (ns)",
                "median (ns)");
  out << "vector length " << r.vector_length << ", " << r.iterations << " calls per variant\n" << line;
  for (const auto& v : r.variants) {
    std::snprintf(line, sizeof line, "%-10s %12.1f %12.1f %12.1f\n", v.label.c_str(), v.min_ns,
                  v.mean_ns, v.median_ns);
    out << line;
  }
  out << "outputs identical: " << (r.outputs_identical ? "yes" : "no") << "\n";
  return out.str();
}

inline std::string format_csv(const BenchReport& r) {
  std::ostringstream out;
  char line[128];
  for (const auto& v : r.variants) {
    std::snprintf(line, sizeof line, "%s,%.1f,%.1f,%.1f\n", v.label.c_str(), v.min_ns, v.mean_ns,
                  v.median_ns);
    out << line;
  }
  return out.str();
}

}  // namespace hostbridge::bench
