#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hostbridge/guard.hpp"
#include "hostbridge/raw.hpp"
#include "hostbridge/result.hpp"

namespace hostbridge {

/// Prints `text` and a newline to the host console. The host print raises
/// when an interrupt is pending; that jump is absorbed here and reported as
/// `true`, so guest frames are never skipped.
inline bool print_line(std::string_view text) {
  std::string line(text);
  line.push_back('\n');
  const char* data = line.c_str();
  auto print = [data] { raw::mh_print(data); };
  const char* error = nullptr;
  return !detail::host_try(print, &error);
}

/// Polls (and consumes) a pending user interrupt. Never jumps.
inline bool check_user_interrupt() noexcept {
  if (raw::mh_interrupt_pending() == 0) return false;
  raw::mh_set_interrupt(0);
  return true;
}

/// Draws `n` bytes from the host RNG, e.g. to seed a guest-side generator so
/// results follow the host's seed.
inline std::vector<std::uint8_t> random_bytes(std::size_t n) {
  std::vector<std::uint8_t> bytes(n);
  if (n == 0) return bytes;
  std::uint8_t* out = bytes.data();
  const auto count = static_cast<std::int64_t>(n);
  auto draw = [out, count] {
    raw::mh_rng_get();
    raw::mh_rng_unif_bytes(out, count);
    raw::mh_rng_put();
  };
  const char* error = nullptr;
  if (!detail::host_try(draw, &error)) panic(std::string("random_bytes failed: ") + error);
  return bytes;
}

}  // namespace hostbridge
