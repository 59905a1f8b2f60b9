#pragma once

#include <cstdint>

#include "hostbridge/raw.hpp"

namespace hostbridge {

/// Counts the cells it has protected and unprotects all of them, in a single
/// host call, when it goes out of scope. Guards nest: an inner guard must be
/// destroyed before the outer one, which scoping guarantees.
class Guard {
 public:
  Guard() noexcept = default;
  Guard(const Guard&) = delete;
  Guard& operator=(const Guard&) = delete;
  ~Guard() {
    if (count_ > 0) raw::mh_unprotect(count_);
  }

  raw::mh_cell protect(raw::mh_cell cell) noexcept {
    raw::mh_protect(cell);
    ++count_;
    return cell;
  }

  std::int32_t count() const noexcept { return count_; }

 private:
  std::int32_t count_ = 0;
};

namespace detail {

/// Runs `body` under a host boundary so that a host error raised inside it
/// comes back as a return value instead of a jump over guest frames. `body`
/// must only hold trivially destructible state across the host calls it makes.
template <typename F>
bool host_try(F& body, const char** error) noexcept {
  return raw::mh_try([](void* data) { (*static_cast<F*>(data))(); }, &body, error) != 0;
}

}  // namespace detail
}  // namespace hostbridge
