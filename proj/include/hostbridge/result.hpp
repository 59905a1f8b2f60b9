#pragma once

#include <source_location>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace hostbridge {

/// A guest panic. Thrown by panic() and by unwrap() on an error value, and
/// caught by the export shim, which turns it into a host error naming the
/// panic site.
class Panic : public std::runtime_error {
 public:
  Panic(std::string message, std::source_location where)
      : std::runtime_error(std::move(message)), where_(where) {}

  const std::source_location& where() const noexcept { return where_; }

 private:
  std::source_location where_;
};

[[noreturn]] inline void panic(std::string message,
                               std::source_location where = std::source_location::current()) {
  throw Panic(std::move(message), where);
}

struct Error {
  std::string message;
};

/// In-band success-or-error value returned by checked operations. The caller
/// either inspects it or calls unwrap(), which panics at the call site.
template <typename T>
class [[nodiscard]] Result {
 public:
  Result(T value) : state_(std::in_place_index<0>, std::move(value)) {}
  Result(Error error) : state_(std::in_place_index<1>, std::move(error)) {}

  bool ok() const noexcept { return state_.index() == 0; }
  explicit operator bool() const noexcept { return ok(); }

  T& value() & { return std::get<0>(state_); }
  const T& value() const& { return std::get<0>(state_); }
  const Error& error() const& { return std::get<1>(state_); }

  T unwrap(std::source_location where = std::source_location::current()) && {
    if (!ok()) throw Panic("called unwrap on an error value: " + error().message, where);
    return std::move(std::get<0>(state_));
  }
  T unwrap(std::source_location where = std::source_location::current()) const& {
    if (!ok()) throw Panic("called unwrap on an error value: " + error().message, where);
    return std::get<0>(state_);
  }

  T expect(const std::string& what,
           std::source_location where = std::source_location::current()) && {
    if (!ok()) throw Panic(what + ": " + error().message, where);
    return std::move(std::get<0>(state_));
  }

  T value_or(T fallback) const& { return ok() ? std::get<0>(state_) : std::move(fallback); }

 private:
  std::variant<T, Error> state_;
};

}  // namespace hostbridge
