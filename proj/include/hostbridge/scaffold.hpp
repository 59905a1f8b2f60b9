// `hostbridge new`: writes a complete, buildable guest project.
#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "hostbridge/registration.hpp"
#include "hostbridge/scaffold_sources.hpp"

namespace hostbridge::registration {

namespace detail {

inline constexpr std::string_view makefile_template = R"mk(# Builds lib@NAME@.so from src/. HOSTBRIDGE_INCLUDE points at the framework
# headers; BUILD_DIR holds intermediate objects.
CXX ?= c++
CXXFLAGS ?= -O2
HOSTBRIDGE_INCLUDE ?= @INCLUDE@
BUILD_DIR ?= build

LIB := lib@NAME@.so
SOURCES := $(wildcard src/*.cpp)
OBJECTS := $(SOURCES:src/%.cpp=$(BUILD_DIR)/%.o)

all: $(LIB)

$(BUILD_DIR)/%.o: src/%.cpp
	@mkdir -p $(BUILD_DIR)
	$(CXX) -std=c++20 -fPIC $(CXXFLAGS) -I$(HOSTBRIDGE_INCLUDE) -c $< -o $@

$(LIB): $(OBJECTS)
	$(CXX) -shared -o $@.tmp $^ && mv $@.tmp $@

clean:
	rm -rf $(BUILD_DIR) $(LIB)

.PHONY: all clean
)mk";

inline constexpr std::string_view build_script = R"sh(#!/bin/sh
# Regenerates the registration source, then builds the guest library.
#   HOSTBRIDGE_BUILD_JOBS  parallel jobs; default min(2, cores), 0 means all cores
#   HOSTBRIDGE_SAVE_CACHE  TRUE keeps objects in the per-user cache; otherwise
#                          they go to a temporary directory removed on exit
set -eu
cd "$(dirname "$0")"

cores=$(getconf _NPROCESSORS_ONLN 2>/dev/null || echo 1)
jobs=${HOSTBRIDGE_BUILD_JOBS:-}
case "$jobs" in
  "") if [ "$cores" -lt 2 ]; then jobs=$cores; else jobs=2; fi ;;
  *[!0-9]*) echo "HOSTBRIDGE_BUILD_JOBS must be a nonnegative integer, got '$jobs'" >&2; exit 1 ;;
  0) jobs=$cores ;;
esac

if [ "${HOSTBRIDGE_SAVE_CACHE:-}" = "TRUE" ]; then
  build_dir="${XDG_CACHE_HOME:-$HOME/.cache}/hostbridge/projects/@NAME@"
  mkdir -p "$build_dir"
else
  build_dir=$(mktemp -d)
  trap 'rm -rf "$build_dir"' EXIT
fi

if command -v hostbridge >/dev/null 2>&1; then hostbridge register .; fi
make -j"$jobs" BUILD_DIR="$build_dir" "$@"
)sh";

inline std::string fill(std::string_view text, std::string_view name, std::string_view include) {
  std::string out(text);
  for (const auto& [key, value] : {std::pair{std::string_view("@NAME@"), name},
                                   std::pair{std::string_view("@INCLUDE@"), include}}) {
    for (auto at = out.find(key); at != std::string::npos; at = out.find(key, at + value.size()))
      out.replace(at, key.size(), value);
  }
  return out;
}

inline void write_text(const fs::path& path, std::string_view text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace detail

/// Creates a project at `path` holding the sample guest functions, their
/// scripts, a generated registration source and build files. The library
/// name is the last path component. Refuses to touch an existing path.
inline RegisterOutcome scaffold_project(const fs::path& path, const fs::path& include_dir) {
  if (fs::exists(path)) throw std::runtime_error(path.string() + " already exists");
  const std::string name = path.filename().string();
  if (!detail::is_identifier(name))
    throw std::runtime_error("project name '" + name + "' must be a valid identifier");
  fs::create_directories(path);
  for (const auto& [relative, content] : scaffold_sources::files)
    detail::write_text(path / relative, content);
  detail::write_text(path / "Makefile",
                     detail::fill(detail::makefile_template, name, include_dir.string()));
  const fs::path script = path / "build.sh";
  detail::write_text(script, detail::fill(detail::build_script, name, include_dir.string()));
  fs::permissions(script, fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec,
                  fs::perm_options::add);
  return register_calls(path);
}

}  // namespace hostbridge::registration
