#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <hostbridge/embed.hpp>

namespace support {

namespace fs = std::filesystem;

/// A compiler wrapper that appends one line per invocation to a log:
/// working directory, TMPDIR and the arguments.
class LoggingCompiler {
 public:
  explicit LoggingCompiler(const fs::path& dir) : script_(dir / "logging-cxx"), log_(dir / "cxx.log") {
    std::ofstream out(script_);
    out << "#!/bin/sh\n"
        << "printf '%s|%s|%s\\n' \"$PWD\" \"${TMPDIR:-}\" \"$*\" >> '" << log_.string() << "'\n"
        << "exec '" << HOSTBRIDGE_DEFAULT_CXX << "' \"$@\"\n";
    out.close();
    fs::permissions(script_, fs::perms::owner_all);
  }

  std::string path() const { return script_.string(); }

  std::vector<std::string> lines() const {
    std::vector<std::string> out;
    std::ifstream in(log_);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
  }

  /// Invocations that compile (the version probe is excluded).
  std::size_t compiles() const {
    const auto all = lines();
    return static_cast<std::size_t>(std::count_if(all.begin(), all.end(), [](const std::string& l) {
      return l.find("-dumpfullversion") == std::string::npos;
    }));
  }

 private:
  fs::path script_;
  fs::path log_;
};

inline bool inside(const fs::path& child, const fs::path& parent) {
  const auto c = fs::weakly_canonical(child).generic_string();
  const auto p = fs::weakly_canonical(parent).generic_string();
  return c == p || c.starts_with(p + "/");
}

inline hostbridge::embed::EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars](std::string_view name) -> std::optional<std::string> {
    const auto it = vars.find(std::string(name));
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

}  // namespace support
