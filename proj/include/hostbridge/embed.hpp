// Compiles guest code given as text into a loadable library, caches it by
// content hash, loads it into the host and unloads it when the handle goes.
//
//   auto policy = embed::resolve_policy();
//   embed::Embedder embedder(policy);
//   auto norm = embedder.build({{"x"}, "double ss = 0; ...; return Value::new_scalar_double(...);", ""});
//   auto out = norm.call({x_cell});
//
// Cache layout under policy.cache_dir:
//   snippets/<key>/   snippet.cpp, Makefile, libsnippet.so
//   support/<tool>/   precompiled framework header shared by all snippets
//   toolchains/       detected compiler versions, keyed by compiler fingerprint
//   tmp/              TMPDIR for the compiler
#pragma once

#include <spawn.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "hostbridge/host.hpp"
#include "hostbridge/raw.hpp"

extern char** environ;

namespace hostbridge::embed {

namespace fs = std::filesystem;

inline constexpr std::string_view jobs_variable = "HOSTBRIDGE_BUILD_JOBS";
inline constexpr std::string_view save_cache_variable = "HOSTBRIDGE_SAVE_CACHE";
inline constexpr std::string_view framework_version = "hostbridge-snippet-1";

class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BuildError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BuildPolicy {
  std::size_t max_jobs = 1;
  fs::path cache_dir;
  bool persistent_cache = false;
  std::optional<fs::path> offline_fallback;
  std::string min_toolchain_version = "11";
};

using EnvLookup = std::function<std::optional<std::string>(std::string_view)>;

inline std::optional<std::string> process_env(std::string_view name) {
  const std::string key(name);
  if (const char* value = std::getenv(key.c_str())) return std::string(value);
  return std::nullopt;
}

inline std::size_t available_cores() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

/// Reads the build policy from the environment:
///   HOSTBRIDGE_BUILD_JOBS  jobs; default min(2, cores); "0" means all cores
///   HOSTBRIDGE_SAVE_CACHE  "TRUE" selects the per-user cache
///                          ($XDG_CACHE_HOME or ~/.cache, then hostbridge/);
///                          otherwise a fresh temporary directory is created
///                          and the Embedder removes it when done.
inline BuildPolicy resolve_policy(const EnvLookup& env = process_env,
                                  std::size_t cores = available_cores()) {
  BuildPolicy policy;
  policy.max_jobs = std::min<std::size_t>(2, cores);
  if (auto jobs = env(jobs_variable)) {
    const std::string& text = *jobs;
    const bool digits = !text.empty() && text.size() <= 9 &&
                        std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; });
    if (!digits) {
      throw PolicyError(std::string(jobs_variable) + " must be a nonnegative integer, got '" + text +
                        "'");
    }
    const auto n = static_cast<std::size_t>(std::stoul(text));
    policy.max_jobs = n == 0 ? cores : n;
  }
  const auto save = env(save_cache_variable);
  policy.persistent_cache = save && *save == "TRUE";
  if (policy.persistent_cache) {
    fs::path base;
    if (auto xdg = env("XDG_CACHE_HOME"); xdg && !xdg->empty() && fs::path(*xdg).is_absolute()) {
      base = *xdg;
    } else if (auto home = env("HOME"); home && !home->empty()) {
      base = fs::path(*home) / ".cache";
    } else {
      throw PolicyError(std::string(save_cache_variable) +
                        "=TRUE but neither XDG_CACHE_HOME nor HOME is set");
    }
    policy.cache_dir = base / "hostbridge";
  } else {
    std::string pattern = (fs::temp_directory_path() / "hostbridge-XXXXXX").string();
    if (mkdtemp(pattern.data()) == nullptr) throw PolicyError("cannot create a temporary cache");
    policy.cache_dir = pattern;
  }
  return policy;
}

struct SnippetSpec {
  std::vector<std::string> parameter_names;
  std::string body;          // statements of a function returning hostbridge::Value
  std::string dependencies;  // pkg-config package names, whitespace separated
};

struct BuildReport {
  std::string key;
  bool cache_hit = false;
  bool used_fallback = false;
  std::vector<std::string> command;  // the build command, empty on a cache hit
  double wall_seconds = 0.0;
  double cpu_seconds = 0.0;  // CPU time of the build's child processes
  std::string output;        // combined compiler output
};

struct Toolset {
  std::string compiler = "c++";
  fs::path include_dir;
  std::string make = "make";
};

namespace detail {

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int size = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &size, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < size; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

/// Length-prefixed concatenation, so field boundaries cannot shift.
class CanonicalWriter {
 public:
  CanonicalWriter& field(std::string_view bytes) {
    std::uint64_t n = bytes.size();
    for (int i = 0; i < 8; ++i) {
      data_.push_back(static_cast<char>(n & 0xFF));
      n >>= 8;
    }
    data_.append(bytes);
    return *this;
  }
  const std::string& data() const { return data_; }

 private:
  std::string data_;
};

inline bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

struct CommandResult {
  int status = -1;
  std::string output;
  double wall_seconds = 0.0;
  double cpu_seconds = 0.0;
};

inline double child_cpu_seconds() {
  rusage usage{};
  getrusage(RUSAGE_CHILDREN, &usage);
  const auto seconds = [](const timeval& t) {
    return static_cast<double>(t.tv_sec) + static_cast<double>(t.tv_usec) * 1e-6;
  };
  return seconds(usage.ru_utime) + seconds(usage.ru_stime);
}

/// Runs argv without a shell, capturing stdout and stderr together. `overrides`
/// replace or add environment entries; `removed` drops them.
inline CommandResult run_command(const std::vector<std::string>& argv,
                                 const std::vector<std::pair<std::string, std::string>>& overrides,
                                 const std::vector<std::string>& removed = {}) {
  std::vector<std::string> env_storage;
  for (char** e = environ; *e != nullptr; ++e) {
    const std::string_view entry(*e);
    const auto name = entry.substr(0, entry.find('='));
    const bool drop =
        std::any_of(removed.begin(), removed.end(), [&](const std::string& r) { return r == name; }) ||
        std::any_of(overrides.begin(), overrides.end(),
                    [&](const auto& kv) { return kv.first == name; });
    if (!drop) env_storage.emplace_back(entry);
  }
  for (const auto& [name, value] : overrides) env_storage.push_back(name + "=" + value);
  std::vector<char*> envp;
  for (auto& e : env_storage) envp.push_back(e.data());
  envp.push_back(nullptr);
  std::vector<std::string> args = argv;
  std::vector<char*> argp;
  for (auto& a : args) argp.push_back(a.data());
  argp.push_back(nullptr);

  int fds[2];
  if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addclose(&actions, fds[0]);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDERR_FILENO);
  posix_spawn_file_actions_addclose(&actions, fds[1]);

  CommandResult result;
  const double cpu_before = child_cpu_seconds();
  const auto start = std::chrono::steady_clock::now();
  pid_t pid = 0;
  const int spawned = posix_spawnp(&pid, argp[0], &actions, nullptr, argp.data(), envp.data());
  posix_spawn_file_actions_destroy(&actions);
  close(fds[1]);
  if (spawned != 0) {
    close(fds[0]);
    result.output = "cannot run " + argv[0];
    return result;
  }
  std::array<char, 4096> buffer{};
  for (ssize_t n; (n = read(fds[0], buffer.data(), buffer.size())) != 0;) {
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    result.output.append(buffer.data(), static_cast<std::size_t>(n));
  }
  close(fds[0]);
  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.cpu_seconds = child_cpu_seconds() - cpu_before;
  result.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

/// Writes via a temporary name and a rename, so readers never see a partial file.
inline void write_atomically(const fs::path& path, std::string_view text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw BuildError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Compares dotted version strings numerically, component by component.
inline int compare_versions(std::string_view a, std::string_view b) {
  auto next = [](std::string_view& s) {
    long value = 0;
    std::size_t i = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') value = value * 10 + (s[i++] - '0');
    while (i < s.size() && s[i] != '.') ++i;
    s.remove_prefix(std::min(s.size(), i + 1));
    return value;
  };
  while (!a.empty() || !b.empty()) {
    const long x = next(a);
    const long y = next(b);
    if (x != y) return x < y ? -1 : 1;
  }
  return 0;
}

inline std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  const auto first = s.find_first_not_of(" \t\r\n");
  return first == std::string::npos ? std::string() : s.substr(first);
}

}  // namespace detail

/// Identifies the snippet independently of the toolchain, so a prebuilt
/// fallback library can export the same symbol.
inline std::string exported_name(const SnippetSpec& spec) {
  detail::CanonicalWriter w;
  w.field(framework_version).field(std::to_string(spec.parameter_names.size()));
  for (const auto& p : spec.parameter_names) w.field(p);
  w.field(spec.body).field(spec.dependencies);
  return "hb_snippet_" + detail::sha256_hex(w.data()).substr(0, 16);
}

/// Cache key over parameters, body, dependencies and the toolchain identity.
inline std::string cache_key(const SnippetSpec& spec, std::string_view toolchain_id) {
  detail::CanonicalWriter w;
  w.field(framework_version).field(std::to_string(spec.parameter_names.size()));
  for (const auto& p : spec.parameter_names) w.field(p);
  w.field(spec.body).field(spec.dependencies).field(toolchain_id);
  return detail::sha256_hex(w.data());
}

inline void validate(const SnippetSpec& spec) {
  if (detail::trim(spec.body).empty()) throw BuildError("snippet body is empty");
  if (spec.parameter_names.size() > static_cast<std::size_t>(raw::max_arity))
    throw BuildError("snippets take at most " + std::to_string(raw::max_arity) + " parameters");
  for (std::size_t i = 0; i < spec.parameter_names.size(); ++i) {
    const auto& p = spec.parameter_names[i];
    if (!detail::is_identifier(p) || p == "pc")
      throw BuildError("invalid parameter name '" + p + "'");
    for (std::size_t j = 0; j < i; ++j) {
      if (spec.parameter_names[j] == p) throw BuildError("duplicate parameter name '" + p + "'");
    }
  }
}

/// The guest source generated for a snippet.
inline std::string snippet_source(const SnippetSpec& spec) {
  const std::string name = exported_name(spec);
  std::ostringstream out;
  out << "// Generated by hostbridge embed; do not edit by hand.\n"
      << "#include <hostbridge/guest.hpp>\n\n"
      << "using namespace hostbridge;\n\n"
      << "HOSTBRIDGE_EXPORT(" << name;
  for (const auto& p : spec.parameter_names) out << ", " << p;
  out << ") {\n#line 1 \"snippet\"\n" << spec.body;
  if (!spec.body.ends_with('\n')) out << "\n";
  out << "}\n\n"
      << "extern \"C\" void hostbridge_register(void) {\n"
      << "  register_function(\"" << name << "\", &" << name << ");\n"
      << "}\n";
  return out.str();
}

/// A loaded snippet. Releasing it (or destroying it) unloads the library, after
/// which its exported name is no longer callable.
class SnippetHandle {
 public:
  SnippetHandle() = default;
  SnippetHandle(std::string name, std::size_t arity, raw::mh_library library, BuildReport report)
      : name_(std::move(name)), arity_(arity), library_(library), report_(std::move(report)) {}
  SnippetHandle(const SnippetHandle&) = delete;
  SnippetHandle& operator=(const SnippetHandle&) = delete;
  SnippetHandle(SnippetHandle&& other) noexcept { *this = std::move(other); }
  SnippetHandle& operator=(SnippetHandle&& other) noexcept {
    if (this != &other) {
      unload();
      name_ = std::move(other.name_);
      arity_ = other.arity_;
      library_ = std::exchange(other.library_, nullptr);
      report_ = std::move(other.report_);
    }
    return *this;
  }
  ~SnippetHandle() { unload(); }

  const std::string& exported_name() const noexcept { return name_; }
  const std::string& key() const noexcept { return report_.key; }
  std::size_t arity() const noexcept { return arity_; }
  const BuildReport& report() const noexcept { return report_; }
  bool live() const noexcept { return library_ != nullptr; }

  /// Calls the snippet through the host. After release the host reports the
  /// name as unknown.
  host::CallOutcome call(std::span<const raw::mh_cell> args) {
    if (args.size() != arity_) {
      return {nullptr,
              "snippet expects " + std::to_string(arity_) + " arguments, got " +
                  std::to_string(args.size()),
              0};
    }
    in_call_ = true;
    auto outcome = host::call(name_, args);
    in_call_ = false;
    return outcome;
  }
  host::CallOutcome call(std::initializer_list<raw::mh_cell> args) {
    return call(std::span<const raw::mh_cell>(args.begin(), args.size()));
  }

  void release() {
    if (in_call_) throw std::logic_error("cannot release a snippet while it is being called");
    unload();
  }

 private:
  void unload() noexcept {
    if (library_ != nullptr) raw::mh_unload_library(std::exchange(library_, nullptr));
  }

  std::string name_;
  std::size_t arity_ = 0;
  raw::mh_library library_ = nullptr;
  BuildReport report_;
  bool in_call_ = false;
};

class Embedder {
 public:
  explicit Embedder(BuildPolicy policy, Toolset tools = {})
      : policy_(std::move(policy)), tools_(std::move(tools)) {
    if (policy_.max_jobs < 1) throw PolicyError("max_jobs must be at least 1");
    fs::create_directories(policy_.cache_dir);
  }
  Embedder(const Embedder&) = delete;
  Embedder& operator=(const Embedder&) = delete;
  ~Embedder() {
    if (!policy_.persistent_cache) {
      std::error_code ignored;
      fs::remove_all(policy_.cache_dir, ignored);
    }
  }

  const BuildPolicy& policy() const noexcept { return policy_; }

  /// The detected compiler version, or nullopt when it cannot be run. Cached
  /// on disk by the compiler's path, size and modification time.
  std::optional<std::string> toolchain_version() {
    if (version_) return *version_;
    struct stat info{};
    const std::string resolved = resolve_executable(tools_.compiler);
    if (resolved.empty() || stat(resolved.c_str(), &info) != 0) return std::nullopt;
    detail::CanonicalWriter w;
    w.field(resolved).field(std::to_string(info.st_size)).field(std::to_string(info.st_mtime));
    const fs::path record = policy_.cache_dir / "toolchains" / detail::sha256_hex(w.data());
    if (fs::exists(record)) {
      version_ = detail::read_text(record);
      return version_;
    }
    const auto probe = detail::run_command({tools_.compiler, "-dumpfullversion", "-dumpversion"},
                                           {{"TMPDIR", tmp_dir().string()}});
    const std::string version = detail::trim(probe.output);
    if (probe.status != 0 || version.empty() || !std::isdigit(static_cast<unsigned char>(version[0])))
      return std::nullopt;
    detail::write_atomically(record, version);
    version_ = version;
    return version_;
  }

  SnippetHandle build(const SnippetSpec& spec) {
    validate(spec);
    const std::string name = exported_name(spec);
    const auto version = toolchain_version();
    const bool usable =
        version && detail::compare_versions(*version, policy_.min_toolchain_version) >= 0;
    if (!usable) return load_fallback(spec, name, version);

    BuildReport report;
    report.key = cache_key(spec, tools_.compiler + "\n" + *version);
    const fs::path dir = policy_.cache_dir / "snippets" / report.key;
    const fs::path library = dir / "libsnippet.so";
    if (fs::exists(library)) {
      report.cache_hit = true;
    } else {
      const fs::path support = ensure_support(*version);
      detail::write_atomically(dir / "snippet.cpp", snippet_source(spec));
      detail::write_atomically(dir / "Makefile", makefile(support, spec.dependencies));
      report.command = {tools_.make, "-j" + std::to_string(policy_.max_jobs), "-C", dir.string(),
                        "CXX=" + tools_.compiler};
      const auto result = detail::run_command(report.command, {{"TMPDIR", tmp_dir().string()}},
                                              {"MAKEFLAGS", "MFLAGS", "MAKELEVEL"});
      report.wall_seconds = result.wall_seconds;
      report.cpu_seconds = result.cpu_seconds;
      report.output = result.output;
      if (result.status != 0 || !fs::exists(library))
        throw BuildError("snippet build failed:\n" + result.output);
    }
    return load(library, name, spec.parameter_names.size(), std::move(report));
  }

 private:
  fs::path tmp_dir() const {
    const fs::path dir = policy_.cache_dir / "tmp";
    fs::create_directories(dir);
    return dir;
  }

  static std::string resolve_executable(const std::string& program) {
    if (program.find('/') != std::string::npos) return program;
    const char* path = std::getenv("PATH");
    std::istringstream dirs(path == nullptr ? "" : path);
    for (std::string dir; std::getline(dirs, dir, ':');) {
      const fs::path candidate = fs::path(dir.empty() ? "." : dir) / program;
      if (access(candidate.c_str(), X_OK) == 0) return candidate.string();
    }
    return {};
  }

  /// The shared precompiled header directory for this compiler.
  fs::path ensure_support(const std::string& version) const {
    detail::CanonicalWriter w;
    w.field(framework_version).field(tools_.compiler).field(version).field(tools_.include_dir.string());
    const fs::path dir = policy_.cache_dir / "support" / detail::sha256_hex(w.data()).substr(0, 16);
    const fs::path header = dir / "hostbridge_pch.hpp";
    if (!fs::exists(header)) detail::write_atomically(header, "#include <hostbridge/guest.hpp>\n");
    return dir;
  }

  std::string makefile(const fs::path& support, const std::string& dependencies) const {
    std::ostringstream out;
    out << "# Generated by hostbridge embed; do not edit by hand.\n"
        << "CXX ?= c++\n"
        << "CXXFLAGS := -std=c++20 -fPIC -O2\n"
        << "INCLUDE := " << tools_.include_dir.string() << "\n"
        << "SUPPORT := " << support.string() << "\n"
        << "DEPS := " << detail::trim(dependencies) << "\n"
        << "DEP_CFLAGS := $(if $(DEPS),$(shell pkg-config --cflags $(DEPS)))\n"
        << "DEP_LIBS := $(if $(DEPS),$(shell pkg-config --libs $(DEPS)))\n\n"
        << "libsnippet.so: snippet.cpp $(SUPPORT)/hostbridge_pch.hpp.gch\n"
        << "\t$(CXX) $(CXXFLAGS) -I$(INCLUDE) $(DEP_CFLAGS) -include $(SUPPORT)/hostbridge_pch.hpp "
           "-shared snippet.cpp -o $@.tmp $(DEP_LIBS) && mv $@.tmp $@\n\n"
        << "$(SUPPORT)/hostbridge_pch.hpp.gch: $(SUPPORT)/hostbridge_pch.hpp\n"
        << "\t$(CXX) $(CXXFLAGS) -I$(INCLUDE) -x c++-header $< -o $@.tmp && mv $@.tmp $@\n";
    return out.str();
  }

  SnippetHandle load(const fs::path& library, const std::string& name, std::size_t arity,
                     BuildReport report) {
    const char* error = nullptr;
    raw::mh_library handle = raw::mh_load_library(library.c_str(), &error);
    if (handle == nullptr)
      throw BuildError("cannot load " + library.string() + ": " + (error ? error : "unknown error"));
    if (raw::mh_lookup(name.c_str()) == nullptr) {
      raw::mh_unload_library(handle);
      throw BuildError(library.string() + " does not provide " + name);
    }
    return SnippetHandle(name, arity, handle, std::move(report));
  }

  SnippetHandle load_fallback(const SnippetSpec& spec, const std::string& name,
                              const std::optional<std::string>& version) {
    const std::string why = version ? "compiler version " + *version + " is older than " +
                                          policy_.min_toolchain_version
                                    : "no working compiler '" + tools_.compiler + "'";
    if (!policy_.offline_fallback)
      throw BuildError(why + " and no offline fallback library is configured");
    BuildReport report;
    report.key = name;
    report.used_fallback = true;
    return load(*policy_.offline_fallback, name, spec.parameter_names.size(), std::move(report));
  }

  BuildPolicy policy_;
  Toolset tools_;
  std::optional<std::string> version_;
};

}  // namespace hostbridge::embed
