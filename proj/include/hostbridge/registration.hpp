// Scans host scripts for `.Call(.name, ...)` sites and regenerates the
// registration source of a guest library.
//
// Project layout:
//   R/*.R                 host scripts
//   src/*.cpp             guest sources using HOSTBRIDGE_EXPORT
//   src/registration.cpp  generated; registers every called function at load
//
// The scanner is token-oriented: it recognizes the `.Call(` opener, a `.name`
// symbol and the comma-separated top-level arguments (with balanced brackets,
// string literals and `#` comments skipped). It is not an R parser.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hostbridge::registration {

namespace fs = std::filesystem;

inline constexpr std::string_view generated_marker =
    "// Generated by hostbridge register; do not edit by hand.";

class ScanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two sites disagree on the number of arguments for one function.
class ArityConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SourceSite {
  fs::path file;
  std::size_t line = 0;

  std::string describe() const { return file.generic_string() + ":" + std::to_string(line); }
};

struct CallSite {
  std::string name;
  std::vector<std::string> arguments;
  SourceSite site;
};

struct RegistrationEntry {
  std::string name;
  std::size_t arity = 0;
  fs::path source_script;
  std::size_t line = 0;
  std::vector<std::string> parameter_names;
  bool implemented = false;

  friend bool operator==(const RegistrationEntry&, const RegistrationEntry&) = default;
};

struct Implementation {
  std::string name;
  std::size_t arity = 0;
  SourceSite site;
};

struct GeneratedRegistration {
  std::string source;  // full file contents, stub block included
  std::string stubs;   // the commented stub block alone ("" when none)
};

namespace detail {

inline bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '_';
}
inline bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

inline bool is_identifier(std::string_view s) {
  if (s.empty() || !is_ident_start(s.front())) return false;
  return std::all_of(s.begin(), s.end(), is_ident_char);
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

/// Cursor over script text that tracks line numbers and skips R comments and
/// string literals.
class RCursor {
 public:
  explicit RCursor(std::string_view text) : text_(text) {}

  bool done() const { return pos_ >= text_.size(); }
  char peek(std::size_t ahead = 0) const {
    return pos_ + ahead < text_.size() ? text_[pos_ + ahead] : '\0';
  }
  std::size_t pos() const { return pos_; }
  std::size_t line() const { return line_; }
  bool starts_with(std::string_view s) const { return text_.substr(pos_).starts_with(s); }

  void advance(std::size_t n = 1) {
    for (std::size_t i = 0; i < n && pos_ < text_.size(); ++i) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  void skip_space() {
    while (!done()) {
      const char c = peek();
      if (c == '#') {
        skip_comment();
      } else if (std::isspace(static_cast<unsigned char>(c)) != 0) {
        advance();
      } else {
        break;
      }
    }
  }

  void skip_comment() {
    while (!done() && peek() != '\n') advance();
  }

  /// Skips a quoted literal starting at the current quote character.
  void skip_string() {
    const char quote = peek();
    advance();
    while (!done() && peek() != quote) {
      if (peek() == '\\') advance();
      advance();
    }
    advance();
  }

  std::string_view slice(std::size_t from, std::size_t to) const {
    return text_.substr(from, to - from);
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

}  // namespace detail

/// Extracts every `.Call(.name, ...)` site from one script's text.
inline std::vector<CallSite> scan_text(std::string_view text, const fs::path& file) {
  std::vector<CallSite> sites;
  detail::RCursor cur(text);
  constexpr std::string_view opener = ".Call(";
  while (!cur.done()) {
    const char c = cur.peek();
    if (c == '#') {
      cur.skip_comment();
      continue;
    }
    if (c == '"' || c == '\'' || c == '`') {
      cur.skip_string();
      continue;
    }
    const bool boundary = cur.pos() == 0 || !(detail::is_ident_char(text[cur.pos() - 1]) ||
                                              text[cur.pos() - 1] == '.');
    if (!boundary || !cur.starts_with(opener)) {
      cur.advance();
      continue;
    }
    const std::size_t site_line = cur.line();
    cur.advance(opener.size());
    cur.skip_space();
    if (cur.peek() != '.' || !detail::is_ident_start(cur.peek(1))) continue;
    cur.advance();
    const std::size_t name_start = cur.pos();
    while (detail::is_ident_char(cur.peek()) || cur.peek() == '.') cur.advance();
    const std::string name(cur.slice(name_start, cur.pos()));
    if (!detail::is_identifier(name)) {
      throw ScanError(file.generic_string() + ":" + std::to_string(site_line) + ": '." + name +
                      "' is not a valid guest function name");
    }
    CallSite site{name, {}, {file, site_line}};
    cur.skip_space();
    if (cur.peek() == ')') {
      cur.advance();
      sites.push_back(std::move(site));
      continue;
    }
    if (cur.peek() != ',') {
      throw ScanError(file.generic_string() + ":" + std::to_string(site_line) +
                      ": expected ',' or ')' after '." + name + "'");
    }
    cur.advance();
    int depth = 0;
    std::size_t arg_start = cur.pos();
    bool closed = false;
    while (!cur.done()) {
      const char d = cur.peek();
      if (d == '#') {
        cur.skip_comment();
      } else if (d == '"' || d == '\'' || d == '`') {
        cur.skip_string();
      } else if (d == '(' || d == '[' || d == '{') {
        ++depth;
        cur.advance();
      } else if ((d == ')' || d == ']' || d == '}') && depth > 0) {
        --depth;
        cur.advance();
      } else if (d == ')' ) {
        site.arguments.push_back(detail::trim(cur.slice(arg_start, cur.pos())));
        cur.advance();
        closed = true;
        break;
      } else if (d == ',' && depth == 0) {
        site.arguments.push_back(detail::trim(cur.slice(arg_start, cur.pos())));
        cur.advance();
        arg_start = cur.pos();
      } else {
        cur.advance();
      }
    }
    if (!closed) {
      throw ScanError(file.generic_string() + ":" + std::to_string(site_line) +
                      ": unterminated .Call(." + name);
    }
    sites.push_back(std::move(site));
  }
  return sites;
}

namespace detail {

inline std::vector<fs::path> sorted_files(const fs::path& dir,
                                          const std::set<std::string>& extensions) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && extensions.contains(entry.path().extension().string()))
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.generic_string() < b.generic_string(); });
  return files;
}

inline std::vector<std::string> stub_parameters(const std::vector<std::string>& arguments) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < arguments.size(); ++i) {
    std::string candidate = arguments[i];
    if (!is_identifier(candidate) || candidate == "pc" || seen.contains(candidate))
      candidate = "arg" + std::to_string(i + 1);
    seen.insert(candidate);
    names.push_back(std::move(candidate));
  }
  return names;
}

}  // namespace detail

/// Scans every `.R` script under `dir`. Entries are unique by name and sorted
/// by name; equal-arity duplicates collapse onto their first site.
inline std::vector<RegistrationEntry> scan_scripts(const fs::path& dir) {
  std::map<std::string, RegistrationEntry> by_name;
  for (const auto& file : detail::sorted_files(dir, {".R", ".r"})) {
    const fs::path shown = fs::relative(file, dir.parent_path());
    for (auto& site : scan_text(detail::read_file(file), shown)) {
      auto [it, inserted] = by_name.try_emplace(site.name);
      RegistrationEntry& entry = it->second;
      if (inserted) {
        entry.name = site.name;
        entry.arity = site.arguments.size();
        entry.source_script = site.site.file;
        entry.line = site.site.line;
        entry.parameter_names = detail::stub_parameters(site.arguments);
      } else if (entry.arity != site.arguments.size()) {
        throw ArityConflict("conflicting arity for '" + site.name + "': " +
                            SourceSite{entry.source_script, entry.line}.describe() + " passes " +
                            std::to_string(entry.arity) + " arguments, " +
                            site.site.describe() + " passes " +
                            std::to_string(site.arguments.size()));
      }
    }
  }
  std::vector<RegistrationEntry> entries;
  for (auto& [name, entry] : by_name) entries.push_back(std::move(entry));
  return entries;
}

/// Finds HOSTBRIDGE_EXPORT definitions in guest source text, skipping
/// comments, string literals and the macro's own #define.
inline std::vector<Implementation> scan_exports(std::string_view text, const fs::path& file) {
  std::vector<Implementation> found;
  constexpr std::string_view macro = "HOSTBRIDGE_EXPORT(";
  std::size_t line = 1;
  std::size_t i = 0;
  bool line_is_directive = false;
  bool at_line_start = true;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
      ++i;
      line_is_directive = false;
      at_line_start = true;
      continue;
    }
    if (at_line_start && !std::isspace(static_cast<unsigned char>(c))) {
      line_is_directive = c == '#';
      at_line_start = false;
    }
    if (text.substr(i).starts_with("//")) {
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    if (text.substr(i).starts_with("/*")) {
      const auto end = text.find("*/", i + 2);
      const auto stop = end == std::string_view::npos ? text.size() : end + 2;
      line += static_cast<std::size_t>(std::count(text.begin() + static_cast<long>(i),
                                                  text.begin() + static_cast<long>(stop), '\n'));
      i = stop;
      continue;
    }
    if (c == '"' || c == '\'') {
      ++i;
      while (i < text.size() && text[i] != c && text[i] != '\n') {
        if (text[i] == '\\') ++i;
        ++i;
      }
      ++i;
      continue;
    }
    const bool boundary = i == 0 || !detail::is_ident_char(text[i - 1]);
    if (!boundary || !text.substr(i).starts_with(macro) || line_is_directive) {
      ++i;
      continue;
    }
    const std::size_t site_line = line;
    i += macro.size();
    const auto close = text.find(')', i);
    if (close == std::string_view::npos) break;
    std::vector<std::string> parts;
    std::string_view inside = text.substr(i, close - i);
    std::size_t start = 0;
    for (std::size_t k = 0; k <= inside.size(); ++k) {
      if (k == inside.size() || inside[k] == ',') {
        parts.push_back(detail::trim(inside.substr(start, k - start)));
        start = k + 1;
      }
    }
    line += static_cast<std::size_t>(std::count(inside.begin(), inside.end(), '\n'));
    i = close + 1;
    if (parts.empty() || !detail::is_identifier(parts.front())) continue;
    found.push_back({parts.front(), parts.size() - 1, {file, site_line}});
  }
  return found;
}

/// Collects the exported functions implemented under `src_dir`, ignoring
/// generated files.
inline std::map<std::string, Implementation> scan_implementations(const fs::path& src_dir) {
  std::map<std::string, Implementation> out;
  for (const auto& file : detail::sorted_files(src_dir, {".cpp", ".cc", ".cxx", ".hpp", ".h"})) {
    const std::string text = detail::read_file(file);
    if (text.starts_with(generated_marker)) continue;
    const fs::path shown = fs::relative(file, src_dir.parent_path());
    for (auto& impl : scan_exports(text, shown)) {
      auto [it, inserted] = out.try_emplace(impl.name, impl);
      if (!inserted && it->second.arity != impl.arity) {
        throw ArityConflict("'" + impl.name + "' is implemented twice with different arity: " +
                            it->second.site.describe() + " and " + impl.site.describe());
      }
    }
  }
  return out;
}

/// Marks implemented entries and renders the registration source. Entries
/// without an implementation also get a commented stub. Output depends only
/// on the inputs.
inline GeneratedRegistration generate_registration(
    std::vector<RegistrationEntry>& entries,
    const std::map<std::string, Implementation>& implementations) {
  std::sort(entries.begin(), entries.end(),
            [](const RegistrationEntry& a, const RegistrationEntry& b) { return a.name < b.name; });
  for (auto& entry : entries) {
    const auto it = implementations.find(entry.name);
    entry.implemented = it != implementations.end();
    if (entry.implemented && it->second.arity != entry.arity) {
      throw ArityConflict("'" + entry.name + "' is called with " + std::to_string(entry.arity) +
                          " arguments at " + SourceSite{entry.source_script, entry.line}.describe() +
                          " but implemented with " + std::to_string(it->second.arity) +
                          " parameters at " + it->second.site.describe());
    }
  }

  std::ostringstream stubs;
  bool any_stub = false;
  for (const auto& entry : entries) {
    if (entry.implemented) continue;
    if (!any_stub) {
      stubs << "// Stubs for functions called from the scripts but not implemented yet.\n"
               "// Copy one into an implementation file under src/ and fill in its body.\n"
               "//\n"
               "// #include <hostbridge/guest.hpp>\n"
               "// using namespace hostbridge;\n";
      any_stub = true;
    }
    stubs << "//\n// HOSTBRIDGE_EXPORT(" << entry.name;
    for (const auto& p : entry.parameter_names) stubs << ", " << p;
    stubs << ") {  // called at " << SourceSite{entry.source_script, entry.line}.describe()
          << "\n//   return Value::null();\n// }\n";
  }

  std::ostringstream out;
  out << generated_marker << "\n"
      << "#include <hostbridge/export.hpp>\n\n"
      << "using hostbridge::raw::mh_cell;\n\n"
      << "extern \"C\" {\n";
  for (const auto& entry : entries) {
    out << "mh_cell " << entry.name << "(";
    for (std::size_t i = 0; i < entry.arity; ++i) out << (i ? ", " : "") << "mh_cell";
    out << ");\n";
  }
  if (!entries.empty()) out << "\n";
  out << "void hostbridge_register(void) {\n";
  for (const auto& entry : entries) {
    out << "  hostbridge::register_function(\"" << entry.name << "\", &" << entry.name << ");\n";
  }
  out << "}\n}\n";
  if (any_stub) out << "\n" << stubs.str();
  return {out.str(), stubs.str()};
}

struct RegisterOutcome {
  std::vector<RegistrationEntry> entries;
  fs::path output;
  bool changed = false;
};

/// Regenerates `<project>/src/registration.cpp` from `<project>/R`. The file
/// is rewritten only when its contents change.
inline RegisterOutcome register_calls(const fs::path& project) {
  if (!fs::is_directory(project)) throw std::runtime_error(project.string() + " is not a directory");
  RegisterOutcome outcome;
  outcome.entries = scan_scripts(project / "R");
  const auto implementations = scan_implementations(project / "src");
  const auto generated = generate_registration(outcome.entries, implementations);
  outcome.output = project / "src" / "registration.cpp";
  std::string existing;
  if (fs::exists(outcome.output)) existing = detail::read_file(outcome.output);
  if (existing != generated.source) {
    fs::create_directories(outcome.output.parent_path());
    std::ofstream out(outcome.output, std::ios::binary | std::ios::trunc);
    out << generated.source;
    if (!out) throw std::runtime_error("cannot write " + outcome.output.string());
    outcome.changed = true;
  }
  return outcome;
}

}  // namespace hostbridge::registration
