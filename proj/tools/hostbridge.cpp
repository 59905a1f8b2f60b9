#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <hostbridge/bench.hpp>
#include <hostbridge/embed.hpp>
#include <hostbridge/host.hpp>
#include <hostbridge/registration.hpp>
#include <hostbridge/scaffold.hpp>

namespace reg = hostbridge::registration;
namespace embed = hostbridge::embed;
namespace host = hostbridge::host;
namespace raw = hostbridge::raw;

namespace {

constexpr int exit_failure = 1;
constexpr int exit_conflict = 2;

void print_entries(const reg::RegisterOutcome& outcome) {
  for (const auto& e : outcome.entries) {
    std::cout << "  " << e.name << "/" << e.arity << (e.implemented ? "" : "  (stub)") << "  "
              << e.source_script.generic_string() << ":" << e.line << "\n";
  }
}

int run_new(const std::string& path) {
  const auto outcome = reg::scaffold_project(path, HOSTBRIDGE_INCLUDE_DIR);
  std::cout << "created " << path << "\n";
  print_entries(outcome);
  return 0;
}

int run_register(const std::string& path) {
  const auto outcome = reg::register_calls(path);
  std::cout << outcome.output.string() << (outcome.changed ? " updated" : " up to date") << "\n";
  print_entries(outcome);
  return 0;
}

std::vector<double> read_numbers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<double> values;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::size_t used = 0;
    const double v = std::stod(line, &used);
    if (line.find_first_not_of(" \t\r", used) != std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(number) + ": not a number");
    values.push_back(v);
  }
  return values;
}

struct EmbedOptions {
  std::vector<std::string> params;
  std::vector<std::string> deps;
  std::vector<std::string> inputs;
  std::string fallback;
  std::string min_toolchain;
  std::string compiler = HOSTBRIDGE_DEFAULT_CXX;
  std::string body_file;
};

int run_embed(const EmbedOptions& o) {
  if (!o.inputs.empty() && o.inputs.size() != o.params.size())
    throw std::runtime_error("give one --input file per --param");
  std::ifstream in(o.body_file);
  if (!in) throw std::runtime_error("cannot read " + o.body_file);
  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  raw::mh_init();
  auto policy = embed::resolve_policy();
  if (!o.fallback.empty()) policy.offline_fallback = o.fallback;
  if (!o.min_toolchain.empty()) policy.min_toolchain_version = o.min_toolchain;
  embed::Embedder embedder(policy, {o.compiler, HOSTBRIDGE_INCLUDE_DIR});
  std::string deps;
  for (const auto& d : o.deps) deps += (deps.empty() ? "" : " ") + d;
  auto snippet = embedder.build({o.params, body, deps});
  const auto& report = snippet.report();
  std::cerr << snippet.exported_name() << ": "
            << (report.used_fallback ? "loaded offline fallback"
                : report.cache_hit   ? "cache hit"
                                     : "built")
            << ", " << report.cpu_seconds << " CPU s, " << report.wall_seconds << " s wall\n";
  if (o.inputs.empty()) return 0;

  host::ProtectScope scope;
  std::vector<raw::mh_cell> args;
  for (const auto& file : o.inputs) args.push_back(scope.keep(host::doubles(read_numbers(file))));
  const auto outcome = snippet.call(args);
  if (!outcome.ok()) {
    std::cerr << "error: " << outcome.error << "\n";
    return exit_failure;
  }
  for (double v : host::read_doubles(outcome.value)) std::printf("%.17g\n", v);
  return 0;
}

int run_bench(std::size_t iters, std::size_t length, const std::string& library_path,
              const std::string& format) {
  raw::mh_init();
  const char* error = nullptr;
  raw::mh_library library = raw::mh_load_library(library_path.c_str(), &error);
  if (library == nullptr) throw std::runtime_error("cannot load " + library_path + ": " + error);
  const auto report = hostbridge::bench::run_benchmark(iters, length, library);
  if (format != "csv") std::cout << hostbridge::bench::format_text(report);
  if (format != "text") std::cout << hostbridge::bench::format_csv(report);
  return report.outputs_identical ? 0 : exit_failure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scaffold, register, embed and benchmark guest libraries for the mini host."};
  app.require_subcommand(1);

  std::string new_path;
  auto* cmd_new = app.add_subcommand("new", "Create a working guest project at PATH");
  cmd_new->add_option("path", new_path, "Directory to create")->required();

  std::string register_path;
  auto* cmd_register =
      app.add_subcommand("register", "Regenerate src/registration.cpp from the project's scripts");
  cmd_register->add_option("path", register_path, "Project directory")->required();

  EmbedOptions eo;
  auto* cmd_embed = app.add_subcommand("embed", "Build a snippet and run it on numeric inputs");
  cmd_embed->add_option("--param", eo.params, "Parameter name (repeatable, in order)");
  cmd_embed->add_option("--dep", eo.deps, "pkg-config package the snippet needs (repeatable)");
  cmd_embed->add_option("--input", eo.inputs, "One-number-per-line file for each parameter");
  cmd_embed->add_option("--fallback", eo.fallback, "Prebuilt library used when no compiler fits");
  cmd_embed->add_option("--min-toolchain", eo.min_toolchain, "Minimum compiler version");
  cmd_embed->add_option("--compiler", eo.compiler, "C++ compiler")->capture_default_str();
  cmd_embed->add_option("body", eo.body_file, "File holding the function body")->required();

  std::size_t iters = 100000;
  std::size_t length = 10;
  std::string library = HOSTBRIDGE_SAMPLES_LIBRARY;
  std::string format = "both";
  auto* cmd_bench = app.add_subcommand("bench", "Measure per-call overhead of bridged calls");
  cmd_bench->add_option("--iters", iters, "Calls per variant")->capture_default_str();
  cmd_bench->add_option("--len", length, "Input vector length")->capture_default_str();
  cmd_bench->add_option("--library", library, "Guest library exporting euclid_norm")
      ->capture_default_str();
  cmd_bench->add_option("--format", format, "text, csv or both")
      ->check(CLI::IsMember({"text", "csv", "both"}))
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_new) return run_new(new_path);
    if (*cmd_register) return run_register(register_path);
    if (*cmd_embed) return run_embed(eo);
    if (*cmd_bench) return run_bench(iters, length, library, format);
  } catch (const reg::ArityConflict& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_conflict;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_failure;
  }
  return exit_failure;
}
