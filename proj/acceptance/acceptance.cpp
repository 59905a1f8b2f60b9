// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <hostbridge/bench.hpp>
#include <hostbridge/embed.hpp>
#include <hostbridge/host.hpp>
#include <hostbridge/registration.hpp>

#include "support/logging_compiler.hpp"
#include "support/support.hpp"
#include "support/tempdir.hpp"

namespace fs = std::filesystem;
namespace bench = hostbridge::bench;
namespace embed = hostbridge::embed;
namespace host = hostbridge::host;
namespace raw = hostbridge::raw;
namespace reg = hostbridge::registration;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

const char* const norm_body =
    "const auto xs = x.slice_double().unwrap();\n"
    "double ss = 0.0;\n"
    "for (double z : xs) ss += z * z;\n"
    "return Value::new_scalar_double(std::sqrt(ss), pc);\n";

raw::mh_cell root_form() {
  return support::unary_form("square_minus_four", &support::support_square_minus_four);
}

// -- protect balance --------------------------------------------------------

Verdict protect_balance() {
  support::samples();
  host::ProtectScope scope;
  raw::mh_cell f = scope.keep(root_form());
  raw::mh_cell failing = scope.keep(support::unary_form("failing", &support::support_failing));
  raw::mh_cell rho = scope.keep(support::new_env());
  const std::int64_t base = raw::mh_protect_depth();

  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> unif(-50.0, 50.0);
  auto random_doubles = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = unif(rng);
    return v;
  };

  struct Request {
    std::string function;
    std::vector<raw::mh_cell> args;
  };
  using Case = std::function<Request(host::ProtectScope&)>;
  const std::vector<std::pair<std::string, Case>> cases = {
      {"myrnorm ok", [&](host::ProtectScope& s) {
         return Request{"myrnorm", {s.keep(host::integers({static_cast<int>(rng() % 20)})),
                                    s.keep(host::doubles({1.0})), s.keep(host::doubles({2.0}))}};
       }},
      {"myrnorm text n", [&](host::ProtectScope& s) {
         return Request{"myrnorm", {s.keep(host::text("x")), s.keep(host::doubles({0.0})),
                                    s.keep(host::doubles({1.0}))}};
       }},
      {"myrnorm negative n", [&](host::ProtectScope& s) {
         return Request{"myrnorm", {s.keep(host::integers({-3})), s.keep(host::doubles({0.0})),
                                    s.keep(host::doubles({1.0}))}};
       }},
      {"myrnorm env mean", [&](host::ProtectScope& s) {
         return Request{"myrnorm", {s.keep(host::integers({2})), rho, s.keep(host::doubles({1.0}))}};
       }},
      {"convolve2 ok", [&](host::ProtectScope& s) {
         return Request{"convolve2", {s.keep(host::doubles(random_doubles(rng() % 21))),
                                      s.keep(host::doubles(random_doubles(rng() % 21)))}};
       }},
      {"convolve2 integers", [&](host::ProtectScope& s) {
         return Request{"convolve2", {s.keep(host::integers({1, 2, 3})), s.keep(host::integers({4}))}};
       }},
      {"convolve2 text", [&](host::ProtectScope& s) {
         return Request{"convolve2", {s.keep(host::text("a")), s.keep(host::doubles({1.0}))}};
       }},
      {"zero ok", [&](host::ProtectScope& s) {
         return Request{"zero", {f, s.keep(host::doubles({0, 10})), s.keep(host::doubles({1e-6})), rho}};
       }},
      {"zero early return", [&](host::ProtectScope& s) {
         return Request{"zero", {f, s.keep(host::doubles({2, 10})), s.keep(host::doubles({1e-6})), rho}};
       }},
      {"zero tol", [&](host::ProtectScope& s) {
         return Request{"zero", {f, s.keep(host::doubles({0, 10})), s.keep(host::doubles({0.0})), rho}};
       }},
      {"zero same sign", [&](host::ProtectScope& s) {
         return Request{"zero", {f, s.keep(host::doubles({3, 10})), s.keep(host::doubles({1e-6})), rho}};
       }},
      {"zero short guesses", [&](host::ProtectScope& s) {
         return Request{"zero", {f, s.keep(host::doubles({1})), s.keep(host::doubles({1e-6})), rho}};
       }},
      {"zero integer guesses", [&](host::ProtectScope& s) {
         return Request{"zero", {f, s.keep(host::integers({0, 10})), s.keep(host::doubles({1e-6})), rho}};
       }},
      {"zero bad env", [&](host::ProtectScope& s) {
         return Request{"zero", {f, s.keep(host::doubles({0, 10})), s.keep(host::doubles({1e-6})),
                                 s.keep(host::doubles({0}))}};
       }},
      {"zero failing f", [&](host::ProtectScope& s) {
         return Request{"zero", {failing, s.keep(host::doubles({0, 10})), s.keep(host::doubles({1e-6})), rho}};
       }},
      {"euclid_norm ok", [&](host::ProtectScope& s) {
         return Request{"euclid_norm", {s.keep(host::doubles(random_doubles(rng() % 30)))}};
       }},
      {"euclid_norm integers", [&](host::ProtectScope& s) {
         return Request{"euclid_norm", {s.keep(host::integers({3, 4}))}};
       }},
      {"arity mismatch", [&](host::ProtectScope& s) {
         return Request{"euclid_norm", {s.keep(host::doubles({1.0})), s.keep(host::doubles({1.0}))}};
       }},
  };

  std::set<std::string> seen_errors;
  std::size_t calls = 0;
  for (int i = 0; i < 3000; ++i) {
    const auto& [label, run] = cases[rng() % cases.size()];
    std::int64_t before = 0;
    host::CallOutcome out;
    {
      host::ProtectScope s;
      const Request request = run(s);
      before = raw::mh_protect_depth();
      out = host::call(request.function, request.args);
      if (out.imbalance != 0 || raw::mh_protect_depth() != before) {
        return {false, label + ": depth " + std::to_string(raw::mh_protect_depth()) + " vs " +
                           std::to_string(before) + ", callee left " + std::to_string(out.imbalance)};
      }
    }
    if (raw::mh_protect_depth() != base) return {false, label + ": baseline drifted"};
    if (!out.ok()) seen_errors.insert(label);
    ++calls;
  }
  return {seen_errors.size() >= 10,
          std::to_string(calls) + " random calls, " + std::to_string(seen_errors.size()) +
              " distinct error paths exercised, depth back to baseline after every call"};
}

// -- panic conversion -------------------------------------------------------

Verdict panic_conversion() {
  support::samples();
  host::ProtectScope s;
  raw::mh_cell f = s.keep(root_form());
  raw::mh_cell rho = s.keep(support::new_env());
  auto failed = host::call("zero", {f, s.keep(host::doubles({0, 10})), s.keep(host::doubles({0.0})), rho});
  const bool has_message = failed.error.find("non-positive tol value") != std::string::npos;
  const bool has_location = std::regex_search(failed.error, std::regex(R"([^\s',]+\.cpp:\d+:\d+)"));
  auto next = host::call("zero", {f, s.keep(host::doubles({0, 10})), s.keep(host::doubles({1e-6})), rho});
  const bool recovered = next.ok() && std::abs(raw::mh_as_real(next.value) - 2.0) <= 1e-6;
  return {has_message && has_location && recovered,
          "error \"" + failed.error + "\"; next call " +
              (next.ok() ? "returned " + std::to_string(raw::mh_as_real(next.value)) : next.error)};
}

// -- numeric oracles --------------------------------------------------------

Verdict numeric_oracles() {
  support::samples();
  const auto start = Clock::now();
  std::mt19937_64 rng(7031);
  std::uniform_int_distribution<int> length(0, 20);
  std::uniform_int_distribution<int> ints(-1000, 1000);
  std::uniform_real_distribution<double> reals(-1e3, 1e3);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    host::ProtectScope s;
    std::vector<double> a(static_cast<std::size_t>(length(rng)));
    std::vector<double> b(static_cast<std::size_t>(length(rng)));
    const bool integer_a = trial % 2 == 0;
    const bool integer_b = trial % 3 == 0;
    std::vector<std::int32_t> ia;
    std::vector<std::int32_t> ib;
    for (double& v : a) {
      if (integer_a) {
        ia.push_back(ints(rng));
        v = ia.back();
      } else {
        v = reals(rng);
      }
    }
    for (double& v : b) {
      if (integer_b) {
        ib.push_back(ints(rng));
        v = ib.back();
      } else {
        v = reals(rng);
      }
    }
    raw::mh_cell ca = s.keep(integer_a ? host::integers(ia) : host::doubles(a));
    raw::mh_cell cb = s.keep(integer_b ? host::integers(ib) : host::doubles(b));
    auto out = host::call("convolve2", {ca, cb});
    if (!out.ok()) return {false, "convolve2 failed: " + out.error};
    const auto got = host::read_doubles(out.value);
    const auto want = support::convolution_oracle(a, b);
    if (got.size() != want.size()) return {false, "length mismatch on trial " + std::to_string(trial)};
    for (std::size_t k = 0; k < got.size(); ++k) {
      if (!support::close_relative(got[k], want[k], 1e-12)) ++mismatches;
    }
  }

  host::ProtectScope s;
  raw::mh_cell f = s.keep(root_form());
  raw::mh_cell rho = s.keep(support::new_env());
  auto zero = host::call("zero", {f, s.keep(host::doubles({0, 10})), s.keep(host::doubles({1e-6})), rho});
  const double root = zero.ok() ? raw::mh_as_real(zero.value) : NAN;
  const double oracle = support::bisection_oracle([](double x) { return x * x - 4.0; }, 0.0, 10.0, 1e-6);
  const double elapsed = seconds_since(start);
  const bool pass = mismatches == 0 && std::abs(root - 2.0) <= 1e-6 && std::abs(root - oracle) <= 1e-6 &&
                    elapsed < 5.0;
  char detail[256];
  std::snprintf(detail, sizeof detail,
                "convolve2: 100 pairs, %d elements off by more than 1e-12 relative; zero: %.9f "
                "(|err| %.2e, oracle %.9f); %.3f s",
                mismatches, root, std::abs(root - 2.0), oracle, elapsed);
  return {pass, detail};
}

// -- RNG reproducibility ----------------------------------------------------

Verdict rng_reproducibility() {
  support::samples();
  host::ProtectScope s;
  raw::mh_rng_set_seed(7);
  auto out = host::call("myrnorm", {s.keep(host::doubles({5})), s.keep(host::doubles({0})),
                                    s.keep(host::doubles({1}))});
  if (!out.ok()) return {false, out.error};
  const auto got = host::read_doubles(out.value);
  raw::mh_rng_set_seed(7);
  std::vector<double> want(5);
  raw::mh_rng_get();
  for (double& x : want) x = raw::mh_rng_norm(0.0, 1.0);
  raw::mh_rng_put();
  const bool same = got.size() == 5 && std::memcmp(got.data(), want.data(), 5 * sizeof(double)) == 0;
  std::ostringstream detail;
  detail.precision(17);
  detail << "seed 7: ";
  for (double v : got) detail << v << " ";
  detail << (same ? "(bit-identical to direct draws)" : "(differs from direct draws)");
  return {same, detail.str()};
}

// -- registration tool ------------------------------------------------------

Verdict registration_tool() {
  support::TempDir tmp;
  for (const char* name : {"first", "second"}) {
    fs::create_directories(tmp / name);
    fs::copy(fs::path(HOSTBRIDGE_FIXTURES) / "bar" / "R", tmp / name / "R", fs::copy_options::recursive);
    fs::create_directories(tmp / name / "src");
  }
  const auto first = reg::register_calls(tmp / "first");
  const auto second = reg::register_calls(tmp / "second");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  const std::string text = slurp(first.output);
  const bool deterministic = text == slurp(second.output);
  const bool entry = first.entries.size() == 1 && first.entries[0].name == "bar" && first.entries[0].arity == 2;
  const bool stub = text.find("// HOSTBRIDGE_EXPORT(bar, x, y) {") != std::string::npos;
  const bool registered = text.find("register_function(\"bar\", &bar)") != std::string::npos;
  const auto again = reg::register_calls(tmp / "first");
  const bool fixed_point = !again.changed && slurp(again.output) == text;
  return {deterministic && entry && stub && registered && fixed_point,
          std::string("entry bar/2: ") + (entry ? "yes" : "no") + ", stub with two parameters: " +
              (stub ? "yes" : "no") + ", identical across trees: " + (deterministic ? "yes" : "no") +
              ", regeneration unchanged: " + (fixed_point ? "yes" : "no")};
}

// -- embedder policy --------------------------------------------------------

Verdict embedder_policy() {
  raw::mh_init();
  support::TempDir tmp;
  support::LoggingCompiler cxx(tmp.path());
  const embed::Toolset logged{cxx.path(), HOSTBRIDGE_INCLUDE_DIR};
  std::vector<std::string> failures;

  // Default policy: temporary cache, at most two jobs, no writes elsewhere.
  const auto expected_jobs = std::min<std::size_t>(2, embed::available_cores());
  std::set<std::string> tmp_before;
  for (const auto& e : fs::directory_iterator(fs::temp_directory_path()))
    tmp_before.insert(e.path().filename().string());
  auto policy = embed::resolve_policy(support::env_of({}));
  const fs::path cache = policy.cache_dir;
  std::string jobs_flag;
  bool outputs_inside = true;
  {
    embed::Embedder embedder(policy, logged);
    auto h = embedder.build({{"x"}, norm_body, ""});
    jobs_flag = h.report().command.size() > 1 ? h.report().command[1] : "";
    for (const auto& line : cxx.lines()) {
      std::istringstream fields(line);
      std::string cwd, tmpdir, args;
      std::getline(fields, cwd, '|');
      std::getline(fields, tmpdir, '|');
      std::getline(fields, args);
      if (!support::inside(tmpdir, cache)) outputs_inside = false;
      std::istringstream words(args);
      for (std::string w, prev; words >> w; prev = w) {
        if (prev == "-o" && !support::inside(fs::path(cwd) / w, cache)) outputs_inside = false;
      }
    }
  }
  std::set<std::string> tmp_after;
  for (const auto& e : fs::directory_iterator(fs::temp_directory_path()))
    tmp_after.insert(e.path().filename().string());
  if (jobs_flag != "-j" + std::to_string(expected_jobs)) failures.push_back("job flag " + jobs_flag);
  if (!outputs_inside) failures.push_back("compiler wrote outside the temporary cache");
  if (fs::exists(cache)) failures.push_back("temporary cache not removed");
  if (tmp_after != tmp_before) failures.push_back("stray entries in the temp directory");

  // Persistent cache: identical spec performs no compiler invocation.
  const auto save_env = support::env_of({{"HOSTBRIDGE_SAVE_CACHE", "TRUE"},
                                         {"XDG_CACHE_HOME", (tmp / "xdg").string()}});
  {
    embed::Embedder first(embed::resolve_policy(save_env), logged);
    auto h = first.build({{"x"}, norm_body, ""});
  }
  const auto before = cxx.lines().size();
  bool hit = false;
  {
    embed::Embedder second(embed::resolve_policy(save_env), logged);
    auto h = second.build({{"x"}, norm_body, ""});
    hit = h.report().cache_hit;
  }
  const auto invocations = cxx.lines().size() - before;
  if (!hit || invocations != 0) failures.push_back("rebuild invoked the compiler " + std::to_string(invocations) + " times");

  // Cold build in an empty cache versus a one-character body change.
  const auto timing_env = support::env_of({{"HOSTBRIDGE_SAVE_CACHE", "TRUE"},
                                           {"XDG_CACHE_HOME", (tmp / "timing").string()}});
  embed::Embedder timing(embed::resolve_policy(timing_env), {HOSTBRIDGE_DEFAULT_CXX, HOSTBRIDGE_INCLUDE_DIR});
  auto cold = timing.build({{"x"}, norm_body, ""});
  std::string changed = norm_body;
  changed.replace(changed.find("0.0"), 3, "0.5");
  auto warm = timing.build({{"x"}, changed, ""});
  const double cold_cpu = cold.report().cpu_seconds;
  const double warm_cpu = warm.report().cpu_seconds;
  const double speedup = warm_cpu > 0 ? cold_cpu / warm_cpu : 0.0;
  if (speedup < 3.0) failures.push_back("warm rebuild only " + std::to_string(speedup) + "x faster");

  char detail[320];
  std::snprintf(detail, sizeof detail,
                "default: %s, outputs inside temp cache, cache removed; persistent rebuild: %zu compiler "
                "invocations; cold %.2f CPU s (%.2f s wall), warm %.2f CPU s (%.2f s wall), %.1fx",
                jobs_flag.c_str(), invocations, cold_cpu, cold.report().wall_seconds, warm_cpu,
                warm.report().wall_seconds, speedup);
  std::string text = detail;
  for (const auto& f : failures) text += "; " + f;
  return {failures.empty(), text};
}

// -- overhead benchmark -----------------------------------------------------

Verdict overhead_benchmark() {
  const auto start = Clock::now();
  const auto report = bench::run_benchmark(100000, 10, support::samples());
  const double elapsed = seconds_since(start);
  const auto& native = report.variant("native");
  const auto& bridged = report.variant("bridged");
  const auto& uncached = report.variant("uncached");
  const double ratio = bridged.mean_ns / native.mean_ns;
  char detail[256];
  std::snprintf(detail, sizeof detail,
                "%zu calls each at length 10: native %.1f ns, bridged %.1f ns, uncached %.1f ns "
                "(mean); bridged/native %.2f; outputs identical: %s; %.1f s",
                report.iterations, native.mean_ns, bridged.mean_ns, uncached.mean_ns, ratio,
                report.outputs_identical ? "yes" : "no", elapsed);
  return {report.iterations >= 100000 && ratio <= 3.0 && report.outputs_identical && elapsed < 60.0,
          detail};
}

// -- unload semantics -------------------------------------------------------

Verdict unload_semantics() {
  support::samples();
  support::TempDir tmp;
  const auto env = support::env_of({{"HOSTBRIDGE_SAVE_CACHE", "TRUE"}, {"XDG_CACHE_HOME", (tmp / "xdg").string()}});
  embed::Embedder embedder(embed::resolve_policy(env), {HOSTBRIDGE_DEFAULT_CXX, HOSTBRIDGE_INCLUDE_DIR});
  auto norm = embedder.build({{"x"}, norm_body, ""});
  const std::string name = norm.exported_name();
  host::ProtectScope s;
  raw::mh_cell x = s.keep(host::doubles({3, 4}));
  auto before = norm.call({x});
  norm.release();
  auto after = host::call(name, {x});
  auto via_handle = norm.call({x});
  auto healthy = host::call("euclid_norm", {x});
  auto rebuilt = embedder.build({{"x"}, norm_body, ""});
  auto again = rebuilt.call({x});
  const bool pass = before.ok() && raw::mh_as_real(before.value) == 5.0 && after.error == "unknown function" &&
                    via_handle.error == "unknown function" && healthy.ok() &&
                    raw::mh_as_real(healthy.value) == 5.0 && again.ok() && raw::mh_as_real(again.value) == 5.0;
  return {pass, "after release: \"" + after.error + "\"; later calls " +
                    (healthy.ok() && again.ok() ? "succeed" : "fail")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"protect_balance", protect_balance},
      {"panic_conversion", panic_conversion},
      {"numeric_oracles", numeric_oracles},
      {"rng_reproducibility", rng_reproducibility},
      {"registration_tool", registration_tool},
      {"embedder_policy", embedder_policy},
      {"overhead_benchmark", overhead_benchmark},
      {"unload_semantics", unload_semantics},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %-20s %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
    if (!v.pass) ++failed;
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}
