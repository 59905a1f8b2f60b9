#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include <hostbridge/embed.hpp>
#include <hostbridge/host.hpp>

#include "support/support.hpp"
#include "support/logging_compiler.hpp"
#include "support/tempdir.hpp"

namespace fs = std::filesystem;
namespace embed = hostbridge::embed;
namespace host = hostbridge::host;
namespace raw = hostbridge::raw;

namespace {

using support::env_of;
using support::inside;
using support::LoggingCompiler;

const char* const norm_body =
    "const auto xs = x.slice_double().unwrap();\n"
    "double ss = 0.0;\n"
    "for (double z : xs) ss += z * z;\n"
    "return Value::new_scalar_double(std::sqrt(ss), pc);\n";

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename().string());
  return names;
}

double call_norm(embed::SnippetHandle& h, std::initializer_list<double> xs) {
  host::ProtectScope scope;
  auto out = h.call({scope.keep(host::doubles(xs))});
  if (!out.ok()) throw std::runtime_error(out.error);
  return raw::mh_as_real(out.value);
}

class Embedder : public ::testing::Test {
 protected:
  void SetUp() override { raw::mh_init(); }

  embed::Toolset tools(const LoggingCompiler& cxx) const {
    return {cxx.path(), HOSTBRIDGE_INCLUDE_DIR};
  }
  embed::BuildPolicy persistent() const {
    return embed::resolve_policy(env_of({{"HOSTBRIDGE_SAVE_CACHE", "TRUE"},
                                         {"XDG_CACHE_HOME", (tmp_ / "xdg").string()}}));
  }

  support::TempDir tmp_;
};

}  // namespace

TEST(Policy, DefaultsToAtMostTwoJobsAndATemporaryCache) {
  auto p = embed::resolve_policy(env_of({}), 8);
  EXPECT_EQ(p.max_jobs, 2u);
  EXPECT_FALSE(p.persistent_cache);
  EXPECT_TRUE(inside(p.cache_dir, fs::temp_directory_path()));
  EXPECT_TRUE(fs::is_directory(p.cache_dir));
  fs::remove_all(p.cache_dir);
  auto single = embed::resolve_policy(env_of({}), 1);
  EXPECT_EQ(single.max_jobs, 1u);
  fs::remove_all(single.cache_dir);
}

TEST(Policy, ZeroJobsMeansAllCores) {
  auto p = embed::resolve_policy(env_of({{"HOSTBRIDGE_BUILD_JOBS", "0"}}), 8);
  EXPECT_EQ(p.max_jobs, 8u);
  fs::remove_all(p.cache_dir);
  auto three = embed::resolve_policy(env_of({{"HOSTBRIDGE_BUILD_JOBS", "3"}}), 8);
  EXPECT_EQ(three.max_jobs, 3u);
  fs::remove_all(three.cache_dir);
}

TEST(Policy, MalformedJobsNameTheVariable) {
  for (const char* bad : {"", "two", "-1", "2.5", "99999999999"}) {
    try {
      embed::resolve_policy(env_of({{"HOSTBRIDGE_BUILD_JOBS", bad}}), 4);
      ADD_FAILURE() << "accepted '" << bad << "'";
    } catch (const embed::PolicyError& e) {
      EXPECT_NE(std::string(e.what()).find("HOSTBRIDGE_BUILD_JOBS"), std::string::npos);
    }
  }
}

TEST(Policy, SaveCacheSelectsThePerUserCache) {
  auto xdg = embed::resolve_policy(
      env_of({{"HOSTBRIDGE_SAVE_CACHE", "TRUE"}, {"XDG_CACHE_HOME", "/srv/cache"}, {"HOME", "/home/u"}}));
  EXPECT_TRUE(xdg.persistent_cache);
  EXPECT_EQ(xdg.cache_dir, fs::path("/srv/cache/hostbridge"));
  auto home = embed::resolve_policy(env_of({{"HOSTBRIDGE_SAVE_CACHE", "TRUE"}, {"HOME", "/home/u"}}));
  EXPECT_EQ(home.cache_dir, fs::path("/home/u/.cache/hostbridge"));
  auto other = embed::resolve_policy(env_of({{"HOSTBRIDGE_SAVE_CACHE", "yes"}}));
  EXPECT_FALSE(other.persistent_cache);
  fs::remove_all(other.cache_dir);
}

TEST(CacheKey, EveryFieldChangesTheKey) {
  const embed::SnippetSpec base{{"x"}, norm_body, ""};
  const auto key = embed::cache_key(base, "gcc 11");
  EXPECT_EQ(key.size(), 64u);
  EXPECT_EQ(key, embed::cache_key(base, "gcc 11"));
  EXPECT_NE(key, embed::cache_key({{"y"}, norm_body, ""}, "gcc 11"));
  EXPECT_NE(key, embed::cache_key({{"x"}, std::string(norm_body) + " ", ""}, "gcc 11"));
  EXPECT_NE(key, embed::cache_key({{"x"}, norm_body, "zlib"}, "gcc 11"));
  EXPECT_NE(key, embed::cache_key(base, "gcc 12"));
  // Length prefixes keep field boundaries apart.
  EXPECT_NE(embed::cache_key({{"ab"}, "c", ""}, "t"), embed::cache_key({{"a"}, "bc", ""}, "t"));
  EXPECT_NE(embed::exported_name(base), embed::exported_name({{"x"}, "return x;", ""}));
}

TEST(CacheKey, Sha256MatchesAKnownDigest) {
  EXPECT_EQ(embed::detail::sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Toolchain, VersionsCompareNumerically) {
  using embed::detail::compare_versions;
  EXPECT_LT(compare_versions("9.4.0", "11"), 0);
  EXPECT_EQ(compare_versions("11.0", "11"), 0);
  EXPECT_GT(compare_versions("11.4.0", "11"), 0);
  EXPECT_GT(compare_versions("12", "11.9.9"), 0);
}

TEST(Spec, InvalidSpecsAreRejected) {
  EXPECT_THROW(embed::validate({{"x"}, "  \n", ""}), embed::BuildError);
  EXPECT_THROW(embed::validate({{"1x"}, "return x;", ""}), embed::BuildError);
  EXPECT_THROW(embed::validate({{"pc"}, "return pc;", ""}), embed::BuildError);
  EXPECT_THROW(embed::validate({{"x", "x"}, "return x;", ""}), embed::BuildError);
  EXPECT_NO_THROW(embed::validate({{}, "return Value::null();", ""}));
}

TEST_F(Embedder, NormSnippetMatchesTheOracle) {
  LoggingCompiler cxx(tmp_.path());
  embed::Embedder embedder(persistent(), tools(cxx));
  auto norm = embedder.build({{"x"}, norm_body, ""});
  EXPECT_FALSE(norm.report().cache_hit);
  EXPECT_EQ(call_norm(norm, {3, 4}), 5.0);
  const std::vector<double> xs{0.5, -1.25, 2.0, 9.0};
  EXPECT_TRUE(support::close_relative(call_norm(norm, {0.5, -1.25, 2.0, 9.0}), support::norm_oracle(xs),
                                      1e-15));
}

TEST_F(Embedder, DefaultPolicyBuildStaysInsideTheTemporaryCache) {
  LoggingCompiler cxx(tmp_.path());
  const auto tmp_before = listing(fs::temp_directory_path());
  const auto cwd_before = listing(fs::current_path());
  auto policy = embed::resolve_policy(env_of({}));
  const fs::path cache = policy.cache_dir;
  const auto expected_jobs = std::min<std::size_t>(2, embed::available_cores());
  {
    embed::Embedder embedder(policy, tools(cxx));
    auto norm = embedder.build({{"x"}, norm_body, ""});
    EXPECT_EQ(call_norm(norm, {6, 8}), 10.0);

    const auto& command = norm.report().command;
    ASSERT_FALSE(command.empty());
    EXPECT_EQ(command[1], "-j" + std::to_string(expected_jobs));
    EXPECT_LE(expected_jobs, 2u);
    const auto lines = cxx.lines();
    ASSERT_FALSE(lines.empty());
    for (const auto& line : lines) {
      std::istringstream fields(line);
      std::string cwd, tmpdir, args;
      std::getline(fields, cwd, '|');
      std::getline(fields, tmpdir, '|');
      std::getline(fields, args);
      EXPECT_TRUE(inside(tmpdir, cache)) << line;
      std::istringstream words(args);
      for (std::string w, prev; words >> w; prev = w) {
        if (prev == "-o") {
          EXPECT_TRUE(inside(fs::path(cwd) / w, cache)) << line;
        }
      }
    }
    for (const auto& entry : fs::recursive_directory_iterator(cache)) EXPECT_TRUE(inside(entry.path(), cache));
  }
  EXPECT_FALSE(fs::exists(cache)) << "temporary cache should be removed";
  auto tmp_after = listing(fs::temp_directory_path());
  tmp_after.erase(tmp_.path().filename().string());
  auto tmp_expected = tmp_before;
  tmp_expected.erase(tmp_.path().filename().string());
  EXPECT_EQ(tmp_after, tmp_expected);
  EXPECT_EQ(listing(fs::current_path()), cwd_before);
}

TEST_F(Embedder, IdenticalSpecIsACacheHitWithNoCompilerInvocation) {
  LoggingCompiler cxx(tmp_.path());
  const embed::SnippetSpec spec{{"x"}, norm_body, ""};
  std::string key;
  {
    embed::Embedder first(persistent(), tools(cxx));
    auto h = first.build(spec);
    key = h.key();
  }
  const auto before = cxx.lines().size();
  embed::Embedder second(persistent(), tools(cxx));
  auto h = second.build(spec);
  EXPECT_TRUE(h.report().cache_hit);
  EXPECT_TRUE(h.report().command.empty());
  EXPECT_EQ(h.key(), key);
  EXPECT_EQ(cxx.lines().size(), before);
  EXPECT_EQ(call_norm(h, {3, 4}), 5.0);
}

TEST_F(Embedder, ChangedBodyRebuildsOnlyTheSnippet) {
  LoggingCompiler cxx(tmp_.path());
  embed::Embedder embedder(persistent(), tools(cxx));
  auto first = embedder.build({{"x"}, norm_body, ""});
  EXPECT_EQ(cxx.compiles(), 2u);  // shared header, then the snippet
  auto second = embedder.build({{"x"}, std::string(norm_body) + "\n", ""});
  EXPECT_FALSE(second.report().cache_hit);
  EXPECT_EQ(cxx.compiles(), 3u);
  EXPECT_NE(first.key(), second.key());
}

TEST_F(Embedder, ReleasedSnippetIsAnUnknownFunction) {
  LoggingCompiler cxx(tmp_.path());
  embed::Embedder embedder(persistent(), tools(cxx));
  auto norm = embedder.build({{"x"}, norm_body, ""});
  const std::string name = norm.exported_name();
  EXPECT_EQ(call_norm(norm, {3, 4}), 5.0);
  norm.release();
  EXPECT_FALSE(norm.live());
  host::ProtectScope scope;
  raw::mh_cell x = scope.keep(host::doubles({3, 4}));
  EXPECT_EQ(norm.call({x}).error, "unknown function");
  EXPECT_EQ(host::call(name, {x}).error, "unknown function");
  EXPECT_NO_THROW(norm.release());
  auto again = embedder.build({{"x"}, norm_body, ""});
  EXPECT_TRUE(again.report().cache_hit);
  EXPECT_EQ(call_norm(again, {5, 12}), 13.0);
}

TEST_F(Embedder, TwoSnippetsAreIndependentlyCallable) {
  LoggingCompiler cxx(tmp_.path());
  embed::Embedder embedder(persistent(), tools(cxx));
  auto norm = embedder.build({{"x"}, norm_body, ""});
  auto total = embedder.build(
      {{"x", "y"},
       "double s = 0.0;\nfor (double v : x.slice_double().unwrap()) s += v;\n"
       "return Value::new_scalar_double(s + y.as_f64().unwrap(), pc);\n",
       ""});
  host::ProtectScope scope;
  raw::mh_cell x = scope.keep(host::doubles({3, 4}));
  raw::mh_cell y = scope.keep(host::doubles({10}));
  EXPECT_EQ(raw::mh_as_real(total.call({x, y}).value), 17.0);
  EXPECT_EQ(call_norm(norm, {3, 4}), 5.0);
  total.release();
  EXPECT_EQ(call_norm(norm, {3, 4}), 5.0);
  EXPECT_NE(norm.call({x, y}).error.find("expects 1 arguments, got 2"), std::string::npos);
}

TEST_F(Embedder, SnippetPanicsBecomeErrorsPointingIntoTheSnippet) {
  LoggingCompiler cxx(tmp_.path());
  embed::Embedder embedder(persistent(), tools(cxx));
  auto h = embedder.build({{"x"}, "if (x.len() == 0) panic(\"empty input\");\nreturn x;\n", ""});
  host::ProtectScope scope;
  auto out = h.call({scope.keep(host::doubles(std::vector<double>{}))});
  EXPECT_NE(out.error.find("panicked at 'empty input', snippet:1:"), std::string::npos) << out.error;
  EXPECT_EQ(out.imbalance, 0);
}

TEST_F(Embedder, CompileFailureCarriesTheCompilerOutput) {
  LoggingCompiler cxx(tmp_.path());
  embed::Embedder embedder(persistent(), tools(cxx));
  try {
    embedder.build({{"x"}, "return no_such_variable;\n", ""});
    FAIL() << "expected a build error";
  } catch (const embed::BuildError& e) {
    EXPECT_NE(std::string(e.what()).find("no_such_variable"), std::string::npos) << e.what();
  }
}

TEST_F(Embedder, OldOrMissingToolchainUsesTheOfflineFallback) {
  LoggingCompiler cxx(tmp_.path());
  const embed::SnippetSpec spec{{"x"}, norm_body, ""};
  const fs::path prebuilt = tmp_ / "prebuilt" / "libnorm.so";
  {
    embed::Embedder builder(persistent(), tools(cxx));
    auto h = builder.build(spec);
    fs::create_directories(prebuilt.parent_path());
    fs::copy_file(builder.policy().cache_dir / "snippets" / h.key() / "libsnippet.so", prebuilt);
  }
  auto policy = persistent();
  policy.min_toolchain_version = "999";
  EXPECT_THROW(embed::Embedder(policy, tools(cxx)).build(spec), embed::BuildError);
  policy.offline_fallback = prebuilt;
  embed::Embedder old(policy, tools(cxx));
  auto h = old.build(spec);
  EXPECT_TRUE(h.report().used_fallback);
  EXPECT_EQ(call_norm(h, {3, 4}), 5.0);
  h.release();

  auto missing = persistent();
  missing.offline_fallback = prebuilt;
  embed::Embedder none(missing, {"/nonexistent/c++", HOSTBRIDGE_INCLUDE_DIR});
  auto f = none.build(spec);
  EXPECT_TRUE(f.report().used_fallback);
  EXPECT_EQ(call_norm(f, {6, 8}), 10.0);
  f.release();

  auto wrong = embed::SnippetSpec{{"x"}, "return x;\n", ""};
  EXPECT_THROW(none.build(wrong), embed::BuildError);
}

TEST_F(Embedder, CliBuildsAndRunsASnippetOnAnInputFile) {
  std::ofstream(tmp_ / "body.cpp") << norm_body;
  std::ofstream(tmp_ / "x.txt") << "3\n4\n";
  const auto result = embed::detail::run_command(
      {HOSTBRIDGE_CLI, "embed", "--param", "x", "--input", (tmp_ / "x.txt").string(),
       (tmp_ / "body.cpp").string()},
      {{"HOSTBRIDGE_SAVE_CACHE", "TRUE"}, {"XDG_CACHE_HOME", (tmp_ / "xdg").string()}});
  EXPECT_EQ(result.status, 0) << result.output;
  EXPECT_NE(result.output.find("\n5\n"), std::string::npos) << result.output;
}
