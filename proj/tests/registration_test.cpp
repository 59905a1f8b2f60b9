#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include <hostbridge/embed.hpp>
#include <hostbridge/host.hpp>
#include <hostbridge/registration.hpp>
#include <hostbridge/scaffold.hpp>

#include "support/support.hpp"
#include "support/tempdir.hpp"

namespace fs = std::filesystem;
namespace reg = hostbridge::registration;
namespace host = hostbridge::host;
namespace raw = hostbridge::raw;
using hostbridge::embed::detail::run_command;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

fs::path copy_fixture(const support::TempDir& tmp, const std::string& name) {
  const fs::path to = tmp / name;
  fs::copy(fs::path(HOSTBRIDGE_FIXTURES) / name, to, fs::copy_options::recursive);
  return to;
}

}  // namespace

TEST(Scanner, FindsNameAndArity) {
  const auto sites = reg::scan_text("bar <- function(x, y) .Call(.bar, x, y)\n", "a.R");
  ASSERT_EQ(sites.size(), 1u);
  EXPECT_EQ(sites[0].name, "bar");
  EXPECT_EQ(sites[0].arguments, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(sites[0].site.line, 1u);
}

TEST(Scanner, CountsExpressionArgumentsAtTopLevelOnly) {
  const auto sites = reg::scan_text(
      ".Call(.f, g(a, b), c[1, 2], {x; y}, \"p,q)\", 'r(')\n"
      ".Call(.none)\n"
      ".Call( .spaced ,\n  z  # trailing comment, with a comma)\n)\n",
      "b.R");
  ASSERT_EQ(sites.size(), 3u);
  EXPECT_EQ(sites[0].arguments.size(), 5u);
  EXPECT_EQ(sites[1].name, "none");
  EXPECT_TRUE(sites[1].arguments.empty());
  EXPECT_EQ(sites[2].name, "spaced");
  EXPECT_EQ(sites[2].arguments.size(), 1u);
  EXPECT_EQ(sites[2].site.line, 3u);
}

TEST(Scanner, IgnoresCommentsStringsAndOtherCallStyles) {
  const auto sites = reg::scan_text(
      "# .Call(.commented, x)\n"
      "s <- \".Call(.quoted, x)\"\n"
      "my.Call(.other, x)\n"
      ".Call(\"by_string\", x)\n"
      ".Call(C_symbol, x)\n",
      "c.R");
  EXPECT_TRUE(sites.empty());
}

TEST(Scanner, RejectsDottedNamesAndUnterminatedCalls) {
  EXPECT_THROW(reg::scan_text(".Call(.my.fun, x)", "d.R"), reg::ScanError);
  EXPECT_THROW(reg::scan_text(".Call(.f, x", "d.R"), reg::ScanError);
}

TEST(ScanScripts, BarFixtureYieldsOneEntry) {
  const auto entries = reg::scan_scripts(fs::path(HOSTBRIDGE_FIXTURES) / "bar" / "R");
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].name, "bar");
  EXPECT_EQ(entries[0].arity, 2u);
  EXPECT_EQ(entries[0].source_script.generic_string(), "R/bar.R");
  EXPECT_FALSE(entries[0].implemented);
}

TEST(ScanScripts, EmptyOrMissingDirectoryYieldsNothing) {
  support::TempDir tmp;
  EXPECT_TRUE(reg::scan_scripts(tmp.path()).empty());
  EXPECT_TRUE(reg::scan_scripts(tmp / "missing").empty());
}

TEST(ScanScripts, EqualArityDuplicatesCollapse) {
  const auto entries = reg::scan_scripts(fs::path(HOSTBRIDGE_FIXTURES) / "dedup" / "R");
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].name, "f");
  EXPECT_EQ(entries[0].arity, 1u);
}

TEST(ScanScripts, ConflictingAritiesNameBothSites) {
  try {
    reg::scan_scripts(fs::path(HOSTBRIDGE_FIXTURES) / "conflict" / "R");
    FAIL() << "expected a conflict";
  } catch (const reg::ArityConflict& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("R/a.R:1"), std::string::npos) << what;
    EXPECT_NE(what.find("R/b.R:2"), std::string::npos) << what;
  }
}

TEST(Generate, StubForAnUnimplementedTwoArgumentFunction) {
  auto entries = reg::scan_scripts(fs::path(HOSTBRIDGE_FIXTURES) / "bar" / "R");
  const auto out = reg::generate_registration(entries, {});
  EXPECT_NE(out.stubs.find("// HOSTBRIDGE_EXPORT(bar, x, y) {"), std::string::npos) << out.stubs;
  EXPECT_NE(out.source.find("hostbridge::register_function(\"bar\", &bar);"), std::string::npos);
  EXPECT_NE(out.source.find("mh_cell bar(mh_cell, mh_cell);"), std::string::npos);
  EXPECT_TRUE(out.source.starts_with(reg::generated_marker));
  EXPECT_NE(out.source.find(out.stubs), std::string::npos);
}

TEST(Generate, EmptyTable) {
  std::vector<reg::RegistrationEntry> none;
  const auto out = reg::generate_registration(none, {});
  EXPECT_NE(out.source.find("void hostbridge_register(void) {\n}"), std::string::npos);
  EXPECT_TRUE(out.stubs.empty());
}

TEST(Generate, ImplementedFunctionsGetNoStub) {
  std::vector<reg::RegistrationEntry> table{{"f", 1, "R/x.R", 1, {"a"}, false}};
  const auto out = reg::generate_registration(table, {{"f", {"f", 1, {"src/lib.cpp", 3}}}});
  EXPECT_TRUE(table[0].implemented);
  EXPECT_TRUE(out.stubs.empty());
  EXPECT_NE(out.source.find("register_function(\"f\", &f)"), std::string::npos);
}

TEST(Generate, ImplementationWithADifferentArityIsAConflict) {
  support::TempDir tmp;
  const fs::path project = copy_fixture(tmp, "mismatch");
  EXPECT_THROW(reg::register_calls(project), reg::ArityConflict);
  EXPECT_FALSE(fs::exists(project / "src" / "registration.cpp"));
}

TEST(Generate, ExportScannerSkipsCommentsAndDirectives) {
  const auto found = reg::scan_exports(
      "#define HOSTBRIDGE_EXPORT(name, ...) x\n"
      "// HOSTBRIDGE_EXPORT(commented, a) {\n"
      "/* HOSTBRIDGE_EXPORT(blocked, a) */\n"
      "HOSTBRIDGE_EXPORT(real_one, a, b) {\n",
      "src/lib.cpp");
  ASSERT_EQ(found.size(), 1u);
  EXPECT_EQ(found[0].name, "real_one");
  EXPECT_EQ(found[0].arity, 2u);
  EXPECT_EQ(found[0].site.line, 4u);
}

TEST(Register, RegenerationIsAByteLevelFixedPoint) {
  support::TempDir tmp;
  const fs::path project = copy_fixture(tmp, "bar");
  const auto first = reg::register_calls(project);
  EXPECT_TRUE(first.changed);
  const std::string bytes = slurp(first.output);
  const auto before = fs::last_write_time(first.output);
  const auto second = reg::register_calls(project);
  EXPECT_FALSE(second.changed);
  EXPECT_EQ(slurp(second.output), bytes);
  EXPECT_EQ(fs::last_write_time(second.output), before);
}

TEST(Register, OutputDoesNotDependOnFileCreationOrder) {
  support::TempDir tmp;
  const std::vector<std::pair<std::string, std::string>> files{
      {"R/z.R", "z <- function(a) .Call(.zeta, a)\n"},
      {"R/a.R", "a <- function(a, b) .Call(.alpha, a, b)\n"},
      {"R/sub/m.R", "m <- function() .Call(.mid)\n"}};
  for (const auto& [name, text] : files) write(tmp / "forward" / name, text);
  for (auto it = files.rbegin(); it != files.rend(); ++it) write(tmp / "reverse" / it->first, it->second);
  EXPECT_EQ(slurp(reg::register_calls(tmp / "forward").output),
            slurp(reg::register_calls(tmp / "reverse").output));
}

TEST(Register, CommittedSampleRegistrationIsUpToDate) {
  support::TempDir tmp;
  fs::copy(HOSTBRIDGE_SAMPLES_DIR, tmp / "samples", fs::copy_options::recursive);
  const auto outcome = reg::register_calls(tmp / "samples");
  EXPECT_FALSE(outcome.changed);
  ASSERT_EQ(outcome.entries.size(), 4u);
  for (const auto& e : outcome.entries) EXPECT_TRUE(e.implemented) << e.name;
}

TEST(Scaffold, RefusesAnExistingPath) {
  support::TempDir tmp;
  reg::scaffold_project(tmp / "demo", HOSTBRIDGE_INCLUDE_DIR);
  EXPECT_THROW(reg::scaffold_project(tmp / "demo", HOSTBRIDGE_INCLUDE_DIR), std::runtime_error);
}

TEST(Scaffold, FreshProjectIsAlreadyAFixedPoint) {
  support::TempDir tmp;
  const auto created = reg::scaffold_project(tmp / "demo", HOSTBRIDGE_INCLUDE_DIR);
  EXPECT_TRUE(created.changed);
  EXPECT_FALSE(reg::register_calls(tmp / "demo").changed);
  for (const auto& e : created.entries) EXPECT_TRUE(e.implemented) << e.name;
  EXPECT_TRUE(slurp(tmp / "demo" / "src" / "registration.cpp").starts_with(reg::generated_marker));
}

TEST(Scaffold, BuildsLoadsAndRunsEndToEnd) {
  support::TempDir tmp;
  const fs::path project = tmp / "demo";
  reg::scaffold_project(project, HOSTBRIDGE_INCLUDE_DIR);
  const auto built = run_command({(project / "build.sh").string(), "CXX=" HOSTBRIDGE_DEFAULT_CXX},
                                 {{"HOSTBRIDGE_BUILD_JOBS", "1"}, {"TMPDIR", tmp.path().string()}});
  ASSERT_EQ(built.status, 0) << built.output;
  ASSERT_TRUE(fs::exists(project / "libdemo.so"));
  EXPECT_FALSE(fs::exists(project / "build"));  // objects went to a temporary directory

  raw::mh_init();
  const char* error = nullptr;
  raw::mh_library lib = raw::mh_load_library((project / "libdemo.so").c_str(), &error);
  ASSERT_NE(lib, nullptr) << error;
  host::ProtectScope scope;
  auto out = host::call("convolve2", {scope.keep(host::doubles({1, 2, 3})), scope.keep(host::doubles({1, 1}))});
  ASSERT_TRUE(out.ok()) << out.error;
  EXPECT_EQ(host::read_doubles(out.value), (std::vector<double>{1, 3, 5, 3}));
  raw::mh_unload_library(lib);
  EXPECT_EQ(host::call("convolve2", {out.value, out.value}).error, "unknown function");
}

TEST(Cli, ExitCodesForNewAndRegister) {
  support::TempDir tmp;
  EXPECT_EQ(run_command({HOSTBRIDGE_CLI, "new", (tmp / "demo").string()}, {}).status, 0);
  EXPECT_EQ(run_command({HOSTBRIDGE_CLI, "new", (tmp / "demo").string()}, {}).status, 1);
  const auto up_to_date = run_command({HOSTBRIDGE_CLI, "register", (tmp / "demo").string()}, {});
  EXPECT_EQ(up_to_date.status, 0);
  EXPECT_NE(up_to_date.output.find("up to date"), std::string::npos);
  const fs::path conflict = copy_fixture(tmp, "conflict");
  const auto failed = run_command({HOSTBRIDGE_CLI, "register", conflict.string()}, {});
  EXPECT_EQ(failed.status, 2);
  EXPECT_NE(failed.output.find("conflicting arity for 'f'"), std::string::npos) << failed.output;
}
