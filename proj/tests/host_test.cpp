// Standalone suite for the mini host, through its C header only.
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "minihost.h"

namespace {

class HostTest : public ::testing::Test {
 protected:
  void SetUp() override {
    mh_init();
    base_ = mh_protect_depth();
  }
  void TearDown() override { EXPECT_EQ(mh_protect_depth(), base_); }

  int64_t base_ = 0;
};

struct Alloc {
  int32_t kind;
  int64_t length;
  mh_cell out = nullptr;
};

void alloc_body(void* data) {
  auto* a = static_cast<Alloc*>(data);
  a->out = mh_alloc_vector(a->kind, a->length);
}

mh_cell add_one(mh_cell x) {
  mh_cell out = mh_alloc_vector(MH_REAL, 1);
  *static_cast<double*>(mh_raw_view(out, MH_REAL)) = mh_as_real(x) + 1.0;
  return out;
}

mh_cell always_fails(void) { mh_error("deliberate failure"); }

mh_cell leaves_one_protected(mh_cell x) { return mh_protect(x); }

}  // namespace

TEST_F(HostTest, VectorsStartZeroedAndReportTheirKind) {
  mh_cell v = mh_protect(mh_alloc_vector(MH_REAL, 4));
  EXPECT_EQ(mh_kind_of(v), MH_REAL);
  EXPECT_EQ(mh_length(v), 4);
  const auto* data = static_cast<const double*>(mh_raw_view(v, MH_REAL));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(data[i], 0.0);
  const char* error = nullptr;
  auto wrong_kind = [](void* cell) { mh_raw_view(static_cast<mh_cell>(cell), MH_INTEGER); };
  EXPECT_EQ(mh_try(wrong_kind, v, &error), 0);
  EXPECT_STREQ(error, "raw view of kind integer requested for a real cell");
  mh_unprotect(1);
}

TEST_F(HostTest, NaValuesFollowTheHostEncoding) {
  const double na = mh_na_real();
  EXPECT_TRUE(std::isnan(na));
  EXPECT_TRUE(mh_is_na_real(na));
  EXPECT_FALSE(mh_is_na_real(std::nan("")));
  EXPECT_EQ(MH_NA_INTEGER, INT32_MIN);
}

TEST_F(HostTest, CoercionFollowsTheTable) {
  mh_cell i = mh_protect(mh_alloc_vector(MH_INTEGER, 3));
  auto* xi = static_cast<int32_t*>(mh_raw_view(i, MH_INTEGER));
  xi[0] = 7;
  xi[1] = MH_NA_INTEGER;
  xi[2] = -2;
  mh_cell r = mh_protect(mh_coerce(i, MH_REAL));
  const auto* xr = static_cast<const double*>(mh_raw_view(r, MH_REAL));
  EXPECT_EQ(xr[0], 7.0);
  EXPECT_TRUE(mh_is_na_real(xr[1]));
  EXPECT_EQ(xr[2], -2.0);
  EXPECT_EQ(mh_coerce(r, MH_REAL), r);

  mh_cell s = mh_protect(mh_alloc_vector(MH_STRING, 1));
  mh_string_set(s, 0, "2.5");
  EXPECT_EQ(mh_as_real(s), 2.5);
  EXPECT_EQ(mh_as_integer(s), 2);
  mh_string_set(s, 0, "pear");
  EXPECT_TRUE(mh_is_na_real(mh_as_real(s)));
  EXPECT_EQ(mh_as_integer(s), MH_NA_INTEGER);
  mh_unprotect(3);
}

TEST_F(HostTest, ErrorsUnwindToTheNearestBoundary) {
  const char* error = nullptr;
  Alloc bad{MH_REAL, -1};
  EXPECT_EQ(mh_try(alloc_body, &bad, &error), 0);
  EXPECT_NE(std::string(error).find("negative length"), std::string::npos);
  Alloc good{MH_REAL, 2};
  EXPECT_EQ(mh_try(alloc_body, &good, &error), 1);
  EXPECT_NE(good.out, nullptr);
}

TEST_F(HostTest, CellLimitSurfacesAsAnError) {
  const char* error = nullptr;
  Alloc a{MH_REAL, 1};
  mh_gc();
  mh_set_cell_limit(mh_live_cells());
  EXPECT_EQ(mh_try(alloc_body, &a, &error), 0);
  EXPECT_NE(std::string(error).find("cell limit"), std::string::npos);
  mh_set_cell_limit(-1);
}

TEST_F(HostTest, CollectorFreesUnreachableAndKeepsProtectedCells) {
  mh_gc();
  const int64_t before = mh_live_cells();
  mh_cell kept = mh_protect(mh_alloc_vector(MH_REAL, 1));
  for (int i = 0; i < 100; ++i) mh_alloc_vector(MH_REAL, 8);
  mh_gc();
  EXPECT_EQ(mh_live_cells(), before + 1);
  EXPECT_EQ(mh_length(kept), 1);
  mh_unprotect(1);
}

TEST_F(HostTest, TortureModeSurvivesAThousandProtectedAllocations) {
  mh_set_torture(1);
  const int64_t collections = mh_gc_count();
  mh_cell list = mh_protect(mh_alloc_vector(MH_LIST, 1000));
  for (int i = 0; i < 1000; ++i) {
    mh_cell v = mh_alloc_vector(MH_REAL, 1);
    *static_cast<double*>(mh_raw_view(v, MH_REAL)) = i;
    mh_list_set(list, i, v);
  }
  mh_set_torture(0);
  EXPECT_GE(mh_gc_count() - collections, 1000);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(mh_as_real(mh_list_get(list, i)), i);
  mh_unprotect(1);
}

TEST(HostDeathTest, UseOfACollectedCellAbortsWithADiagnostic) {
  EXPECT_DEATH(
      {
        mh_init();
        mh_set_torture(1);
        mh_cell forgotten = mh_alloc_vector(MH_REAL, 1);  // never protected
        mh_alloc_vector(MH_REAL, 1);                      // collects it
        mh_length(forgotten);
      },
      "access to collected cell");
}

TEST(HostDeathTest, ProtectStackUnderflowAborts) {
  EXPECT_DEATH(
      {
        mh_init();
        mh_unprotect(static_cast<int32_t>(mh_protect_depth()) + 1);
      },
      "protect stack underflow");
}

TEST_F(HostTest, EnvironmentsBindAndLookUpSymbols) {
  mh_cell env = mh_protect(mh_new_env(mh_global_env()));
  mh_cell x = mh_install("x");
  EXPECT_EQ(mh_install("x"), x);
  EXPECT_STREQ(mh_symbol_name(x), "x");
  EXPECT_EQ(mh_find_var(x, env), nullptr);
  mh_cell v = mh_protect(mh_alloc_vector(MH_REAL, 1));
  mh_define_var(x, v, env);
  EXPECT_EQ(mh_find_var(x, env), v);
  mh_unprotect(2);
}

TEST_F(HostTest, CallFormsEvaluateWithErrorsCaught) {
  mh_cell env = mh_protect(mh_new_env(mh_global_env()));
  auto* generic = reinterpret_cast<void (*)()>(&add_one);
  mh_cell f = mh_protect(mh_new_callable("add_one", reinterpret_cast<mh_fn>(generic), 1));
  mh_cell form = mh_protect(mh_alloc_vector(MH_LIST, 2));
  mh_list_set(form, 0, f);
  mh_list_set(form, 1, mh_install("x"));

  int32_t ok = 1;
  mh_try_eval(form, env, &ok);
  EXPECT_EQ(ok, 0);  // x is unbound

  mh_cell x = mh_protect(mh_alloc_vector(MH_REAL, 1));
  *static_cast<double*>(mh_raw_view(x, MH_REAL)) = 41.0;
  mh_define_var(mh_install("x"), x, env);
  mh_cell out = mh_try_eval(form, env, &ok);
  EXPECT_EQ(ok, 1);
  EXPECT_EQ(mh_as_real(out), 42.0);
  mh_unprotect(4);
}

TEST_F(HostTest, RegisteredCallsReportErrorsAndImbalance) {
  mh_register("always_fails", reinterpret_cast<mh_fn>(&always_fails), 0);
  mh_register("leaves_one_protected",
              reinterpret_cast<mh_fn>(reinterpret_cast<void (*)()>(&leaves_one_protected)), 1);
  const char* error = nullptr;
  EXPECT_EQ(mh_call("always_fails", nullptr, 0, &error), mh_null());
  EXPECT_STREQ(error, "deliberate failure");
  EXPECT_EQ(mh_call("no_such_function", nullptr, 0, &error), mh_null());
  EXPECT_STREQ(error, "unknown function");

  mh_cell x = mh_protect(mh_alloc_vector(MH_REAL, 1));
  EXPECT_EQ(mh_call("always_fails", &x, 1, &error), mh_null());
  EXPECT_STREQ(error, "arity mismatch");
  const int64_t depth = mh_protect_depth();
  EXPECT_EQ(mh_call("leaves_one_protected", &x, 1, &error), x);
  EXPECT_STREQ(error, "");
  EXPECT_EQ(mh_last_call_imbalance(), 1);
  EXPECT_EQ(mh_protect_depth(), depth);
  mh_unprotect(1);
}

TEST_F(HostTest, RngIsReproducibleFromASeed) {
  auto draw = [] {
    std::vector<double> out;
    mh_rng_get();
    for (int i = 0; i < 5; ++i) out.push_back(mh_rng_norm(0.0, 1.0));
    mh_rng_put();
    return out;
  };
  mh_rng_set_seed(7);
  const auto first = draw();
  mh_rng_set_seed(7);
  const auto second = draw();
  EXPECT_EQ(std::memcmp(first.data(), second.data(), first.size() * sizeof(double)), 0);
  mh_rng_set_seed(8);
  EXPECT_NE(draw(), first);
}

TEST_F(HostTest, DrawingOutsideAnRngWindowIsAnError) {
  const char* error = nullptr;
  auto body = [](void*) { mh_rng_unif(); };
  EXPECT_EQ(mh_try(body, nullptr, &error), 0);
}

TEST_F(HostTest, PendingInterruptPreventsPrinting) {
  std::string printed;
  mh_set_console([](const char* text, void* user) { *static_cast<std::string*>(user) += text; },
                 &printed);
  const char* error = nullptr;
  auto body = [](void*) { mh_print("hello\n"); };
  EXPECT_EQ(mh_try(body, nullptr, &error), 1);
  mh_set_interrupt(1);
  EXPECT_EQ(mh_try(body, nullptr, &error), 0);
  EXPECT_STREQ(error, "interrupted");
  EXPECT_EQ(mh_interrupt_pending(), 0);
  EXPECT_EQ(printed, "hello\n");
  mh_set_console(nullptr, nullptr);
}

TEST_F(HostTest, MissingLibraryFailsToLoad) {
  const char* error = nullptr;
  EXPECT_EQ(mh_load_library("/nonexistent/libnothing.so", &error), nullptr);
  EXPECT_NE(error, nullptr);
}
