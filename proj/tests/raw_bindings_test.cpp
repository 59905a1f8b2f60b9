// Both the host's own header and the hand-written bindings in one translation
// unit: a signature that drifts between them fails to compile.
#include "minihost.h"

#include <hostbridge/raw.hpp>

#include <cstring>
#include <type_traits>

#include <gtest/gtest.h>

namespace raw = hostbridge::raw;

static_assert(std::is_same_v<raw::mh_cell, ::mh_cell>);
static_assert(std::is_same_v<raw::mh_library, ::mh_library>);
static_assert(std::is_same_v<raw::mh_routine, ::mh_routine>);
static_assert(std::is_same_v<raw::mh_fn, ::mh_fn>);
static_assert(std::is_same_v<raw::mh_try_fn, ::mh_try_fn>);
static_assert(std::is_same_v<raw::mh_console_fn, ::mh_console_fn>);
static_assert(std::is_same_v<decltype(&raw::mh_call), decltype(&::mh_call)>);
static_assert(std::is_same_v<decltype(&raw::mh_call_native), decltype(&::mh_call_native)>);
static_assert(std::is_same_v<decltype(&raw::mh_try_eval), decltype(&::mh_try_eval)>);
static_assert(std::is_same_v<decltype(&raw::mh_rng_unif_bytes), decltype(&::mh_rng_unif_bytes)>);
static_assert(raw::MH_NULL == ::MH_NULL && raw::MH_REAL == ::MH_REAL &&
              raw::MH_INTEGER == ::MH_INTEGER && raw::MH_LOGICAL == ::MH_LOGICAL &&
              raw::MH_STRING == ::MH_STRING && raw::MH_SYMBOL == ::MH_SYMBOL &&
              raw::MH_LIST == ::MH_LIST && raw::MH_ENVIRONMENT == ::MH_ENVIRONMENT &&
              raw::MH_CALLABLE == ::MH_CALLABLE);
static_assert(raw::max_arity == MH_MAX_ARITY);
static_assert(raw::na_integer == MH_NA_INTEGER);
static_assert(raw::na_real_payload == MH_NA_REAL_PAYLOAD);

TEST(RawBindings, ResolveToTheHostEntryPoints) {
  EXPECT_EQ(&raw::mh_alloc_vector, &::mh_alloc_vector);
  EXPECT_EQ(&raw::mh_error, &::mh_error);
}

TEST(RawBindings, RoundTripAVectorThroughTheHost) {
  raw::mh_init();
  raw::mh_cell v = raw::mh_protect(raw::mh_alloc_vector(raw::MH_INTEGER, 3));
  auto* data = static_cast<std::int32_t*>(raw::mh_raw_view(v, raw::MH_INTEGER));
  data[0] = 1;
  data[1] = raw::na_integer;
  data[2] = 3;
  EXPECT_EQ(::mh_length(v), 3);
  EXPECT_EQ(::mh_as_integer(v), 1);
  raw::mh_unprotect(1);
}

TEST(RawBindings, NaRealCarriesThePayload) {
  raw::mh_init();
  const double na = raw::mh_na_real();
  std::uint64_t bits = 0;
  std::memcpy(&bits, &na, sizeof bits);
  EXPECT_EQ(static_cast<std::uint32_t>(bits), raw::na_real_payload);
}

// The hazard the safe layer exists for: a raising raw call jumps straight to
// the boundary, and nothing between runs.
TEST(RawBindings, RaisingCallSkipsTheRestOfTheBody) {
  raw::mh_init();
  static bool reached_end = false;
  reached_end = false;
  const char* error = nullptr;
  const auto status = raw::mh_try(
      [](void*) {
        raw::mh_alloc_vector(raw::MH_REAL, -1);
        reached_end = true;
      },
      nullptr, &error);
  EXPECT_EQ(status, 0);
  EXPECT_FALSE(reached_end);
}

TEST(RawBindingsDeathTest, UnprotectedCellIsCollectedUnderTorture) {
  EXPECT_DEATH(
      {
        raw::mh_init();
        raw::mh_set_torture(1);
        raw::mh_cell forgotten = raw::mh_alloc_vector(raw::MH_REAL, 1);
        raw::mh_alloc_vector(raw::MH_REAL, 1);
        raw::mh_raw_view(forgotten, raw::MH_REAL);
      },
      "access to collected cell");
}
