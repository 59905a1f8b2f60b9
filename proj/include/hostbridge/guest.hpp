// Everything a guest library needs: raw bindings, Value/Guard, console and
// RNG helpers, and HOSTBRIDGE_EXPORT.
#pragma once

#include "hostbridge/console.hpp"
#include "hostbridge/export.hpp"
#include "hostbridge/guard.hpp"
#include "hostbridge/raw.hpp"
#include "hostbridge/result.hpp"
#include "hostbridge/value.hpp"
