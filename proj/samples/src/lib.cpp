#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>

#include <hostbridge/guest.hpp>

using namespace hostbridge;

HOSTBRIDGE_EXPORT(myrnorm, n, mean, sd) {
  const double mu = mean.as_f64().unwrap();
  const double sigma = sd.as_f64().unwrap();
  const std::int32_t length = n.as_i32().unwrap();
  if (Value::is_na_integer(length) || length < 0) panic("n must be a nonnegative integer");
  auto [result, slice] = Value::new_vector_double(static_cast<std::size_t>(length), pc);
  raw::mh_rng_get();
  for (double& x : slice) x = raw::mh_rng_norm(mu, sigma);
  raw::mh_rng_put();
  return result;
}

HOSTBRIDGE_EXPORT(convolve2, a, b) {
  const auto xa = a.coerce_double(pc).unwrap().second;
  const auto xb = b.coerce_double(pc).unwrap().second;
  const std::size_t length = xa.empty() || xb.empty() ? 0 : xa.size() + xb.size() - 1;
  auto [ab, xab] = Value::new_vector_double(length, pc);
  std::fill(xab.begin(), xab.end(), 0.0);
  for (std::size_t i = 0; i < xa.size(); ++i) {
    for (std::size_t j = 0; j < xb.size(); ++j) xab[i + j] += xa[i] * xb[j];
  }
  return ab;
}

HOSTBRIDGE_EXPORT(zero, f, guesses, stol, rho) {
  const auto x = guesses.slice_double().unwrap();
  if (x.size() < 2) panic("guesses must hold two values");
  double x0 = x[0];
  double x1 = x[1];
  const double tol = stol.as_f64().unwrap();
  // Also rejects NaN, which would otherwise never end the loop.
  if (!(tol > 0.0)) panic("non-positive tol value");
  const Value symbol = Value::new_symbol("x", pc);
  auto feval = [&](double at) {
    Guard inner;
    symbol.assign(Value::new_scalar_double(at, inner), rho);
    return f.eval(rho, inner).unwrap().as_f64().unwrap();
  };
  double f0 = feval(x0);
  if (f0 == 0.0) return Value::new_scalar_double(x0, pc);
  const double f1 = feval(x1);
  if (f1 == 0.0) return Value::new_scalar_double(x1, pc);
  if (f0 * f1 > 0.0) panic("x[0] and x[1] have the same sign");
  while (true) {
    const double xc = 0.5 * (x0 + x1);
    if (std::abs(x0 - x1) < tol) return Value::new_scalar_double(xc, pc);
    const double fc = feval(xc);
    if (fc == 0.0) return Value::new_scalar_double(xc, pc);
    if (f0 * fc > 0.0) {
      x0 = xc;
      f0 = fc;
    } else {
      x1 = xc;
    }
  }
}

HOSTBRIDGE_EXPORT(euclid_norm, x) {
  const auto values = x.slice_double().unwrap();
  const double ss =
      std::accumulate(values.begin(), values.end(), 0.0, [](double s, double z) { return s + z * z; });
  return Value::new_scalar_double(std::sqrt(ss), pc);
}
