#pragma once

// Synthetic dataset generation in the chunkstore table layouts.

#include <string>

#include "vbill/math.hpp"

namespace vbill {

// Logistic table: columns y, x1..x4 with x1 = 1 (intercept), x2 and x3
// Bernoulli(0.5), x4 uniform on (0,1).
inline Matrix simulate_logistic_table(long n, const Vector& beta_true,
                                      std::uint64_t seed) {
  const Index d = beta_true.size();
  Matrix table(n, d + 1);
  Rng rng(seed);
  for (long i = 0; i < n; ++i) {
    Vector x(d);
    x[0] = 1.0;
    if (d > 1) x[1] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    if (d > 2) x[2] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    for (Index j = 3; j < d; ++j) x[j] = rng.uniform();
    const double p = logistic(x.dot(beta_true));
    table(i, 0) = rng.uniform() < p ? 1.0 : 0.0;
    table.row(i).tail(d) = x;
  }
  return table;
}

// Panel table: columns panel_id, t, y, x1..xp with x1 = 1 and the rest
// uniform on (0,1); y from the random-intercept logistic law.
inline Matrix simulate_panel_table(long n_panels, long T, const Vector& beta_true,
                                   double gamma_true, std::uint64_t seed) {
  const Index p = beta_true.size();
  Matrix table(n_panels * T, p + 3);
  Rng rng(seed);
  const double tau = std::exp(0.5 * gamma_true);
  long r = 0;
  for (long i = 0; i < n_panels; ++i) {
    const double alpha = tau * rng.normal();
    for (long t = 0; t < T; ++t, ++r) {
      Vector x(p);
      x[0] = 1.0;
      for (Index j = 1; j < p; ++j) x[j] = rng.uniform();
      const double prob = logistic(x.dot(beta_true) + alpha);
      table(r, 0) = static_cast<double>(i);
      table(r, 1) = static_cast<double>(t);
      table(r, 2) = rng.uniform() < prob ? 1.0 : 0.0;
      table.row(r).tail(p) = x;
    }
  }
  return table;
}

// Conjugate-Gaussian table in the logistic column layout is not meaningful;
// tests build ConjugateGaussianModel directly.
inline Matrix simulate_conjugate_obs(long n, const Vector& theta_true,
                                     std::uint64_t seed) {
  const Index d = theta_true.size();
  Matrix Y(n, d);
  Rng rng(seed);
  for (long i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) Y(i, j) = theta_true[j] + rng.normal();
  return Y;
}

// Table 3 truth for the panel experiment.
inline Vector panel_true_beta() {
  Vector b(11);
  b << -1.5, 1.5, 0.5, 0.25, 0.3, 0.8, 0.45, 0.85, 0.75, 0.67, 1.5;
  return b;
}
inline double panel_true_gamma() { return 0.41; }

}  // namespace vbill
