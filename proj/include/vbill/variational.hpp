#pragma once

// Factor-Gaussian variational family q_lambda = N(mu, BB' + c^2 I) with a
// single factor: reparameterized sampling, the prior/entropy term A(lambda)
// and its gradient, and assembly of the lower-bound gradient estimator.

#include <stdexcept>
#include <vector>

#include "vbill/math.hpp"

namespace vbill {

struct VariationalParams {
  Vector mu;
  Vector b;   // single factor (k = 1)
  double c = 1.0;

  Index dim() const { return mu.size(); }

  void validate() const {
    if (b.size() != mu.size())
      throw std::invalid_argument("variational: mu/B dimension mismatch");
    if (!mu.allFinite() || !b.allFinite() || !std::isfinite(c))
      throw std::invalid_argument("variational: non-finite parameters");
  }

  // stacked representation (mu, B, c), length 2d+1
  Vector stacked() const {
    Vector v(2 * dim() + 1);
    v << mu, b, c;
    return v;
  }
  static VariationalParams from_stacked(const Vector& v) {
    const Index d = (v.size() - 1) / 2;
    VariationalParams lam;
    lam.mu = v.head(d);
    lam.b = v.segment(d, d);
    lam.c = v[2 * d];
    return lam;
  }
};

struct PriorSpec {
  double sigma0_sq = 50.0;  // isotropic normal prior N(0, sigma0_sq I)
};

enum class PointSource { MC, RQMC };

// One optimizer iteration's worth of innovations: theta_i = mu + B z_i + c eps_i.
struct DrawBatch {
  Vector z;    // S scalar factor innovations
  Matrix eps;  // S x d isotropic innovations
  PointSource source = PointSource::MC;

  long count() const { return z.size(); }
};

struct LowerBoundEstimate {
  double value = 0.0;
  double scaled_value = 0.0;  // value / n
  long iteration = 0;
};

inline Vector reparam_draw(const VariationalParams& lam, double z,
                           const Vector& eps) {
  if (eps.size() != lam.dim())
    throw std::invalid_argument("reparam_draw: dimension mismatch");
  return lam.mu + lam.b * z + lam.c * eps;
}

inline double log_det_sigma(const VariationalParams& lam) {
  const double c2 = lam.c * lam.c;
  return lam.dim() * std::log(c2) + std::log1p(lam.b.squaredNorm() / c2);
}

// A(lambda) = E_q[log p(theta) - log q(theta)] for the N(0, sigma0_sq I)
// prior, with all normalizing constants included so lower-bound values are
// comparable across models.
inline double prior_term_A(const VariationalParams& lam, const PriorSpec& prior) {
  lam.validate();
  if (lam.c == 0.0) throw std::invalid_argument("prior_term_A: c must be nonzero");
  const double d = static_cast<double>(lam.dim());
  const double bb = lam.b.squaredNorm();
  const double trace_sigma = bb + d * lam.c * lam.c;
  return -0.5 * d * std::log(prior.sigma0_sq) -
         (lam.mu.squaredNorm() + trace_sigma) / (2.0 * prior.sigma0_sq) +
         0.5 * d + 0.5 * log_det_sigma(lam);
}

// Gradient of A(lambda), stacked as (mu, B, c).
inline Vector grad_A(const VariationalParams& lam, const PriorSpec& prior) {
  lam.validate();
  if (lam.c == 0.0) throw std::invalid_argument("grad_A: c must be nonzero");
  const Index d = lam.dim();
  const double bb = lam.b.squaredNorm();
  const double c2 = lam.c * lam.c;
  const double denom = c2 + bb;
  Vector g(2 * d + 1);
  g.head(d) = -lam.mu / prior.sigma0_sq;
  g.segment(d, d) = (-1.0 / prior.sigma0_sq + 1.0 / denom) * lam.b;
  g[2 * d] = -d * lam.c / prior.sigma0_sq +
             (1.0 / lam.c) * (d - bb / denom);
  return g;
}

// Eq. for the unbiased lower-bound gradient: grad_A + (1/S) sum of the
// Jacobian blocks (I, z_i I, eps_i') applied to each G-hat.
inline Vector lb_gradient_estimate(const VariationalParams& lam,
                                   const DrawBatch& draws,
                                   const std::vector<Vector>& grad_estimates,
                                   const PriorSpec& prior) {
  const long S = draws.count();
  if (S == 0) throw std::invalid_argument("lb_gradient_estimate: empty batch");
  if (static_cast<long>(grad_estimates.size()) != S)
    throw std::invalid_argument("lb_gradient_estimate: batch/estimate count mismatch");
  const Index d = lam.dim();
  Vector acc = Vector::Zero(2 * d + 1);
  for (long i = 0; i < S; ++i) {
    const Vector& gh = grad_estimates[static_cast<std::size_t>(i)];
    if (!gh.allFinite())
      throw std::runtime_error("lb_gradient_estimate: non-finite gradient estimate at draw " +
                               std::to_string(i));
    acc.head(d) += gh;
    acc.segment(d, d) += draws.z[i] * gh;
    acc[2 * d] += draws.eps.row(i).dot(gh);
  }
  return grad_A(lam, prior) + acc / static_cast<double>(S);
}

inline LowerBoundEstimate lower_bound_estimate(const VariationalParams& lam,
                                               const std::vector<double>& loglik_estimates,
                                               const PriorSpec& prior, long n,
                                               long iteration = 0) {
  if (loglik_estimates.empty())
    throw std::invalid_argument("lower_bound_estimate: no draws");
  double mean_ll = 0.0;
  for (double v : loglik_estimates) {
    if (!std::isfinite(v))
      throw std::runtime_error("lower_bound_estimate: non-finite log-likelihood estimate");
    mean_ll += v;
  }
  mean_ll /= static_cast<double>(loglik_estimates.size());
  LowerBoundEstimate lb;
  lb.value = prior_term_A(lam, prior) + mean_ll;
  lb.scaled_value = lb.value / static_cast<double>(n);
  lb.iteration = iteration;
  return lb;
}

// Exact log q_lambda(theta) via the Woodbury form of Sigma^{-1}.
inline double density_eval(const VariationalParams& lam, const Vector& theta) {
  lam.validate();
  if (lam.c == 0.0) throw std::invalid_argument("density_eval: c must be nonzero");
  const double c2 = lam.c * lam.c;
  const double bb = lam.b.squaredNorm();
  const Vector r = theta - lam.mu;
  const double br = lam.b.dot(r);
  const double quad = (r.squaredNorm() - br * br / (c2 + bb)) / c2;
  return -0.5 * lam.dim() * kLog2Pi - 0.5 * log_det_sigma(lam) - 0.5 * quad;
}

// Marginal standard deviation of coordinate j under q_lambda.
inline double marginal_sd(const VariationalParams& lam, Index j) {
  return std::sqrt(lam.b[j] * lam.b[j] + lam.c * lam.c);
}

}  // namespace vbill
