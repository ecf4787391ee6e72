#pragma once

// Importance-sampling estimators for per-panel score contributions via
// Fisher's identity, plus per-panel log-likelihood estimates for PMMH and
// the stopping rule. The scalar latent is integrated with self-normalized
// IS under either the prior or a Laplace proposal.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vbill/math.hpp"
#include "vbill/rqmc.hpp"
#include "vbill/subsample.hpp"
#include "vbill/variational.hpp"

namespace vbill {

enum class ProposalKind { Prior, Laplace };

struct ISConfig {
  long num_samples = 256;  // N
  ProposalKind proposal = ProposalKind::Laplace;
  PointSource source = PointSource::MC;

  void validate() const {
    if (num_samples < 2) throw std::invalid_argument("ISConfig: N must be >= 2");
  }
};

struct LatentProposal {
  double location = 0.0;
  double scale = 1.0;
};

inline double latent_prior_sd(const Vector& theta) {
  return std::exp(0.5 * theta[theta.size() - 1]);  // gamma is the last coordinate
}

// Gaussian proposal over alpha_i. LAPLACE runs Newton on the scalar latent
// (finite-difference derivatives of the joint log-density) and falls back to
// the prior if it fails to settle in 50 steps.
template <class PanelModel>
LatentProposal build_proposal(const PanelModel& model, Index i, const Vector& theta,
                              ProposalKind kind) {
  model.check_index(i);
  const double prior_sd = latent_prior_sd(theta);
  if (kind == ProposalKind::Prior) return {0.0, prior_sd};

  const Vector eta = model.linear_predictors(i, theta);
  const auto logj = [&](double a) { return model.joint_logdens(i, theta, a, eta); };
  const double h = 1e-5;
  double a = 0.0;
  bool converged = false;
  for (int it = 0; it < 50; ++it) {
    const double f1 = (logj(a + h) - logj(a - h)) / (2.0 * h);
    const double f2 = (logj(a + h) - 2.0 * logj(a) + logj(a - h)) / (h * h);
    if (f2 >= -1e-12) break;  // not locally concave; give up
    const double step = -f1 / f2;
    a += step;
    if (!std::isfinite(a) || std::fabs(a) > 1e8) {  // runaway; use the prior
      a = std::numeric_limits<double>::quiet_NaN();
      break;
    }
    if (std::fabs(step) < 1e-10) {
      converged = true;
      break;
    }
  }
  if (!converged || !std::isfinite(a)) return {0.0, prior_sd};
  const double f2 = (logj(a + h) - 2.0 * logj(a) + logj(a - h)) / (h * h);
  if (f2 >= -1e-12) return {0.0, prior_sd};
  return {a, 1.0 / std::sqrt(-f2)};
}

namespace detail {

// Log-weights of self-normalized IS for one panel: the proposal points are
// alpha_j = location + scale * z_j with z_j standard normal.
template <class PanelModel>
std::vector<double> latent_log_weights(const PanelModel& model, Index i,
                                       const Vector& theta, const Vector& eta,
                                       const LatentProposal& prop,
                                       const Vector& std_normals,
                                       std::vector<double>* alphas) {
  const long N = std_normals.size();
  std::vector<double> logw(static_cast<std::size_t>(N));
  alphas->resize(static_cast<std::size_t>(N));
  const double var = prop.scale * prop.scale;
  for (long j = 0; j < N; ++j) {
    const double a = prop.location + prop.scale * std_normals[j];
    (*alphas)[static_cast<std::size_t>(j)] = a;
    logw[static_cast<std::size_t>(j)] =
        model.joint_logdens(i, theta, a, eta) - normal_logpdf(a, prop.location, var);
  }
  return logw;
}

inline double log_sum_exp(const std::vector<double>& v, double* max_out = nullptr) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  if (max_out) *max_out = mx;
  return mx + std::log(s);
}

}  // namespace detail

// Self-normalized IS estimate of grad_theta l_i(theta) via Fisher's identity.
template <class PanelModel>
Vector grad_contrib_is(const PanelModel& model, Index i, const Vector& theta,
                       const LatentProposal& prop, const Vector& std_normals) {
  if (std_normals.size() < 2)
    throw std::invalid_argument("grad_contrib_is: need at least 2 points");
  const Vector eta = model.linear_predictors(i, theta);
  std::vector<double> alphas;
  std::vector<double> logw =
      detail::latent_log_weights(model, i, theta, eta, prop, std_normals, &alphas);
  double mx = -std::numeric_limits<double>::infinity();
  for (double w : logw) mx = std::max(mx, w);
  if (!std::isfinite(mx))
    throw std::runtime_error("grad_contrib_is: all importance weights underflowed at panel " +
                             std::to_string(i));
  double wsum = 0.0;
  Vector acc = Vector::Zero(theta.size());
  for (std::size_t j = 0; j < logw.size(); ++j) {
    const double w = std::exp(logw[j] - mx);
    wsum += w;
    acc += w * model.joint_logdens_grad(i, theta, alphas[j], eta).second;
  }
  return acc / wsum;
}

// log[(1/N) sum_j p(y_i, alpha_j | theta) / q(alpha_j)]; the level estimate
// is unbiased for p(y_i | theta).
template <class PanelModel>
double loglik_contrib_is(const PanelModel& model, Index i, const Vector& theta,
                         const LatentProposal& prop, const Vector& std_normals) {
  if (std_normals.size() < 2)
    throw std::invalid_argument("loglik_contrib_is: need at least 2 points");
  const Vector eta = model.linear_predictors(i, theta);
  std::vector<double> alphas;
  std::vector<double> logw =
      detail::latent_log_weights(model, i, theta, eta, prop, std_normals, &alphas);
  const double lse = detail::log_sum_exp(logw);
  if (!std::isfinite(lse))
    throw std::runtime_error("loglik_contrib_is: all importance weights underflowed at panel " +
                             std::to_string(i));
  return lse - std::log(static_cast<double>(std_normals.size()));
}

// Simulated-likelihood contribution in the standardized latent u = alpha /
// exp(gamma/2). With the proposal over u frozen, the fixed-sample objective
//   l-hat_i(theta) = log (1/N) sum_j p(y_i, alpha = e^{gamma/2} u_j | theta)
//                                    * e^{gamma/2} / q(u_j)
// is smooth in theta and free of the gamma degeneracy of alpha-space IS: as
// gamma -> -inf it tends to the no-random-effect likelihood instead of
// collapsing all weight onto the draw nearest zero. Returns the contribution
// and its exact gradient (self-normalized weights differentiate the
// log-sum-exp exactly because q does not depend on theta); the gamma
// component picks up the chain-rule term (d joint / d alpha) * alpha / 2
// plus 1/2 from the Jacobian e^{gamma/2}.
template <class PanelModel>
std::pair<double, Vector> sml_contrib(const PanelModel& model, Index i,
                                      const Vector& theta,
                                      const LatentProposal& prop_u,
                                      const Vector& std_normals) {
  if (std_normals.size() < 2)
    throw std::invalid_argument("sml_contrib: need at least 2 points");
  const Index d = theta.size();
  const double gamma = theta[d - 1];
  const double s = std::exp(0.5 * gamma);
  const Vector eta = model.linear_predictors(i, theta);
  const long N = std_normals.size();
  const double var_u = prop_u.scale * prop_u.scale;
  std::vector<double> logw(static_cast<std::size_t>(N));
  std::vector<Vector> grads(static_cast<std::size_t>(N));
  for (long j = 0; j < N; ++j) {
    const double u = prop_u.location + prop_u.scale * std_normals[j];
    const double alpha = s * u;
    const auto [ll, g_explicit] = model.joint_logdens_grad(i, theta, alpha, eta);
    const double h = 1e-6 * std::max(1.0, std::fabs(alpha));
    const double dda = (model.joint_logdens(i, theta, alpha + h, eta) -
                        model.joint_logdens(i, theta, alpha - h, eta)) /
                       (2.0 * h);
    Vector gf = g_explicit;
    gf[d - 1] += 0.5 * dda * alpha + 0.5;
    grads[static_cast<std::size_t>(j)] = std::move(gf);
    logw[static_cast<std::size_t>(j)] =
        ll + 0.5 * gamma - normal_logpdf(u, prop_u.location, var_u);
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double w : logw) mx = std::max(mx, w);
  if (!std::isfinite(mx))
    throw std::runtime_error("sml_contrib: all importance weights underflowed at panel " +
                             std::to_string(i));
  double wsum = 0.0;
  Vector acc = Vector::Zero(d);
  for (std::size_t j = 0; j < logw.size(); ++j) {
    const double w = std::exp(logw[j] - mx);
    wsum += w;
    acc += w * grads[j];
  }
  const double contrib = mx + std::log(wsum) - std::log(static_cast<double>(N));
  return {contrib, acc / wsum};
}

// Standard-normal point set for one panel's latent integral, derived from
// (seed, panel, iteration key) so scheduling never changes results. RQMC
// uses an independent scramble per panel.
inline Vector latent_points(const ISConfig& config, std::uint64_t seed,
                            std::uint64_t panel, std::uint64_t key = 0) {
  config.validate();
  if (config.source == PointSource::RQMC) {
    const auto batch = rqmc::sobol_batch(
        1, config.num_samples, hash_combine(hash_combine(seed, panel), key), true);
    return rqmc::to_normal(batch).col(0);
  }
  Rng rng = Rng::substream(seed, panel, key);
  Vector z(config.num_samples);
  for (long j = 0; j < config.num_samples; ++j) z[j] = rng.normal();
  return z;
}

// IS-based gradient of one panel contribution with proposal construction
// folded in.
template <class PanelModel>
Vector panel_grad_estimate(const PanelModel& model, Index i, const Vector& theta,
                           const ISConfig& config, std::uint64_t seed,
                           std::uint64_t key = 0) {
  const LatentProposal prop = build_proposal(model, i, theta, config.proposal);
  return grad_contrib_is(model, i, theta, prop, latent_points(config, seed, static_cast<std::uint64_t>(i), key));
}

template <class PanelModel>
double panel_loglik_estimate(const PanelModel& model, Index i, const Vector& theta,
                             const ISConfig& config, std::uint64_t seed,
                             std::uint64_t key = 0) {
  const LatentProposal prop = build_proposal(model, i, theta, config.proposal);
  return loglik_contrib_is(model, i, theta, prop, latent_points(config, seed, static_cast<std::uint64_t>(i), key));
}

// Total log-likelihood estimate over all panels (used by PMMH and tuning).
template <class PanelModel>
double total_loglik_estimate(const PanelModel& model, const Vector& theta,
                             const ISConfig& config, std::uint64_t seed,
                             std::uint64_t key = 0) {
  double s = 0.0;
  for (Index i = 0; i < model.n(); ++i)
    s += panel_loglik_estimate(model, i, theta, config, seed, key);
  return s;
}

// Control-variate material for panel models: per-panel IS gradients at
// theta_bar built with a large common-random-number point set (N >= 2^10),
// per-panel Hessians by central finite differences of the IS gradient, and
// their exact totals.
struct PanelControlVariates {
  ControlVariateCache totals;
  std::vector<double> l_bar;   // per-panel loglik estimates at theta_bar
  std::vector<Vector> g_bar;   // per-panel IS gradients at theta_bar
  std::vector<Matrix> h_bar;   // per-panel FD Hessians at theta_bar
};

template <class PanelModel>
PanelControlVariates build_panel_control_variates(const PanelModel& model,
                                                  const Vector& theta_bar,
                                                  const ISConfig& config,
                                                  std::uint64_t seed,
                                                  double fd_step = 1e-4,
                                                  std::uint64_t fingerprint = 0) {
  check_finite(theta_bar, "theta_bar");
  ISConfig big = config;
  big.num_samples = std::max<long>(config.num_samples, 1024);
  const Index d = model.dim();
  PanelControlVariates cv;
  cv.totals.theta_bar = theta_bar;
  cv.totals.a_sum = Vector::Zero(d);
  cv.totals.b_sum = Matrix::Zero(d, d);
  cv.totals.n = model.n();
  cv.totals.fingerprint = fingerprint;

  for (Index i = 0; i < model.n(); ++i) {
    // one fixed point set per panel, shared across all FD evaluations
    const LatentProposal prop = build_proposal(model, i, theta_bar, big.proposal);
    const Vector z = latent_points(big, seed, static_cast<std::uint64_t>(i), 0x9a7full);
    cv.l_bar.push_back(loglik_contrib_is(model, i, theta_bar, prop, z));
    cv.g_bar.push_back(grad_contrib_is(model, i, theta_bar, prop, z));
    Matrix h(d, d);
    for (Index j = 0; j < d; ++j) {
      Vector tp = theta_bar, tm = theta_bar;
      tp[j] += fd_step;
      tm[j] -= fd_step;
      h.col(j) = (grad_contrib_is(model, i, tp, prop, z) -
                  grad_contrib_is(model, i, tm, prop, z)) /
                 (2.0 * fd_step);
    }
    h = (0.5 * (h + h.transpose())).eval();
    cv.h_bar.push_back(h);
    cv.totals.loglik_sum += cv.l_bar.back();
    cv.totals.a_sum += cv.g_bar.back();
    cv.totals.b_sum += h;
  }
  return cv;
}

// Same difference-estimator algebra as the tractable case, with g_i(theta)
// replaced by the Fisher-identity IS estimate and the per-panel Taylor
// terms taken from the cached build.
template <class PanelModel>
GradientEstimate subsampled_panel_gradient(const PanelModel& model,
                                           const Vector& theta,
                                           const PanelControlVariates& cv,
                                           const SubsamplePlan& plan,
                                           const ISConfig& config,
                                           std::uint64_t seed,
                                           std::uint64_t iteration_key) {
  detail::check_plan(cv.totals, plan);
  const Index d = cv.totals.dim();
  const Vector dtheta = theta - cv.totals.theta_bar;
  const double n = static_cast<double>(cv.totals.n);

  Vector sum = Vector::Zero(d);
  Vector sumsq = Vector::Zero(d);
  for (long u : plan.idx) {
    const Vector g_u = panel_grad_estimate(model, u, theta, config, seed, iteration_key);
    const auto su = static_cast<std::size_t>(u);
    const Vector term = n * (g_u - cv.g_bar[su] - cv.h_bar[su] * dtheta);
    sum += term;
    sumsq += term.cwiseProduct(term);
  }
  const long m = plan.m();
  GradientEstimate est;
  est.m = m;
  est.value = cv.totals.control_variate(theta) + sum / static_cast<double>(m);
  est.sample_variance =
      m > 1 ? ((sumsq - sum.cwiseProduct(sum) / static_cast<double>(m)) /
               static_cast<double>(m - 1)).eval()
            : Vector::Zero(d).eval();
  if (!est.value.allFinite())
    throw std::runtime_error("subsampled_panel_gradient: non-finite estimate");
  return est;
}

// Subsampled log-likelihood estimate for the stopping rule, built from the
// cached second-order Taylor terms.
template <class PanelModel>
double subsampled_panel_loglik(const PanelModel& model, const Vector& theta,
                               const PanelControlVariates& cv,
                               const SubsamplePlan& plan, const ISConfig& config,
                               std::uint64_t seed, std::uint64_t iteration_key) {
  detail::check_plan(cv.totals, plan);
  const Vector dtheta = theta - cv.totals.theta_bar;
  const double n = static_cast<double>(cv.totals.n);
  double sum = 0.0;
  for (long u : plan.idx) {
    const double l_u = panel_loglik_estimate(model, u, theta, config, seed, iteration_key);
    const auto su = static_cast<std::size_t>(u);
    const double taylor = cv.l_bar[su] + cv.g_bar[su].dot(dtheta) +
                          0.5 * dtheta.dot(cv.h_bar[su] * dtheta);
    sum += n * (l_u - taylor);
  }
  return cv.totals.control_variate_loglik(theta) + sum / static_cast<double>(plan.m());
}

}  // namespace vbill
