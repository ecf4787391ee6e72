#pragma once

// Posterior baselines: adaptive random-walk Metropolis-Hastings (Haario
// covariance adaptation) for tractable log-posteriors, and pseudo-marginal
// MH driven by an unbiased likelihood-level estimator.

#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>

#include "vbill/math.hpp"

namespace vbill::mcmc {

struct ChainConfig {
  long iterations = 30000;
  long burn_in = 10000;
  Vector initial;
  long adaptation_start = 1000;
  std::uint64_t seed = 1;

  void validate() const {
    if (burn_in >= iterations + burn_in && iterations <= 0)
      throw std::invalid_argument("ChainConfig: iterations must be positive");
    if (burn_in < 0) throw std::invalid_argument("ChainConfig: negative burn-in");
  }
};

struct ChainOutput {
  Matrix draws;  // post-burn-in, one row per kept iterate
  double acceptance_rate = 0.0;
  Vector mean;
  Vector sd;

  void summarize() {
    const Index d = draws.cols();
    mean = draws.colwise().mean();
    sd.resize(d);
    for (Index j = 0; j < d; ++j) {
      const double m = mean[j];
      sd[j] = std::sqrt((draws.col(j).array() - m).square().sum() /
                        static_cast<double>(draws.rows() - 1));
    }
  }
};

// Batch-means standard error of a chain mean.
inline double batch_means_se(const Eigen::Ref<const Vector>& x) {
  const long n = x.size();
  const long nb = std::max<long>(10, static_cast<long>(std::sqrt(static_cast<double>(n))));
  const long bs = n / nb;
  if (bs < 2) return std::numeric_limits<double>::quiet_NaN();
  Vector means(nb);
  for (long b = 0; b < nb; ++b) means[b] = x.segment(b * bs, bs).mean();
  const double grand = means.mean();
  const double var_b = (means.array() - grand).square().sum() / (nb - 1);
  return std::sqrt(var_b / nb);
}

namespace detail {

// Haario scheme constants: scale 2.38^2/d, regularizer 1e-6 I.
struct AdaptiveProposal {
  Index d;
  double scale;
  Vector run_mean;
  Matrix run_cov;
  long count = 0;
  Matrix chol;  // of scale * (run_cov + eps I)
  bool frozen = false;

  explicit AdaptiveProposal(Index dim)
      : d(dim),
        scale(2.38 * 2.38 / static_cast<double>(dim)),
        run_mean(Vector::Zero(dim)),
        run_cov(Matrix::Zero(dim, dim)),
        chol(Matrix::Identity(dim, dim) * (0.1 / std::sqrt(static_cast<double>(dim)))) {}

  void observe(const Vector& x) {
    ++count;
    const Vector delta = x - run_mean;
    run_mean += delta / static_cast<double>(count);
    run_cov += (delta * (x - run_mean).transpose() - run_cov) /
               static_cast<double>(count);
  }

  void refresh() {
    if (frozen || count < 2) return;
    Matrix c = scale * (run_cov + 1e-6 * Matrix::Identity(d, d));
    Eigen::LLT<Matrix> llt(c);
    if (llt.info() == Eigen::Success) chol = llt.matrixL();
  }

  Vector propose(const Vector& x, Rng& rng) const {
    Vector z(d);
    for (Index j = 0; j < d; ++j) z[j] = rng.normal();
    return x + chol * z;
  }
};

}  // namespace detail

// Adaptive RW-MH targeting an exact log-density.
inline ChainOutput adaptive_rw_mh(const std::function<double(const Vector&)>& log_target,
                                  const ChainConfig& config) {
  config.validate();
  const Index d = config.initial.size();
  Rng rng(config.seed);
  Vector x = config.initial;
  double lt = log_target(x);
  if (!std::isfinite(lt))
    throw std::invalid_argument("adaptive_rw_mh: non-finite target at initial point");

  detail::AdaptiveProposal prop(d);
  ChainOutput out;
  out.draws.resize(config.iterations, d);
  long accepted = 0;
  const long total = config.burn_in + config.iterations;
  for (long t = 0; t < total; ++t) {
    const Vector cand = prop.propose(x, rng);
    const double lt_cand = log_target(cand);
    if (std::isfinite(lt_cand) && std::log(rng.uniform()) < lt_cand - lt) {
      x = cand;
      lt = lt_cand;
      if (t >= config.burn_in) ++accepted;
    }
    prop.observe(x);
    if (t >= config.adaptation_start && t % 50 == 0) prop.refresh();
    if (t >= config.burn_in) out.draws.row(t - config.burn_in) = x;
  }
  out.acceptance_rate = static_cast<double>(accepted) / config.iterations;
  out.summarize();
  return out;
}

// Pseudo-marginal MH: log_lik_est returns the log of a non-negative unbiased
// likelihood estimate, redrawn at every proposal and carried with the state.
// Adaptation freezes at the end of burn-in so the kernel stays valid.
inline ChainOutput pmmh(const std::function<double(const Vector&, Rng&)>& log_lik_est,
                        const std::function<double(const Vector&)>& log_prior,
                        const ChainConfig& config) {
  config.validate();
  const Index d = config.initial.size();
  Rng rng(config.seed);
  Vector x = config.initial;
  double lt = log_lik_est(x, rng) + log_prior(x);
  if (!std::isfinite(lt))
    throw std::invalid_argument("pmmh: estimator returned non-finite value at initial point");

  detail::AdaptiveProposal prop(d);
  ChainOutput out;
  out.draws.resize(config.iterations, d);
  long accepted = 0;
  long finite_seen = 0;
  const long total = config.burn_in + config.iterations;
  for (long t = 0; t < total; ++t) {
    const Vector cand = prop.propose(x, rng);
    const double lp = log_prior(cand);
    if (std::isfinite(lp)) {
      const double lt_cand = log_lik_est(cand, rng) + lp;
      if (std::isfinite(lt_cand)) ++finite_seen;
      if (std::isfinite(lt_cand) && std::log(rng.uniform()) < lt_cand - lt) {
        x = cand;
        lt = lt_cand;
        if (t >= config.burn_in) ++accepted;
      }
    }
    prop.observe(x);
    if (t == config.burn_in) prop.frozen = true;
    if (t < config.burn_in && t >= config.adaptation_start && t % 50 == 0)
      prop.refresh();
    if (t >= config.burn_in) out.draws.row(t - config.burn_in) = x;
    if (t == 200 && finite_seen == 0)
      throw std::runtime_error("pmmh: estimator returned -inf at every proposal");
  }
  out.acceptance_rate = static_cast<double>(accepted) / config.iterations;
  out.summarize();
  return out;
}

// Smallest power of 2 such that the empirical variance (over 50
// replications) of the total log-likelihood estimate at theta_bar is at
// most target_var. Capped at 2^16.
inline long tune_is_samples(
    const std::function<double(long /*N*/, Rng&)>& total_loglik_est,
    std::uint64_t seed, double target_var = 1.0, bool* capped = nullptr) {
  const int reps = 50;
  if (capped) *capped = false;
  for (long N = 2; N <= (1L << 16); N *= 2) {
    Vector est(reps);
    for (int r = 0; r < reps; ++r) {
      Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(N), static_cast<std::uint64_t>(r));
      est[r] = total_loglik_est(N, rng);
    }
    const double mean = est.mean();
    const double var = (est.array() - mean).square().sum() / (reps - 1);
    if (var <= target_var) return N;
  }
  if (capped) *capped = true;
  return 1L << 16;
}

// Draws export: small text header (d, iterations, burn_in, seed) plus a
// row-major 64-bit float matrix.
inline void write_chain(const ChainOutput& chain, const ChainConfig& config,
                        const std::string& header_path,
                        const std::string& matrix_path) {
  {
    std::ofstream h(header_path);
    if (!h) throw std::runtime_error("cannot write " + header_path);
    h << "d " << chain.draws.cols() << "\n"
      << "iterations " << config.iterations << "\n"
      << "burn_in " << config.burn_in << "\n"
      << "seed " << config.seed << "\n"
      << "acceptance_rate " << chain.acceptance_rate << "\n";
  }
  std::ofstream b(matrix_path, std::ios::binary);
  if (!b) throw std::runtime_error("cannot write " + matrix_path);
  Matrix rm = chain.draws.transpose();
  b.write(reinterpret_cast<const char*>(rm.data()),
          static_cast<std::streamsize>(8 * rm.size()));
}

}  // namespace vbill::mcmc
