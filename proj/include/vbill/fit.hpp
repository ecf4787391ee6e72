#pragma once

// End-to-end wiring: subsample MLEs per model family, gradient estimators
// bound to the optimizer loop, and full VBILL fits for logistic (in-memory
// or chunked), conjugate-Gaussian, and panel models.

#include <functional>
#include <numeric>
#include <vector>

#include "vbill/chunkstore.hpp"
#include "vbill/fisher_identity.hpp"
#include "vbill/models.hpp"
#include "vbill/optimizer.hpp"
#include "vbill/subsample.hpp"

namespace vbill {

// MLE on a subset of logistic observations; Newton with step halving.
inline MleResult logistic_subsample_mle(const LogisticRegressionModel& model,
                                        const std::vector<long>& subset) {
  if (subset.empty()) throw std::invalid_argument("subsample_mle: empty subset");
  const Index d = model.dim();
  auto grad = [&](const Vector& beta) {
    Vector g = Vector::Zero(d);
    for (long i : subset) g += model.grad(i, beta);
    return g;
  };
  auto hess = [&](const Vector& beta) {
    Matrix h = Matrix::Zero(d, d);
    for (long i : subset) h += model.hess(i, beta);
    return h;
  };
  return newton_mle(grad, hess, Vector::Zero(d));
}

inline MleResult conjugate_subsample_mle(const ConjugateGaussianModel& model,
                                         const std::vector<long>& subset) {
  if (subset.empty()) throw std::invalid_argument("subsample_mle: empty subset");
  const Index d = model.dim();
  Vector mean = Vector::Zero(d);
  for (long i : subset) mean += model.Y.row(i).transpose();
  mean /= static_cast<double>(subset.size());
  MleResult res;
  res.theta = mean;
  res.information = static_cast<double>(subset.size()) * Matrix::Identity(d, d);
  res.converged = true;
  return res;
}

// Simulated ML for panel models: common random numbers (frozen standard-normal
// point sets) make the IS objective smooth in theta, so Newton with exact
// gradients of the fixed-sample objective and finite-difference Hessians
// applies. Integration is over the standardized latent u = alpha/e^{gamma/2}
// (see sml_contrib): a proposal frozen in alpha-space degenerates along gamma
// and plants a spurious stationary point at a very negative gamma.
template <class PanelModel>
MleResult panel_simulated_mle(const PanelModel& model,
                              const std::vector<long>& subset,
                              const Vector& theta0, const ISConfig& config,
                              std::uint64_t seed, double fd_step = 1e-4) {
  if (subset.empty()) throw std::invalid_argument("subsample_mle: empty subset");
  ISConfig big = config;
  big.num_samples = std::max<long>(config.num_samples, 1024);
  const double s0 = latent_prior_sd(theta0);
  std::vector<LatentProposal> props;  // over u, frozen at theta0
  std::vector<Vector> points;
  for (long i : subset) {
    const LatentProposal pa = build_proposal(model, i, theta0, big.proposal);
    props.push_back({pa.location / s0, pa.scale / s0});
    points.push_back(latent_points(big, seed, static_cast<std::uint64_t>(i), 0x51eull));
  }
  auto grad = [&](const Vector& theta) {
    Vector g = Vector::Zero(model.dim());
    for (std::size_t k = 0; k < subset.size(); ++k)
      g += sml_contrib(model, subset[k], theta, props[k], points[k]).second;
    return g;
  };
  auto objective = [&](const Vector& theta) {
    double f = 0.0;
    for (std::size_t k = 0; k < subset.size(); ++k)
      f += sml_contrib(model, subset[k], theta, props[k], points[k]).first;
    return f;
  };
  auto hess = [&](const Vector& theta) {
    const Index d = model.dim();
    Matrix h(d, d);
    for (Index j = 0; j < d; ++j) {
      Vector tp = theta, tm = theta;
      tp[j] += fd_step;
      tm[j] -= fd_step;
      h.col(j) = (grad(tp) - grad(tm)) / (2.0 * fd_step);
    }
    return ((0.5 * (h + h.transpose())).eval());
  };
  // IS gradients are exact gradients of the fixed-sample simulated
  // likelihood but still carry FD noise through the Hessian; 1e-6 on the
  // gradient norm is attainable with CRN.
  return newton_mle(grad, hess, theta0, 1e-6, 100, objective);
}

inline std::vector<long> initialization_subset(long n, double fraction,
                                               std::uint64_t seed) {
  const long k = std::max<long>(1, static_cast<long>(fraction * static_cast<double>(n)));
  Rng rng = Rng::substream(seed, 0xabcdull);
  std::vector<long> subset(static_cast<std::size_t>(k));
  for (long i = 0; i < k; ++i) subset[static_cast<std::size_t>(i)] = rng.uniform_int(n);
  return subset;
}

// ---- gradient estimators ------------------------------------------------

// Tractable in-memory model with the Taylor control variate; one fresh plan
// per draw.
template <class Model>
GradientEstimator subsampled_estimator(const Model& model,
                                       const ControlVariateCache& cache, long m) {
  return [&model, &cache, m](const Vector& theta, long, long, Rng& rng) {
    const SubsamplePlan plan = draw_plan(cache.n, m, rng);
    DrawEstimate est;
    est.gradient = estimate_gradient(model, theta, cache, plan).value;
    est.loglik = estimate_loglik(model, theta, cache, plan);
    return est;
  };
}

// Exact gradients (small models, test oracle path).
template <class Model>
GradientEstimator exact_estimator(const Model& model) {
  return [&model](const Vector& theta, long, long, Rng&) {
    DrawEstimate est;
    est.gradient = model.grad_all(theta);
    est.loglik = model.loglik_all(theta);
    return est;
  };
}

// Chunked logistic estimator: chunks stay on disk and are loaded one at a
// time per draw, with per-chunk subsample sizes proportional to chunk rows.
inline GradientEstimator chunked_logistic_estimator(
    const chunkstore::ChunkManifest& manifest, const ControlVariateCache& cache,
    long m) {
  if (cache.fingerprint != 0 && cache.fingerprint != manifest.fingerprint)
    throw std::invalid_argument("chunked estimator: cache/manifest fingerprint mismatch");
  const std::vector<long> rows = manifest.chunk_rows();
  const std::vector<long> mk = allocate_subsample(rows, m);
  return [&manifest, &cache, rows, mk](const Vector& theta, long, long, Rng& rng) {
    std::vector<SubsamplePlan> plans;
    for (std::size_t k = 0; k < rows.size(); ++k)
      plans.push_back(draw_plan(rows[k], mk[k], rng));
    // cache one chunk model at a time (plans are evaluated in chunk order)
    long loaded = -1;
    LogisticRegressionModel chunk_model;
    auto model_for_chunk = [&](long k) -> const LogisticRegressionModel& {
      if (k != loaded) {
        chunk_model = chunkstore::logistic_from_table(chunkstore::read_chunk(manifest, k));
        loaded = k;
      }
      return chunk_model;
    };
    DrawEstimate est;
    est.gradient = chunked_estimate_gradient(model_for_chunk, manifest.num_chunks(),
                                             theta, cache, plans).value;
    est.loglik = chunked_estimate_loglik(model_for_chunk, manifest.num_chunks(),
                                         theta, cache, plans);
    return est;
  };
}

// Panel estimator via Fisher's identity; independent plan and IS points per
// draw, keyed by (iteration, draw) for reproducibility.
template <class PanelModel>
GradientEstimator panel_estimator(const PanelModel& model,
                                  const PanelControlVariates& cv, long m,
                                  const ISConfig& config, std::uint64_t seed) {
  return [&model, &cv, m, config, seed](const Vector& theta, long iteration,
                                        long draw, Rng& rng) {
    const SubsamplePlan plan = draw_plan(cv.totals.n, m, rng);
    const std::uint64_t key =
        hash_combine(static_cast<std::uint64_t>(iteration) + 1,
                     static_cast<std::uint64_t>(draw));
    DrawEstimate est;
    est.gradient =
        subsampled_panel_gradient(model, theta, cv, plan, config, seed, key).value;
    est.loglik = subsampled_panel_loglik(model, theta, cv, plan, config, seed, key);
    return est;
  };
}

// ---- end-to-end fits -----------------------------------------------------

struct VbillRun {
  FitResult fit;
  Vector theta_bar;
  double mle_seconds = 0.0;
  double cache_seconds = 0.0;
};

// Full VBILL pipeline for an in-memory logistic model: 30% subsample MLE,
// control-variate cache at the MLE, factor initialization, optimize.
inline VbillRun fit_logistic_vbill(const LogisticRegressionModel& model,
                                   const OptimizerConfig& config,
                                   const PriorSpec& prior,
                                   double init_fraction = 0.3) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto subset = initialization_subset(model.n(), init_fraction, config.seed);
  const MleResult mle = logistic_subsample_mle(model, subset);
  const auto t1 = std::chrono::steady_clock::now();
  const ControlVariateCache cache = build_control_variates(model, mle.theta);
  const auto t2 = std::chrono::steady_clock::now();
  const VariationalParams lam0 =
      init_lambda(mle.theta, mle.information, model.n(),
                  static_cast<long>(subset.size()));
  VbillRun run;
  run.theta_bar = mle.theta;
  run.mle_seconds = std::chrono::duration<double>(t1 - t0).count();
  run.cache_seconds = std::chrono::duration<double>(t2 - t1).count();
  run.fit = vbill_fit(subsampled_estimator(model, cache, config.subsample_size),
                      lam0, model.n(), config, prior);
  return run;
}

inline VbillRun fit_conjugate_vbill(const ConjugateGaussianModel& model,
                                    const OptimizerConfig& config,
                                    const PriorSpec& prior) {
  std::vector<long> all(static_cast<std::size_t>(model.n()));
  std::iota(all.begin(), all.end(), 0L);
  const MleResult mle = conjugate_subsample_mle(model, all);
  VbillRun run;
  run.theta_bar = mle.theta;
  const VariationalParams lam0 =
      init_lambda(mle.theta, mle.information, model.n(), model.n());
  run.fit = vbill_fit(exact_estimator(model), lam0, model.n(), config, prior);
  return run;
}

template <class PanelModel>
VbillRun fit_panel_vbill(const PanelModel& model, const OptimizerConfig& config,
                         const PriorSpec& prior, const ISConfig& is_config,
                         const Vector& theta0, double init_fraction = 0.3) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto subset = initialization_subset(model.n(), init_fraction, config.seed);
  const MleResult mle =
      panel_simulated_mle(model, subset, theta0, is_config, config.seed);
  const auto t1 = std::chrono::steady_clock::now();
  const PanelControlVariates cv =
      build_panel_control_variates(model, mle.theta, is_config, config.seed);
  const auto t2 = std::chrono::steady_clock::now();
  const VariationalParams lam0 =
      init_lambda(mle.theta, mle.information, model.n(),
                  static_cast<long>(subset.size()));
  VbillRun run;
  run.theta_bar = mle.theta;
  run.mle_seconds = std::chrono::duration<double>(t1 - t0).count();
  run.cache_seconds = std::chrono::duration<double>(t2 - t1).count();
  run.fit = vbill_fit(panel_estimator(model, cv, config.subsample_size, is_config,
                                      config.seed),
                      lam0, model.n(), config, prior);
  return run;
}

}  // namespace vbill
