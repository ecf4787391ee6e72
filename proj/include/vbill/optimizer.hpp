#pragma once

// The natural-gradient stochastic ascent loop: subsample-MLE
// initialization of lambda, the update
//   lambda <- lambda + a_t I_F(lambda)^{-1} grad-LB-hat,
// and the moving-average lower-bound stopping rule.

#include <chrono>
#include <functional>
#include <stdexcept>
#include <vector>

#include "vbill/math.hpp"
#include "vbill/natgrad.hpp"
#include "vbill/rqmc.hpp"
#include "vbill/variational.hpp"

namespace vbill {

struct OptimizerConfig {
  long draws_per_iteration = 256;       // S, a power of 2 for RQMC
  double learning_rate = 0.1;           // a0
  double decay = 50.0;                  // a_t = a0 * decay / (decay + t)
  long stopping_window = 5;             // K
  double stopping_threshold = 1e-7;     // eps_stop
  long max_iterations = 500;
  PointSource source = PointSource::MC;
  long subsample_size = 0;              // m; interpreted by the estimator
  std::uint64_t seed = 1;
  bool identity_preconditioner = false; // test mode: skip the natural gradient
  bool lambda_average_stopping = false; // alternative rule on mean lambda

  double step_size(long t) const { return learning_rate * decay / (decay + t); }

  void validate() const {
    if (draws_per_iteration <= 0) throw std::invalid_argument("config: S must be positive");
    if (stopping_window < 1) throw std::invalid_argument("config: K must be >= 1");
    if (stopping_threshold <= 0) throw std::invalid_argument("config: eps_stop must be positive");
  }
};

struct TracePoint {
  long iteration = 0;
  VariationalParams lambda;
  LowerBoundEstimate lower_bound;
  double gradient_norm = 0.0;
  double step_norm = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  VariationalParams lambda;
  std::vector<TracePoint> trace;
  bool stopped_early = false;
};

// True when the mean scaled lower bound over the last K trace points moved
// by less than eps relative to the mean over the K before them.
inline bool stopping_check(const std::vector<TracePoint>& trace, long K, double eps) {
  if (static_cast<long>(trace.size()) < 2 * K) return false;
  const std::size_t n = trace.size();
  double recent = 0.0, previous = 0.0;
  for (long k = 0; k < K; ++k) {
    recent += trace[n - 1 - static_cast<std::size_t>(k)].lower_bound.scaled_value;
    previous += trace[n - 1 - static_cast<std::size_t>(K + k)].lower_bound.scaled_value;
  }
  return std::fabs(recent - previous) / static_cast<double>(K) < eps;
}

// Newton ascent with step halving on a smooth objective given by its
// gradient and Hessian. Returns (theta_hat, observed information).
struct MleResult {
  Vector theta;
  Matrix information;  // -Hessian at theta_hat
  bool converged = false;
  long iterations = 0;
};

inline MleResult newton_mle(const std::function<Vector(const Vector&)>& grad,
                            const std::function<Matrix(const Vector&)>& hess,
                            Vector theta0, double tol = 1e-8,
                            long max_iter = 100,
                            const std::function<double(const Vector&)>& objective = {}) {
  MleResult res;
  Vector theta = std::move(theta0);
  Vector g = grad(theta);
  double f = objective ? objective(theta) : 0.0;
  for (long it = 0; it < max_iter; ++it) {
    res.iterations = it;
    if (g.norm() < tol) {
      res.converged = true;
      break;
    }
    const Matrix h = hess(theta);
    Vector step = (-h).ldlt().solve(g);
    if (!step.allFinite()) break;
    // Halve until progress. With an objective, require ascent: gradient-norm
    // descent alone can drift into flat saturation regions (logistic tails)
    // where |g| shrinks while the likelihood worsens.
    double scale = 1.0;
    bool moved = false;
    for (int half = 0; half < 30; ++half) {
      const Vector cand = theta + scale * step;
      const Vector gc = grad(cand);
      const bool ok =
          objective ? [&] {
            const double fc = objective(cand);
            if (!(std::isfinite(fc) && gc.allFinite())) return false;
            if (fc > f) {
              f = fc;
              return true;
            }
            return false;
          }()
                    : (gc.allFinite() && gc.norm() < g.norm());
      if (ok) {
        theta = cand;
        g = gc;
        moved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!moved && objective) {
      // The FD Hessian can go indefinite away from the optimum, making the
      // "Newton" direction a descent direction; fall back to steepest ascent.
      step = g / std::max(1.0, g.norm());
      scale = 1.0;
      for (int half = 0; half < 40; ++half) {
        const Vector cand = theta + scale * step;
        const double fc = objective(cand);
        const Vector gc = grad(cand);
        if (std::isfinite(fc) && gc.allFinite() && fc > f) {
          theta = cand;
          g = gc;
          f = fc;
          moved = true;
          break;
        }
        scale *= 0.5;
      }
    }
    if (!moved) break;
  }
  if (!res.converged && grad(theta).norm() < tol) res.converged = true;
  res.theta = theta;
  res.information = -hess(theta);
  if (!res.converged)
    throw std::runtime_error("newton_mle: no convergence after " +
                             std::to_string(max_iter) +
                             " iterations (|g| = " + std::to_string(g.norm()) +
                             ", theta[0] = " + std::to_string(theta[0]) + ")");
  // Separated logistic data saturates: the gradient vanishes as theta runs
  // off to infinity and the curvature collapses with it. Treat a flat
  // information matrix at the "optimum" as non-convergence.
  {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(res.information);
    const double scale = 1.0 + res.information.trace() /
                                   static_cast<double>(res.information.rows());
    if (eig.eigenvalues().minCoeff() <= 1e-8 * scale)
      throw std::runtime_error(
          "newton_mle: degenerate observed information at the optimum "
          "(likely separated data; MLE at infinity)");
  }
  return res;
}

// lambda initialization from a subsample MLE: scale the observed information
// to the full dataset, take Sigma-hat = I_{F,n}^{-1}, set B from the leading
// eigenpair and c from the average residual diagonal.
inline VariationalParams init_lambda(const Vector& theta_hat, Matrix information,
                                     long n, long n_sub) {
  const Index d = theta_hat.size();
  Eigen::SelfAdjointEigenSolver<Matrix> info_eig(information);
  if (info_eig.eigenvalues().minCoeff() <= 0.0) {
    // ridge repair for flat directions in the subsample
    const double ridge = 1e-6 * information.trace() / static_cast<double>(d);
    information += (ridge - info_eig.eigenvalues().minCoeff()) * Matrix::Identity(d, d);
    Eigen::SelfAdjointEigenSolver<Matrix> recheck(information);
    if (recheck.eigenvalues().minCoeff() <= 0.0)
      throw std::invalid_argument("init_lambda: information not positive definite");
  }
  const Matrix info_full = (static_cast<double>(n) / static_cast<double>(n_sub)) * information;
  const Matrix sigma_hat = info_full.inverse();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_hat);
  const Index top = d - 1;  // eigenvalues ascending
  const double nu1 = eig.eigenvalues()[top];
  VariationalParams lam;
  lam.mu = theta_hat;
  lam.b = std::sqrt(nu1) * eig.eigenvectors().col(top);
  const double resid = (sigma_hat - lam.b * lam.b.transpose()).diagonal().sum();
  lam.c = std::sqrt(std::max(resid / static_cast<double>(d), 1e-12));
  return lam;
}

// One model pass per draw: the estimator returns G-hat(theta, u) and an
// estimate of l(theta) from the same subsample.
struct DrawEstimate {
  Vector gradient;
  double loglik = 0.0;
};
using GradientEstimator =
    std::function<DrawEstimate(const Vector& theta, long iteration, long draw, Rng& rng)>;

inline FitResult vbill_fit(const GradientEstimator& estimator,
                           const VariationalParams& lambda0, long n,
                           const OptimizerConfig& config, const PriorSpec& prior) {
  config.validate();
  lambda0.validate();
  const Index d = lambda0.dim();
  const long S = config.draws_per_iteration;
  VariationalParams lam = lambda0;
  FitResult result;
  Rng rng = Rng::substream(config.seed, 0x0f17ull);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<Vector> lambda_window;  // for the alternative stopping rule
  for (long t = 0; t < config.max_iterations; ++t) {
    // innovations for this iteration: scalar z plus d-vector eps per draw
    DrawBatch batch;
    batch.source = config.source;
    batch.z.resize(S);
    batch.eps.resize(S, d);
    if (config.source == PointSource::RQMC) {
      const auto pts = rqmc::sobol_batch(
          static_cast<int>(d) + 1, S,
          hash_combine(config.seed, static_cast<std::uint64_t>(t) + 1), true);
      const Matrix z = rqmc::to_normal(pts);
      batch.z = z.col(0);
      batch.eps = z.rightCols(d);
    } else {
      for (long i = 0; i < S; ++i) {
        batch.z[i] = rng.normal();
        for (Index j = 0; j < d; ++j) batch.eps(i, j) = rng.normal();
      }
    }

    std::vector<Vector> grads(static_cast<std::size_t>(S));
    std::vector<double> logliks(static_cast<std::size_t>(S));
    for (long i = 0; i < S; ++i) {
      const Vector theta = reparam_draw(lam, batch.z[i], batch.eps.row(i));
      const DrawEstimate est = estimator(theta, t, i, rng);
      grads[static_cast<std::size_t>(i)] = est.gradient;
      logliks[static_cast<std::size_t>(i)] = est.loglik;
    }

    const Vector g = lb_gradient_estimate(lam, batch, grads, prior);
    Vector step;
    try {
      step = config.identity_preconditioner ? g : natgrad::natural_gradient(lam, g);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("vbill_fit: preconditioner failed at iteration ") +
                               std::to_string(t) + " after recording " +
                               std::to_string(result.trace.size()) + " trace points: " + e.what());
    }
    const double a_t = config.step_size(t);

    TracePoint tp;
    tp.iteration = t;
    tp.lambda = lam;
    tp.lower_bound = lower_bound_estimate(lam, logliks, prior, n, t);
    tp.gradient_norm = g.norm();
    tp.step_norm = a_t * step.norm();
    tp.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.trace.push_back(tp);

    Vector stacked = lam.stacked() + a_t * step;
    if (!stacked.allFinite())
      throw std::runtime_error("vbill_fit: non-finite lambda at iteration " + std::to_string(t));
    lam = VariationalParams::from_stacked(stacked);

    if (config.lambda_average_stopping) {
      lambda_window.push_back(lam.stacked());
      const long K = config.stopping_window;
      if (static_cast<long>(lambda_window.size()) >= 2 * K) {
        Vector recent = Vector::Zero(2 * d + 1), prev = Vector::Zero(2 * d + 1);
        const std::size_t nw = lambda_window.size();
        for (long k = 0; k < K; ++k) {
          recent += lambda_window[nw - 1 - static_cast<std::size_t>(k)];
          prev += lambda_window[nw - 1 - static_cast<std::size_t>(K + k)];
        }
        if ((recent - prev).norm() / static_cast<double>(K) < config.stopping_threshold) {
          result.stopped_early = true;
          break;
        }
      }
    } else if (stopping_check(result.trace, config.stopping_window,
                              config.stopping_threshold)) {
      result.stopped_early = true;
      break;
    }
  }
  result.lambda = lam;
  return result;
}

}  // namespace vbill
