#pragma once

// Unbiased subsampled estimators of the log-likelihood gradient (and of the
// log-likelihood itself, for the stopping rule) built around a Taylor
// control variate centered at theta_bar. The full-data sums are computed
// once and cached.

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbill/math.hpp"

namespace vbill {

struct ControlVariateCache {
  Vector theta_bar;
  Vector a_sum;        // sum_i grad l_i(theta_bar)
  Matrix b_sum;        // sum_i hess l_i(theta_bar)
  double loglik_sum = 0.0;  // sum_i l_i(theta_bar)
  long n = 0;
  std::uint64_t fingerprint = 0;  // dataset the cache was built from

  Index dim() const { return theta_bar.size(); }

  // first-order Taylor control variate total w(theta)
  Vector control_variate(const Vector& theta) const {
    return a_sum + b_sum * (theta - theta_bar);
  }
  // second-order Taylor total for the log-likelihood estimator
  double control_variate_loglik(const Vector& theta) const {
    const Vector dtheta = theta - theta_bar;
    return loglik_sum + a_sum.dot(dtheta) + 0.5 * dtheta.dot(b_sum * dtheta);
  }
};

struct SubsamplePlan {
  std::vector<long> idx;  // indices into {0..n-1}, duplicates allowed
  long n = 0;

  long m() const { return static_cast<long>(idx.size()); }
};

// Simple random sampling with replacement.
inline SubsamplePlan draw_plan(long n, long m, Rng& rng) {
  if (n <= 0 || m <= 0) throw std::invalid_argument("draw_plan: n, m must be positive");
  SubsamplePlan plan;
  plan.n = n;
  plan.idx.resize(static_cast<std::size_t>(m));
  for (long i = 0; i < m; ++i)
    plan.idx[static_cast<std::size_t>(i)] = rng.uniform_int(n);
  return plan;
}

struct GradientEstimate {
  Vector value;
  long m = 0;
  Vector sample_variance;  // per-coordinate variance of the n*d_u(theta) terms
};

template <class Model>
ControlVariateCache build_control_variates(const Model& model,
                                           const Vector& theta_bar,
                                           std::uint64_t fingerprint = 0) {
  check_finite(theta_bar, "theta_bar");
  const Index d = model.dim();
  ControlVariateCache cache;
  cache.theta_bar = theta_bar;
  cache.a_sum = Vector::Zero(d);
  cache.b_sum = Matrix::Zero(d, d);
  cache.n = model.n();
  cache.fingerprint = fingerprint;
  for (Index i = 0; i < model.n(); ++i) {
    const double ll = model.loglik(i, theta_bar);
    const Vector g = model.grad(i, theta_bar);
    if (!std::isfinite(ll) || !g.allFinite())
      throw std::runtime_error("build_control_variates: non-finite contribution at index " +
                               std::to_string(i));
    cache.loglik_sum += ll;
    cache.a_sum += g;
    cache.b_sum += model.hess(i, theta_bar);
  }
  return cache;
}

namespace detail {

inline void check_plan(const ControlVariateCache& cache, const SubsamplePlan& plan) {
  if (plan.n != cache.n)
    throw std::invalid_argument("subsample: plan drawn for a different dataset size");
  if (plan.m() == 0) throw std::invalid_argument("subsample: empty plan");
  for (long i : plan.idx)
    if (i < 0 || i >= cache.n) throw std::out_of_range("subsample: index out of range");
}

}  // namespace detail

// G-hat(theta, u) = w(theta) + (n/m) sum over the plan of
//   g_u(theta) - grad l_u(theta_bar) - hess l_u(theta_bar) (theta - theta_bar).
template <class Model>
GradientEstimate estimate_gradient(const Model& model, const Vector& theta,
                                   const ControlVariateCache& cache,
                                   const SubsamplePlan& plan) {
  detail::check_plan(cache, plan);
  const Index d = cache.dim();
  const Vector dtheta = theta - cache.theta_bar;
  const double n = static_cast<double>(cache.n);
  const long m = plan.m();

  Vector sum = Vector::Zero(d);
  Vector sumsq = Vector::Zero(d);
  for (long u : plan.idx) {
    const Vector di = model.grad(u, theta) - model.grad(u, cache.theta_bar) -
                      model.hess(u, cache.theta_bar) * dtheta;
    const Vector term = n * di;
    sum += term;
    sumsq += term.cwiseProduct(term);
  }
  GradientEstimate est;
  est.m = m;
  est.value = cache.control_variate(theta) + sum / static_cast<double>(m);
  est.sample_variance =
      m > 1 ? ((sumsq - sum.cwiseProduct(sum) / static_cast<double>(m)) /
               static_cast<double>(m - 1)).eval()
            : Vector::Zero(d).eval();
  if (!est.value.allFinite())
    throw std::runtime_error("estimate_gradient: non-finite estimate");
  return est;
}

// Unbiased estimator of l(theta) using a second-order Taylor control variate
// around theta_bar, reusing the cached sums.
template <class Model>
double estimate_loglik(const Model& model, const Vector& theta,
                       const ControlVariateCache& cache,
                       const SubsamplePlan& plan) {
  detail::check_plan(cache, plan);
  const Vector dtheta = theta - cache.theta_bar;
  const double n = static_cast<double>(cache.n);
  double sum = 0.0;
  for (long u : plan.idx) {
    const Vector gbar = model.grad(u, cache.theta_bar);
    const double taylor = model.loglik(u, cache.theta_bar) + gbar.dot(dtheta) +
                          0.5 * dtheta.dot(model.hess(u, cache.theta_bar) * dtheta);
    sum += n * (model.loglik(u, theta) - taylor);
  }
  return cache.control_variate_loglik(theta) + sum / static_cast<double>(plan.m());
}

// Divide-and-combine form over chunks: the control-variate totals telescope
// across chunks, so only the difference terms need per-chunk weights n_k/m_k.
// model_for_chunk(k) returns a model over chunk k's rows (local indices).
template <class ChunkModelFn>
GradientEstimate chunked_estimate_gradient(ChunkModelFn&& model_for_chunk,
                                           long num_chunks, const Vector& theta,
                                           const ControlVariateCache& cache,
                                           const std::vector<SubsamplePlan>& plans) {
  if (static_cast<long>(plans.size()) != num_chunks)
    throw std::invalid_argument("chunked_estimate_gradient: one plan per chunk required");
  const Index d = cache.dim();
  const Vector dtheta = theta - cache.theta_bar;
  Vector sum = Vector::Zero(d);
  long m_total = 0;
  for (long k = 0; k < num_chunks; ++k) {
    const auto& model = model_for_chunk(k);
    const SubsamplePlan& plan = plans[static_cast<std::size_t>(k)];
    if (plan.n != model.n())
      throw std::invalid_argument("chunked_estimate_gradient: plan/chunk size mismatch");
    const double nk = static_cast<double>(plan.n);
    const double mk = static_cast<double>(plan.m());
    for (long u : plan.idx) {
      const Vector di = model.grad(u, theta) - model.grad(u, cache.theta_bar) -
                        model.hess(u, cache.theta_bar) * dtheta;
      sum += (nk / mk) * di;
    }
    m_total += plan.m();
  }
  GradientEstimate est;
  est.m = m_total;
  est.value = cache.control_variate(theta) + sum;
  est.sample_variance = Vector::Zero(d);
  if (!est.value.allFinite())
    throw std::runtime_error("chunked_estimate_gradient: non-finite estimate");
  return est;
}

template <class ChunkModelFn>
double chunked_estimate_loglik(ChunkModelFn&& model_for_chunk, long num_chunks,
                               const Vector& theta,
                               const ControlVariateCache& cache,
                               const std::vector<SubsamplePlan>& plans) {
  if (static_cast<long>(plans.size()) != num_chunks)
    throw std::invalid_argument("chunked_estimate_loglik: one plan per chunk required");
  const Vector dtheta = theta - cache.theta_bar;
  double sum = 0.0;
  for (long k = 0; k < num_chunks; ++k) {
    const auto& model = model_for_chunk(k);
    const SubsamplePlan& plan = plans[static_cast<std::size_t>(k)];
    const double nk = static_cast<double>(plan.n);
    const double mk = static_cast<double>(plan.m());
    for (long u : plan.idx) {
      const Vector gbar = model.grad(u, cache.theta_bar);
      const double taylor = model.loglik(u, cache.theta_bar) + gbar.dot(dtheta) +
                            0.5 * dtheta.dot(model.hess(u, cache.theta_bar) * dtheta);
      sum += (nk / mk) * (model.loglik(u, theta) - taylor);
    }
  }
  return cache.control_variate_loglik(theta) + sum;
}

// Per-chunk subsample sizes proportional to chunk sizes; the rounding
// remainder goes to the largest chunk.
inline std::vector<long> allocate_subsample(const std::vector<long>& chunk_rows,
                                            long m_total) {
  long n = 0;
  for (long r : chunk_rows) n += r;
  std::vector<long> mk(chunk_rows.size());
  long assigned = 0;
  std::size_t largest = 0;
  for (std::size_t k = 0; k < chunk_rows.size(); ++k) {
    mk[k] = std::max<long>(1, std::lround(static_cast<double>(m_total) *
                                          chunk_rows[k] / static_cast<double>(n)));
    assigned += mk[k];
    if (chunk_rows[k] > chunk_rows[largest]) largest = k;
  }
  mk[largest] += m_total - assigned;
  if (mk[largest] < 1) mk[largest] = 1;
  return mk;
}

// Flat binary cache record: d, n, fingerprint, theta_bar, loglik_sum, a_sum,
// row-major b_sum; little-endian 64-bit values throughout.
inline void save_cache(const ControlVariateCache& cache, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_cache: cannot open " + path);
  const std::int64_t d = cache.dim();
  const std::int64_t n = cache.n;
  out.write(reinterpret_cast<const char*>(&d), 8);
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(reinterpret_cast<const char*>(&cache.fingerprint), 8);
  out.write(reinterpret_cast<const char*>(cache.theta_bar.data()), 8 * d);
  out.write(reinterpret_cast<const char*>(&cache.loglik_sum), 8);
  out.write(reinterpret_cast<const char*>(cache.a_sum.data()), 8 * d);
  Matrix b_row = cache.b_sum.transpose();  // Eigen stores column-major
  out.write(reinterpret_cast<const char*>(b_row.data()), 8 * d * d);
  if (!out) throw std::runtime_error("save_cache: write failed");
}

inline ControlVariateCache load_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_cache: cannot open " + path);
  std::int64_t d = 0, n = 0;
  ControlVariateCache cache;
  in.read(reinterpret_cast<char*>(&d), 8);
  in.read(reinterpret_cast<char*>(&n), 8);
  in.read(reinterpret_cast<char*>(&cache.fingerprint), 8);
  cache.n = n;
  cache.theta_bar.resize(d);
  in.read(reinterpret_cast<char*>(cache.theta_bar.data()), 8 * d);
  in.read(reinterpret_cast<char*>(&cache.loglik_sum), 8);
  cache.a_sum.resize(d);
  in.read(reinterpret_cast<char*>(cache.a_sum.data()), 8 * d);
  Matrix b_row(d, d);
  in.read(reinterpret_cast<char*>(b_row.data()), 8 * d * d);
  cache.b_sum = b_row.transpose();
  if (!in) throw std::runtime_error("load_cache: truncated file " + path);
  return cache;
}

}  // namespace vbill
