#pragma once

// Statistical models: per-observation log-likelihood contributions and
// derivatives. Tractable models expose analytic loglik/grad/hess; panel
// models expose the joint density over (data, latent) instead, which the
// importance-sampling estimators consume.

#include <stdexcept>
#include <utility>
#include <vector>

#include "vbill/math.hpp"

namespace vbill {

// Binary logistic regression. The intercept is an explicit constant-1
// column of the design matrix.
struct LogisticRegressionModel {
  Matrix X;  // n x d
  Vector y;  // entries in {0,1}

  LogisticRegressionModel() = default;
  LogisticRegressionModel(Matrix design, Vector response)
      : X(std::move(design)), y(std::move(response)) {
    if (X.rows() != y.size())
      throw std::invalid_argument("logistic: design/response size mismatch");
    for (Index i = 0; i < y.size(); ++i)
      if (y[i] != 0.0 && y[i] != 1.0)
        throw std::invalid_argument("logistic: responses must be 0 or 1");
  }

  Index n() const { return X.rows(); }
  Index dim() const { return X.cols(); }

  void check_index(Index i) const {
    if (i < 0 || i >= n()) throw std::out_of_range("logistic: observation index");
  }

  double loglik(Index i, const Vector& beta) const {
    check_index(i);
    const double eta = X.row(i).dot(beta);
    return y[i] * eta - log1pexp(eta);
  }

  Vector grad(Index i, const Vector& beta) const {
    check_index(i);
    const double p = logistic(X.row(i).dot(beta));
    return (y[i] - p) * X.row(i).transpose();
  }

  Matrix hess(Index i, const Vector& beta) const {
    check_index(i);
    const double p = logistic(X.row(i).dot(beta));
    return (-p * (1.0 - p)) * (X.row(i).transpose() * X.row(i));
  }

  double loglik_all(const Vector& beta) const {
    double s = 0.0;
    for (Index i = 0; i < n(); ++i) s += loglik(i, beta);
    return s;
  }
  Vector grad_all(const Vector& beta) const {
    Vector g = Vector::Zero(dim());
    for (Index i = 0; i < n(); ++i) g += grad(i, beta);
    return g;
  }
  Matrix hess_all(const Vector& beta) const {
    Matrix h = Matrix::Zero(dim(), dim());
    for (Index i = 0; i < n(); ++i) h += hess(i, beta);
    return h;
  }
};

// Gaussian observations with known unit covariance and unknown mean:
// y_i ~ N(theta, I_d). Conjugate under a N(0, s0^2 I) prior, so the exact
// posterior and marginal likelihood are available as test oracles.
struct ConjugateGaussianModel {
  Matrix Y;  // n x d, one observation per row

  explicit ConjugateGaussianModel(Matrix obs) : Y(std::move(obs)) {}

  Index n() const { return Y.rows(); }
  Index dim() const { return Y.cols(); }

  void check_index(Index i) const {
    if (i < 0 || i >= n()) throw std::out_of_range("conjugate: observation index");
  }

  double loglik(Index i, const Vector& theta) const {
    check_index(i);
    const Vector r = Y.row(i).transpose() - theta;
    return -0.5 * dim() * kLog2Pi - 0.5 * r.squaredNorm();
  }
  Vector grad(Index i, const Vector& theta) const {
    check_index(i);
    return Y.row(i).transpose() - theta;
  }
  Matrix hess(Index i, const Vector& theta) const {
    check_index(i);
    (void)theta;
    return -Matrix::Identity(dim(), dim());
  }

  double loglik_all(const Vector& theta) const {
    double s = 0.0;
    for (Index i = 0; i < n(); ++i) s += loglik(i, theta);
    return s;
  }
  Vector grad_all(const Vector& theta) const {
    Vector g = Vector::Zero(dim());
    for (Index i = 0; i < n(); ++i) g += grad(i, theta);
    return g;
  }

  // posterior under N(0, s0^2 I): N(mean, var * I)
  Vector posterior_mean(double sigma0_sq) const {
    const double prec = n() + 1.0 / sigma0_sq;
    return Y.colwise().sum().transpose() / prec;
  }
  double posterior_var(double sigma0_sq) const {
    return 1.0 / (n() + 1.0 / sigma0_sq);
  }
  double log_marginal(double sigma0_sq) const {
    const double d = static_cast<double>(dim());
    const double prec = n() + 1.0 / sigma0_sq;
    const Vector s = Y.colwise().sum().transpose();
    double ss = Y.squaredNorm();
    return -0.5 * n() * d * kLog2Pi - 0.5 * d * std::log(sigma0_sq) -
           0.5 * d * std::log(prec) - 0.5 * (ss - s.squaredNorm() / prec);
  }
};

// Logistic panel model with a scalar random intercept per panel:
//   logit P(y_it = 1) = x_it' beta + alpha_i,  alpha_i ~ N(0, exp(gamma)).
// theta = (beta, gamma) with gamma the last coordinate. Per-panel likelihood
// contributions are intractable; estimation goes through fisher_identity.
struct PanelLogisticModel {
  std::vector<Matrix> X;  // per panel: T_i x p
  std::vector<Vector> y;  // per panel: T_i entries in {0,1}

  PanelLogisticModel() = default;
  PanelLogisticModel(std::vector<Matrix> designs, std::vector<Vector> responses)
      : X(std::move(designs)), y(std::move(responses)) {
    if (X.size() != y.size())
      throw std::invalid_argument("panel: design/response count mismatch");
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (X[i].rows() == 0) throw std::invalid_argument("panel: empty panel");
      if (X[i].rows() != y[i].size())
        throw std::invalid_argument("panel: ragged panel");
    }
  }

  Index n() const { return static_cast<Index>(X.size()); }
  Index dim() const { return X.empty() ? 0 : X[0].cols() + 1; }

  void check_index(Index i) const {
    if (i < 0 || i >= n()) throw std::out_of_range("panel: panel index");
  }

  Vector linear_predictors(Index i, const Vector& theta) const {
    check_index(i);
    return X[static_cast<std::size_t>(i)] * theta.head(theta.size() - 1);
  }

  // log p(y_i, alpha | theta), with eta = linear_predictors(i, theta)
  double joint_logdens(Index i, const Vector& theta, double alpha,
                       const Vector& eta) const {
    if (!std::isfinite(alpha))
      throw std::invalid_argument("panel: non-finite latent value");
    const Vector& yi = y[static_cast<std::size_t>(i)];
    double ll = 0.0;
    for (Index t = 0; t < yi.size(); ++t) {
      const double e = eta[t] + alpha;
      ll += yi[t] * e - log1pexp(e);
    }
    const double gamma = theta[theta.size() - 1];
    return ll + normal_logpdf(alpha, 0.0, std::exp(gamma));
  }

  double joint_logdens(Index i, const Vector& theta, double alpha) const {
    return joint_logdens(i, theta, alpha, linear_predictors(i, theta));
  }

  // (log p(y_i, alpha | theta), its gradient w.r.t. theta)
  std::pair<double, Vector> joint_logdens_grad(Index i, const Vector& theta,
                                               double alpha,
                                               const Vector& eta) const {
    if (!std::isfinite(alpha))
      throw std::invalid_argument("panel: non-finite latent value");
    const Matrix& Xi = X[static_cast<std::size_t>(i)];
    const Vector& yi = y[static_cast<std::size_t>(i)];
    const Index d = dim();
    Vector g = Vector::Zero(d);
    double ll = 0.0;
    for (Index t = 0; t < yi.size(); ++t) {
      const double e = eta[t] + alpha;
      ll += yi[t] * e - log1pexp(e);
      g.head(d - 1) += (yi[t] - logistic(e)) * Xi.row(t).transpose();
    }
    const double gamma = theta[d - 1];
    ll += normal_logpdf(alpha, 0.0, std::exp(gamma));
    g[d - 1] = 0.5 * (alpha * alpha * std::exp(-gamma) - 1.0);
    return {ll, g};
  }

  std::pair<double, Vector> joint_logdens_grad(Index i, const Vector& theta,
                                               double alpha) const {
    return joint_logdens_grad(i, theta, alpha, linear_predictors(i, theta));
  }
};

// Test oracle with the same latent structure but a closed-form marginal:
//   y_it | alpha_i ~ N(alpha_i, 1), alpha_i ~ N(0, exp(gamma)), theta = (gamma).
struct NormalNormalPanelModel {
  std::vector<Vector> y;

  explicit NormalNormalPanelModel(std::vector<Vector> panels)
      : y(std::move(panels)) {}

  Index n() const { return static_cast<Index>(y.size()); }
  Index dim() const { return 1; }

  void check_index(Index i) const {
    if (i < 0 || i >= n()) throw std::out_of_range("normal panel: panel index");
  }

  Vector linear_predictors(Index i, const Vector&) const {
    check_index(i);
    return Vector::Zero(y[static_cast<std::size_t>(i)].size());
  }

  double joint_logdens(Index i, const Vector& theta, double alpha,
                       const Vector&) const {
    return joint_logdens(i, theta, alpha);
  }
  double joint_logdens(Index i, const Vector& theta, double alpha) const {
    check_index(i);
    if (!std::isfinite(alpha))
      throw std::invalid_argument("normal panel: non-finite latent value");
    const Vector& yi = y[static_cast<std::size_t>(i)];
    double ll = 0.0;
    for (Index t = 0; t < yi.size(); ++t) ll += normal_logpdf(yi[t], alpha, 1.0);
    return ll + normal_logpdf(alpha, 0.0, std::exp(theta[0]));
  }

  std::pair<double, Vector> joint_logdens_grad(Index i, const Vector& theta,
                                               double alpha,
                                               const Vector&) const {
    return joint_logdens_grad(i, theta, alpha);
  }
  std::pair<double, Vector> joint_logdens_grad(Index i, const Vector& theta,
                                               double alpha) const {
    const double ll = joint_logdens(i, theta, alpha);
    Vector g(1);
    g[0] = 0.5 * (alpha * alpha * std::exp(-theta[0]) - 1.0);
    return {ll, g};
  }

  // marginal: y_i ~ N(0, I + tau^2 11'), tau^2 = exp(gamma)
  double marginal_loglik(Index i, const Vector& theta) const {
    check_index(i);
    const Vector& yi = y[static_cast<std::size_t>(i)];
    const double tau2 = std::exp(theta[0]);
    const double T = static_cast<double>(yi.size());
    const double sy = yi.sum();
    return -0.5 * T * kLog2Pi - 0.5 * std::log1p(T * tau2) -
           0.5 * (yi.squaredNorm() - tau2 * sy * sy / (1.0 + T * tau2));
  }

  Vector marginal_grad(Index i, const Vector& theta) const {
    check_index(i);
    const Vector& yi = y[static_cast<std::size_t>(i)];
    const double tau2 = std::exp(theta[0]);
    const double T = static_cast<double>(yi.size());
    const double sy = yi.sum();
    const double denom = 1.0 + T * tau2;
    const double dl_dtau2 =
        -0.5 * T / denom + 0.5 * sy * sy / (denom * denom);
    Vector g(1);
    g[0] = dl_dtau2 * tau2;  // chain rule through gamma = log tau^2
    return g;
  }

  double marginal_loglik_all(const Vector& theta) const {
    double s = 0.0;
    for (Index i = 0; i < n(); ++i) s += marginal_loglik(i, theta);
    return s;
  }
  Vector marginal_grad_all(const Vector& theta) const {
    Vector g = Vector::Zero(1);
    for (Index i = 0; i < n(); ++i) g += marginal_grad(i, theta);
    return g;
  }
};

}  // namespace vbill
