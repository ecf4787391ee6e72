#pragma once

// Fisher information of the (mu, B, c) parameterization and its closed-form
// inverse, applied as the natural-gradient preconditioner. All closed-form
// products are expanded to inner products with B so no d x d matrix is
// materialized.

#include <stdexcept>

#include "vbill/math.hpp"
#include "vbill/variational.hpp"

namespace vbill::natgrad {

// B'B below this multiple of c^2 routes to the dense solve; the closed form
// divides by B'B.
inline constexpr double kDenseFallbackRatio = 1e-8;
inline constexpr double kMinC2 = 1e-12;

// Sigma^{-1} v in O(d): Sigma^{-1} = (1/c^2)(I - BB'/(c^2 + B'B)).
inline Vector sigma_inverse_apply(const VariationalParams& lam, const Vector& v) {
  if (lam.c == 0.0)
    throw std::invalid_argument("sigma_inverse_apply: c must be nonzero");
  const double c2 = lam.c * lam.c;
  const double bb = lam.b.squaredNorm();
  return (v - lam.b * (lam.b.dot(v) / (c2 + bb))) / c2;
}

// Scalars of the appendix closed form, exposed for testing.
struct FisherBlocks {
  double alpha = 0.0;   // 1/(c^2 + B'B)
  double omega = 0.0;   // corner of I_F
  double kappa = 0.0;   // A^{-1} b = kappa B
  double c2 = 0.0;      // Schur complement omega - b'A^{-1}b
  double ainv_bb = 0.0; // BB' coefficient of A^{-1}
  double ainv_id = 0.0; // identity coefficient of A^{-1}
};

inline FisherBlocks fisher_blocks(const VariationalParams& lam) {
  if (lam.c == 0.0) throw std::invalid_argument("fisher_blocks: c must be nonzero");
  const double d = static_cast<double>(lam.dim());
  const double c = lam.c;
  const double csq = c * c;
  const double bb = lam.b.squaredNorm();
  FisherBlocks f;
  f.alpha = 1.0 / (csq + bb);
  const double ratio = csq / (csq + bb);
  f.omega = (2.0 / csq) * (d - 1.0 + ratio * ratio);
  const double q = 1.0 + csq / bb;
  f.ainv_bb = q - 0.5 * q * q;
  f.ainv_id = csq * q;
  f.kappa = f.ainv_bb * 2.0 * c * bb * f.alpha * f.alpha +
            2.0 * csq * c / (bb * (csq + bb));
  f.c2 = f.omega - 2.0 * c * f.kappa * bb * f.alpha * f.alpha;
  return f;
}

// Dense (2d+1) x (2d+1) assembly of I_F(lambda); oracle path and fallback.
inline Matrix fisher_matrix(const VariationalParams& lam) {
  lam.validate();
  if (lam.c == 0.0) throw std::invalid_argument("fisher_matrix: c must be nonzero");
  const Index d = lam.dim();
  const double c2 = lam.c * lam.c;
  const double bb = lam.b.squaredNorm();
  const double alpha = 1.0 / (c2 + bb);

  const Matrix sigma_inv =
      (Matrix::Identity(d, d) - lam.b * lam.b.transpose() * alpha) / c2;
  const Vector sinv_b = alpha * lam.b;

  Matrix f = Matrix::Zero(2 * d + 1, 2 * d + 1);
  f.topLeftCorner(d, d) = sigma_inv;
  f.block(d, d, d, d) =
      sinv_b * sinv_b.transpose() + (lam.b.dot(sinv_b)) * sigma_inv;
  const Vector b_col = 2.0 * lam.c * (sigma_inv * sinv_b);
  f.block(d, 2 * d, d, 1) = b_col;
  f.block(2 * d, d, 1, d) = b_col.transpose();
  f(2 * d, 2 * d) = 2.0 * c2 * (sigma_inv * sigma_inv).trace();
  return f;
}

// I_F(lambda)^{-1} g in O(d) using the appendix closed form; dense solve
// when B'B is too small for the closed form to be defined.
inline Vector natural_gradient(const VariationalParams& lam, const Vector& g) {
  lam.validate();
  if (lam.c == 0.0) throw std::invalid_argument("natural_gradient: c must be nonzero");
  const Index d = lam.dim();
  if (g.size() != 2 * d + 1)
    throw std::invalid_argument("natural_gradient: gradient size mismatch");
  const double c2sq = lam.c * lam.c;
  const double bb = lam.b.squaredNorm();

  // d = 1 is structurally rank-deficient: the density depends on (B, c)
  // only through B^2 + c^2, so the B and c scores are collinear and the
  // Schur complement is exactly zero. Return the minimum-norm solution.
  if (d == 1) {
    Matrix f = fisher_matrix(lam);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(f);
    return cod.solve(g);
  }

  if (bb < kDenseFallbackRatio * c2sq) {
    Matrix f = fisher_matrix(lam);
    return f.ldlt().solve(g);
  }

  const FisherBlocks f = fisher_blocks(lam);
  if (f.c2 <= kMinC2)
    throw std::runtime_error(
        "natural_gradient: near-singular preconditioner (c2 = " +
        std::to_string(f.c2) + ", |B|^2 = " + std::to_string(bb) +
        ", c = " + std::to_string(lam.c) + ")");

  Vector out(2 * d + 1);
  // mu block: Sigma g_mu = (B'g_mu) B + c^2 g_mu
  const auto g_mu = g.head(d);
  out.head(d) = lam.b * lam.b.dot(g_mu) + c2sq * g_mu;
  // (B, c) block
  const auto g_b = g.segment(d, d);
  const double g_c = g[2 * d];
  const double b_gb = lam.b.dot(g_b);
  out.segment(d, d) = f.ainv_id * g_b +
                      (f.ainv_bb + f.kappa * f.kappa / f.c2) * b_gb * lam.b -
                      (f.kappa / f.c2) * g_c * lam.b;
  out[2 * d] = -(f.kappa / f.c2) * b_gb + g_c / f.c2;
  return out;
}

}  // namespace vbill::natgrad
