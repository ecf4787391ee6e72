#include <doctest.h>

#include "vbill/models.hpp"
#include "vbill/variational.hpp"

using namespace vbill;

namespace {

VariationalParams make_lambda(const Vector& mu, const Vector& b, double c) {
  VariationalParams lam;
  lam.mu = mu;
  lam.b = b;
  lam.c = c;
  return lam;
}

VariationalParams random_lambda(Index d, Rng& rng) {
  VariationalParams lam;
  lam.mu.resize(d);
  lam.b.resize(d);
  for (Index j = 0; j < d; ++j) {
    lam.mu[j] = rng.normal();
    lam.b[j] = 0.3 + std::fabs(rng.normal());
  }
  lam.c = 0.5 + rng.uniform();
  return lam;
}

}  // namespace

TEST_CASE("reparam_draw basics") {
  Vector mu = Vector::Zero(2), eps(2);
  eps << 0.3, -0.7;
  CHECK((reparam_draw(make_lambda(mu, Vector::Zero(2), 1.0), 1.5, eps) - eps).norm() == 0.0);

  Vector mu2(2), b2(2);
  mu2 << 1, 1;
  b2 << 1, 0;
  const Vector theta = reparam_draw(make_lambda(mu2, b2, 0.0), 2.0, eps * 0.0);
  CHECK(theta[0] == doctest::Approx(3.0));
  CHECK(theta[1] == doctest::Approx(1.0));

  CHECK_THROWS(reparam_draw(make_lambda(mu2, b2, 1.0), 0.0, Vector::Zero(3)));
}

TEST_CASE("reparam_draw moments match (mu, BB' + c^2 I)") {
  Rng master(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Index d = 2 + (trial % 3);
    const VariationalParams lam = random_lambda(d, master);
    const Matrix sigma =
        lam.b * lam.b.transpose() + lam.c * lam.c * Matrix::Identity(d, d);

    const long N = 200000;
    Rng rng(100 + trial);
    Vector mean = Vector::Zero(d);
    Matrix cov = Matrix::Zero(d, d);
    for (long i = 0; i < N; ++i) {
      Vector eps(d);
      for (Index j = 0; j < d; ++j) eps[j] = rng.normal();
      const Vector th = reparam_draw(lam, rng.normal(), eps);
      mean += th;
      cov += th * th.transpose();
    }
    mean /= static_cast<double>(N);
    cov = cov / static_cast<double>(N) - mean * mean.transpose();

    // 4 Monte Carlo standard errors, elementwise
    const double root_n = std::sqrt(static_cast<double>(N));
    for (Index a = 0; a < d; ++a) {
      CHECK(std::fabs(mean[a] - lam.mu[a]) <= 4.0 * std::sqrt(sigma(a, a)) / root_n);
      for (Index b = 0; b < d; ++b) {
        const double se =
            std::sqrt(sigma(a, a) * sigma(b, b) + sigma(a, b) * sigma(a, b)) / root_n;
        CHECK(std::fabs(cov(a, b) - sigma(a, b)) <= 4.0 * se);
      }
    }
  }
}

TEST_CASE("prior_term_A matches a Monte Carlo estimate of E_q[log p - log q]") {
  Vector mu(2), b(2);
  mu << 1, 0;
  b << 1, 0;
  const VariationalParams lam = make_lambda(mu, b, 1.0);
  const PriorSpec prior{50.0};
  const double analytic = prior_term_A(lam, prior);

  const long N = 400000;
  Rng rng(31);
  double acc = 0.0, acc2 = 0.0;
  for (long i = 0; i < N; ++i) {
    Vector eps(2);
    eps << rng.normal(), rng.normal();
    const Vector th = reparam_draw(lam, rng.normal(), eps);
    const double log_p = -kLog2Pi - std::log(prior.sigma0_sq) -
                         th.squaredNorm() / (2.0 * prior.sigma0_sq);
    const double v = log_p - density_eval(lam, th);
    acc += v;
    acc2 += v * v;
  }
  const double mc = acc / N;
  const double se = std::sqrt((acc2 / N - mc * mc) / N);
  CHECK(std::fabs(analytic - mc) <= 3.0 * se);
}

TEST_CASE("prior_term_A limits") {
  Vector mu = Vector::Zero(1), b = Vector::Zero(1);
  const VariationalParams lam = make_lambda(mu, b, 1.0);

  // with a huge prior variance only the entropy-like part is left
  const double d = 1.0;
  const double big = 1e12;
  const double entropy_part = 0.5 * d + 0.5 * log_det_sigma(lam);
  CHECK(prior_term_A(lam, PriorSpec{big}) + 0.5 * d * std::log(big) ==
        doctest::Approx(entropy_part).epsilon(1e-6));

  CHECK_THROWS(prior_term_A(make_lambda(mu, b, 0.0), PriorSpec{1.0}));
}

TEST_CASE("grad_A matches finite differences of prior_term_A") {
  Rng rng(17);
  const PriorSpec prior{50.0};
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 1 + (trial % 4);
    const VariationalParams lam = random_lambda(d, rng);
    CHECK((grad_A(lam, prior).head(d) + lam.mu / prior.sigma0_sq).norm() < 1e-14);

    const Vector g = grad_A(lam, prior);
    const double h = 1e-6;
    Vector stacked = lam.stacked();
    Vector gfd(2 * d + 1);
    for (Index j = 0; j < 2 * d + 1; ++j) {
      Vector sp = stacked, sm = stacked;
      sp[j] += h;
      sm[j] -= h;
      gfd[j] = (prior_term_A(VariationalParams::from_stacked(sp), prior) -
                prior_term_A(VariationalParams::from_stacked(sm), prior)) /
               (2.0 * h);
    }
    CHECK((g - gfd).norm() <= 1e-5 * (1.0 + g.norm()));
  }
}

TEST_CASE("lb_gradient_estimate reduces to grad_A with zero estimates") {
  Vector mu = Vector::Zero(2), b(2);
  b << 1, 0.2;
  const VariationalParams lam = make_lambda(mu, b, 0.8);
  const PriorSpec prior{50.0};

  DrawBatch batch;
  batch.z.resize(1);
  batch.z << 0.4;
  batch.eps = Matrix::Zero(1, 2);
  batch.eps << -0.2, 1.1;
  std::vector<Vector> grads{Vector::Zero(2)};
  const Vector g = lb_gradient_estimate(lam, batch, grads, prior);
  CHECK((g - grad_A(lam, prior)).norm() < 1e-14);

  DrawBatch empty;
  empty.z.resize(0);
  empty.eps.resize(0, 2);
  CHECK_THROWS(lb_gradient_estimate(lam, empty, {}, prior));

  std::vector<Vector> bad{Vector::Constant(2, std::nan(""))};
  CHECK_THROWS(lb_gradient_estimate(lam, batch, bad, prior));
}

TEST_CASE("lb_gradient_estimate is unbiased on the conjugate model") {
  // y_i ~ N(theta, I): grad l is linear, so E over q has a closed form
  Matrix Y(6, 2);
  Y << 0.5, 1.0, -0.2, 0.8, 1.4, 0.1, 0.3, 0.3, 0.9, -0.4, 0.0, 1.2;
  ConjugateGaussianModel model(Y);
  const PriorSpec prior{10.0};

  Vector mu(2), b(2);
  mu << 0.4, 0.5;
  b << 0.3, -0.1;
  const VariationalParams lam = make_lambda(mu, b, 0.4);
  const double n = 6.0;
  const Vector ybar = Y.colwise().mean().transpose();

  Vector analytic(5);
  analytic.head(2) = n * (ybar - lam.mu);
  analytic.segment(2, 2) = -n * lam.b;
  analytic[4] = -n * lam.c * 2.0;
  analytic += grad_A(lam, prior);

  const int R = 200;
  const long S = 64;
  Rng rng(5);
  Vector mean = Vector::Zero(5), m2 = Vector::Zero(5);
  for (int r = 0; r < R; ++r) {
    DrawBatch batch;
    batch.z.resize(S);
    batch.eps.resize(S, 2);
    std::vector<Vector> grads;
    for (long i = 0; i < S; ++i) {
      batch.z[i] = rng.normal();
      batch.eps(i, 0) = rng.normal();
      batch.eps(i, 1) = rng.normal();
      grads.push_back(model.grad_all(
          reparam_draw(lam, batch.z[i], batch.eps.row(i))));
    }
    const Vector g = lb_gradient_estimate(lam, batch, grads, prior);
    mean += g;
    m2 += g.cwiseProduct(g);
  }
  mean /= R;
  m2 = m2 / R - mean.cwiseProduct(mean);
  for (Index j = 0; j < 5; ++j) {
    const double se = std::sqrt(std::max(m2[j], 1e-30) / R);
    CHECK(std::fabs(mean[j] - analytic[j]) <= 4.0 * se);
  }
}

TEST_CASE("lower_bound_estimate recovers the conjugate evidence") {
  Matrix Y(8, 1);
  Y << 0.2, -0.5, 1.1, 0.7, -0.1, 0.4, 0.9, 0.0;
  ConjugateGaussianModel model(Y);
  const double s0 = 4.0;
  const PriorSpec prior{s0};

  // q set to the exact posterior: LB equals the log marginal likelihood
  VariationalParams lam;
  lam.mu = model.posterior_mean(s0);
  lam.b = Vector::Zero(1);
  lam.c = std::sqrt(model.posterior_var(s0));

  const long S = 50000;
  Rng rng(21);
  std::vector<double> lls;
  for (long i = 0; i < S; ++i) {
    Vector eps(1);
    eps << rng.normal();
    lls.push_back(model.loglik_all(reparam_draw(lam, rng.normal(), eps)));
  }
  const auto lb = lower_bound_estimate(lam, lls, prior, model.n(), 3);
  CHECK(lb.iteration == 3);
  CHECK(lb.scaled_value == doctest::Approx(lb.value / 8.0));
  CHECK(lb.value == doctest::Approx(model.log_marginal(s0)).epsilon(5e-3));
}

TEST_CASE("density_eval closed forms") {
  Vector mu(2), b(2);
  mu << 0.3, -0.4;
  b << 1, 0;
  const VariationalParams lam = make_lambda(mu, b, 1.0);

  CHECK(density_eval(lam, mu) ==
        doctest::Approx(-0.5 * log_det_sigma(lam) - kLog2Pi).epsilon(1e-12));

  Vector theta = mu;
  theta[0] += 1.0;  // quadratic form should be 0.5
  CHECK(density_eval(lam, theta) ==
        doctest::Approx(-0.5 * log_det_sigma(lam) - kLog2Pi - 0.25).epsilon(1e-12));

  // 1-d density integrates to 1
  VariationalParams lam1;
  lam1.mu = Vector::Constant(1, 0.2);
  lam1.b = Vector::Constant(1, 0.7);
  lam1.c = 0.5;
  const double sd = marginal_sd(lam1, 0);
  double acc = 0.0;
  const long K = 20000;
  const double lo = lam1.mu[0] - 10 * sd, h = 20 * sd / K;
  for (long k = 0; k <= K; ++k) {
    const double w = (k == 0 || k == K) ? 0.5 : 1.0;
    acc += w * std::exp(density_eval(lam1, Vector::Constant(1, lo + k * h)));
  }
  CHECK(acc * h == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("stacked round trip and validation") {
  Rng rng(2);
  const VariationalParams lam = random_lambda(3, rng);
  const VariationalParams back = VariationalParams::from_stacked(lam.stacked());
  CHECK((back.mu - lam.mu).norm() == 0.0);
  CHECK((back.b - lam.b).norm() == 0.0);
  CHECK(back.c == lam.c);
}
