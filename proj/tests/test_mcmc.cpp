#include <doctest.h>

#include <algorithm>

#include "vbill/fisher_identity.hpp"
#include "vbill/mcmc.hpp"
#include "vbill/models.hpp"
#include "vbill/simulate.hpp"

using namespace vbill;

namespace {

NormalNormalPanelModel oracle_model(long n, long T, double gamma,
                                    std::uint64_t seed) {
  Rng rng(seed);
  const double tau = std::exp(0.5 * gamma);
  std::vector<Vector> panels;
  for (long i = 0; i < n; ++i) {
    const double alpha = tau * rng.normal();
    Vector yi(T);
    for (long t = 0; t < T; ++t) yi[t] = alpha + rng.normal();
    panels.push_back(yi);
  }
  return NormalNormalPanelModel(std::move(panels));
}

double two_sample_ks_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) ++i;
    else ++j;
    d = std::max(d, std::fabs(i / na - j / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  const double lambda = (ne + 0.12 + 0.11 / ne) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

TEST_CASE("adaptive RW-MH recovers a standard normal target") {
  mcmc::ChainConfig cfg;
  cfg.iterations = 100000;
  cfg.burn_in = 10000;
  cfg.initial = Vector::Zero(2);
  cfg.seed = 11;
  auto target = [](const Vector& x) { return -0.5 * x.squaredNorm(); };
  const auto out = mcmc::adaptive_rw_mh(target, cfg);

  CHECK(out.mean.cwiseAbs().maxCoeff() < 0.05);
  const Matrix draws = out.draws;
  Matrix cov = Matrix::Zero(2, 2);
  for (Index i = 0; i < draws.rows(); ++i) {
    const Vector c = draws.row(i).transpose() - out.mean;
    cov += c * c.transpose();
  }
  cov /= static_cast<double>(draws.rows() - 1);
  CHECK((cov - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("post-adaptation acceptance rates sit in the usual band") {
  for (Index d : {2, 4, 12}) {
    mcmc::ChainConfig cfg;
    cfg.iterations = 20000;
    cfg.burn_in = 5000;
    cfg.initial = Vector::Zero(d);
    cfg.seed = 13 + static_cast<std::uint64_t>(d);
    auto target = [](const Vector& x) { return -0.5 * x.squaredNorm(); };
    const auto out = mcmc::adaptive_rw_mh(target, cfg);
    CHECK(out.acceptance_rate >= 0.1);
    CHECK(out.acceptance_rate <= 0.5);
  }
}

TEST_CASE("flat target accepts everything") {
  mcmc::ChainConfig cfg;
  cfg.iterations = 2000;
  cfg.burn_in = 500;
  cfg.initial = Vector::Zero(2);
  auto target = [](const Vector&) { return 0.0; };
  const auto out = mcmc::adaptive_rw_mh(target, cfg);
  CHECK(out.acceptance_rate == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("non-finite initial target is rejected") {
  mcmc::ChainConfig cfg;
  cfg.initial = Vector::Zero(1);
  auto target = [](const Vector&) { return -std::numeric_limits<double>::infinity(); };
  CHECK_THROWS(mcmc::adaptive_rw_mh(target, cfg));
}

TEST_CASE("logistic posterior is seed-stable within MCMC error") {
  const Vector beta_true = (Vector(4) << -1.0, 0.6, -0.2, 0.5).finished();
  const Matrix table = simulate_logistic_table(1000, beta_true, 17);
  LogisticRegressionModel model(table.rightCols(4), table.col(0));
  auto log_post = [&](const Vector& beta) {
    return model.loglik_all(beta) - beta.squaredNorm() / 100.0;
  };
  auto run = [&](std::uint64_t seed) {
    mcmc::ChainConfig cfg;
    cfg.iterations = 30000;
    cfg.burn_in = 10000;
    cfg.initial = Vector::Zero(4);
    cfg.seed = seed;
    return mcmc::adaptive_rw_mh(log_post, cfg);
  };
  const auto a = run(1), b = run(2);
  for (Index j = 0; j < 4; ++j) {
    const double se_a = mcmc::batch_means_se(a.draws.col(j));
    const double se_b = mcmc::batch_means_se(b.draws.col(j));
    CHECK(std::fabs(a.mean[j] - b.mean[j]) <=
          3.0 * std::sqrt(se_a * se_a + se_b * se_b));
  }
}

TEST_CASE("PMMH with the exact likelihood reduces to MH") {
  Matrix Y(20, 1);
  Rng rng(23);
  for (Index i = 0; i < 20; ++i) Y(i, 0) = 0.7 + rng.normal();
  ConjugateGaussianModel model(Y);
  const double s0 = 10.0;

  mcmc::ChainConfig cfg;
  cfg.iterations = 30000;
  cfg.burn_in = 10000;
  cfg.initial = Vector::Zero(1);
  cfg.seed = 3;
  auto log_post = [&](const Vector& th) {
    return model.loglik_all(th) - th.squaredNorm() / (2.0 * s0);
  };
  const auto mh = mcmc::adaptive_rw_mh(log_post, cfg);

  cfg.seed = 4;
  auto exact_est = [&](const Vector& th, Rng&) { return model.loglik_all(th); };
  auto log_prior = [&](const Vector& th) { return -th.squaredNorm() / (2.0 * s0); };
  const auto pm = mcmc::pmmh(exact_est, log_prior, cfg);

  std::vector<double> a, b;
  for (Index i = 0; i < mh.draws.rows(); i += 20) a.push_back(mh.draws(i, 0));
  for (Index i = 0; i < pm.draws.rows(); i += 20) b.push_back(pm.draws(i, 0));
  CHECK(two_sample_ks_pvalue(a, b) > 0.001);
}

TEST_CASE("PMMH with the IS estimator matches the analytic-likelihood chain") {
  const auto model = oracle_model(50, 5, 0.3, 29);
  const double s0 = 10.0;
  auto log_prior = [&](const Vector& th) { return -th.squaredNorm() / (2.0 * s0); };

  mcmc::ChainConfig cfg;
  cfg.iterations = 20000;
  cfg.burn_in = 5000;
  cfg.initial = Vector::Zero(1);
  cfg.seed = 5;
  auto analytic = [&](const Vector& th, Rng&) { return model.marginal_loglik_all(th); };
  const auto gold = mcmc::pmmh(analytic, log_prior, cfg);

  ISConfig is_cfg;
  is_cfg.num_samples = 128;
  auto noisy = [&](const Vector& th, Rng& rng) {
    return total_loglik_estimate(model, th, is_cfg, rng.bits());
  };
  cfg.seed = 6;
  const auto chain = mcmc::pmmh(noisy, log_prior, cfg);

  const double se = std::sqrt(std::pow(mcmc::batch_means_se(gold.draws.col(0)), 2) +
                              std::pow(mcmc::batch_means_se(chain.draws.col(0)), 2));
  CHECK(std::fabs(gold.mean[0] - chain.mean[0]) <= 3.0 * se);
}

TEST_CASE("noisier estimators reduce PMMH acceptance") {
  const auto model = oracle_model(50, 5, 0.0, 31);
  auto log_prior = [](const Vector& th) { return -th.squaredNorm() / 20.0; };
  auto accept_with = [&](long N) {
    ISConfig is_cfg;
    is_cfg.num_samples = N;
    is_cfg.proposal = ProposalKind::Prior;
    mcmc::ChainConfig cfg;
    cfg.iterations = 6000;
    cfg.burn_in = 2000;
    cfg.initial = Vector::Zero(1);
    cfg.seed = 7;
    auto est = [&](const Vector& th, Rng& rng) {
      return total_loglik_estimate(model, th, is_cfg, rng.bits());
    };
    return mcmc::pmmh(est, log_prior, cfg).acceptance_rate;
  };
  CHECK(accept_with(4) < accept_with(64));
}

TEST_CASE("tune_is_samples") {
  SUBCASE("zero-variance estimator returns the minimum") {
    auto est = [](long, Rng&) { return -10.0; };
    CHECK(mcmc::tune_is_samples(est, 1) == 2);
  }

  SUBCASE("oracle panel tuning lands below the target variance") {
    const auto model = oracle_model(100, 5, 0.3, 37);
    Vector theta(1);
    theta << 0.3;
    auto est = [&](long N, Rng& rng) {
      ISConfig cfg;
      cfg.num_samples = N;
      cfg.proposal = ProposalKind::Prior;
      return total_loglik_estimate(model, theta, cfg, rng.bits());
    };
    const long N = mcmc::tune_is_samples(est, 2);

    // re-measure at the tuned N
    const int reps = 200;
    double mean = 0.0, m2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      Rng rng(5000 + r);
      const double v = est(N, rng);
      mean += v;
      m2 += v * v;
    }
    mean /= reps;
    const double var = m2 / reps - mean * mean;
    CHECK(var <= 1.1);
    CHECK(var >= 0.2);  // halving N would roughly double the variance

    // variance scales like 1/N
    if (N >= 4) {
      double mean2 = 0.0, sq2 = 0.0;
      for (int r = 0; r < reps; ++r) {
        Rng rng(9000 + r);
        const double v = est(N / 2, rng);
        mean2 += v;
        sq2 += v * v;
      }
      mean2 /= reps;
      const double var_half = sq2 / reps - mean2 * mean2;
      CHECK(var_half > 1.2 * var);
      CHECK(var_half < 4.0 * var);
    }
  }
}

TEST_CASE("chains are reproducible and exportable") {
  mcmc::ChainConfig cfg;
  cfg.iterations = 3000;
  cfg.burn_in = 1000;
  cfg.initial = Vector::Zero(2);
  cfg.seed = 9;
  auto target = [](const Vector& x) { return -0.5 * x.squaredNorm(); };
  const auto a = mcmc::adaptive_rw_mh(target, cfg);
  const auto b = mcmc::adaptive_rw_mh(target, cfg);
  CHECK((a.draws - b.draws).cwiseAbs().maxCoeff() == 0.0);

  mcmc::write_chain(a, cfg, "chain_header.txt", "chain_draws.bin");
  std::ifstream h("chain_header.txt");
  std::string key;
  long dval = 0;
  h >> key >> dval;
  CHECK(key == "d");
  CHECK(dval == 2);
  std::ifstream bin("chain_draws.bin", std::ios::binary);
  bin.seekg(0, std::ios::end);
  CHECK(static_cast<long>(bin.tellg()) == 8 * a.draws.size());
  std::remove("chain_header.txt");
  std::remove("chain_draws.bin");
}

TEST_CASE("batch-means standard error is sane on iid draws") {
  Rng rng(77);
  Vector x(20000);
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  const double se = mcmc::batch_means_se(x);
  const double iid_se = 1.0 / std::sqrt(20000.0);
  CHECK(se > 0.5 * iid_se);
  CHECK(se < 2.0 * iid_se);
}
