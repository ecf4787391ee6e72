#include <doctest.h>

#include <cstdio>

#include "vbill/models.hpp"
#include "vbill/simulate.hpp"
#include "vbill/subsample.hpp"

using namespace vbill;

namespace {

LogisticRegressionModel small_logistic(long n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix X(n, 3);
  Vector y(n);
  for (long i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    X(i, 2) = rng.uniform();
    y[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  }
  return {X, y};
}

SubsamplePlan plan_of(std::vector<long> idx, long n) {
  SubsamplePlan p;
  p.idx = std::move(idx);
  p.n = n;
  return p;
}

}  // namespace

TEST_CASE("control variates on the conjugate model") {
  Matrix Y(5, 2);
  Y << 1, 0, 0, 1, 2, -1, 1, 1, -1, 0;
  ConjugateGaussianModel model(Y);
  Vector theta_bar(2);
  theta_bar << 0.3, 0.3;
  const auto cache = build_control_variates(model, theta_bar);

  Vector a_expected = Vector::Zero(2);
  for (Index i = 0; i < 5; ++i) a_expected += Y.row(i).transpose() - theta_bar;
  CHECK((cache.a_sum - a_expected).norm() < 1e-14);
  CHECK((cache.b_sum + 5.0 * Matrix::Identity(2, 2)).norm() < 1e-14);

  // quadratic log-likelihood: estimator is exact for every plan
  Vector theta(2);
  theta << -0.7, 1.9;
  Rng rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const auto plan = draw_plan(5, 2, rng);
    CHECK((estimate_gradient(model, theta, cache, plan).value -
           model.grad_all(theta)).norm() < 1e-12);
    CHECK(estimate_loglik(model, theta, cache, plan) ==
          doctest::Approx(model.loglik_all(theta)).epsilon(1e-12));
  }
}

TEST_CASE("cache equals brute-force sums on logistic data") {
  const auto model = small_logistic(10, 3);
  Vector theta_bar(3);
  theta_bar << 0.1, -0.4, 0.6;
  const auto cache = build_control_variates(model, theta_bar);

  Vector a = Vector::Zero(3);
  Matrix b = Matrix::Zero(3, 3);
  double ll = 0.0;
  for (Index i = 0; i < 10; ++i) {
    a += model.grad(i, theta_bar);
    b += model.hess(i, theta_bar);
    ll += model.loglik(i, theta_bar);
  }
  CHECK((cache.a_sum - a).norm() < 1e-14);
  CHECK((cache.b_sum - b).norm() < 1e-14);
  CHECK(cache.loglik_sum == doctest::Approx(ll).epsilon(1e-14));
  CHECK(cache.n == 10);
}

TEST_CASE("exact unbiasedness by plan enumeration, n=6 m=2") {
  const auto model = small_logistic(6, 12);
  Vector theta_bar(3), theta(3);
  theta_bar << 0.0, 0.2, -0.1;
  theta << 0.5, -0.3, 0.4;
  const auto cache = build_control_variates(model, theta_bar);

  Vector grad_avg = Vector::Zero(3);
  double ll_avg = 0.0;
  for (long i = 0; i < 6; ++i)
    for (long j = 0; j < 6; ++j) {
      const auto plan = plan_of({i, j}, 6);
      grad_avg += estimate_gradient(model, theta, cache, plan).value;
      ll_avg += estimate_loglik(model, theta, cache, plan);
    }
  grad_avg /= 36.0;
  ll_avg /= 36.0;
  CHECK((grad_avg - model.grad_all(theta)).norm() < 1e-12);
  CHECK(ll_avg == doctest::Approx(model.loglik_all(theta)).epsilon(1e-12));

  // at the center the difference terms vanish
  const auto plan = plan_of({0, 3}, 6);
  CHECK((estimate_gradient(model, theta_bar, cache, plan).value - cache.a_sum).norm() < 1e-13);
  CHECK(estimate_loglik(model, theta_bar, cache, plan) ==
        doctest::Approx(cache.loglik_sum).epsilon(1e-13));
}

TEST_CASE("chunked estimator matches and telescopes") {
  const auto model = small_logistic(12, 21);
  Vector theta_bar(3), theta(3);
  theta_bar << 0.1, 0.1, 0.1;
  theta << -0.2, 0.6, 0.3;
  const auto cache = build_control_variates(model, theta_bar);

  // three chunks of 4 rows; chunk k covers global rows 4k..4k+3
  auto chunk_model = [&](long k) {
    return LogisticRegressionModel(model.X.middleRows(4 * k, 4),
                                   model.y.segment(4 * k, 4));
  };
  std::vector<LogisticRegressionModel> chunks{chunk_model(0), chunk_model(1),
                                              chunk_model(2)};
  auto model_for_chunk = [&](long k) -> const LogisticRegressionModel& {
    return chunks[static_cast<std::size_t>(k)];
  };

  SUBCASE("single chunk reduces to estimate_gradient") {
    std::vector<LogisticRegressionModel> one{model};
    auto whole = [&](long) -> const LogisticRegressionModel& { return one[0]; };
    Rng rng(5);
    const auto plan = draw_plan(12, 3, rng);
    const auto a = chunked_estimate_gradient(whole, 1, theta, cache, {plan});
    const auto b = estimate_gradient(model, theta, cache, plan);
    CHECK((a.value - b.value).norm() < 1e-13);
  }

  SUBCASE("m_k = 1 enumeration over all plan combinations") {
    Vector avg = Vector::Zero(3);
    double ll_avg = 0.0;
    for (long i = 0; i < 4; ++i)
      for (long j = 0; j < 4; ++j)
        for (long k = 0; k < 4; ++k) {
          const std::vector<SubsamplePlan> plans{
              plan_of({i}, 4), plan_of({j}, 4), plan_of({k}, 4)};
          avg += chunked_estimate_gradient(model_for_chunk, 3, theta, cache, plans).value;
          ll_avg += chunked_estimate_loglik(model_for_chunk, 3, theta, cache, plans);
        }
    avg /= 64.0;
    ll_avg /= 64.0;
    CHECK((avg - model.grad_all(theta)).norm() < 1e-12);
    CHECK(ll_avg == doctest::Approx(model.loglik_all(theta)).epsilon(1e-12));
  }
}

TEST_CASE("subsample allocation is proportional with remainder to the largest chunk") {
  CHECK(allocate_subsample({100, 100, 100}, 30) == std::vector<long>{10, 10, 10});
  const auto mk = allocate_subsample({50, 30, 20}, 10);
  CHECK(mk == std::vector<long>{5, 3, 2});
  const auto odd = allocate_subsample({7, 5, 88}, 5);
  long total = 0;
  for (long v : odd) total += v;
  CHECK(total == 5);
  CHECK(odd[2] >= odd[0]);
}

TEST_CASE("control variate cuts estimator variance by 10x or more") {
  const Vector beta_true = (Vector(4) << -1.0, 0.5, -0.3, 0.8).finished();
  const Matrix table = simulate_logistic_table(10000, beta_true, 77);
  const auto model = LogisticRegressionModel(
      table.rightCols(4), table.col(0));

  // theta_bar at the MLE, theta perturbed at posterior scale
  Vector theta_bar = beta_true;
  for (int it = 0; it < 30; ++it) {
    const Vector step = (-model.hess_all(theta_bar)).ldlt().solve(model.grad_all(theta_bar));
    theta_bar += step;
    if (step.norm() < 1e-12) break;
  }
  Rng rng(9);
  Vector theta = theta_bar;
  for (Index j = 0; j < 4; ++j) theta[j] += 0.02 * rng.normal();

  const auto cache = build_control_variates(model, theta_bar);
  const long m = 100, reps = 200;
  Matrix cv(reps, 4), plain(reps, 4);
  for (long r = 0; r < reps; ++r) {
    const auto plan = draw_plan(10000, m, rng);
    cv.row(r) = estimate_gradient(model, theta, cache, plan).value.transpose();
    Vector p = Vector::Zero(4);
    for (long u : plan.idx) p += model.grad(u, theta);
    plain.row(r) = (10000.0 / m) * p.transpose();
  }
  for (Index j = 0; j < 4; ++j) {
    const double vc = (cv.col(j).array() - cv.col(j).mean()).square().sum() / (reps - 1);
    const double vp = (plain.col(j).array() - plain.col(j).mean()).square().sum() / (reps - 1);
    CHECK(vc * 10.0 < vp);
  }
}

TEST_CASE("plans and estimates are deterministic under a fixed seed") {
  const auto model = small_logistic(30, 2);
  Vector theta_bar = Vector::Zero(3);
  const auto cache = build_control_variates(model, theta_bar);
  Rng r1(44), r2(44);
  const auto p1 = draw_plan(30, 5, r1);
  const auto p2 = draw_plan(30, 5, r2);
  CHECK(p1.idx == p2.idx);
  Vector theta(3);
  theta << 0.2, -0.2, 0.1;
  CHECK((estimate_gradient(model, theta, cache, p1).value -
         estimate_gradient(model, theta, cache, p2).value).norm() == 0.0);
}

TEST_CASE("cache serialization round trip") {
  const auto model = small_logistic(15, 6);
  Vector theta_bar(3);
  theta_bar << 0.4, 0.1, -0.3;
  auto cache = build_control_variates(model, theta_bar);
  cache.fingerprint = 0xfeedbeef;

  const std::string path = "cache_roundtrip.bin";
  save_cache(cache, path);
  const auto back = load_cache(path);
  std::remove(path.c_str());

  CHECK(back.n == cache.n);
  CHECK(back.fingerprint == cache.fingerprint);
  CHECK((back.theta_bar - cache.theta_bar).norm() == 0.0);
  CHECK((back.a_sum - cache.a_sum).norm() == 0.0);
  CHECK((back.b_sum - cache.b_sum).norm() == 0.0);
  CHECK(back.loglik_sum == cache.loglik_sum);
}

TEST_CASE("plan validation") {
  const auto model = small_logistic(6, 1);
  const auto cache = build_control_variates(model, Vector::Zero(3));
  CHECK_THROWS(estimate_gradient(model, Vector::Zero(3), cache, plan_of({7}, 6)));
  Rng rng(1);
  CHECK_THROWS(draw_plan(6, 0, rng));
}
