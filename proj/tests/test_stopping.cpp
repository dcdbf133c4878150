#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "oracles.hpp"
#include "prutf/path.hpp"
#include "prutf/rng.hpp"
#include "prutf/stopping.hpp"

using namespace prutf;

namespace {

// independent partial-sum evaluation of the excursion series (plain loop, long
// horizon, no midpoint tricks)
double series_reference(double x, double s2, int terms) {
  double s = 0.0;
  for (int i = 1; i <= terms; ++i)
    s += (i % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * i * i * x * x / s2);
  return 2.0 * s;
}

}  // namespace

TEST_CASE("excursion probability limits and the Kolmogorov point", "[stopping]") {
  CHECK(excursion_prob(50.0, 1.0) == 0.0);
  // x -> 0+: alternating series sums to 1/2, doubled
  CHECK(excursion_prob(1e-6, 1.0) == Catch::Approx(1.0).margin(1e-5));
  // classical Brownian-bridge critical value at alpha = 0.05
  CHECK(excursion_prob(1.3581, 1.0) == Catch::Approx(0.05).margin(2e-4));
  // agreement with the plain partial-sum reference where it converges
  for (double x : {0.4, 0.8, 1.2, 2.0}) {
    CHECK(excursion_prob(x, 1.0) == Catch::Approx(series_reference(x, 1.0, 4000)).margin(1e-12));
    CHECK(excursion_prob(x, 2.7) == Catch::Approx(series_reference(x, 2.7, 4000)).margin(1e-12));
  }
  // strictly decreasing in x
  double prev = 2.0;
  for (double x = 0.35; x < 3.0; x += 0.05) {
    const double p = excursion_prob(x, 1.0);
    REQUIRE(p < prev);
    prev = p;
  }
}

TEST_CASE("threshold solves the series equation and scales as sqrt(S2)", "[stopping]") {
  const double xa = threshold_x_alpha(0.05, 1.0);
  CHECK(xa == Catch::Approx(1.3581).margin(1e-3));
  // round trip to the significance level
  CHECK(excursion_prob(xa, 1.0) == Catch::Approx(0.05).margin(1e-8));
  for (double alpha : {0.01, 0.10, 0.37}) {
    for (double s2 : {0.5, 1.0, 4.0}) {
      const double x = threshold_x_alpha(alpha, s2);
      CHECK(excursion_prob(x, s2) == Catch::Approx(alpha).margin(1e-8));
    }
  }
  // monotone in alpha
  CHECK(threshold_x_alpha(0.01, 1.0) > threshold_x_alpha(0.10, 1.0));
  // sqrt-scale equivariance in the variance parameter
  for (double c : {0.25, 2.0, 9.0})
    CHECK(threshold_x_alpha(0.05, c) ==
          Catch::Approx(std::sqrt(c) * threshold_x_alpha(0.05, 1.0)).margin(1e-8));
  CHECK_THROWS_AS(threshold_x_alpha(1.5, 1.0), InvalidInput);
}

TEST_CASE("normal quantile hits the quartile and is antisymmetric", "[stopping]") {
  CHECK(normal_quantile(0.75) == Catch::Approx(0.674489750196082).margin(1e-8));
  CHECK(normal_quantile(0.5) == Catch::Approx(0.0).margin(1e-15));
  for (double p : {0.01, 0.2, 0.6, 0.95, 0.999})
    CHECK(normal_quantile(p) == Catch::Approx(-normal_quantile(1.0 - p)).margin(1e-10));
  CHECK_THROWS_AS(normal_quantile(0.0), InvalidInput);
}

TEST_CASE("MAD estimate: consistency, scale equivariance, degenerate input", "[stopping]") {
  CounterRng rng(101);
  const std::size_t n = 10000;
  const double sigma = 1.7;
  std::vector<double> y(n);
  for (auto& v : y) v = sigma * rng.next_gaussian();
  const double est = estimate_sigma_mad(y, 0);
  CHECK(est == Catch::Approx(sigma).epsilon(0.05));

  std::vector<double> y2(y);
  for (auto& v : y2) v *= 2.0;
  CHECK(estimate_sigma_mad(y2, 0) == Catch::Approx(2.0 * est).margin(1e-12));

  // r=1 normalization sqrt(6): second differences of N(0,1) have sd sqrt(6)
  std::vector<double> z(n);
  for (auto& v : z) v = rng.next_gaussian();
  CHECK(estimate_sigma_mad(z, 1) == Catch::Approx(1.0).epsilon(0.05));

  const std::vector<double> flat(32, 5.0);
  CHECK_THROWS_AS(estimate_sigma_mad(flat, 0), DegenerateScale);
}

TEST_CASE("r=0 stopping threshold reduces to sigma x_alpha sqrt(k)", "[stopping]") {
  const double sigma = 1.3;
  const std::size_t k = 200;
  const double s2 = 0.83;
  const double thr = stop_threshold(sigma, 0.05, s2, k, 0);
  CHECK(thr == Catch::Approx(sigma * threshold_x_alpha(0.05, s2) * std::sqrt(double(k)))
                   .margin(1e-10));
}

TEST_CASE("stopping decision on clean and exhausted states", "[stopping]") {
  // noiseless two-jump signal: after both joins the interior stochastic term is ~0
  std::vector<double> y(40, 0.0);
  for (std::size_t i = 13; i < 40; ++i) y[i] += 2.0;
  for (std::size_t i = 27; i < 40; ++i) y[i] -= 2.0;
  DifferenceOperator D(40, 0);
  PathEngine eng(y, D);
  StoppingConfig cfg;
  cfg.per_block = false;
  CHECK_FALSE(should_stop_process(eng.interior_stochastic(), eng.gram(), 0, 1.0, cfg));
  REQUIRE(eng.advance());
  REQUIRE(eng.advance());
  CHECK(should_stop_process(eng.interior_stochastic(), eng.gram(), 0, 1.0, cfg));

  // k <= r leaves nothing to test
  DifferenceOperator D2(6, 2);
  std::vector<double> y2{0, 1, 0, 1, 0, 1};
  PathEngine eng2(y2, D2);
  eng2.run_to_end();
  if (eng2.gram().interior_count() <= 2)
    CHECK(should_stop_process(eng2.interior_stochastic(), eng2.gram(), 2, 1.0, cfg));
}

TEST_CASE("false positive rate of the rule on pure noise is near alpha", "[stopping]") {
  // smoke-scale version of the acceptance criterion (N=300 here)
  const std::size_t n = 400;
  StoppingConfig cfg;
  cfg.per_block = false;
  DifferenceOperator D(n, 0);
  int fired = 0;
  const int N = 300;
  CounterRng seeds(2024);
  for (int k = 0; k < N; ++k) {
    std::vector<double> y(n);
    CounterRng rng(seeds.next_u64());
    for (auto& v : y) v = rng.next_gaussian();
    PathEngine eng(y, D);
    if (!should_stop_process(eng.interior_stochastic(), eng.gram(), 0, 1.0, cfg)) ++fired;
  }
  const double rate = double(fired) / N;
  CHECK(rate > 0.01);
  CHECK(rate < 0.11);
}

TEST_CASE("bridge endpoint behavior at the true change points (r=0 closed form)",
          "[stopping]") {
  // With A at the true change points and noiseless input, the dual within a block is
  // the pure drift line joining lambda*s_j to lambda*s_{j+1}; one lattice step inside
  // the block it equals lambda*(s_j*L + s_{j+1})/(L+1).
  std::vector<double> y(24, 0.0);
  for (std::size_t i = 8; i < 24; ++i) y[i] += 1.0;
  for (std::size_t i = 16; i < 24; ++i) y[i] -= 1.0;
  DifferenceOperator D(24, 0);
  PathEngine eng(y, D);
  REQUIRE(eng.advance());
  REQUIRE(eng.advance());
  const double lam = eng.lambda();
  const auto u = eng.dual_at(lam);
  // block between dual coords 8 and 16 (1-based): interior 9..15, L = 7
  const double L = 7.0;
  const double s_left = 1.0, s_right = -1.0;
  CHECK(u[8] == Catch::Approx(lam * (s_left * L + s_right) / (L + 1.0)).margin(1e-9));
  CHECK(u[14] == Catch::Approx(lam * (s_left + s_right * L) / (L + 1.0)).margin(1e-9));
}

TEST_CASE("empirical covariance of the interior process matches sigma^2 (D-A D-A^T)^{-1}",
          "[stopping]") {
  // smoke-scale version of the acceptance law check
  const std::size_t n = 24;
  const int r = 1;
  DifferenceOperator D(n, r);
  AugmentedBoundary A(D.rows(), r);
  A.add(7, 1);
  A.add(14, -1);
  auto factor = std::make_shared<BandCholesky>(r, D.rows());
  BlockedGram G(D, A, factor);
  const auto interior = A.interior();

  const auto Dd = oracle::dense_diff(n, r);
  const auto Dm = oracle::take_rows(Dd, interior);
  const auto Gd = oracle::matmul(Dm, oracle::transpose(Dm));
  // dense inverse by solving against unit vectors
  const std::size_t k = interior.size();
  oracle::Matrix Ginv = oracle::zeros(k, k);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> e(k, 0.0);
    e[j] = 1.0;
    const auto col = oracle::lu_solve(Gd, e);
    for (std::size_t i = 0; i < k; ++i) Ginv[i][j] = col[i];
  }

  const double sigma = 0.8;
  const int N = 4000;
  oracle::Matrix acc = oracle::zeros(k, k);
  CounterRng rng(77);
  std::vector<double> eps(n);
  for (int rep = 0; rep < N; ++rep) {
    for (auto& v : eps) v = sigma * rng.next_gaussian();
    const auto u = weighted_apply(D, G, eps);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j <= i; ++j) acc[i][j] += u[interior[i]] * u[interior[j]];
  }
  int bad = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double emp = acc[i][j] / N;
      const double truth = sigma * sigma * Ginv[i][j];
      const double se = std::sqrt((sigma * sigma * Ginv[i][i] * sigma * sigma * Ginv[j][j] +
                                   truth * truth) /
                                  N);
      if (std::abs(emp - truth) > 6.0 * se) ++bad;
    }
  CHECK(bad == 0);
}
