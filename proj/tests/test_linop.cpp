#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "oracles.hpp"
#include "prutf/linop.hpp"
#include "prutf/rng.hpp"

using namespace prutf;

namespace {

std::shared_ptr<const BandCholesky> factor_for(const DifferenceOperator& D) {
  return std::make_shared<BandCholesky>(D.order(), D.rows());
}

// random non-overlapping boundary set for fuzzing
AugmentedBoundary random_boundary(CounterRng& rng, std::size_t m, int r, std::size_t max_runs) {
  AugmentedBoundary A(m, r);
  for (std::size_t k = 0; k < max_runs; ++k) {
    const std::size_t tau = rng.next_u64() % m;
    if (A.run_fits(tau) && !A.run_overlaps(tau)) A.add(tau, rng.next_u64() % 2 ? 1 : -1);
  }
  return A;
}

oracle::Matrix dense_minus_A(const oracle::Matrix& D, const AugmentedBoundary& A) {
  return oracle::take_rows(D, A.interior());
}

}  // namespace

TEST_CASE("stencils are signed binomial coefficients and compose first differences",
          "[linop]") {
  CHECK(DifferenceOperator(6, 0).stencil() == std::vector<double>{-1.0, 1.0});
  CHECK(DifferenceOperator(6, 0).rows() == 5);
  CHECK(DifferenceOperator(6, 1).stencil() == std::vector<double>{1.0, -2.0, 1.0});
  CHECK(DifferenceOperator(6, 1).rows() == 4);
  CHECK_THROWS_AS(DifferenceOperator(3, 2), InvalidInput);

  // applying D^(r+1) equals differencing r+1 times
  CounterRng rng(42);
  for (int r = 0; r <= 4; ++r) {
    const std::size_t n = 17;
    std::vector<double> y(n);
    for (auto& v : y) v = rng.next_gaussian();
    DifferenceOperator D(n, r);
    std::vector<double> ref(y);
    for (int k = 0; k <= r; ++k) {
      std::vector<double> next(ref.size() - 1);
      for (std::size_t i = 0; i + 1 < ref.size(); ++i) next[i] = ref[i + 1] - ref[i];
      ref = std::move(next);
    }
    const auto got = D.apply(y);
    REQUIRE(got.size() == ref.size());
    CHECK(oracle::max_abs_diff(got, ref) < 1e-12);
  }
}

TEST_CASE("apply annihilates polynomials and differences cubes to a constant", "[linop]") {
  DifferenceOperator D0(4, 0);
  CHECK(D0.apply(std::vector<double>{0, 0, 1, 1}) == std::vector<double>{0, 1, 0});

  DifferenceOperator D1(4, 1);
  CHECK(oracle::max_abs_diff(D1.apply(std::vector<double>{1, 2, 3, 4}),
                             std::vector<double>{0, 0}) == 0.0);

  DifferenceOperator D2(6, 2);
  std::vector<double> cubes(6);
  for (std::size_t i = 0; i < 6; ++i) cubes[i] = std::pow(double(i + 1), 3);
  CHECK(oracle::max_abs_diff(D2.apply(cubes), std::vector<double>{6, 6, 6}) < 1e-12);

  CHECK_THROWS_AS(D2.apply(std::vector<double>{1, 2, 3}), InvalidInput);
}

TEST_CASE("gram entries match the signed central binomial pattern", "[linop]") {
  // r=1 row pattern (1, -4, 6, -4, 1)
  CHECK(gram_entry(1, 5, 3) == 1.0);
  CHECK(gram_entry(1, 5, 4) == -4.0);
  CHECK(gram_entry(1, 5, 5) == 6.0);
  CHECK(gram_entry(1, 5, 6) == -4.0);
  CHECK(gram_entry(1, 5, 7) == 1.0);
  // r=0: diagonal 2, off-diagonal -1
  CHECK(gram_entry(0, 3, 3) == 2.0);
  CHECK(gram_entry(0, 3, 4) == -1.0);
  // outside the band
  CHECK(gram_entry(2, 0, 4) == 0.0);
}

TEST_CASE("dense D D^T equals the gram formula exactly for r <= 4, n <= 60", "[linop]") {
  for (int r = 0; r <= 4; ++r) {
    for (std::size_t n : {std::size_t(r) + 3, std::size_t(20), std::size_t(60)}) {
      const auto D = oracle::dense_diff(n, r);
      const auto G = oracle::matmul(D, oracle::transpose(D));
      for (std::size_t i = 0; i < G.size(); ++i)
        for (std::size_t j = 0; j < G.size(); ++j)
          REQUIRE(G[i][j] == gram_entry(r, static_cast<std::int64_t>(i),
                                        static_cast<std::int64_t>(j)));
    }
  }
}

TEST_CASE("blocked gram matches dense construction on random boundary sets", "[linop]") {
  CounterRng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int r = static_cast<int>(rng.next_u64() % 3);
    const std::size_t n = 12 + rng.next_u64() % 40;
    DifferenceOperator D(n, r);
    const auto A = random_boundary(rng, D.rows(), r, 3);
    BlockedGram G(D, A, factor_for(D));

    const auto Dd = oracle::dense_diff(n, r);
    const auto Dm = dense_minus_A(Dd, A);
    if (Dm.empty()) continue;
    const auto Gd = oracle::matmul(Dm, oracle::transpose(Dm));

    // solve against dense LU on a random rhs
    std::vector<double> v(Dm.size());
    for (auto& x : v) x = rng.next_gaussian();
    const auto expect = oracle::lu_solve(Gd, v);
    std::vector<double> rhs(D.rows(), 0.0);
    const auto interior = A.interior();
    for (std::size_t k = 0; k < interior.size(); ++k) rhs[interior[k]] = v[k];
    G.solve_inplace(rhs);
    std::vector<double> got(interior.size());
    for (std::size_t k = 0; k < interior.size(); ++k) got[k] = rhs[interior[k]];
    double scale = 0.0;
    for (double x : expect) scale = std::max(scale, std::abs(x));
    REQUIRE(oracle::max_abs_diff(got, expect) <= 1e-8 * std::max(1.0, scale));
  }
}

TEST_CASE("blocked gram block sizes follow the boundary runs", "[linop]") {
  // one change at dual coordinate 4 (1-based) in a 9-coordinate dual for r=1
  // splits D_{-A} D_{-A}^T into leading blocks of sizes 3 and 4
  DifferenceOperator D(11, 1);
  REQUIRE(D.rows() == 9);
  AugmentedBoundary A(9, 1);
  A.add(3, 1);  // 0-based tau
  BlockedGram G(D, A, factor_for(D));
  REQUIRE(G.blocks().size() == 2);
  CHECK(G.blocks()[0].size == 3);
  CHECK(G.blocks()[1].size == 4);

  // empty boundary: one full block
  AugmentedBoundary empty(9, 1);
  BlockedGram G0(D, empty, factor_for(D));
  REQUIRE(G0.blocks().size() == 1);
  CHECK(G0.blocks()[0].size == 9);

  // adjacent runs leave a zero-size gap which is skipped, not recorded
  AugmentedBoundary adj(9, 1);
  adj.add(2, 1);
  adj.add(4, -1);  // runs {2,3} and {4,5} touch
  BlockedGram G2(D, adj, factor_for(D));
  for (const auto& b : G2.blocks()) CHECK(b.size > 0);
}

TEST_CASE("solve_gram closed form for the r=0 tridiagonal and zero rhs", "[linop]") {
  DifferenceOperator D(6, 0);
  AugmentedBoundary A(5, 0);
  BlockedGram G(D, A, factor_for(D));
  std::vector<double> v{0, 0, 1, 0, 0};
  G.solve_inplace(v);
  // x_i = min(i,j) (m+1-max(i,j)) / (m+1) with j = 3 (1-based), m = 5
  const std::vector<double> expect{0.5, 1.0, 1.5, 1.0, 0.5};
  CHECK(oracle::max_abs_diff(v, expect) < 1e-12);

  std::vector<double> z(5, 0.0);
  G.solve_inplace(z);
  CHECK(oracle::max_abs_diff(z, std::vector<double>(5, 0.0)) == 0.0);
}

TEST_CASE("weighted rows are contrasts and reproduce the tridiagonal closed form",
          "[linop]") {
  DifferenceOperator D(6, 0);
  AugmentedBoundary A(5, 0);
  BlockedGram G(D, A, factor_for(D));

  const std::vector<double> constant(6, 3.25);
  CHECK(oracle::max_abs_diff(weighted_apply(D, G, constant), std::vector<double>(5, 0.0)) <
        1e-12);

  const std::vector<double> step{0, 0, 0, 1, 1, 1};
  CHECK(oracle::max_abs_diff(weighted_apply(D, G, step),
                             std::vector<double>{0.5, 1.0, 1.5, 1.0, 0.5}) < 1e-12);
}

TEST_CASE("every row of (D-A D-A^T)^{-1} D-A sums to zero", "[linop]") {
  CounterRng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int r = static_cast<int>(rng.next_u64() % 4);
    const std::size_t n = 10 + rng.next_u64() % 30;
    DifferenceOperator D(n, r);
    const auto A = random_boundary(rng, D.rows(), r, 2);
    if (A.interior_count() == 0) continue;

    const auto Dd = oracle::dense_diff(n, r);
    const auto Dm = dense_minus_A(Dd, A);
    const auto Gd = oracle::matmul(Dm, oracle::transpose(Dm));
    // dense M = G^{-1} Dm, row sums via solving against Dm * 1
    std::vector<double> ones(n, 1.0);
    const auto rsum = oracle::lu_solve(Gd, oracle::matvec(Dm, ones));
    for (double s : rsum) REQUIRE(std::abs(s) <= 1e-10);
  }
}

TEST_CASE("boundary load matches the displayed binomial run pattern for r=3", "[linop]") {
  // two change points with signs (-1, +1); around the +1 change the vector reads
  // (..., 1, -3, 3, -1, -1, 3, -3, 1, ...)
  const std::size_t n = 26;
  DifferenceOperator D(n, 3);
  const std::size_t m = D.rows();
  AugmentedBoundary A(m, 3);
  const std::size_t tau1 = 7, tau2 = 15;  // 0-based run ends
  A.add(tau1, -1);
  A.add(tau2, +1);
  const auto load = boundary_load(D, A);

  // verify against the dense construction
  const auto Dd = oracle::dense_diff(n, 3);
  std::vector<double> dense(n, 0.0);
  for (const auto& [coord, sign] : A.augmented())
    for (std::size_t j = 0; j < n; ++j) dense[j] += sign * Dd[coord][j];
  REQUIRE(oracle::max_abs_diff(load, dense) == 0.0);

  // the pattern around the +1 change point: leading binomials of (x-1)^3 then the
  // negated reversal; r_b = 1 so the run starts at tau2 - 1
  const std::size_t start = tau2 - 1;
  const std::vector<double> expect{1, -3, 3, -1, -1, 3, -3, 1};
  for (std::size_t k = 0; k < expect.size(); ++k) CHECK(load[start + k] == expect[k]);
  // and the mirrored (negated) pattern around the -1 change point
  for (std::size_t k = 0; k < expect.size(); ++k) CHECK(load[tau1 - 1 + k] == -expect[k]);

  // all signs zeroed -> zero load
  A.set_sign(tau1, 0);
  A.set_sign(tau2, 0);
  CHECK(oracle::max_abs_diff(boundary_load(D, A), std::vector<double>(n, 0.0)) == 0.0);
}

TEST_CASE("staircase pair drift identity: M (load_j + load_j1) = -s on the gap",
          "[linop]") {
  CounterRng rng(5);
  for (int r = 0; r <= 3; ++r) {
    const std::size_t n = 30;
    DifferenceOperator D(n, r);
    const std::size_t m = D.rows();
    AugmentedBoundary A(m, r);
    const int rb = A.rb();
    const std::size_t tau1 = static_cast<std::size_t>(rb) + 4;
    const std::size_t tau2 = tau1 + 10;
    const int s = (r % 2 == 0) ? 1 : -1;
    A.add(tau1, s);
    A.add(tau2, s);
    BlockedGram G(D, A, factor_for(D));
    const auto drift = weighted_apply(D, G, boundary_load(D, A));
    // interior coordinates strictly between the two runs
    for (std::size_t t = tau1 + static_cast<std::size_t>(A.ra()) + 1;
         t + static_cast<std::size_t>(rb) < tau2; ++t) {
      REQUIRE(std::abs(drift[t] - (-s)) < 1e-9);
    }
  }
}

TEST_CASE("projection complement equals per-segment polynomial fit", "[linop]") {
  CounterRng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const int r = static_cast<int>(rng.next_u64() % 4);
    const std::size_t n = 14 + rng.next_u64() % 26;
    DifferenceOperator D(n, r);
    const auto A = random_boundary(rng, D.rows(), r, 2);
    if (A.interior_count() == 0) continue;
    BlockedGram G(D, A, factor_for(D));

    std::vector<double> y(n);
    for (auto& v : y) v = rng.next_gaussian();

    // (I - P_D) y via the production solver
    const auto My = weighted_apply(D, G, y);
    const auto proj = residual_from_interior(D, G, y, My);

    // oracle: degree-r fit per segment, segments split at tau + r_a (1-based primal)
    std::vector<std::size_t> cps;
    for (const auto& run : A.runs()) cps.push_back(run.tau + 1 + static_cast<std::size_t>(A.ra()));
    const auto fit = oracle::polyfit(y, cps, r);
    REQUIRE(oracle::max_abs_diff(proj, fit) <= 1e-8);
  }
}

TEST_CASE("corner inverse matches dense inversion", "[linop]") {
  CounterRng rng(31);
  for (int r = 0; r <= 3; ++r) {
    const std::size_t n = 20;
    DifferenceOperator D(n, r);
    BandCholesky F(r, D.rows());
    for (std::size_t s : {std::size_t(1), std::size_t(4), D.rows()}) {
      const auto Dd = oracle::dense_diff(n, r);
      oracle::Matrix G = oracle::zeros(s, s);
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j)
          G[i][j] = gram_entry(r, static_cast<std::int64_t>(i), static_cast<std::int64_t>(j));
      std::vector<double> e(s, 0.0);
      e[s - 1] = 1.0;
      const auto col = oracle::lu_solve(G, e);
      CHECK(std::abs(F.corner_inverse(s) - col[s - 1]) <= 1e-9 * std::abs(col[s - 1]));
    }
  }
}

TEST_CASE("boundary bookkeeping enforces run structure", "[linop]") {
  AugmentedBoundary A(20, 2);  // ra = 1, rb = 1
  CHECK(A.ra() == 1);
  CHECK(A.rb() == 1);
  A.add(5, 1);
  CHECK(A.run_overlaps(6));   // {5,6,7} intersects {4,5,6}
  CHECK(A.run_overlaps(7));
  CHECK_FALSE(A.run_overlaps(9));
  CHECK_FALSE(A.run_fits(0));   // run would start at -1
  CHECK_FALSE(A.run_fits(19));  // run would end at 20
  CHECK_THROWS_AS(A.add(6, 1), InternalError);
  const auto B = A.boundary();
  REQUIRE(B.size() == 2);
  CHECK(B[0].first == 4);
  CHECK(B[1].first == 5);
  const auto aug = A.augmented();
  REQUIRE(aug.size() == 3);
  CHECK(aug[2].first == 6);
}
