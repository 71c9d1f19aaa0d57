#include <doctest.h>

#include <cmath>

#include "svdkf/bench.hpp"
#include "svdkf/errors.hpp"
#include "svdkf/svd_diff.hpp"
#include "test_support.hpp"

using namespace svdkf;
using svdkf::testing::max_abs;
using svdkf::testing::Rand;

namespace {

// Smooth 5x2 family A(t) = A0 + t A1 + t^2 A2 with its exact derivative.
struct Family {
  MatrixXd A0, A1, A2;
  MatrixXd at(double t) const { return A0 + t * A1 + t * t * A2; }
  MatrixXd d(double t) const { return A1 + 2.0 * t * A2; }
};

Family random_family(Rand& rng, Eigen::Index rows, Eigen::Index cols) {
  return {rng.matrix(rows, cols), rng.matrix(rows, cols), rng.matrix(rows, cols, 0.5)};
}

double min_relative_gap(const VectorXd& S) {
  double g = 1.0;
  for (Eigen::Index i = 1; i < S.size(); ++i) g = std::min(g, (S(i - 1) - S(i)) / S(0));
  return g;
}

MatrixXd gram_prime(const MatrixXd& A, const MatrixXd& Ap) {
  return Ap.transpose() * A + A.transpose() * Ap;
}

}  // namespace

TEST_CASE("example 1 matches the published walk-through") {
  const MatrixXd A = bench::example1_pre_array(0.5);
  const MatrixXd Ap = bench::example1_pre_array_derivative(0.5);
  const DiffSvdResult r = differentiated_svd(A, Ap);

  CHECK(std::abs(r.S(0) - 1.7061) <= 5e-4);
  CHECK(std::abs(r.S(1) - 0.8185) <= 5e-4);
  CHECK(std::abs(r.S_prime(0) - 2.2959) <= 5e-4);
  CHECK(std::abs(r.S_prime(1) - 0.5691) <= 5e-4);

  const MatrixXd Vp_abs = (MatrixXd(2, 2) << 0.0677, 0.8321, 0.8321, 0.0677).finished();
  CHECK(max_abs(r.V_prime.cwiseAbs() - Vp_abs) <= 5e-4);

  const SvdTriple f = svd_factorize(A);
  const MatrixXd M = f.W.leftCols(2).transpose() * Ap * f.V;
  const TriangularSplit parts = split_triangular(M);
  CHECK(std::abs(std::abs(M(0, 1)) - 1.6522) <= 5e-4);
  CHECK(std::abs(std::abs(M(1, 0)) - 1.1584) <= 5e-4);
  const MatrixXd L2 = solve_lbar2(parts.Lbar, parts.Ubar, f.S);
  CHECK(std::abs(std::abs(L2(1, 0)) - 0.8348) <= 5e-4);
}

TEST_CASE("solve_lbar2 on the printed intermediates") {
  MatrixXd Lbar = MatrixXd::Zero(2, 2), Ubar = MatrixXd::Zero(2, 2);
  Lbar(1, 0) = 1.1584;
  Ubar(0, 1) = -1.6522;
  const VectorXd S = (VectorXd(2) << 1.7061, 0.8185).finished();
  const MatrixXd L2 = solve_lbar2(Lbar, Ubar, S);
  // (u_12 s_1 + l_21 s_2) / (s_2^2 - s_1^2)
  const double expect = (-1.6522 * 1.7061 + 1.1584 * 0.8185) / (0.8185 * 0.8185 - 1.7061 * 1.7061);
  CHECK(L2(1, 0) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(std::abs(L2(1, 0) - 0.8348) <= 5e-4);
  CHECK(L2(0, 1) == 0.0);

  CHECK(max_abs(solve_lbar2(MatrixXd::Zero(3, 3), MatrixXd::Zero(3, 3), VectorXd::Ones(3) * 2)) ==
        0.0);
}

TEST_CASE("solve_lbar2 residual identity for s = 3") {
  Rand rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const MatrixXd R = rng.matrix(3, 3);
    const MatrixXd Lbar = R.triangularView<Eigen::StrictlyLower>();
    const MatrixXd Ubar = R.triangularView<Eigen::StrictlyUpper>();
    const VectorXd S = (VectorXd(3) << 3, 2, 1).finished();
    const MatrixXd L2 = solve_lbar2(Lbar, Ubar, S);
    const MatrixXd Lambda = L2.transpose() - L2;
    // Off-diagonal part of M = Upsilon S - S Lambda with Upsilon skew; the
    // unknown Upsilon is recovered from the lower triangle and the upper
    // triangle must then be consistent.
    MatrixXd Ups = MatrixXd::Zero(3, 3);
    for (int i = 1; i < 3; ++i)
      for (int j = 0; j < i; ++j) {
        Ups(i, j) = (Lbar(i, j) + S(i) * Lambda(i, j)) / S(j);
        Ups(j, i) = -Ups(i, j);
      }
    const MatrixXd Recon = Ups * S.asDiagonal() - S.asDiagonal() * Lambda;
    MatrixXd off = Lbar + Ubar;
    CHECK(max_abs(Recon - off) <= 1e-12);
  }
}

TEST_CASE("trivial derivative cases") {
  Rand rng(3);
  const MatrixXd A = rng.matrix(5, 3);
  const DiffSvdResult z = differentiated_svd(A, MatrixXd::Zero(5, 3));
  CHECK(max_abs(z.S_prime) == 0.0);
  CHECK(max_abs(z.V_prime) == 0.0);

  // sigma(t) = sqrt(1 + t) for A(t) = [sqrt(t); 1].
  MatrixXd a(2, 1), ap(2, 1);
  a << 1.0, 1.0;
  ap << 0.5, 0.0;
  const DiffSvdResult s = differentiated_svd(a, ap);
  CHECK(s.S_prime(0) == doctest::Approx(1.0 / (2.0 * std::sqrt(2.0))).epsilon(1e-14));
  CHECK(s.V_prime(0, 0) == 0.0);

  const auto fam = [](double t) { return (MatrixXd(2, 1) << std::sqrt(t), 1.0).finished(); };
  const FdSvdDerivative fd = fd_svd_oracle(fam, 1.0, 1e-6);
  CHECK(std::abs(fd.S_prime(0) - 1.0 / (2.0 * std::sqrt(2.0))) <= 1e-8);

  const FdSvdDerivative c = fd_svd_oracle([&](double) { return A; }, 0.3, 1e-6);
  CHECK(max_abs(c.S_prime) == 0.0);
  CHECK(max_abs(c.V_prime) == 0.0);
}

TEST_CASE("example 1 agrees with finite differences") {
  const FdSvdDerivative fd = fd_svd_oracle(bench::example1_pre_array, 0.5, 1e-6);
  const DiffSvdResult r =
      differentiated_svd(bench::example1_pre_array(0.5), bench::example1_pre_array_derivative(0.5));
  CHECK(max_abs(fd.S_prime - r.S_prime) <= 1e-5);
  CHECK(max_abs(fd.V_prime - r.V_prime) <= 1e-5);
}

TEST_CASE("degenerate singular values") {
  MatrixXd A = MatrixXd::Zero(4, 2);
  A.topRows(2).setIdentity();
  A *= 3.0;

  SUBCASE("derivative that keeps the pair together is accepted") {
    const DiffSvdResult r = differentiated_svd(A, 0.5 * A);
    CHECK(max_abs(r.S_prime - VectorXd::Constant(2, 1.5)) <= 1e-14);
    CHECK(max_abs(r.V_prime) == 0.0);
  }
  SUBCASE("derivative that splits the pair is rejected") {
    MatrixXd Ap = MatrixXd::Zero(4, 2);
    Ap(0, 1) = 1.0;
    Ap(1, 0) = 1.0;
    CHECK_THROWS_AS(differentiated_svd(A, Ap), DegenerateSingularValues);
  }
}

TEST_CASE("factorization errors") {
  CHECK_THROWS_AS(svd_factorize(MatrixXd::Zero(3, 2)), RankDeficient);
  MatrixXd colinear(3, 2);
  colinear << 1, 2, 2, 4, 3, 6;
  CHECK_THROWS_AS(svd_factorize(colinear), RankDeficient);
  CHECK_THROWS_AS(svd_factorize(MatrixXd::Ones(1, 2)), ShapeMismatch);
  CHECK_THROWS_AS(differentiated_svd(MatrixXd::Identity(3, 2), MatrixXd::Zero(2, 2)),
                  ShapeMismatch);
}

TEST_CASE("sym_spectral_factors examples") {
  const SvdFactors id = sym_spectral_factors(MatrixXd::Identity(4, 4));
  CHECK(max_abs(id.D_sqrt - VectorXd::Ones(4)) <= 1e-14);
  CHECK(max_abs(id.covariance() - MatrixXd::Identity(4, 4)) <= 1e-14);

  const SvdFactors dg = sym_spectral_factors((VectorXd(2) << 4.0, 1.0).finished().asDiagonal());
  CHECK(max_abs(dg.eigenvalues() - (VectorXd(2) << 4.0, 1.0).finished()) <= 1e-14);
  CHECK(max_abs(dg.Q - MatrixXd::Identity(2, 2)) <= 1e-14);

  MatrixXd P(2, 2);
  P << 2, 1, 1, 2;
  const SvdFactors f = sym_spectral_factors(P);
  CHECK(max_abs(f.eigenvalues() - (VectorXd(2) << 3.0, 1.0).finished()) <= 1e-14);
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(std::abs(f.Q(0, 0)) - r) <= 1e-14);
  CHECK(std::abs(f.Q(0, 0) - f.Q(1, 0)) <= 1e-14);
  CHECK(std::abs(f.Q(0, 1) + f.Q(1, 1)) <= 1e-14);

  MatrixXd ns(2, 2);
  ns << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(sym_spectral_factors(ns), NotSymmetric);
  CHECK_THROWS_AS(sym_spectral_factors((VectorXd(2) << 1.0, -1.0).finished().asDiagonal()),
                  NotPSD);
  const SvdFactors clamp =
      sym_spectral_factors((VectorXd(2) << 1.0, -1e-14).finished().asDiagonal());
  CHECK(clamp.D_sqrt(1) == 0.0);
}

TEST_CASE("property: factorization invariants over random pre-arrays") {
  Rand rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int s = rng.integer(1, 5);
    const int k = rng.integer(0, 4);
    const MatrixXd A = rng.matrix(k + s, s, rng.uniform(0.1, 10.0));
    const SvdTriple f = svd_factorize(A);
    MatrixXd Sigma = MatrixXd::Zero(k + s, s);
    Sigma.topRows(s) = f.S.asDiagonal();
    CHECK(max_abs(A - f.W * Sigma * f.V.transpose()) <= 1e-10 * (1.0 + max_abs(A)));
    CHECK(max_abs(f.W.transpose() * f.W - MatrixXd::Identity(k + s, k + s)) <= 1e-12);
    CHECK(max_abs(f.V.transpose() * f.V - MatrixXd::Identity(s, s)) <= 1e-12);
    for (int i = 1; i < s; ++i) CHECK(f.S(i) <= f.S(i - 1));
    for (int j = 0; j < s; ++j) {
      Eigen::Index piv;
      f.V.col(j).cwiseAbs().maxCoeff(&piv);
      CHECK(f.V(piv, j) > 0.0);
    }
  }
}

TEST_CASE("property: skew symmetry, Gram consistency and FD agreement") {
  Rand rng(77);
  int checked = 0;
  for (int trial = 0; checked < 100 && trial < 1000; ++trial) {
    const int s = rng.integer(2, 4);
    const int k = rng.integer(1, 3);
    const Family fam = random_family(rng, k + s, s);
    const double t = rng.uniform(-0.5, 0.5);
    const MatrixXd A = fam.at(t);
    const MatrixXd Ap = fam.d(t);
    const SvdTriple f = svd_factorize(A);
    if (min_relative_gap(f.S) < 0.05 || f.S(s - 1) < 0.05 * f.S(0)) continue;
    ++checked;

    const DiffSvdResult r = differentiated_svd(A, Ap);
    const MatrixXd VtVp = r.V.transpose() * r.V_prime;
    CHECK(max_abs(VtVp + VtVp.transpose()) <= 1e-10);

    const MatrixXd lhs = gram_prime(A, Ap);
    CHECK(max_abs(lhs - bench::gram_derivative(r)) <= 1e-9 * (1.0 + max_abs(lhs)));

    const double h = 1e-6;
    const FdSvdDerivative fd = fd_svd_oracle([&](double u) { return fam.at(u); }, t, h);
    const double tol = std::max(1e-5, 1e3 * h * h);
    CHECK(max_abs(fd.S_prime - r.S_prime) <= tol);
    CHECK(max_abs(fd.V_prime - r.V_prime) <= tol);
  }
  CHECK(checked == 100);
}

TEST_CASE("multi-direction overload matches single calls") {
  Rand rng(5);
  const MatrixXd A = rng.matrix(6, 3);
  std::vector<MatrixXd> dirs = {rng.matrix(6, 3), rng.matrix(6, 3)};
  const MultiDiffSvdResult m = differentiated_svd(A, dirs);
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const DiffSvdResult one = differentiated_svd(A, dirs[i]);
    CHECK(max_abs(one.S_prime - m.S_prime[i]) == 0.0);
    CHECK(max_abs(one.V_prime - m.V_prime[i]) == 0.0);
  }
}
