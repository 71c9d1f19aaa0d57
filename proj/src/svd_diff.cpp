#include "svdkf/svd_diff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "svdkf/errors.hpp"

namespace svdkf {

MatrixXd SvdFactors::covariance() const {
  return Q * D_sqrt.array().square().matrix().asDiagonal() * Q.transpose();
}

void apply_sign_convention(MatrixXd& V, MatrixXd* W) {
  for (Eigen::Index j = 0; j < V.cols(); ++j) {
    Eigen::Index pivot = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < V.rows(); ++i) {
      const double a = std::abs(V(i, j));
      if (a > best) {
        best = a;
        pivot = i;
      }
    }
    if (V(pivot, j) < 0.0) {
      V.col(j) *= -1.0;
      if (W != nullptr) W->col(j) *= -1.0;
    }
  }
}

SvdTriple svd_factorize(const MatrixXd& A, const SvdOptions& opts) {
  const Eigen::Index s = A.cols();
  if (s == 0 || A.rows() < s) {
    std::ostringstream msg;
    msg << "svd_factorize: pre-array must be (k+s) x s with s >= 1, got " << A.rows() << "x"
        << A.cols();
    throw ShapeMismatch(msg.str());
  }
  if (!A.allFinite()) throw NonFiniteState("svd_factorize: pre-array has non-finite entries");

  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  SvdTriple out{svd.matrixU(), svd.singularValues(), svd.matrixV()};

  // JacobiSVD already sorts descending; the explicit pass keeps the contract
  // independent of the backend.
  for (Eigen::Index i = 1; i < s; ++i) {
    for (Eigen::Index j = i; j > 0 && out.S(j) > out.S(j - 1); --j) {
      std::swap(out.S(j), out.S(j - 1));
      out.V.col(j).swap(out.V.col(j - 1));
      out.W.col(j).swap(out.W.col(j - 1));
    }
  }
  apply_sign_convention(out.V, &out.W);

  const double smax = out.S(0);
  const double smin = out.S(s - 1);
  if (!(smax > 0.0) || !(smin > opts.rank_tol * smax)) {
    std::ostringstream msg;
    msg << "svd_factorize: pre-array is rank deficient (sigma_min=" << smin
        << ", sigma_max=" << smax << ")";
    throw RankDeficient(msg.str());
  }
  return out;
}

TriangularSplit split_triangular(const MatrixXd& M) {
  if (M.rows() != M.cols()) throw ShapeMismatch("split_triangular: matrix must be square");
  TriangularSplit out;
  out.Lbar = M.triangularView<Eigen::StrictlyLower>();
  out.Ubar = M.triangularView<Eigen::StrictlyUpper>();
  out.D = M.diagonal();
  return out;
}

MatrixXd solve_lbar2(const MatrixXd& Lbar, const MatrixXd& Ubar, const VectorXd& S,
                     const SvdOptions& opts, double m_scale) {
  const Eigen::Index s = S.size();
  if (Lbar.rows() != s || Lbar.cols() != s || Ubar.rows() != s || Ubar.cols() != s) {
    throw ShapeMismatch("solve_lbar2: Lbar, Ubar and S dimensions disagree");
  }
  if (m_scale <= 0.0 && s > 1) {
    m_scale = std::max(Lbar.cwiseAbs().maxCoeff(), Ubar.cwiseAbs().maxCoeff());
  }
  MatrixXd L2 = MatrixXd::Zero(s, s);
  for (Eigen::Index i = 1; i < s; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      const double si = S(i), sj = S(j);
      const double gap = si * si - sj * sj;
      const double num = Ubar(j, i) * sj + Lbar(i, j) * si;
      if (std::abs(gap) > opts.degeneracy_tol * std::max(si * si, sj * sj)) {
        L2(i, j) = num / gap;
      } else if (std::abs(num) > opts.degeneracy_tol * std::max(si, sj) * m_scale) {
        std::ostringstream msg;
        msg << "singular values " << j << " and " << i << " coincide (" << sj << ", " << si
            << ") and the derivative separates them";
        throw DegenerateSingularValues(msg.str());
      }
    }
  }
  return L2;
}

namespace {

MatrixXd skew_from_lbar2(const MatrixXd& L2) { return L2.transpose() - L2; }

}  // namespace

MultiDiffSvdResult differentiated_svd(const MatrixXd& A, std::span<const MatrixXd> A_primes,
                                      const SvdOptions& opts) {
  const SvdTriple f = svd_factorize(A, opts);
  const Eigen::Index s = A.cols();

  MultiDiffSvdResult out;
  out.S = f.S;
  out.V = f.V;
  out.S_prime.reserve(A_primes.size());
  out.V_prime.reserve(A_primes.size());

  const auto W_s = f.W.leftCols(s);
  for (const MatrixXd& Ap : A_primes) {
    if (Ap.rows() != A.rows() || Ap.cols() != A.cols()) {
      throw ShapeMismatch("differentiated_svd: pre-array derivative shape differs from pre-array");
    }
    const MatrixXd M = W_s.transpose() * Ap * f.V;
    const TriangularSplit parts = split_triangular(M);
    const MatrixXd L2 = solve_lbar2(parts.Lbar, parts.Ubar, f.S, opts, M.cwiseAbs().maxCoeff());
    out.S_prime.push_back(parts.D);
    out.V_prime.push_back(f.V * skew_from_lbar2(L2));
  }
  return out;
}

DiffSvdResult differentiated_svd(const MatrixXd& A, const MatrixXd& A_prime,
                                 const SvdOptions& opts) {
  MultiDiffSvdResult r = differentiated_svd(A, std::span<const MatrixXd>(&A_prime, 1), opts);
  return {std::move(r.S), std::move(r.V), std::move(r.S_prime[0]), std::move(r.V_prime[0])};
}

SvdFactors sym_spectral_factors(const MatrixXd& P, double sym_tol, double psd_tol) {
  if (P.rows() != P.cols()) throw ShapeMismatch("sym_spectral_factors: matrix must be square");
  if (!P.allFinite()) throw NonFiniteState("sym_spectral_factors: non-finite entries");
  const Eigen::Index n = P.rows();
  if (n == 0) return {MatrixXd(0, 0), VectorXd(0)};

  const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) {
    throw NotSymmetric("sym_spectral_factors: matrix is not symmetric");
  }

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (P + P.transpose()));
  if (eig.info() != Eigen::Success) throw Error("sym_spectral_factors: eigensolver failed");

  // Ascending from Eigen; reverse to descending.
  const VectorXd lam = eig.eigenvalues().reverse();
  MatrixXd Q = eig.eigenvectors().rowwise().reverse();
  if (lam(n - 1) < -psd_tol * scale) {
    std::ostringstream msg;
    msg << "sym_spectral_factors: matrix has negative eigenvalue " << lam(n - 1);
    throw NotPSD(msg.str());
  }
  apply_sign_convention(Q);
  return {std::move(Q), lam.cwiseMax(0.0).cwiseSqrt()};
}

FdSvdDerivative fd_svd_oracle(const std::function<MatrixXd(double)>& A_of_theta, double theta,
                              double h, const SvdOptions& opts) {
  if (h <= 0.0) h = 1e-6 * (1.0 + std::abs(theta));
  const SvdTriple mid = svd_factorize(A_of_theta(theta), opts);
  SvdTriple plus = svd_factorize(A_of_theta(theta + h), opts);
  SvdTriple minus = svd_factorize(A_of_theta(theta - h), opts);
  for (SvdTriple* t : {&plus, &minus}) {
    for (Eigen::Index j = 0; j < mid.V.cols(); ++j) {
      if (t->V.col(j).dot(mid.V.col(j)) < 0.0) t->V.col(j) *= -1.0;
    }
  }
  return {(plus.S - minus.S) / (2.0 * h), (plus.V - minus.V) / (2.0 * h)};
}

}  // namespace svdkf
