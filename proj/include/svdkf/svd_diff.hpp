#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace svdkf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SvdOptions {
  // Smallest singular value must exceed rank_tol * sigma_max.
  double rank_tol = 1e-12;
  // A pair is degenerate when
  //   |sigma_i^2 - sigma_j^2| <= degeneracy_tol * max(sigma_i^2, sigma_j^2).
  // A degenerate pair is only accepted when the derivative keeps it degenerate,
  // i.e. |ubar_ji sigma_j + lbar_ij sigma_i| <= degeneracy_tol * sigma_i * max|M|;
  // the rotation inside the pair is then taken as zero.
  double degeneracy_tol = 1e-9;
};

// A = W * [diag(S); 0] * V^T with S descending and the V column signs fixed so
// that the largest-magnitude entry of every column of V is positive.
struct SvdTriple {
  MatrixXd W;  // (k+s) x (k+s)
  VectorXd S;  // s
  MatrixXd V;  // s x s
};

struct DiffSvdResult {
  VectorXd S;
  MatrixXd V;
  VectorXd S_prime;
  MatrixXd V_prime;
};

// One factorization, several parameter directions.
struct MultiDiffSvdResult {
  VectorXd S;
  MatrixXd V;
  std::vector<VectorXd> S_prime;
  std::vector<MatrixXd> V_prime;
};

// M = Lbar + diag(D) + Ubar.
struct TriangularSplit {
  MatrixXd Lbar;
  VectorXd D;
  MatrixXd Ubar;
};

// Covariance P = Q * diag(D_sqrt)^2 * Q^T.
struct SvdFactors {
  MatrixXd Q;
  VectorXd D_sqrt;

  [[nodiscard]] MatrixXd covariance() const;
  [[nodiscard]] VectorXd eigenvalues() const { return D_sqrt.array().square(); }
};

// Flips columns of V (and the matching columns of W, when given) so that the
// largest-magnitude entry of each V column is positive. Ties go to the first.
void apply_sign_convention(MatrixXd& V, MatrixXd* W = nullptr);

SvdTriple svd_factorize(const MatrixXd& A, const SvdOptions& opts = {});

DiffSvdResult differentiated_svd(const MatrixXd& A, const MatrixXd& A_prime,
                                 const SvdOptions& opts = {});

// Shares the factorization of A across all derivative directions in A_primes.
MultiDiffSvdResult differentiated_svd(const MatrixXd& A,
                                      std::span<const MatrixXd> A_primes,
                                      const SvdOptions& opts = {});

TriangularSplit split_triangular(const MatrixXd& M);

// Strictly lower triangular Lbar2 such that Lambda = Lbar2^T - Lbar2 is the
// skew-symmetric generator of V' = V * Lambda. m_scale is max|M| for the
// degeneracy test; 0 uses the largest off-diagonal entry.
MatrixXd solve_lbar2(const MatrixXd& Lbar, const MatrixXd& Ubar, const VectorXd& S,
                     const SvdOptions& opts = {}, double m_scale = 0.0);

// Eigen-decomposition of a symmetric PSD matrix, eigenvalues descending,
// round-off negatives clamped to zero.
SvdFactors sym_spectral_factors(const MatrixXd& P, double sym_tol = 1e-10,
                                double psd_tol = 1e-10);

struct FdSvdDerivative {
  VectorXd S_prime;
  MatrixXd V_prime;
};

// Central-difference derivative of S and V along A(theta). V(theta +- h) is
// column-sign aligned to V(theta) before differencing. h <= 0 selects the
// default 1e-6 * (1 + |theta|).
FdSvdDerivative fd_svd_oracle(const std::function<MatrixXd(double)>& A_of_theta,
                              double theta, double h = 0.0,
                              const SvdOptions& opts = {});

}  // namespace svdkf
