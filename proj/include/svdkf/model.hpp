#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "svdkf/svd_diff.hpp"

namespace svdkf {

// x_k = F x_{k-1} + B u_{k-1} + G w_{k-1},  w ~ N(0, Omega)
// z_k = H x_k + v_k,                        v ~ N(0, R)
// x_0 ~ N(x0, Pi0)
struct ModelDims {
  int n = 0;  // state
  int m = 0;  // measurement
  int d = 0;  // control
  int q = 0;  // process noise
  int p = 0;  // parameters
};

struct SystemMatrices {
  MatrixXd F, B, G, H, Omega, R, Pi0;
  VectorXd x0;

  // Same shapes, all entries zero.
  static SystemMatrices zeros(const ModelDims& dims);
};

// Factors {Q, D^{1/2}} of one covariance plus their partials in each theta_i.
struct CovarianceFactors {
  SvdFactors value;
  std::vector<MatrixXd> dQ;
  std::vector<VectorXd> dD_sqrt;
};

using FactorGenerator = std::function<CovarianceFactors(const VectorXd& theta)>;

// Analytic factor generators. An empty generator means the factors and their
// derivatives are computed from the covariance matrix and its partials.
struct FactorSupply {
  FactorGenerator omega;
  FactorGenerator r;
  FactorGenerator pi0;
};

struct ParametrizedModel {
  ModelDims dims;
  std::function<SystemMatrices(const VectorXd& theta)> matrices;
  // One SystemMatrices of partial derivatives per parameter.
  std::function<std::vector<SystemMatrices>(const VectorXd& theta)> partials;
  FactorSupply factors;
};

// A model evaluated at a fixed theta.
struct ModelInstance {
  ModelDims dims;
  VectorXd theta;
  SystemMatrices value;
  std::vector<SystemMatrices> partials;
  FactorSupply factors;
};

struct InitialFactors {
  CovarianceFactors omega;
  CovarianceFactors r;
  CovarianceFactors pi0;
};

struct Trajectory {
  std::vector<VectorXd> x;  // x_0 .. x_N
  std::vector<VectorXd> z;  // z_1 .. z_N, stored at index k-1
  std::vector<VectorXd> u;  // u_0 .. u_{N-1}; empty means zero control
  std::uint64_t seed = 0;

  [[nodiscard]] int steps() const { return static_cast<int>(z.size()); }
};

void check_shapes(const ModelDims& dims, const SystemMatrices& s);

ModelInstance evaluate(const ParametrizedModel& model, const VectorXd& theta);

// Computed path derivatives go through differentiated_svd with the covariance
// as its own pre-array, so a theta-dependent covariance must have distinct,
// nonzero eigenvalues. A theta-independent covariance gets zero derivatives.
InitialFactors init_factors(const ModelInstance& instance, const FactorSupply& supply,
                            bool with_derivatives = true, const SvdOptions& opts = {});

// Gaussian draws use spectral square roots, so rank-deficient Omega and Pi0 are
// fine. Deterministic for a fixed seed.
Trajectory simulate(const ModelInstance& instance, int steps, std::uint64_t seed,
                    const std::vector<VectorXd>& controls = {});

// In-track satellite motion with ill-conditioning parameter delta; the single
// parameter theta scales both R = theta^2 delta^2 I and Pi0 = theta^2 I.
ParametrizedModel satellite_model(double delta, double q1 = 0.63e-2);

// Central differences of every system matrix. h <= 0 picks 1e-6 * (1 + |theta_i|).
std::vector<SystemMatrices> fd_matrix_oracle(const ParametrizedModel& model,
                                             const VectorXd& theta, double h = 0.0);

}  // namespace svdkf
