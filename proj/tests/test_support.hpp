#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "svdkf/estimation.hpp"
#include "svdkf/filters.hpp"
#include "svdkf/model.hpp"

namespace svdkf::testing {

class Rand {
 public:
  explicit Rand(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = -1.0, double hi = 1.0) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  MatrixXd matrix(Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    MatrixXd A(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) A(i, j) = scale * uniform();
    return A;
  }
  VectorXd vector(Eigen::Index n, double lo = -1.0, double hi = 1.0) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform(lo, hi);
    return v;
  }
  // Symmetric positive definite with eigenvalues in [lo, hi].
  MatrixXd spd(Eigen::Index n, double lo, double hi) {
    Eigen::HouseholderQR<MatrixXd> qr(matrix(n, n));
    const MatrixXd Q = qr.householderQ();
    return Q * vector(n, lo, hi).asDiagonal() * Q.transpose();
  }

 private:
  std::mt19937_64 engine_;
};

inline double max_abs(const MatrixXd& A) { return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff(); }

// Polynomial model
//   F = F0 + sum t_i F_i           H = H0 + sum t_i H_i         B = B0 + sum t_i B_i
//   C = C0 + sum t_i^2 C_i  for C in {Omega, R, Pi0}          x0 = sum t_i a_i
// with C0 positive definite and C_i positive semidefinite, so every covariance
// stays positive definite for any theta. Partials are written out by hand.
struct RandomModel {
  ParametrizedModel model;
  VectorXd theta;  // a sensible evaluation point
};

inline RandomModel random_model(std::uint64_t seed, int n, int m, int p, int d = 1) {
  Rand rng(seed);
  struct Coeffs {
    MatrixXd F0, H0, B0, W0, R0, P0;
    std::vector<MatrixXd> F, H, B, W, R, P;
    std::vector<VectorXd> a;
  };
  auto c = std::make_shared<Coeffs>();
  MatrixXd F0 = rng.matrix(n, n);
  const double rho = Eigen::EigenSolver<MatrixXd>(F0).eigenvalues().cwiseAbs().maxCoeff();
  c->F0 = F0 * (rng.uniform(0.5, 0.95) / std::max(rho, 1e-3));
  c->H0 = rng.matrix(m, n);
  c->B0 = rng.matrix(n, d);
  c->W0 = rng.spd(n, 0.05, 0.5);
  c->R0 = rng.spd(m, 0.2, 1.0);
  c->P0 = rng.spd(n, 0.5, 2.0);
  for (int i = 0; i < p; ++i) {
    c->F.push_back(rng.matrix(n, n, 0.1));
    c->H.push_back(rng.matrix(m, n, 0.3));
    c->B.push_back(rng.matrix(n, d, 0.3));
    const MatrixXd w = rng.matrix(n, n, 0.3), r = rng.matrix(m, m, 0.4), q = rng.matrix(n, n, 0.4);
    c->W.push_back(w * w.transpose());
    c->R.push_back(r * r.transpose());
    c->P.push_back(q * q.transpose());
    c->a.push_back(rng.vector(n, -0.5, 0.5));
  }

  RandomModel out;
  out.model.dims = ModelDims{n, m, d, n, p};
  const ModelDims dims = out.model.dims;
  out.model.matrices = [c, dims](const VectorXd& t) {
    SystemMatrices s = SystemMatrices::zeros(dims);
    s.F = c->F0;
    s.H = c->H0;
    s.B = c->B0;
    s.G = MatrixXd::Identity(dims.n, dims.n);
    s.Omega = c->W0;
    s.R = c->R0;
    s.Pi0 = c->P0;
    for (int i = 0; i < dims.p; ++i) {
      s.F += t(i) * c->F[i];
      s.H += t(i) * c->H[i];
      s.B += t(i) * c->B[i];
      s.Omega += t(i) * t(i) * c->W[i];
      s.R += t(i) * t(i) * c->R[i];
      s.Pi0 += t(i) * t(i) * c->P[i];
      s.x0 += t(i) * c->a[i];
    }
    return s;
  };
  out.model.partials = [c, dims](const VectorXd& t) {
    std::vector<SystemMatrices> ds;
    for (int i = 0; i < dims.p; ++i) {
      SystemMatrices d = SystemMatrices::zeros(dims);
      d.F = c->F[i];
      d.H = c->H[i];
      d.B = c->B[i];
      d.Omega = 2.0 * t(i) * c->W[i];
      d.R = 2.0 * t(i) * c->R[i];
      d.Pi0 = 2.0 * t(i) * c->P[i];
      d.x0 = c->a[i];
      ds.push_back(std::move(d));
    }
    return ds;
  };
  out.theta = rng.vector(p, 0.5, 1.5);
  return out;
}

inline std::vector<VectorXd> random_controls(std::uint64_t seed, int steps, int d) {
  Rand rng(seed);
  std::vector<VectorXd> u;
  for (int k = 0; k < steps; ++k) u.push_back(rng.vector(d));
  return u;
}

// Central differences of an arbitrary scalar function of theta.
inline VectorXd central_gradient(const std::function<double(const VectorXd&)>& f,
                                 const VectorXd& theta, double h) {
  VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    VectorXd tp = theta, tm = theta;
    tp(i) += h;
    tm(i) -= h;
    g(i) = (f(tp) - f(tm)) / (2.0 * h);
  }
  return g;
}

// Negative log-likelihood straight from the textbook recursion, with explicit
// inverses and determinants. Independent of both library engines.
inline double reference_nll(const ModelInstance& inst, const Trajectory& data) {
  const auto& s = inst.value;
  VectorXd x = s.x0;
  MatrixXd P = s.Pi0;
  const int m = inst.dims.m;
  double total = 0.5 * data.steps() * m * std::log(2.0 * 3.14159265358979323846);
  for (int k = 1; k <= data.steps(); ++k) {
    const VectorXd e = data.z[k - 1] - s.H * x;
    const MatrixXd Re = s.R + s.H * P * s.H.transpose();
    const MatrixXd Ri = Re.inverse();
    total += 0.5 * (std::log(Re.determinant()) + e.dot(Ri * e));
    const MatrixXd K = P * s.H.transpose() * Ri;
    x = x + K * e;
    P = (MatrixXd::Identity(inst.dims.n, inst.dims.n) - K * s.H) * P;
    x = s.F * x;
    if (k < static_cast<int>(data.u.size())) x += s.B * data.u[k];
    P = s.F * P * s.F.transpose() + s.G * s.Omega * s.G.transpose();
  }
  return total;
}

}  // namespace svdkf::testing
