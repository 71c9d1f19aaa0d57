#include "svdkf/model.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Cholesky>

#include "svdkf/errors.hpp"
#include "svdkf/rng.hpp"

namespace svdkf {

SystemMatrices SystemMatrices::zeros(const ModelDims& dims) {
  SystemMatrices s;
  s.F = MatrixXd::Zero(dims.n, dims.n);
  s.B = MatrixXd::Zero(dims.n, dims.d);
  s.G = MatrixXd::Zero(dims.n, dims.q);
  s.H = MatrixXd::Zero(dims.m, dims.n);
  s.Omega = MatrixXd::Zero(dims.q, dims.q);
  s.R = MatrixXd::Zero(dims.m, dims.m);
  s.Pi0 = MatrixXd::Zero(dims.n, dims.n);
  s.x0 = VectorXd::Zero(dims.n);
  return s;
}

namespace {

void expect_shape(const MatrixXd& M, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (M.rows() != rows || M.cols() != cols) {
    std::ostringstream msg;
    msg << name << " is " << M.rows() << "x" << M.cols() << ", expected " << rows << "x" << cols;
    throw ShapeMismatch(msg.str());
  }
}

}  // namespace

void check_shapes(const ModelDims& dims, const SystemMatrices& s) {
  if (dims.n < 1 || dims.m < 1 || dims.d < 0 || dims.q < 0 || dims.p < 0) {
    throw ShapeMismatch("model dimensions must satisfy n, m >= 1 and d, q, p >= 0");
  }
  expect_shape(s.F, dims.n, dims.n, "F");
  expect_shape(s.B, dims.n, dims.d, "B");
  expect_shape(s.G, dims.n, dims.q, "G");
  expect_shape(s.H, dims.m, dims.n, "H");
  expect_shape(s.Omega, dims.q, dims.q, "Omega");
  expect_shape(s.R, dims.m, dims.m, "R");
  expect_shape(s.Pi0, dims.n, dims.n, "Pi0");
  if (s.x0.size() != dims.n) throw ShapeMismatch("x0 has the wrong length");
}

ModelInstance evaluate(const ParametrizedModel& model, const VectorXd& theta) {
  if (theta.size() != model.dims.p) {
    throw ShapeMismatch("theta length " + std::to_string(theta.size()) + " differs from p = " +
                        std::to_string(model.dims.p));
  }
  ModelInstance inst;
  inst.dims = model.dims;
  inst.theta = theta;
  inst.value = model.matrices(theta);
  check_shapes(model.dims, inst.value);

  if (model.partials) {
    inst.partials = model.partials(theta);
    if (inst.partials.size() != static_cast<std::size_t>(model.dims.p)) {
      throw ShapeMismatch("partials generator must return one entry per parameter");
    }
    for (const auto& d : inst.partials) check_shapes(model.dims, d);
  } else {
    inst.partials.assign(model.dims.p, SystemMatrices::zeros(model.dims));
  }

  const MatrixXd& R = inst.value.R;
  if ((R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, R.cwiseAbs().maxCoeff())) {
    throw NotPD("R is not symmetric");
  }
  Eigen::LLT<MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) throw NotPD("R is not positive definite");

  inst.factors = model.factors;
  return inst;
}

namespace {

CovarianceFactors computed_factors(const MatrixXd& C, const std::vector<MatrixXd>& dC,
                                   bool with_derivatives, const SvdOptions& opts) {
  CovarianceFactors out;
  const auto p = dC.size();
  const Eigen::Index n = C.rows();
  bool constant = true;
  for (const auto& d : dC) constant = constant && d.isZero(0.0);

  if (!with_derivatives || constant || n == 0) {
    out.value = sym_spectral_factors(C);
    out.dQ.assign(p, MatrixXd::Zero(n, n));
    out.dD_sqrt.assign(p, VectorXd::Zero(n));
    return out;
  }

  // A symmetric PSD matrix is its own SVD: singular values are the
  // eigenvalues and V holds the eigenvectors.
  const MultiDiffSvdResult r = differentiated_svd(C, std::span<const MatrixXd>(dC), opts);
  out.value.Q = r.V;
  out.value.D_sqrt = r.S.cwiseSqrt();
  for (std::size_t i = 0; i < p; ++i) {
    out.dQ.push_back(r.V_prime[i]);
    out.dD_sqrt.push_back(r.S_prime[i].cwiseQuotient(2.0 * out.value.D_sqrt));
  }
  return out;
}

CovarianceFactors supplied_or_computed(const FactorGenerator& gen, const VectorXd& theta,
                                       const MatrixXd& C, const std::vector<MatrixXd>& dC,
                                       bool with_derivatives, const SvdOptions& opts,
                                       const char* name) {
  if (!gen) return computed_factors(C, dC, with_derivatives, opts);
  CovarianceFactors f = gen(theta);
  const Eigen::Index n = C.rows();
  if (f.value.Q.rows() != n || f.value.Q.cols() != n || f.value.D_sqrt.size() != n ||
      f.dQ.size() != dC.size() || f.dD_sqrt.size() != dC.size()) {
    throw ShapeMismatch(std::string("analytic factors for ") + name + " have the wrong shape");
  }
  if ((f.value.D_sqrt.array() < 0.0).any()) {
    throw NotPSD(std::string("analytic factors for ") + name + " have a negative D^{1/2} entry");
  }
  return f;
}

std::vector<MatrixXd> collect(const std::vector<SystemMatrices>& partials,
                              MatrixXd SystemMatrices::*member) {
  std::vector<MatrixXd> out;
  out.reserve(partials.size());
  for (const auto& d : partials) out.push_back(d.*member);
  return out;
}

}  // namespace

InitialFactors init_factors(const ModelInstance& instance, const FactorSupply& supply,
                            bool with_derivatives, const SvdOptions& opts) {
  const auto& v = instance.value;
  const auto& th = instance.theta;
  InitialFactors out;
  out.omega = supplied_or_computed(supply.omega, th, v.Omega,
                                   collect(instance.partials, &SystemMatrices::Omega),
                                   with_derivatives, opts, "Omega");
  out.r = supplied_or_computed(supply.r, th, v.R, collect(instance.partials, &SystemMatrices::R),
                               with_derivatives, opts, "R");
  out.pi0 = supplied_or_computed(supply.pi0, th, v.Pi0,
                                 collect(instance.partials, &SystemMatrices::Pi0),
                                 with_derivatives, opts, "Pi0");
  return out;
}

namespace {

MatrixXd spectral_sqrt(const MatrixXd& C) {
  if (C.rows() == 0) return C;
  const SvdFactors f = sym_spectral_factors(C);
  return f.Q * f.D_sqrt.asDiagonal();
}

VectorXd draw(NormalSampler& rng, Eigen::Index n) {
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng();
  return v;
}

}  // namespace

Trajectory simulate(const ModelInstance& instance, int steps, std::uint64_t seed,
                    const std::vector<VectorXd>& controls) {
  if (steps < 1) throw ShapeMismatch("simulate: steps must be >= 1");
  const auto& s = instance.value;
  const auto& dims = instance.dims;
  if (!controls.empty()) {
    if (controls.size() != static_cast<std::size_t>(steps)) {
      throw ShapeMismatch("simulate: need one control per step");
    }
    for (const auto& u : controls) {
      if (u.size() != dims.d) throw ShapeMismatch("simulate: control has the wrong length");
    }
  }

  const MatrixXd Lpi = spectral_sqrt(s.Pi0);
  const MatrixXd Lw = spectral_sqrt(s.Omega);
  const MatrixXd Lv = spectral_sqrt(s.R);

  NormalSampler rng(seed);
  Trajectory t;
  t.seed = seed;
  t.u = controls;
  t.x.reserve(steps + 1);
  t.z.reserve(steps);
  t.x.push_back(s.x0 + Lpi * draw(rng, dims.n));
  for (int k = 1; k <= steps; ++k) {
    VectorXd x = s.F * t.x.back();
    if (!controls.empty()) x += s.B * controls[k - 1];
    if (dims.q > 0) x += s.G * (Lw * draw(rng, dims.q));
    t.z.push_back(s.H * x + Lv * draw(rng, dims.m));
    t.x.push_back(std::move(x));
  }
  return t;
}

ParametrizedModel satellite_model(double delta, double q1) {
  if (!(delta > 0.0)) throw ConfigError("satellite_model: delta must be positive");
  ParametrizedModel model;
  model.dims = {4, 2, 0, 4, 1};
  const ModelDims dims = model.dims;

  SystemMatrices base = SystemMatrices::zeros(dims);
  base.F << 1, 1, 0.5, 0.5,  //
      0, 1, 1, 1,            //
      0, 0, 1, 0,            //
      0, 0, 0, 0.606;
  base.G = MatrixXd::Identity(4, 4);
  base.Omega(3, 3) = q1;
  base.H << 1, 1, 1, 1,  //
      1, 1, 1, 1 + delta;

  model.matrices = [base, delta](const VectorXd& theta) {
    SystemMatrices s = base;
    const double t = theta(0);
    s.R = MatrixXd::Identity(2, 2) * (t * t * delta * delta);
    s.Pi0 = MatrixXd::Identity(4, 4) * (t * t);
    return s;
  };
  model.partials = [dims, delta](const VectorXd& theta) {
    SystemMatrices d = SystemMatrices::zeros(dims);
    const double t = theta(0);
    d.R = MatrixXd::Identity(2, 2) * (2.0 * t * delta * delta);
    d.Pi0 = MatrixXd::Identity(4, 4) * (2.0 * t);
    return std::vector<SystemMatrices>{d};
  };

  // Both theta-dependent covariances are multiples of I, whose eigenvalues
  // repeat; their factors have to be supplied in closed form.
  auto scaled_identity = [](Eigen::Index n, double scale) -> FactorGenerator {
    return [n, scale](const VectorXd& theta) {
      const double t = theta(0);
      const double sign = t < 0.0 ? -1.0 : 1.0;
      CovarianceFactors f;
      f.value.Q = MatrixXd::Identity(n, n);
      f.value.D_sqrt = VectorXd::Constant(n, std::abs(t) * scale);
      f.dQ = {MatrixXd::Zero(n, n)};
      f.dD_sqrt = {VectorXd::Constant(n, sign * scale)};
      return f;
    };
  };
  model.factors.r = scaled_identity(2, delta);
  model.factors.pi0 = scaled_identity(4, 1.0);
  model.factors.omega = [q1](const VectorXd&) {
    CovarianceFactors f;
    f.value.Q = MatrixXd::Identity(4, 4);
    f.value.D_sqrt = VectorXd::Zero(4);
    f.value.D_sqrt(3) = std::sqrt(q1);
    f.dQ = {MatrixXd::Zero(4, 4)};
    f.dD_sqrt = {VectorXd::Zero(4)};
    return f;
  };
  return model;
}

std::vector<SystemMatrices> fd_matrix_oracle(const ParametrizedModel& model,
                                             const VectorXd& theta, double h) {
  std::vector<SystemMatrices> out;
  for (int i = 0; i < model.dims.p; ++i) {
    const double step = h > 0.0 ? h : 1e-6 * (1.0 + std::abs(theta(i)));
    VectorXd tp = theta, tm = theta;
    tp(i) += step;
    tm(i) -= step;
    const SystemMatrices a = model.matrices(tp);
    const SystemMatrices b = model.matrices(tm);
    const double inv = 1.0 / (2.0 * step);
    SystemMatrices d;
    d.F = (a.F - b.F) * inv;
    d.B = (a.B - b.B) * inv;
    d.G = (a.G - b.G) * inv;
    d.H = (a.H - b.H) * inv;
    d.Omega = (a.Omega - b.Omega) * inv;
    d.R = (a.R - b.R) * inv;
    d.Pi0 = (a.Pi0 - b.Pi0) * inv;
    d.x0 = (a.x0 - b.x0) * inv;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace svdkf
