#include "svdkf/filters.hpp"

#include <cmath>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Cholesky>

#include "svdkf/errors.hpp"

namespace svdkf {

namespace {

const VectorXd* control_at(const Trajectory& data, int k) {
  if (k < static_cast<int>(data.u.size())) return &data.u[k];
  return nullptr;
}

void check_data(const ModelInstance& inst, const Trajectory& data) {
  if (data.z.empty()) throw ShapeMismatch("filter: no measurements");
  for (const auto& z : data.z) {
    if (z.size() != inst.dims.m) throw ShapeMismatch("filter: measurement has the wrong length");
  }
  for (const auto& u : data.u) {
    if (u.size() != inst.dims.d) throw ShapeMismatch("filter: control has the wrong length");
  }
}

[[noreturn]] void non_finite(const char* engine, int k) {
  std::ostringstream msg;
  msg << engine << ": non-finite value at step " << k;
  throw NonFiniteState(msg.str());
}

// Re-throws a library error with the step and pre-array name prepended,
// keeping its dynamic type.
template <typename Fn>
auto with_context(int k, const char* where, Fn&& fn) -> decltype(fn()) {
  const auto prefix = [&] {
    return "step " + std::to_string(k) + ", " + where + ": ";
  };
  try {
    return fn();
  } catch (const DegenerateSingularValues& e) {
    throw DegenerateSingularValues(prefix() + e.what());
  } catch (const RankDeficient& e) {
    throw RankDeficient(prefix() + e.what());
  } catch (const ZeroSingularValue& e) {
    throw ZeroSingularValue(prefix() + e.what());
  } catch (const NonFiniteState& e) {
    throw NonFiniteState(prefix() + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conventional

namespace {

struct InnovationSolve {
  Eigen::LLT<MatrixXd> llt;
  MatrixXd inv;
};

InnovationSolve factor_innovation(const MatrixXd& Re, int k) {
  InnovationSolve s{Eigen::LLT<MatrixXd>(Re), {}};
  if (!Re.allFinite()) non_finite("kf", k);
  if (s.llt.info() != Eigen::Success) {
    throw SingularInnovationCovariance("kf: innovation covariance is not positive definite at step " +
                                       std::to_string(k));
  }
  s.inv = s.llt.solve(MatrixXd::Identity(Re.rows(), Re.cols()));
  return s;
}

}  // namespace

KfTrace kf_run(const ModelInstance& instance, const Trajectory& data) {
  check_data(instance, data);
  const auto& s = instance.value;
  const int N = data.steps();

  KfTrace trace;
  trace.steps.reserve(N);
  VectorXd x = s.x0;
  MatrixXd P = s.Pi0;
  const MatrixXd GQG = s.G * s.Omega * s.G.transpose();

  for (int k = 1; k <= N; ++k) {
    KfStep st;
    st.x_pred = x;
    st.P_pred = P;
    st.e = data.z[k - 1] - s.H * x;
    const MatrixXd PHt = P * s.H.transpose();
    st.Re = s.R + s.H * PHt;
    const InnovationSolve inv = factor_innovation(st.Re, k);
    const MatrixXd gain = PHt * inv.inv;
    st.Kp = s.F * gain;
    st.x_filt = x + gain * st.e;
    st.x_next = s.F * x + st.Kp * st.e;
    if (const VectorXd* u = control_at(data, k)) st.x_next += s.B * *u;

    P = s.F * P * s.F.transpose() + GQG - st.Kp * st.Re * st.Kp.transpose();
    x = st.x_next;
    if (!x.allFinite() || !P.allFinite() || !st.x_filt.allFinite()) non_finite("kf", k);
    trace.steps.push_back(std::move(st));
  }
  return trace;
}

DiffKfTrace diff_kf_run(const ModelInstance& instance, const Trajectory& data) {
  check_data(instance, data);
  const auto& s = instance.value;
  const int N = data.steps();
  const int p = instance.dims.p;

  DiffKfTrace out;
  out.base.steps.reserve(N);
  out.sens.reserve(N);

  VectorXd x = s.x0;
  MatrixXd P = s.Pi0;
  std::vector<VectorXd> dx(p);
  std::vector<MatrixXd> dP(p);
  for (int i = 0; i < p; ++i) {
    dx[i] = instance.partials[i].x0;
    dP[i] = instance.partials[i].Pi0;
  }
  const MatrixXd GQG = s.G * s.Omega * s.G.transpose();

  for (int k = 1; k <= N; ++k) {
    const VectorXd* u = control_at(data, k);
    KfStep st;
    st.x_pred = x;
    st.P_pred = P;
    st.e = data.z[k - 1] - s.H * x;
    const MatrixXd PHt = P * s.H.transpose();
    st.Re = s.R + s.H * PHt;
    const InnovationSolve inv = factor_innovation(st.Re, k);
    const MatrixXd& Rinv = inv.inv;
    const MatrixXd gain = PHt * Rinv;
    st.Kp = s.F * gain;
    st.x_filt = x + gain * st.e;
    st.x_next = s.F * x + st.Kp * st.e;
    if (u != nullptr) st.x_next += s.B * *u;

    std::vector<KfSensitivity> sens(p);
    for (int i = 0; i < p; ++i) {
      const SystemMatrices& d = instance.partials[i];
      KfSensitivity& ds = sens[i];
      ds.dx_pred = dx[i];
      ds.dP_pred = dP[i];
      ds.de = -(d.H * x + s.H * dx[i]);
      ds.dRe = d.R + d.H * PHt + s.H * dP[i] * s.H.transpose() + PHt.transpose() * d.H.transpose();
      ds.dKp = d.F * PHt * Rinv + s.F * dP[i] * s.H.transpose() * Rinv +
               s.F * P * d.H.transpose() * Rinv - st.Kp * ds.dRe * Rinv;
      ds.dx_next = d.F * x + s.F * dx[i] + ds.dKp * st.e + st.Kp * ds.de;
      if (u != nullptr) ds.dx_next += d.B * *u;

      const MatrixXd dFPFt = d.F * P * s.F.transpose();
      const MatrixXd dGQGt = d.G * s.Omega * s.G.transpose();
      const MatrixXd dKRKt = ds.dKp * st.Re * st.Kp.transpose();
      dP[i] = dFPFt + s.F * dP[i] * s.F.transpose() + dFPFt.transpose() + dGQGt +
              s.G * d.Omega * s.G.transpose() + dGQGt.transpose() - dKRKt -
              st.Kp * ds.dRe * st.Kp.transpose() - dKRKt.transpose();
      dx[i] = ds.dx_next;
      if (!dx[i].allFinite() || !dP[i].allFinite()) non_finite("diff_kf", k);
    }

    P = s.F * P * s.F.transpose() + GQG - st.Kp * st.Re * st.Kp.transpose();
    x = st.x_next;
    if (!x.allFinite() || !P.allFinite() || !st.x_filt.allFinite()) non_finite("diff_kf", k);
    out.base.steps.push_back(std::move(st));
    out.sens.push_back(std::move(sens));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVD-factored

namespace {

// [D_R^{1/2} Q_R^T ; D_P^{1/2} Q_P^T H^T]
MatrixXd mu1_pre_array(const SvdFactors& R, const SvdFactors& P, const MatrixXd& H) {
  const Eigen::Index m = H.rows(), n = H.cols();
  MatrixXd A(m + n, m);
  A.topRows(m) = R.D_sqrt.asDiagonal() * R.Q.transpose();
  A.bottomRows(n) = P.D_sqrt.asDiagonal() * (H * P.Q).transpose();
  return A;
}

// [D_P^{1/2} Q_P^T (I - K H)^T ; D_R^{1/2} Q_R^T K^T]
MatrixXd mu2_pre_array(const SvdFactors& P, const SvdFactors& R, const MatrixXd& J,
                       const MatrixXd& K) {
  const Eigen::Index n = J.rows(), m = K.cols();
  MatrixXd A(n + m, n);
  A.topRows(n) = P.D_sqrt.asDiagonal() * (J * P.Q).transpose();
  A.bottomRows(m) = R.D_sqrt.asDiagonal() * (K * R.Q).transpose();
  return A;
}

// [D_P^{1/2} Q_P^T F^T ; D_W^{1/2} Q_W^T G^T]
MatrixXd tu_pre_array(const SvdFactors& P, const SvdFactors& W, const MatrixXd& F,
                      const MatrixXd& G) {
  const Eigen::Index n = F.rows(), q = G.cols();
  MatrixXd A(n + q, n);
  A.topRows(n) = P.D_sqrt.asDiagonal() * (F * P.Q).transpose();
  if (q > 0) A.bottomRows(q) = W.D_sqrt.asDiagonal() * (G * W.Q).transpose();
  return A;
}

MatrixXd covariance_of(const SvdFactors& f) { return f.covariance(); }

VectorXd inverse_d(const VectorXd& d_sqrt) {
  if ((d_sqrt.array() <= 0.0).any()) {
    throw ZeroSingularValue("innovation covariance has a zero singular value");
  }
  return d_sqrt.array().square().inverse();
}

}  // namespace

MeasurementUpdate svd_measurement_update(const SvdFilterState& prior,
                                         const ModelInstance& instance,
                                         const SvdFactors& r_factors, const VectorXd& z,
                                         const SvdOptions& opts) {
  const auto& s = instance.value;
  const Eigen::Index n = instance.dims.n;
  MeasurementUpdate mu;

  const SvdTriple f1 = svd_factorize(mu1_pre_array(r_factors, prior.P, s.H), opts);
  mu.Re = {f1.V, f1.S};
  const VectorXd Dinv = inverse_d(f1.S);

  mu.Kbar = covariance_of(prior.P) * s.H.transpose() * mu.Re.Q;
  mu.K = mu.Kbar * Dinv.asDiagonal() * mu.Re.Q.transpose();

  const MatrixXd J = MatrixXd::Identity(n, n) - mu.K * s.H;
  const SvdTriple f2 = svd_factorize(mu2_pre_array(prior.P, r_factors, J, mu.K), opts);
  mu.P_filt = {f2.V, f2.S};

  mu.ebar = mu.Re.Q.transpose() * (z - s.H * prior.x);
  mu.x_filt = prior.x + mu.Kbar * Dinv.cwiseProduct(mu.ebar);
  return mu;
}

TimeUpdate svd_time_update(const SvdFilterState& posterior, const ModelInstance& instance,
                           const SvdFactors& omega_factors, const VectorXd* u,
                           const SvdOptions& opts) {
  const auto& s = instance.value;
  const SvdTriple f = svd_factorize(tu_pre_array(posterior.P, omega_factors, s.F, s.G), opts);
  TimeUpdate tu;
  tu.P_next = {f.V, f.S};
  tu.x_next = s.F * posterior.x;
  if (u != nullptr) tu.x_next += s.B * *u;
  return tu;
}

SvdKfTrace svd_kf_run(const ModelInstance& instance, const Trajectory& data,
                      const SvdOptions& opts) {
  check_data(instance, data);
  const InitialFactors init = init_factors(instance, instance.factors, false, opts);
  const int N = data.steps();

  SvdKfTrace trace;
  trace.steps.reserve(N);
  SvdFilterState state{instance.value.x0, init.pi0.value};

  for (int k = 1; k <= N; ++k) {
    SvdKfStep st;
    st.x_pred = state.x;
    st.P_pred = state.P;
    MeasurementUpdate mu = with_context(k, "measurement update", [&] {
      return svd_measurement_update(state, instance, init.r.value, data.z[k - 1], opts);
    });
    const TimeUpdate tu = with_context(k, "time update", [&] {
      return svd_time_update({mu.x_filt, mu.P_filt}, instance, init.omega.value,
                             control_at(data, k), opts);
    });
    st.x_filt = std::move(mu.x_filt);
    st.P_filt = std::move(mu.P_filt);
    st.Re = std::move(mu.Re);
    st.ebar = std::move(mu.ebar);
    st.Kbar = std::move(mu.Kbar);
    st.x_next = tu.x_next;
    state = {tu.x_next, tu.P_next};
    if (!state.x.allFinite() || !st.x_filt.allFinite()) non_finite("svd_kf", k);
    trace.steps.push_back(std::move(st));
  }
  return trace;
}

namespace {

// d(D^{1/2} Q^T X^T) for one parameter direction.
MatrixXd d_block(const SvdFactors& f, const VectorXd& dd, const MatrixXd& dQ, const MatrixXd& X,
                 const MatrixXd& dX) {
  return dd.asDiagonal() * (X * f.Q).transpose() + f.D_sqrt.asDiagonal() * (X * dQ).transpose() +
         f.D_sqrt.asDiagonal() * (dX * f.Q).transpose();
}

// d(Q diag(d^2) Q^T)
MatrixXd d_covariance(const SvdFactors& f, const VectorXd& dd, const MatrixXd& dQ) {
  const VectorXd D = f.D_sqrt.array().square();
  const MatrixXd QD_dQt = f.Q * D.asDiagonal() * dQ.transpose();
  return QD_dQt + QD_dQt.transpose() +
         f.Q * (2.0 * f.D_sqrt.cwiseProduct(dd)).asDiagonal() * f.Q.transpose();
}

}  // namespace

DiffSvdKfTrace diff_svd_kf_run(const ModelInstance& instance, const Trajectory& data,
                               const SvdOptions& opts) {
  check_data(instance, data);
  const auto& s = instance.value;
  const int N = data.steps();
  const int p = instance.dims.p;
  const Eigen::Index n = instance.dims.n, m = instance.dims.m, q = instance.dims.q;
  const InitialFactors init = init_factors(instance, instance.factors, true, opts);
  const SvdFactors& Rf = init.r.value;
  const SvdFactors& Wf = init.omega.value;

  DiffSvdKfTrace out;
  out.base.steps.reserve(N);
  out.sens.reserve(N);

  SvdFactors P = init.pi0.value;
  VectorXd x = s.x0;
  std::vector<VectorXd> dx(p), dd(p);
  std::vector<MatrixXd> dQ(p);
  for (int i = 0; i < p; ++i) {
    dx[i] = instance.partials[i].x0;
    dQ[i] = init.pi0.dQ[i];
    dd[i] = init.pi0.dD_sqrt[i];
  }

  // With p == 0 there is nothing to differentiate.
  auto factorize = [&](const MatrixXd& A, const std::vector<MatrixXd>& dA) {
    if (p == 0) {
      SvdTriple f = svd_factorize(A, opts);
      return MultiDiffSvdResult{std::move(f.S), std::move(f.V), {}, {}};
    }
    return differentiated_svd(A, std::span<const MatrixXd>(dA), opts);
  };

  std::vector<MatrixXd> dA(p);
  for (int k = 1; k <= N; ++k) {
    const VectorXd* u = control_at(data, k);
    std::vector<SvdSensitivity> sens(p);
    SvdKfStep st;
    st.x_pred = x;
    st.P_pred = P;

    // Measurement update, first pre-array: innovation covariance factors.
    const MatrixXd A1 = mu1_pre_array(Rf, P, s.H);
    for (int i = 0; i < p; ++i) {
      const SystemMatrices& d = instance.partials[i];
      dA[i].resize(m + n, m);
      dA[i].topRows(m) = init.r.dD_sqrt[i].asDiagonal() * Rf.Q.transpose() +
                         Rf.D_sqrt.asDiagonal() * init.r.dQ[i].transpose();
      dA[i].bottomRows(n) = d_block(P, dd[i], dQ[i], s.H, d.H);
    }
    const MultiDiffSvdResult r1 = with_context(k, "measurement pre-array 1", [&] {
      return factorize(A1, dA);
    });
    st.Re = {r1.V, r1.S};
    const VectorXd Dinv = with_context(k, "measurement pre-array 1", [&] {
      return inverse_d(r1.S);
    });

    const MatrixXd Pfull = P.covariance();
    const MatrixXd PHt = Pfull * s.H.transpose();
    st.Kbar = PHt * st.Re.Q;
    const MatrixXd K = st.Kbar * Dinv.asDiagonal() * st.Re.Q.transpose();
    const MatrixXd J = MatrixXd::Identity(n, n) - K * s.H;

    std::vector<MatrixXd> dK(p);
    std::vector<VectorXd> dD_Re(p);
    for (int i = 0; i < p; ++i) {
      const SystemMatrices& d = instance.partials[i];
      SvdSensitivity& ds = sens[i];
      ds.dx_pred = dx[i];
      ds.dQ_pred = dQ[i];
      ds.dD_sqrt_pred = dd[i];
      ds.dQ_Re = r1.V_prime[i];
      ds.dD_sqrt_Re = r1.S_prime[i];
      dD_Re[i] = 2.0 * r1.S.cwiseProduct(r1.S_prime[i]);

      ds.dKbar = d_covariance(P, dd[i], dQ[i]) * s.H.transpose() * st.Re.Q +
                 Pfull * d.H.transpose() * st.Re.Q + PHt * ds.dQ_Re;
      // d(D^{-1}) = -D^{-1} dD D^{-1}
      const VectorXd dDinv = -Dinv.cwiseProduct(dD_Re[i]).cwiseProduct(Dinv);
      dK[i] = ds.dKbar * Dinv.asDiagonal() * st.Re.Q.transpose() +
              st.Kbar * dDinv.asDiagonal() * st.Re.Q.transpose() +
              st.Kbar * Dinv.asDiagonal() * ds.dQ_Re.transpose();
    }

    // Second pre-array: a posteriori covariance factors.
    const MatrixXd A2 = mu2_pre_array(P, Rf, J, K);
    for (int i = 0; i < p; ++i) {
      const SystemMatrices& d = instance.partials[i];
      const MatrixXd dJ = -(dK[i] * s.H + K * d.H);
      dA[i].resize(n + m, n);
      dA[i].topRows(n) = d_block(P, dd[i], dQ[i], J, dJ);
      dA[i].bottomRows(m) = d_block(Rf, init.r.dD_sqrt[i], init.r.dQ[i], K, dK[i]);
    }
    const MultiDiffSvdResult r2 = with_context(k, "measurement pre-array 2", [&] {
      return factorize(A2, dA);
    });
    st.P_filt = {r2.V, r2.S};

    const VectorXd innov = data.z[k - 1] - s.H * x;
    st.ebar = st.Re.Q.transpose() * innov;
    const VectorXd w = Dinv.cwiseProduct(st.ebar);
    st.x_filt = x + st.Kbar * w;

    for (int i = 0; i < p; ++i) {
      const SystemMatrices& d = instance.partials[i];
      SvdSensitivity& ds = sens[i];
      ds.dQ_filt = r2.V_prime[i];
      ds.dD_sqrt_filt = r2.S_prime[i];
      ds.debar = ds.dQ_Re.transpose() * innov - st.Re.Q.transpose() * (d.H * x + s.H * dx[i]);
      ds.dx_filt = dx[i] + ds.dKbar * w + st.Kbar * Dinv.cwiseProduct(ds.debar) -
                   st.Kbar * Dinv.cwiseProduct(dD_Re[i]).cwiseProduct(w);
    }

    // Time update.
    const MatrixXd A3 = tu_pre_array(st.P_filt, Wf, s.F, s.G);
    for (int i = 0; i < p; ++i) {
      const SystemMatrices& d = instance.partials[i];
      const SvdSensitivity& ds = sens[i];
      dA[i].resize(n + q, n);
      dA[i].topRows(n) = d_block(st.P_filt, ds.dD_sqrt_filt, ds.dQ_filt, s.F, d.F);
      if (q > 0) {
        dA[i].bottomRows(q) = d_block(Wf, init.omega.dD_sqrt[i], init.omega.dQ[i], s.G, d.G);
      }
    }
    const MultiDiffSvdResult r3 = with_context(k, "time update pre-array", [&] {
      return factorize(A3, dA);
    });

    st.x_next = s.F * st.x_filt;
    if (u != nullptr) st.x_next += s.B * *u;
    for (int i = 0; i < p; ++i) {
      const SystemMatrices& d = instance.partials[i];
      SvdSensitivity& ds = sens[i];
      ds.dx_next = d.F * st.x_filt + s.F * ds.dx_filt;
      if (u != nullptr) ds.dx_next += d.B * *u;
      dx[i] = ds.dx_next;
      dQ[i] = r3.V_prime[i];
      dd[i] = r3.S_prime[i];
      if (!dx[i].allFinite() || !dQ[i].allFinite() || !dd[i].allFinite() ||
          !ds.dx_filt.allFinite() || !ds.debar.allFinite()) {
        non_finite("diff_svd_kf", k);
      }
    }

    P = {r3.V, r3.S};
    x = st.x_next;
    if (!x.allFinite() || !st.x_filt.allFinite()) non_finite("diff_svd_kf", k);
    out.base.steps.push_back(std::move(st));
    out.sens.push_back(std::move(sens));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV export

namespace {

void header_columns(std::ostream& os, const char* name, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) os << ',' << name << '_' << i;
}

void values(std::ostream& os, const VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ',' << v(i);
}

}  // namespace

void write_trace_csv(std::ostream& os, const SvdKfTrace& trace) {
  if (trace.steps.empty()) return;
  const auto n = trace.steps.front().x_pred.size();
  const auto m = trace.steps.front().ebar.size();
  const auto old_precision = os.precision(17);
  os << "step";
  header_columns(os, "x_pred", n);
  header_columns(os, "x_filt", n);
  header_columns(os, "d_pred", n);
  header_columns(os, "d_re", m);
  os << ",logdet_re,quad_re\n";
  int k = 1;
  for (const auto& st : trace.steps) {
    const VectorXd Dre = st.Re.D_sqrt.array().square();
    os << k++;
    values(os, st.x_pred);
    values(os, st.x_filt);
    values(os, st.P_pred.D_sqrt.array().square().matrix());
    values(os, Dre);
    os << ',' << Dre.array().log().sum() << ','
       << st.ebar.cwiseProduct(Dre.cwiseInverse()).dot(st.ebar) << '\n';
  }
  os.precision(old_precision);
}

void write_trace_csv(std::ostream& os, const KfTrace& trace) {
  if (trace.steps.empty()) return;
  const auto n = trace.steps.front().x_pred.size();
  const auto m = trace.steps.front().e.size();
  const auto old_precision = os.precision(17);
  os << "step";
  header_columns(os, "x_pred", n);
  header_columns(os, "x_filt", n);
  header_columns(os, "p_diag", n);
  header_columns(os, "re_diag", m);
  os << ",logdet_re,quad_re\n";
  int k = 1;
  for (const auto& st : trace.steps) {
    Eigen::LLT<MatrixXd> llt(st.Re);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    os << k++;
    values(os, st.x_pred);
    values(os, st.x_filt);
    values(os, st.P_pred.diagonal());
    values(os, st.Re.diagonal());
    os << ',' << logdet << ',' << st.e.dot(llt.solve(st.e)) << '\n';
  }
  os.precision(old_precision);
}

}  // namespace svdkf
