#include "svdkf/estimation.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "svdkf/errors.hpp"

namespace svdkf {

namespace {

double c0(int steps, Eigen::Index m) {
  return 0.5 * steps * static_cast<double>(m) * std::log(2.0 * std::numbers::pi);
}

void require_positive(const VectorXd& d_sqrt, std::size_t k) {
  if (!((d_sqrt.array() > 0.0).all())) {
    throw ZeroSingularValue("innovation covariance has a zero singular value at step " +
                            std::to_string(k + 1));
  }
}

Eigen::LLT<MatrixXd> innovation_llt(const MatrixXd& Re, std::size_t k) {
  Eigen::LLT<MatrixXd> llt(Re);
  if (llt.info() != Eigen::Success || !Re.allFinite()) {
    throw SingularInnovationCovariance("innovation covariance is not positive definite at step " +
                                       std::to_string(k + 1));
  }
  return llt;
}

}  // namespace

double nll_svd(const SvdKfTrace& trace) {
  if (trace.steps.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const auto& st = trace.steps[k];
    require_positive(st.Re.D_sqrt, k);
    const VectorXd D = st.Re.D_sqrt.array().square();
    sum += 2.0 * st.Re.D_sqrt.array().log().sum() + st.ebar.cwiseQuotient(D).dot(st.ebar);
  }
  const auto m = trace.steps.front().ebar.size();
  const double value = c0(static_cast<int>(trace.steps.size()), m) + 0.5 * sum;
  if (!std::isfinite(value)) throw NonFiniteState("nll_svd: non-finite likelihood");
  return value;
}

double nll_conventional(const KfTrace& trace) {
  if (trace.steps.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const auto& st = trace.steps[k];
    const Eigen::LLT<MatrixXd> llt = innovation_llt(st.Re, k);
    const MatrixXd L = llt.matrixL();
    sum += 2.0 * L.diagonal().array().log().sum() + st.e.dot(llt.solve(st.e));
  }
  const auto m = trace.steps.front().e.size();
  const double value = c0(static_cast<int>(trace.steps.size()), m) + 0.5 * sum;
  if (!std::isfinite(value)) throw NonFiniteState("nll_conventional: non-finite likelihood");
  return value;
}

VectorXd grad_nll_svd(const DiffSvdKfTrace& trace) {
  const std::size_t p = trace.sens.empty() ? 0 : trace.sens.front().size();
  VectorXd g = VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t k = 0; k < trace.base.steps.size(); ++k) {
    const auto& st = trace.base.steps[k];
    require_positive(st.Re.D_sqrt, k);
    const VectorXd& s = st.Re.D_sqrt;
    const VectorXd D = s.array().square();
    const VectorXd w = st.ebar.cwiseQuotient(D);  // D^{-1} ebar
    for (std::size_t i = 0; i < p; ++i) {
      const auto& ds = trace.sens[k][i];
      const VectorXd dD = 2.0 * s.cwiseProduct(ds.dD_sqrt_Re);
      g(static_cast<Eigen::Index>(i)) +=
          0.5 * (dD.cwiseQuotient(D).sum() + 2.0 * ds.debar.dot(w) - w.cwiseProduct(dD).dot(w));
    }
  }
  if (!g.allFinite()) throw NonFiniteState("grad_nll_svd: non-finite gradient");
  return g;
}

VectorXd grad_nll_conventional(const DiffKfTrace& trace) {
  const std::size_t p = trace.sens.empty() ? 0 : trace.sens.front().size();
  VectorXd g = VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t k = 0; k < trace.base.steps.size(); ++k) {
    const auto& st = trace.base.steps[k];
    const Eigen::LLT<MatrixXd> llt = innovation_llt(st.Re, k);
    const VectorXd w = llt.solve(st.e);  // Re^{-1} e
    for (std::size_t i = 0; i < p; ++i) {
      const auto& ds = trace.sens[k][i];
      const double tr = llt.solve(ds.dRe).trace();
      g(static_cast<Eigen::Index>(i)) += 0.5 * (tr + 2.0 * ds.de.dot(w) - w.dot(ds.dRe * w));
    }
  }
  if (!g.allFinite()) throw NonFiniteState("grad_nll_conventional: non-finite gradient");
  return g;
}

std::string to_string(Engine e) {
  switch (e) {
    case Engine::DiffKf:
      return "diff_kf";
    case Engine::DiffSvdKf:
      return "diff_svd_kf";
  }
  return "unknown";
}

Engine engine_from_string(const std::string& name) {
  if (name == "diff_kf") return Engine::DiffKf;
  if (name == "diff_svd_kf") return Engine::DiffSvdKf;
  throw ConfigError("unknown method '" + name + "' (expected diff_kf or diff_svd_kf)");
}

NllEvaluation evaluate_nll(const ParametrizedModel& model, const Trajectory& data,
                           const VectorXd& theta, Engine engine, const SvdOptions& opts) {
  const ModelInstance inst = evaluate(model, theta);
  NllEvaluation out;
  out.theta = theta;
  out.steps = data.steps();
  out.measurements = model.dims.m;
  if (engine == Engine::DiffKf) {
    auto trace = std::make_shared<DiffKfTrace>(diff_kf_run(inst, data));
    out.value = nll_conventional(trace->base);
    out.gradient = grad_nll_conventional(*trace);
    out.kf_trace = std::move(trace);
  } else {
    auto trace = std::make_shared<DiffSvdKfTrace>(diff_svd_kf_run(inst, data, opts));
    out.value = nll_svd(trace->base);
    out.gradient = grad_nll_svd(*trace);
    out.svd_trace = std::move(trace);
  }
  return out;
}

VectorXd fd_gradient_oracle(const ParametrizedModel& model, const Trajectory& data,
                            const VectorXd& theta, double h, const SvdOptions& opts) {
  VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double step = h > 0.0 ? h : 1e-6 * (1.0 + std::abs(theta(i)));
    VectorXd tp = theta, tm = theta;
    tp(i) += step;
    tm(i) -= step;
    const double fp = nll_svd(svd_kf_run(evaluate(model, tp), data, opts));
    const double fm = nll_svd(svd_kf_run(evaluate(model, tm), data, opts));
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::GradientTolerance:
      return "gradient tolerance";
    case StopReason::StepTolerance:
      return "step tolerance";
    case StopReason::MaxIterations:
      return "iteration limit";
    case StopReason::LineSearchFailed:
      return "line search failed";
    case StopReason::InitialEvaluationFailed:
      return "initial evaluation failed";
  }
  return "unknown";
}

OptimizerReport minimize_bfgs(const Objective& objective, const VectorXd& theta0,
                              const OptimizerOptions& options) {
  OptimizerReport rep;
  rep.theta = theta0;
  const Eigen::Index p = theta0.size();

  ObjectiveValue cur;
  try {
    cur = objective(theta0);
    if (!std::isfinite(cur.value) || !cur.gradient.allFinite()) {
      throw NonFiniteState("objective is not finite at the starting point");
    }
  } catch (const Error& e) {
    rep.reason = StopReason::InitialEvaluationFailed;
    rep.message = e.what();
    rep.failed_evaluations = 1;
    return rep;
  }

  VectorXd x = theta0;
  MatrixXd Hinv = MatrixXd::Identity(p, p);
  bool hinv_is_identity = true;
  rep.history.push_back({0, x, cur.value, cur.gradient.lpNorm<Eigen::Infinity>(), 0.0});

  auto finish = [&](StopReason reason) {
    rep.reason = reason;
    rep.converged =
        reason == StopReason::GradientTolerance || reason == StopReason::StepTolerance;
    rep.theta = x;
    rep.value = cur.value;
    rep.grad_norm = cur.gradient.lpNorm<Eigen::Infinity>();
    return rep;
  };

  int iter = 0;
  while (true) {
    if (cur.gradient.lpNorm<Eigen::Infinity>() <= options.grad_tol) {
      return finish(StopReason::GradientTolerance);
    }
    if (iter >= options.max_iter) return finish(StopReason::MaxIterations);

    VectorXd dir = -Hinv * cur.gradient;
    double slope = cur.gradient.dot(dir);
    if (!(slope < 0.0)) {
      Hinv.setIdentity();
      hinv_is_identity = true;
      dir = -cur.gradient;
      slope = cur.gradient.dot(dir);
    }

    const double dir_norm = dir.lpNorm<Eigen::Infinity>();
    const double step_floor = options.min_step * (1.0 + x.lpNorm<Eigen::Infinity>());
    // Without curvature information the raw gradient sets the scale, so the
    // first trial step is capped in the infinity norm.
    double alpha = 1.0;
    if (hinv_is_identity && options.max_initial_step > 0.0 && dir_norm > options.max_initial_step) {
      alpha = options.max_initial_step / dir_norm;
    }
    bool accepted = false;
    bool too_small = false;
    ObjectiveValue trial;
    VectorXd x_new;
    for (int bt = 0; bt < options.max_backtracks; ++bt) {
      if (alpha * dir_norm < step_floor) {
        too_small = true;
        break;
      }
      x_new = x + alpha * dir;
      try {
        trial = objective(x_new);
        if (std::isfinite(trial.value) && trial.gradient.allFinite() &&
            trial.value <= cur.value + options.armijo_c * alpha * slope) {
          accepted = true;
          break;
        }
      } catch (const Error&) {
        ++rep.failed_evaluations;
      }
      alpha *= options.shrink;
    }

    if (!accepted) {
      ++rep.line_search_failures;
      if (!hinv_is_identity) {
        // Retry once along steepest descent before giving up.
        Hinv.setIdentity();
        hinv_is_identity = true;
        continue;
      }
      return finish(too_small ? StopReason::StepTolerance : StopReason::LineSearchFailed);
    }

    ++iter;
    const VectorXd s = x_new - x;
    const VectorXd y = trial.gradient - cur.gradient;
    x = x_new;
    cur = std::move(trial);
    const double step_len = s.lpNorm<Eigen::Infinity>();
    rep.iterations = iter;
    rep.history.push_back({iter, x, cur.value, cur.gradient.lpNorm<Eigen::Infinity>(), step_len});

    const double sy = s.dot(y);
    if (sy > 0.0) {
      const double rho = 1.0 / sy;
      const MatrixXd I = MatrixXd::Identity(p, p);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) +
             rho * s * s.transpose();
      hinv_is_identity = false;
    }
    if (step_len < step_floor) return finish(StopReason::StepTolerance);
  }
}

OptimizerReport estimate(const ParametrizedModel& model, const Trajectory& data,
                         const VectorXd& theta0, const OptimizerOptions& options,
                         const SvdOptions& svd_opts) {
  const Objective f = [&](const VectorXd& theta) {
    NllEvaluation e = evaluate_nll(model, data, theta, options.engine, svd_opts);
    return ObjectiveValue{e.value, std::move(e.gradient)};
  };
  return minimize_bfgs(f, theta0, options);
}

void write_optimizer_csv(std::ostream& os, const OptimizerReport& report) {
  const auto old_precision = os.precision(17);
  os << "iter";
  const auto p = report.history.empty() ? 0 : report.history.front().theta.size();
  for (Eigen::Index i = 0; i < p; ++i) os << ",theta_" << i;
  os << ",nll,grad_inf,step\n";
  for (const auto& it : report.history) {
    os << it.iter;
    for (Eigen::Index i = 0; i < p; ++i) os << ',' << it.theta(i);
    os << ',' << it.value << ',' << it.grad_norm << ',' << it.step << '\n';
  }
  os.precision(old_precision);
}

}  // namespace svdkf
