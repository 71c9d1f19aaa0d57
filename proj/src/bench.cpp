#include "svdkf/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "svdkf/errors.hpp"

namespace svdkf::bench {

// ---------------------------------------------------------------------------
// Example 1

MatrixXd example1_pre_array(double t) {
  MatrixXd A(5, 2);
  const double s = std::sin(t), c = std::cos(t);
  A << -2 * t, s,              //
      2 * t, t * t,            //
      s * s, t * t * t / 3.0,  //
      t, 2 * t * t - 1,        //
      c * c, t * t * t + t * t;
  return A;
}

MatrixXd example1_pre_array_derivative(double t) {
  MatrixXd A(5, 2);
  const double s = std::sin(t), c = std::cos(t);
  A << -2, c,                //
      2, 2 * t,              //
      2 * s * c, t * t,      //
      1, 4 * t,              //
      -2 * s * c, 3 * t * t + 2 * t;
  return A;
}

MatrixXd gram_derivative(const DiffSvdResult& d) {
  const VectorXd S2 = d.S.array().square();
  const MatrixXd half = d.V_prime * S2.asDiagonal() * d.V.transpose();
  return half + half.transpose() +
         d.V * (2.0 * d.S.cwiseProduct(d.S_prime)).asDiagonal() * d.V.transpose();
}

Example1Report example1(double theta) {
  Example1Report r;
  r.theta = theta;
  r.A = example1_pre_array(theta);
  r.A_prime = example1_pre_array_derivative(theta);
  r.svd = svd_factorize(r.A);
  r.M_full = r.svd.W.transpose() * r.A_prime * r.svd.V;
  const Eigen::Index s = r.A.cols();
  r.split = split_triangular(r.M_full.topRows(s));
  r.Lbar2 = solve_lbar2(r.split.Lbar, r.split.Ubar, r.svd.S);
  r.diff = differentiated_svd(r.A, r.A_prime);

  const MatrixXd rhs = gram_derivative(r.diff);
  const MatrixXd lhs = r.A_prime.transpose() * r.A + r.A.transpose() * r.A_prime;
  r.linf_analytic = (lhs - rhs).cwiseAbs().maxCoeff();

  const double h = 1e-6;
  const MatrixXd Ap = example1_pre_array(theta + h), Am = example1_pre_array(theta - h);
  const MatrixXd lhs_fd = (Ap.transpose() * Ap - Am.transpose() * Am) / (2.0 * h);
  r.linf_fd = (lhs_fd - rhs).cwiseAbs().maxCoeff();
  return r;
}

namespace {

void print_matrix(std::ostream& os, const std::string& name, const MatrixXd& M) {
  os << name << " =\n";
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    os << "  ";
    for (Eigen::Index j = 0; j < M.cols(); ++j) os << std::setw(9) << M(i, j);
    os << '\n';
  }
}

}  // namespace

std::string format_example1(const Example1Report& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "Differentiated SVD of the 5x2 pre-array family at theta = " << r.theta << "\n\n";
  print_matrix(os, "A", r.A);
  print_matrix(os, "A'", r.A_prime);
  os << "\n[1] SVD of A\n";
  print_matrix(os, "W", r.svd.W);
  print_matrix(os, "S", MatrixXd(r.svd.S.asDiagonal()));
  print_matrix(os, "V", r.svd.V);
  os << "\n[2] M = W^T A' V\n";
  print_matrix(os, "M", r.M_full);
  os << "\n[3] leading block\n";
  print_matrix(os, "[M]", r.M_full.topRows(r.A.cols()));
  os << "\n[4] split into strictly lower / diagonal / strictly upper\n";
  print_matrix(os, "Lbar", r.split.Lbar);
  print_matrix(os, "D", MatrixXd(r.split.D.asDiagonal()));
  print_matrix(os, "Ubar", r.split.Ubar);
  os << "\n[5] lower factor of the skew generator\n";
  print_matrix(os, "Lbar2", r.Lbar2);
  os << "\n[6] V' = V (Lbar2^T - Lbar2)\n";
  print_matrix(os, "V'", r.diff.V_prime);
  os << "\n[7] S' = D\n";
  print_matrix(os, "S'", MatrixXd(r.diff.S_prime.asDiagonal()));
  os << std::scientific << std::setprecision(3);
  os << "\nGram-derivative check ||(A^T A)' - (V S^2 V^T)'||_max\n";
  os << "  product rule : " << r.linf_analytic << '\n';
  os << "  central diff : " << r.linf_fd << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Sweep

SweepConfig SweepConfig::quick() {
  SweepConfig c;
  c.runs = 30;
  c.deltas = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7};
  return c;
}

void SweepConfig::validate() const {
  if (runs < 1) throw ConfigError("runs must be >= 1");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (deltas.empty()) throw ConfigError("delta list is empty");
  for (double d : deltas) {
    if (!(d > 0.0)) throw ConfigError("every delta must be positive");
  }
  if (methods.empty()) throw ConfigError("no methods selected");
  if (workers < 0) throw ConfigError("workers must be >= 0");
}

const MethodStats* SweepSummary::find(Engine method, double delta) const {
  for (const auto& r : rows) {
    if (r.method == method && r.delta == delta) return &r;
  }
  return nullptr;
}

MethodStats summarize(std::span<const RunOutcome> runs, double theta_true) {
  MethodStats s;
  double sum = 0.0, sq = 0.0, abs_sum = 0.0;
  for (const auto& r : runs) {
    if (r.failed) {
      ++s.failures;
      continue;
    }
    ++s.completed;
    sum += r.estimate;
    sq += (r.estimate - theta_true) * (r.estimate - theta_true);
    abs_sum += std::abs(r.estimate - theta_true);
  }
  if (s.completed == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean = s.rmse = s.mape = nan;
    return s;
  }
  const double n = s.completed;
  s.mean = sum / n;
  s.rmse = std::sqrt(sq / n);
  s.mape = 100.0 * (abs_sum / n) / std::abs(theta_true);
  return s;
}

namespace {

RunOutcome run_one(const ParametrizedModel& model, const Trajectory& data, double theta0,
                   OptimizerOptions opt, Engine engine) {
  opt.engine = engine;
  RunOutcome out;
  const OptimizerReport rep = estimate(model, data, VectorXd::Constant(1, theta0), opt);
  out.estimate = rep.theta(0);
  out.iterations = rep.iterations;
  out.failed = !rep.converged;
  out.reason = rep.converged ? to_string(rep.reason)
                             : to_string(rep.reason) + (rep.message.empty() ? "" : ": " + rep.message);
  return out;
}

}  // namespace

SweepResult run_sweep(const SweepConfig& config, const ProgressFn& progress) {
  config.validate();
  const std::size_t nd = config.deltas.size();
  const std::size_t nm = config.methods.size();
  const std::size_t nr = static_cast<std::size_t>(config.runs);

  SweepResult result;
  result.outcomes.assign(nd, std::vector<std::vector<RunOutcome>>(nm, std::vector<RunOutcome>(nr)));

  unsigned workers = config.workers > 0 ? static_cast<unsigned>(config.workers)
                                        : std::max(1u, std::thread::hardware_concurrency());
  std::mutex progress_mutex;

  for (std::size_t di = 0; di < nd; ++di) {
    const double delta = config.deltas[di];
    const ParametrizedModel model = satellite_model(delta, config.q1);
    const ModelInstance truth = evaluate(model, VectorXd::Constant(1, config.theta_true));

    // One task per run; each task simulates its data once and hands the same
    // data to every method.
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t r = next++; r < nr; r = next++) {
        const Trajectory data = simulate(truth, config.steps, config.seed + r);
        for (std::size_t mi = 0; mi < nm; ++mi) {
          result.outcomes[di][mi][r] =
              run_one(model, data, config.theta0, config.optimizer, config.methods[mi]);
        }
      }
    };
    std::vector<std::thread> pool;
    const unsigned n_threads = std::min<unsigned>(workers, static_cast<unsigned>(nr));
    for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    for (std::size_t mi = 0; mi < nm; ++mi) {
      MethodStats s = summarize(result.outcomes[di][mi], config.theta_true);
      s.method = config.methods[mi];
      s.delta = delta;
      result.summary.rows.push_back(s);
      if (progress) {
        std::lock_guard lock(progress_mutex);
        std::ostringstream msg;
        msg << "delta=" << delta << " " << to_string(s.method) << ": " << s.completed << "/"
            << nr << " completed";
        progress(msg.str());
      }
    }
  }
  return result;
}

void write_sweep_csv(std::ostream& os, const SweepSummary& summary) {
  const auto old_flags = os.flags();
  const auto old_precision = os.precision(10);
  os << "method,delta,mean,rmse,mape_pct,failures\n";
  for (const auto& r : summary.rows) {
    os << to_string(r.method) << ',' << std::scientific << std::setprecision(1) << r.delta
       << std::defaultfloat << std::setprecision(10);
    if (r.completed == 0) {
      os << ",,,," << r.failures << '\n';
    } else {
      os << ',' << r.mean << ',' << r.rmse << ',' << r.mape << ',' << r.failures << '\n';
    }
  }
  os.flags(old_flags);
  os.precision(old_precision);
}

std::string format_sweep_table(const SweepSummary& summary) {
  std::ostringstream os;
  os << std::left << std::setw(13) << "method" << std::setw(9) << "delta" << std::right
     << std::setw(10) << "mean" << std::setw(10) << "rmse" << std::setw(10) << "mape%"
     << std::setw(10) << "failed" << '\n';
  for (const auto& r : summary.rows) {
    os << std::left << std::setw(13) << to_string(r.method) << std::setw(9) << std::scientific
       << std::setprecision(0) << r.delta << std::right << std::fixed << std::setprecision(4);
    if (r.failed()) {
      os << std::setw(10) << "-" << std::setw(10) << "-" << std::setw(10) << "-";
    } else {
      os << std::setw(10) << r.mean << std::setw(10) << r.rmse << std::setw(10) << r.mape;
    }
    os << std::setw(10) << r.failures << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Gradient check

double relative_error(const VectorXd& a, const VectorXd& b) {
  const double diff = (a - b).lpNorm<Eigen::Infinity>();
  if (diff == 0.0) return 0.0;
  const double scale =
      std::max({a.lpNorm<Eigen::Infinity>(), b.lpNorm<Eigen::Infinity>(), 1e-8});
  return diff / scale;
}

GradCheckReport gradcheck(const ParametrizedModel& model, const Trajectory& data,
                          const VectorXd& theta, double h) {
  GradCheckReport r;
  r.theta = theta;
  r.analytic_svd = evaluate_nll(model, data, theta, Engine::DiffSvdKf).gradient;
  r.fd = fd_gradient_oracle(model, data, theta, h);
  r.rel_err_svd = relative_error(r.analytic_svd, r.fd);
  try {
    r.analytic_kf = evaluate_nll(model, data, theta, Engine::DiffKf).gradient;
    r.rel_err_kf = relative_error(r.analytic_kf, r.fd);
  } catch (const Error&) {
    r.kf_ok = false;
    r.rel_err_kf = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

std::string format_gradcheck(const GradCheckReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  for (Eigen::Index i = 0; i < r.theta.size(); ++i) {
    os << "theta[" << i << "] = " << r.theta(i) << '\n';
    os << "  diff_svd_kf : " << r.analytic_svd(i) << '\n';
    if (r.kf_ok) os << "  diff_kf     : " << r.analytic_kf(i) << '\n';
    os << "  central FD  : " << r.fd(i) << '\n';
  }
  os << std::scientific << std::setprecision(3);
  os << "relative error diff_svd_kf vs FD: " << r.rel_err_svd << '\n';
  if (r.kf_ok) {
    os << "relative error diff_kf vs FD    : " << r.rel_err_kf << '\n';
  } else {
    os << "diff_kf failed to run\n";
  }
  os << (r.pass() ? "PASS" : "FAIL") << " (tolerance " << r.tolerance << ")\n";
  return os.str();
}

}  // namespace svdkf::bench
