#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "svdkf/estimation.hpp"
#include "svdkf/model.hpp"
#include "svdkf/svd_diff.hpp"

namespace svdkf::bench {

// ---------------------------------------------------------------------------
// Differentiated SVD walk-through on a fixed 5x2 pre-array family.

MatrixXd example1_pre_array(double theta);
MatrixXd example1_pre_array_derivative(double theta);

struct Example1Report {
  double theta = 0.5;
  MatrixXd A, A_prime;
  SvdTriple svd;
  MatrixXd M_full;  // W^T A' V
  TriangularSplit split;
  MatrixXd Lbar2;
  DiffSvdResult diff;
  // ||(A^T A)' - (V S^2 V^T)'||_max with the left side from the product rule
  // and from central differences (h = 1e-6).
  double linf_analytic = 0.0;
  double linf_fd = 0.0;
};

Example1Report example1(double theta = 0.5);
std::string format_example1(const Example1Report& r);

// (V S^2 V^T)' expanded with V' and S'.
MatrixXd gram_derivative(const DiffSvdResult& d);

// ---------------------------------------------------------------------------
// Monte Carlo sweep over the ill-conditioning parameter of the satellite model.

struct SweepConfig {
  std::vector<double> deltas = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10};
  int runs = 100;
  int steps = 100;
  double theta_true = 5.0;
  double theta0 = 1.0;
  std::uint64_t seed = 1;
  std::vector<Engine> methods = {Engine::DiffKf, Engine::DiffSvdKf};
  double q1 = 0.63e-2;
  int workers = 0;  // 0: hardware concurrency
  OptimizerOptions optimizer;

  // M = 30 and delta down to 1e-7.
  static SweepConfig quick();
  void validate() const;
};

struct RunOutcome {
  double estimate = 0.0;
  bool failed = false;
  int iterations = 0;
  std::string reason;
};

struct MethodStats {
  Engine method = Engine::DiffSvdKf;
  double delta = 0.0;
  double mean = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
  int failures = 0;
  int completed = 0;

  // Any failed run marks the whole (method, delta) cell failed.
  [[nodiscard]] bool failed() const { return failures > 0; }
};

struct SweepSummary {
  std::vector<MethodStats> rows;

  [[nodiscard]] const MethodStats* find(Engine method, double delta) const;
};

struct SweepResult {
  SweepSummary summary;
  // outcomes[delta_index][method_index][run]
  std::vector<std::vector<std::vector<RunOutcome>>> outcomes;
};

// Statistics over the non-failed runs only.
MethodStats summarize(std::span<const RunOutcome> runs, double theta_true);

using ProgressFn = std::function<void(const std::string&)>;

SweepResult run_sweep(const SweepConfig& config, const ProgressFn& progress = {});

// method,delta,mean,rmse,mape_pct,failures
void write_sweep_csv(std::ostream& os, const SweepSummary& summary);
std::string format_sweep_table(const SweepSummary& summary);

// ---------------------------------------------------------------------------
// Analytic versus finite-difference gradient.

struct GradCheckReport {
  VectorXd theta;
  VectorXd analytic_svd;
  VectorXd analytic_kf;
  VectorXd fd;
  double rel_err_svd = 0.0;
  double rel_err_kf = 0.0;
  double tolerance = 1e-4;
  bool kf_ok = true;  // diff_kf evaluation succeeded

  [[nodiscard]] bool pass() const { return rel_err_svd <= tolerance; }
};

// ||a - b||_inf / max(||a||_inf, ||b||_inf, 1e-8)
double relative_error(const VectorXd& a, const VectorXd& b);

GradCheckReport gradcheck(const ParametrizedModel& model, const Trajectory& data,
                          const VectorXd& theta, double h = 0.0);
std::string format_gradcheck(const GradCheckReport& r);

}  // namespace svdkf::bench
