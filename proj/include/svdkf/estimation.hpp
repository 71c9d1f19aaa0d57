#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "svdkf/filters.hpp"
#include "svdkf/model.hpp"

namespace svdkf {

// All likelihood values are the NEGATIVE log-likelihood
//   L = (N m / 2) ln(2 pi) + 1/2 sum_k [ln det Re_k + e_k^T Re_k^{-1} e_k],
// which the estimator minimizes.

double nll_svd(const SvdKfTrace& trace);
double nll_conventional(const KfTrace& trace);

VectorXd grad_nll_svd(const DiffSvdKfTrace& trace);
VectorXd grad_nll_conventional(const DiffKfTrace& trace);

enum class Engine { DiffKf, DiffSvdKf };

std::string to_string(Engine e);
Engine engine_from_string(const std::string& name);

struct NllEvaluation {
  double value = 0.0;
  VectorXd gradient;
  VectorXd theta;
  int steps = 0;         // N
  int measurements = 0;  // m
  std::shared_ptr<const DiffKfTrace> kf_trace;       // set for Engine::DiffKf
  std::shared_ptr<const DiffSvdKfTrace> svd_trace;   // set for Engine::DiffSvdKf
};

NllEvaluation evaluate_nll(const ParametrizedModel& model, const Trajectory& data,
                           const VectorXd& theta, Engine engine, const SvdOptions& opts = {});

// Central differences of nll_svd. h <= 0 picks 1e-6 * (1 + |theta_i|).
VectorXd fd_gradient_oracle(const ParametrizedModel& model, const Trajectory& data,
                            const VectorXd& theta, double h = 0.0, const SvdOptions& opts = {});

struct OptimizerOptions {
  double grad_tol = 1e-6;
  int max_iter = 100;
  double armijo_c = 1e-4;
  double shrink = 0.5;
  double min_step = 1e-12;
  // Cap on the infinity norm of steepest-descent trial steps; <= 0 disables.
  double max_initial_step = 1.0;
  int max_backtracks = 60;
  Engine engine = Engine::DiffSvdKf;
};

struct OptimizerIterate {
  int iter = 0;
  VectorXd theta;
  double value = 0.0;
  double grad_norm = 0.0;  // infinity norm
  double step = 0.0;       // ||theta_new - theta_old||_inf; 0 for the starting point
};

enum class StopReason { GradientTolerance, StepTolerance, MaxIterations, LineSearchFailed,
                        InitialEvaluationFailed };

std::string to_string(StopReason r);

struct OptimizerReport {
  VectorXd theta;
  double value = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
  int line_search_failures = 0;
  int failed_evaluations = 0;
  bool converged = false;
  StopReason reason = StopReason::MaxIterations;
  std::string message;
  std::vector<OptimizerIterate> history;
};

struct ObjectiveValue {
  double value;
  VectorXd gradient;
};

// Throwing svdkf::Error from the objective marks the trial point as failed;
// the line search then shrinks the step.
using Objective = std::function<ObjectiveValue(const VectorXd& theta)>;

// BFGS on the inverse Hessian (identity start) with Armijo backtracking.
OptimizerReport minimize_bfgs(const Objective& objective, const VectorXd& theta0,
                              const OptimizerOptions& options = {});

// Maximum-likelihood estimate of theta from one data set.
OptimizerReport estimate(const ParametrizedModel& model, const Trajectory& data,
                         const VectorXd& theta0, const OptimizerOptions& options = {},
                         const SvdOptions& svd_opts = {});

// iter, theta_0..theta_{p-1}, nll, grad_inf, step
void write_optimizer_csv(std::ostream& os, const OptimizerReport& report);

}  // namespace svdkf
