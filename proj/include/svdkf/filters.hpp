#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "svdkf/model.hpp"
#include "svdkf/svd_diff.hpp"

namespace svdkf {

// ---------------------------------------------------------------------------
// Conventional filter (condensed form) and its direct differentiation.

struct KfStep {
  VectorXd x_pred;  // x_{k|k-1}
  VectorXd x_filt;  // x_{k|k}
  VectorXd x_next;  // x_{k+1|k}
  MatrixXd P_pred;  // P_{k|k-1}
  VectorXd e;       // innovation
  MatrixXd Re;      // innovation covariance
  MatrixXd Kp;      // predicted gain F P H^T Re^{-1}
};

struct KfTrace {
  std::vector<KfStep> steps;
};

struct KfSensitivity {
  VectorXd dx_pred;
  VectorXd dx_next;
  MatrixXd dP_pred;
  VectorXd de;
  MatrixXd dRe;
  MatrixXd dKp;
};

struct DiffKfTrace {
  KfTrace base;
  // sens[k][i]: partial in theta_i at step k.
  std::vector<std::vector<KfSensitivity>> sens;
};

KfTrace kf_run(const ModelInstance& instance, const Trajectory& data);
DiffKfTrace diff_kf_run(const ModelInstance& instance, const Trajectory& data);

// ---------------------------------------------------------------------------
// SVD-factored filter. Every covariance is carried as {Q, D^{1/2}}.

struct SvdFilterState {
  VectorXd x;
  SvdFactors P;
};

struct MeasurementUpdate {
  VectorXd x_filt;
  SvdFactors P_filt;
  SvdFactors Re;
  MatrixXd Kbar;  // P H^T Q_Re
  MatrixXd K;     // Kbar D_Re^{-1} Q_Re^T
  VectorXd ebar;  // Q_Re^T (z - H x)
};

struct TimeUpdate {
  VectorXd x_next;
  SvdFactors P_next;
};

MeasurementUpdate svd_measurement_update(const SvdFilterState& prior,
                                         const ModelInstance& instance,
                                         const SvdFactors& r_factors, const VectorXd& z,
                                         const SvdOptions& opts = {});

// u may be null for zero control.
TimeUpdate svd_time_update(const SvdFilterState& posterior, const ModelInstance& instance,
                           const SvdFactors& omega_factors, const VectorXd* u,
                           const SvdOptions& opts = {});

struct SvdKfStep {
  VectorXd x_pred;
  VectorXd x_filt;
  VectorXd x_next;
  SvdFactors P_pred;
  SvdFactors P_filt;
  SvdFactors Re;
  VectorXd ebar;
  MatrixXd Kbar;
};

struct SvdKfTrace {
  std::vector<SvdKfStep> steps;
};

struct SvdSensitivity {
  VectorXd dx_pred;
  VectorXd dx_filt;
  VectorXd dx_next;
  MatrixXd dQ_pred;
  VectorXd dD_sqrt_pred;
  MatrixXd dQ_filt;
  VectorXd dD_sqrt_filt;
  MatrixXd dQ_Re;
  VectorXd dD_sqrt_Re;
  VectorXd debar;
  MatrixXd dKbar;
};

struct DiffSvdKfTrace {
  SvdKfTrace base;
  std::vector<std::vector<SvdSensitivity>> sens;
};

SvdKfTrace svd_kf_run(const ModelInstance& instance, const Trajectory& data,
                      const SvdOptions& opts = {});
DiffSvdKfTrace diff_svd_kf_run(const ModelInstance& instance, const Trajectory& data,
                               const SvdOptions& opts = {});

// Per-step CSV: step, predicted and filtered states, diag of D for P_{k|k-1}
// and R_e, and the log-det / quadratic likelihood terms.
void write_trace_csv(std::ostream& os, const SvdKfTrace& trace);
void write_trace_csv(std::ostream& os, const KfTrace& trace);

}  // namespace svdkf
