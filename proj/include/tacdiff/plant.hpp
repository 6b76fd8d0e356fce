// Torque-level rigid-body plant, Cartesian impedance control with a
// feed-forward wrench, and internal-wrench reconstruction from motor torques.
// Everything is generic over a RobotModel so the identity-Jacobian desk plant
// and arbitrary full-rank synthetic models share one implementation.
#pragma once

#include "tacdiff/core.hpp"

#include <Eigen/SVD>

#include <concepts>
#include <string>

namespace tacdiff {

template <typename M>
concept RobotModel = requires(const M& m, const Vec& q, const Vec& qd) {
  { m.dof() } -> std::convertible_to<int>;
  { m.mass_matrix(q) } -> std::convertible_to<Mat>;
  { m.coriolis(q, qd) } -> std::convertible_to<Mat>;
  { m.gravity(q) } -> std::convertible_to<Vec>;
  { m.jacobian(q) } -> std::convertible_to<Mat>;
  { m.body_jacobian(q) } -> std::convertible_to<Mat>;
  { m.pose(q) } -> std::convertible_to<Vec6>;
};

/// Generalized coordinates plus the end-effector pose and twist they imply.
/// Pose is (position [m], small-angle fixed-axis orientation [rad]).
struct RobotState {
  Vec q;
  Vec q_dot;
  Vec6 x = Vec6::Zero();
  Vec6 x_dot = Vec6::Zero();
};

template <RobotModel Model>
RobotState make_state(const Model& model, const Vec& q, const Vec& q_dot) {
  require_dim(q.size(), model.dof(), "make_state q");
  require_dim(q_dot.size(), model.dof(), "make_state q_dot");
  RobotState s{q, q_dot, model.pose(q), Vec6::Zero()};
  s.x_dot = model.jacobian(q) * q_dot;
  return s;
}

/// Six Cartesian coordinates driven directly: q == x, J = J_body = I,
/// constant diagonal inertia, gravity-compensated, no Coriolis coupling.
class DeskPlant {
 public:
  DeskPlant() : DeskPlant(3.0, 0.05) {}
  DeskPlant(double mass, double inertia) {
    mass_.setZero();
    mass_.diagonal() << mass, mass, mass, inertia, inertia, inertia;
  }

  int dof() const { return 6; }
  Mat mass_matrix(const Vec&) const { return mass_; }
  Mat coriolis(const Vec&, const Vec&) const { return Mat::Zero(6, 6); }
  Vec gravity(const Vec&) const { return Vec::Zero(6); }
  Mat jacobian(const Vec&) const { return Mat::Identity(6, 6); }
  Mat body_jacobian(const Vec&) const { return Mat::Identity(6, 6); }
  Vec6 pose(const Vec& q) const { return q; }

  Vec6 mass_diagonal() const { return mass_.diagonal(); }

 private:
  Mat6 mass_;
};

/// Configuration-independent model with linear kinematics x = J q. Used to
/// exercise the control and wrench algebra with non-trivial matrices.
class LinearModel {
 public:
  LinearModel(Mat mass, Mat coriolis, Vec gravity, Mat jacobian, Mat body_jacobian)
      : mass_(std::move(mass)),
        coriolis_(std::move(coriolis)),
        gravity_(std::move(gravity)),
        jacobian_(std::move(jacobian)),
        body_jacobian_(std::move(body_jacobian)) {
    const auto n = mass_.rows();
    require_dim(mass_.cols(), n, "LinearModel mass matrix");
    require_dim(coriolis_.rows(), n, "LinearModel coriolis");
    require_dim(coriolis_.cols(), n, "LinearModel coriolis");
    require_dim(gravity_.size(), n, "LinearModel gravity");
    require_dim(jacobian_.rows(), 6, "LinearModel jacobian");
    require_dim(jacobian_.cols(), n, "LinearModel jacobian");
    require_dim(body_jacobian_.rows(), 6, "LinearModel body jacobian");
    require_dim(body_jacobian_.cols(), n, "LinearModel body jacobian");
  }

  int dof() const { return static_cast<int>(mass_.rows()); }
  Mat mass_matrix(const Vec&) const { return mass_; }
  Mat coriolis(const Vec&, const Vec&) const { return coriolis_; }
  Vec gravity(const Vec&) const { return gravity_; }
  Mat jacobian(const Vec&) const { return jacobian_; }
  Mat body_jacobian(const Vec&) const { return body_jacobian_; }
  Vec6 pose(const Vec& q) const { return jacobian_ * q; }

 private:
  Mat mass_;
  Mat coriolis_;
  Vec gravity_;
  Mat jacobian_;
  Mat body_jacobian_;
};

/// Diagonal stiffness/damping and the desired trajectory sample.
struct ControllerGains {
  Vec6 stiffness = Vec6::Zero();
  Vec6 damping = Vec6::Zero();
  Vec6 x_d = Vec6::Zero();
  Vec6 x_d_dot = Vec6::Zero();
  Vec6 x_d_ddot = Vec6::Zero();

  /// K = diag(500 N/m x3, 20 Nm/rad x3); D = 2 * zeta * sqrt(K * m) per axis.
  static ControllerGains defaults(const Vec6& mass_diagonal, double zeta = 0.7) {
    ControllerGains g;
    g.stiffness << 500, 500, 500, 20, 20, 20;
    g.damping = (2.0 * zeta) * (g.stiffness.cwiseProduct(mass_diagonal)).cwiseSqrt();
    return g;
  }

  void validate() const {
    if ((stiffness.array() < 0.0).any() || (damping.array() < 0.0).any()) {
      throw RangeError("controller gains must be positive semi-definite");
    }
    require_finite(stiffness, "stiffness");
    require_finite(damping, "damping");
    require_finite(x_d, "desired pose");
  }
};

/// Force (N) in the first three components, torque (N m) in the last three.
using Wrench = Vec6;

struct WrenchLimits {
  double max_force = 40.0;
  double max_torque = 5.0;
};

/// Scales the force and torque parts independently so their Euclidean norms
/// respect the limits.
inline Wrench clamp_wrench(const Wrench& w, const WrenchLimits& lim = {}) {
  Wrench out = w;
  const double f = w.head<3>().norm();
  if (f > lim.max_force) out.head<3>() *= lim.max_force / f;
  const double t = w.tail<3>().norm();
  if (t > lim.max_torque) out.tail<3>() *= lim.max_torque / t;
  return out;
}

/// tau_m = J^T [F_ff + K e + D e_dot + M x_d_ddot] + C q_dot + g.
/// The M x_d_ddot term mixes joint-space inertia with a Cartesian
/// acceleration; it is only defined for six-DoF models and is skipped when
/// x_d_ddot is zero.
template <RobotModel Model>
Vec impedance_torque(const RobotState& s, const ControllerGains& gains, const Wrench& f_ff,
                     const Model& model) {
  const int n = model.dof();
  require_dim(s.q.size(), n, "impedance_torque q");
  require_dim(s.q_dot.size(), n, "impedance_torque q_dot");
  if (!s.q.allFinite() || !s.q_dot.allFinite() || !s.x.allFinite() || !s.x_dot.allFinite() ||
      !f_ff.allFinite()) {
    throw NonFiniteError("impedance_torque: non-finite input");
  }
  const Vec6 e = gains.x_d - s.x;
  const Vec6 e_dot = gains.x_d_dot - s.x_dot;
  Vec6 task = f_ff + gains.stiffness.cwiseProduct(e) + gains.damping.cwiseProduct(e_dot);
  if (!gains.x_d_ddot.isZero(0.0)) {
    if (n != 6) throw ShapeError("impedance_torque: M * x_d_ddot needs a six-DoF model");
    task += model.mass_matrix(s.q) * gains.x_d_ddot;
  }
  return model.jacobian(s.q).transpose() * task + model.coriolis(s.q, s.q_dot) * s.q_dot +
         model.gravity(s.q);
}

/// Moore-Penrose pseudo-inverse of a full-row-rank Jacobian; rank deficiency
/// is reported, never regularized away.
inline Mat pseudo_inverse_full_row_rank(const Mat& J, double rcond = 1e-10) {
  Eigen::JacobiSVD<Mat> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  if (sv.size() < J.rows() || sv(sv.size() - 1) <= rcond * sv(0)) {
    throw SingularityError("body Jacobian is rank deficient (sigma_min/sigma_max = " +
                           std::to_string(sv.size() ? sv(sv.size() - 1) / sv(0) : 0.0) + ")");
  }
  return svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
}

/// F_in = (J_body^+)^T (tau_m - C q_dot - g).
template <RobotModel Model>
Wrench internal_wrench(const Vec& tau_m, const RobotState& s, const Model& model) {
  require_dim(tau_m.size(), model.dof(), "internal_wrench tau_m");
  const Mat pinv = pseudo_inverse_full_row_rank(model.body_jacobian(s.q));
  const Vec residual = tau_m - model.coriolis(s.q, s.q_dot) * s.q_dot - model.gravity(s.q);
  return pinv.transpose() * residual;
}

/// Solves M q_dd = tau_m + tau_ext - C q_dot - g and advances one step with
/// semi-implicit Euler (velocity first, then position).
template <RobotModel Model>
RobotState dynamics_step(const RobotState& s, const Vec& tau_m, const Vec& tau_ext,
                         const Model& model, double dt = 1e-3) {
  const int n = model.dof();
  require_dim(tau_m.size(), n, "dynamics_step tau_m");
  require_dim(tau_ext.size(), n, "dynamics_step tau_ext");
  const Mat mass = model.mass_matrix(s.q);
  const Vec rhs = tau_m + tau_ext - model.coriolis(s.q, s.q_dot) * s.q_dot - model.gravity(s.q);
  const Vec q_dd = mass.ldlt().solve(rhs);
  if (!q_dd.allFinite()) throw NonFiniteError("dynamics_step: non-finite acceleration");
  RobotState next;
  next.q_dot = s.q_dot + q_dd * dt;
  next.q = s.q + next.q_dot * dt;
  next.x = model.pose(next.q);
  next.x_dot = model.jacobian(next.q) * next.q_dot;
  return next;
}

}  // namespace tacdiff
