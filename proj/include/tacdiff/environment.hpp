// Simulated tight-clearance peg-in-hole task on the desk plant.
//
// Contact is resolved in the x-z insertion plane with the peg tilted by the
// pose's y-rotation. The peg is a rectangle of half-width w and length L
// whose bottom-face centre is the end-effector point. The hole is a slot of
// half-width W = w + clearance cut into a surface at z = surface_height, with
// a floor hole_floor_depth below the surface. Four contact slots are tracked:
//
//   0, 1  left / right bottom corner against surface, wall or floor
//   2, 3  left / right rim edge (x = -W / +W, z = surface) against a peg side
//         or the peg's bottom face, whichever is shallower
//
// Each slot is a penalty spring-damper along its normal plus a bristle-style
// Coulomb friction element along its tangent. The bottom face is lumped into
// its two corners, each carrying half of the contact stiffness and damping.
#pragma once

#include "tacdiff/core.hpp"
#include "tacdiff/plant.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace tacdiff {

struct TaskGeometry {
  std::string name = "custom";
  double peg_half_width = 0.0125;
  double hole_half_width = 0.0126;
  double clearance = 1e-4;
  double hole_depth_target = 0.015;
  double hole_floor_depth = 0.03;
  double surface_height = 0.0;
  double peg_length = 0.06;
  double friction_coeff = 0.3;
  double contact_stiffness = 5e4;
  double contact_damping = 200.0;

  void validate() const {
    if (!(clearance > 0.0)) throw RangeError("task geometry: clearance must be positive");
    if (!(peg_half_width > 0.0) || !(clearance < peg_half_width)) {
      throw RangeError("task geometry: clearance must be much smaller than the peg half-width");
    }
    if (std::abs(hole_half_width - peg_half_width - clearance) > 1e-12) {
      throw RangeError("task geometry: hole half-width must equal peg half-width + clearance");
    }
    if (!(contact_stiffness > 0.0) || contact_damping < 0.0 || friction_coeff < 0.0) {
      throw RangeError("task geometry: invalid contact parameters");
    }
    if (!(hole_depth_target > 0.0) || !(hole_floor_depth > hole_depth_target) ||
        !(peg_length > hole_depth_target)) {
      throw RangeError("task geometry: inconsistent depths");
    }
  }
};

/// Geometry with hole half-width derived from the peg half-width and clearance.
inline TaskGeometry make_geometry(std::string name, double peg_half_width, double clearance,
                                  double peg_length, double hole_depth_target = 0.015) {
  TaskGeometry g;
  g.name = std::move(name);
  g.peg_half_width = peg_half_width;
  g.clearance = clearance;
  g.hole_half_width = peg_half_width + clearance;
  g.peg_length = peg_length;
  g.hole_depth_target = hole_depth_target;
  g.hole_floor_depth = hole_depth_target + 0.015;
  g.validate();
  return g;
}

enum class TaskName { cuboid, key, cyl_s, cyl_l, prism };

inline constexpr std::array<TaskName, 5> kAllTasks = {TaskName::cuboid, TaskName::key,
                                                      TaskName::cyl_s, TaskName::cyl_l,
                                                      TaskName::prism};

inline std::string_view to_string(TaskName t) {
  switch (t) {
    case TaskName::cuboid: return "cuboid";
    case TaskName::key: return "key";
    case TaskName::cyl_s: return "cyl_s";
    case TaskName::cyl_l: return "cyl_l";
    case TaskName::prism: return "prism";
  }
  return "?";
}

inline TaskName parse_task(std::string_view s) {
  for (TaskName t : kAllTasks)
    if (to_string(t) == s) return t;
  throw RangeError("unknown task '" + std::string(s) + "'");
}

/// Presets for the five insertion objects. Half-widths are the in-plane
/// cross-section: cuboid 25 mm face, cylinders by diameter, octagonal prism
/// across flats (11 mm side), key blade 8 mm.
inline TaskGeometry make_task(TaskName t) {
  switch (t) {
    case TaskName::cuboid: return make_geometry("cuboid", 0.0125, 1e-4, 0.060);
    case TaskName::key: return make_geometry("key", 0.004, 1e-4, 0.037);
    case TaskName::cyl_s: return make_geometry("cyl_s", 0.010, 2e-5, 0.050);
    case TaskName::cyl_l: return make_geometry("cyl_l", 0.015, 2.5e-5, 0.050);
    case TaskName::prism:
      return make_geometry("prism", 0.5 * 0.011 * (1.0 + std::sqrt(2.0)), 5e-5, 0.050);
  }
  throw RangeError("unknown task");
}

inline TaskGeometry make_task(std::string_view name) { return make_task(parse_task(name)); }

enum class ContactFeature : std::uint8_t { none, surface, wall, floor, peg_side, peg_bottom };

struct ContactPoint {
  int slot = 0;
  ContactFeature feature = ContactFeature::none;
  Eigen::Vector2d point = Eigen::Vector2d::Zero();   // world (x, z)
  Eigen::Vector2d normal = Eigen::Vector2d::Zero();  // direction of the normal force on the peg
  double penetration = 0.0;
  double penetration_rate = 0.0;
  double normal_force = 0.0;
  double tangential_force = 0.0;  // along (-n_z, n_x)
  Eigen::Vector2d force = Eigen::Vector2d::Zero();
};

/// Bristle deflection per contact slot, reset whenever the slot's feature changes.
struct FrictionMemory {
  std::array<double, 4> deflection{};
  std::array<ContactFeature, 4> feature{};
  bool operator==(const FrictionMemory&) const = default;
};

struct ContactResult {
  Wrench wrench = Wrench::Zero();  // on the peg, about the end-effector point
  std::vector<ContactPoint> points;
  FrictionMemory memory;
  std::uint32_t flags = 0;  // bit i set when slot i is in contact
};

inline constexpr double kMaxContactForce = 1e4;

namespace detail {

struct PegFrame {
  double px, pz, theta, c, s, vx, vz, omega;

  Eigen::Vector2d to_world(double lx, double lz) const {
    return {px + lx * c + lz * s, pz - lx * s + lz * c};
  }
  Eigen::Vector2d to_local(const Eigen::Vector2d& w) const {
    const double dx = w.x() - px, dz = w.y() - pz;
    return {c * dx - s * dz, s * dx + c * dz};
  }
  /// Velocity of the peg material point located at world position w.
  Eigen::Vector2d point_velocity(const Eigen::Vector2d& w) const {
    const double rx = w.x() - px, rz = w.y() - pz;
    return {vx + omega * rz, vz - omega * rx};
  }
};

inline PegFrame peg_frame(const RobotState& s) {
  const double th = s.x(4);
  return {s.x(0), s.x(2), th, std::cos(th), std::sin(th), s.x_dot(0), s.x_dot(2), s.x_dot(4)};
}

}  // namespace detail

/// Penalty contact wrench on the peg plus per-slot contact details.
/// `memory` carries friction state from the previous tick; `dt` advances it.
inline ContactResult contact_wrench(const RobotState& state, const TaskGeometry& g,
                                    const FrictionMemory& memory = {}, double dt = 1e-3) {
  const detail::PegFrame f = detail::peg_frame(state);
  const double w = g.peg_half_width;
  const double W = g.hole_half_width;
  const double zs = g.surface_height;
  const double floor_z = zs - g.hole_floor_depth;

  struct Candidate {
    ContactFeature feature = ContactFeature::none;
    Eigen::Vector2d point, normal;
    double depth = 0.0;
    double scale = 1.0;
  };
  std::array<Candidate, 4> cand;

  for (int slot = 0; slot < 2; ++slot) {
    const double side = slot == 0 ? -1.0 : 1.0;
    const Eigen::Vector2d c = f.to_world(side * w, 0.0);
    Candidate& k = cand[slot];
    k.point = c;
    k.scale = 0.5;
    if (std::abs(c.x()) < W) {
      if (c.y() < floor_z) {
        k = {ContactFeature::floor, c, {0.0, 1.0}, floor_z - c.y(), 0.5};
      }
    } else if (c.y() < zs) {
      const double d_surface = zs - c.y();
      const double d_wall = std::abs(c.x()) - W;
      if (d_wall < d_surface) {
        k = {ContactFeature::wall, c, {c.x() > 0.0 ? -1.0 : 1.0, 0.0}, d_wall, 0.5};
      } else {
        k = {ContactFeature::surface, c, {0.0, 1.0}, d_surface, 0.5};
      }
    }
  }
  for (int slot = 2; slot < 4; ++slot) {
    const Eigen::Vector2d rim(slot == 2 ? -W : W, zs);
    const Eigen::Vector2d l = f.to_local(rim);
    Candidate& k = cand[slot];
    k.point = rim;
    if (std::abs(l.x()) < w && l.y() > 0.0 && l.y() < g.peg_length) {
      const double side_depth = w - std::abs(l.x());
      if (side_depth < l.y()) {
        const double sgn = l.x() > 0.0 ? 1.0 : -1.0;
        k = {ContactFeature::peg_side, rim, {-sgn * f.c, sgn * f.s}, side_depth, 1.0};
      } else {
        k = {ContactFeature::peg_bottom, rim, {f.s, f.c}, l.y(), 1.0};
      }
    }
  }

  ContactResult out;
  for (int slot = 0; slot < 4; ++slot) {
    const Candidate& k = cand[slot];
    if (k.feature == ContactFeature::none || k.depth <= 0.0) continue;
    const double stiff = g.contact_stiffness * k.scale;
    const double damp = g.contact_damping * k.scale;
    const Eigen::Vector2d v = f.point_velocity(k.point);
    const Eigen::Vector2d tangent(-k.normal.y(), k.normal.x());
    ContactPoint cp;
    cp.slot = slot;
    cp.feature = k.feature;
    cp.point = k.point;
    cp.normal = k.normal;
    cp.penetration = k.depth;
    cp.penetration_rate = -v.dot(k.normal);
    cp.normal_force = std::clamp(stiff * k.depth + damp * cp.penetration_rate, 0.0, kMaxContactForce);

    const double vt = v.dot(tangent);
    const double limit = g.friction_coeff * cp.normal_force;
    double z = memory.feature[slot] == k.feature ? memory.deflection[slot] : 0.0;
    z += vt * dt;
    double ft = -stiff * z - damp * vt;
    if (std::abs(ft) > limit) {
      ft = ft > 0.0 ? limit : -limit;
      z = -ft / stiff;
    }
    cp.tangential_force = ft;
    cp.force = cp.normal_force * k.normal + ft * tangent;
    out.memory.deflection[slot] = z;
    out.memory.feature[slot] = k.feature;
    out.flags |= 1u << slot;

    const double rx = k.point.x() - f.px, rz = k.point.y() - f.pz;
    out.wrench(0) += cp.force.x();
    out.wrench(2) += cp.force.y();
    out.wrench(4) += rz * cp.force.x() - rx * cp.force.y();
    out.points.push_back(cp);
  }
  return out;
}

/// 18-channel sensor vector: external wrench, internal wrench, EE twist.
struct Observation {
  Wrench f_ext = Wrench::Zero();
  Wrench f_in = Wrench::Zero();
  Vec6 ee_twist = Vec6::Zero();

  static constexpr int kDim = 18;

  Eigen::Matrix<double, kDim, 1> to_vector() const {
    Eigen::Matrix<double, kDim, 1> v;
    v << f_ext, f_in, ee_twist;
    return v;
  }
  static Observation from_vector(const Eigen::Ref<const Vec>& v) {
    require_dim(v.size(), kDim, "Observation::from_vector");
    return {v.segment<6>(0), v.segment<6>(6), v.segment<6>(12)};
  }
  bool operator==(const Observation&) const = default;
};

struct EnvConfig {
  double dt = 1e-3;
  double timeout = 10.0;  // s
  double max_success_tilt = 0.05;  // rad
  /// Abort when the EE strays further than this from the goal pose [m].
  double safety_distance = 0.05;
  WrenchLimits limits{};
  /// Depth of the impedance set point below the hole entrance [m]. Zero puts
  /// x_d at the hole's pose; insertion is then driven by the feed-forward force.
  double goal_depth = 0.0;
  double obs_noise_std = 0.0;
  // Initial pose randomization.
  double init_lateral_range = 0.002;
  double init_tilt_range = 0.03;
  double init_clearance_height = 0.0005;
};

struct EnvState {
  RobotState robot;
  FrictionMemory friction;
  long tick = 0;
  std::uint32_t contact_flags = 0;
};

enum class Termination { inserted, timeout, safety_abort };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::inserted: return "inserted";
    case Termination::timeout: return "timeout";
    case Termination::safety_abort: return "safety_abort";
  }
  return "?";
}

struct EpisodeOutcome {
  bool success = false;
  double duration = 0.0;
  Termination reason = Termination::timeout;
  bool operator==(const EpisodeOutcome&) const = default;
};

/// Desired pose for a task: hole centre, upright, goal_depth below the entrance.
inline ControllerGains task_gains(const TaskGeometry& g, const DeskPlant& plant,
                                  const EnvConfig& cfg = {}) {
  ControllerGains gains = ControllerGains::defaults(plant.mass_diagonal());
  gains.x_d.setZero();
  gains.x_d(2) = g.surface_height - cfg.goal_depth;
  return gains;
}

/// Pose of a peg resting init_clearance_height above the surface with the
/// given lateral offset and tilt.
inline EnvState initial_state(const TaskGeometry& g, double lateral, double tilt,
                              const EnvConfig& cfg, const DeskPlant& plant = {}) {
  Vec q = Vec::Zero(6);
  q(0) = lateral;
  q(2) = g.surface_height + cfg.init_clearance_height + g.peg_half_width * std::abs(std::sin(tilt));
  q(4) = tilt;
  return {make_state(plant, q, Vec::Zero(6)), {}, 0, 0};
}

template <typename Rng>
EnvState random_initial_state(const TaskGeometry& g, const EnvConfig& cfg, Rng& rng,
                              const DeskPlant& plant = {}) {
  std::uniform_real_distribution<double> lat(-cfg.init_lateral_range, cfg.init_lateral_range);
  std::uniform_real_distribution<double> tilt(-cfg.init_tilt_range, cfg.init_tilt_range);
  const double l = lat(rng);
  const double t = tilt(rng);
  return initial_state(g, l, t, cfg, plant);
}

struct StepResult {
  EnvState state;
  Observation obs;
  Wrench applied_ff = Wrench::Zero();  // F_ff after the safety clamp
  ContactResult contact;
};

namespace detail {

template <typename Rng>
void add_sensor_noise(Observation& o, double std, Rng* rng) {
  if (std <= 0.0 || rng == nullptr) return;
  std::normal_distribution<double> n(0.0, std);
  for (int i = 0; i < 6; ++i) {
    o.f_ext(i) += n(*rng);
    o.f_in(i) += n(*rng);
    o.ee_twist(i) += n(*rng);
  }
}

}  // namespace detail

/// One 1 kHz tick: contact -> tau_ext -> impedance law -> dynamics -> internal
/// wrench -> observation. The observation's external and internal wrench are
/// the ones acting during this tick; the twist is the post-step twist.
template <typename Rng = std::mt19937_64>
StepResult env_step(const EnvState& s, const Wrench& f_ff, const ControllerGains& gains,
                    const TaskGeometry& g, const EnvConfig& cfg, const DeskPlant& plant = {},
                    Rng* noise_rng = nullptr) {
  StepResult r;
  r.contact = contact_wrench(s.robot, g, s.friction, cfg.dt);
  const Vec tau_ext = plant.jacobian(s.robot.q).transpose() * r.contact.wrench;
  r.applied_ff = clamp_wrench(f_ff, cfg.limits);
  const Vec tau_m = impedance_torque(s.robot, gains, r.applied_ff, plant);
  r.state.robot = dynamics_step(s.robot, tau_m, tau_ext, plant, cfg.dt);
  r.state.friction = r.contact.memory;
  r.state.tick = s.tick + 1;
  r.state.contact_flags = r.contact.flags;
  r.obs.f_ext = r.contact.wrench;
  r.obs.f_in = internal_wrench(tau_m, s.robot, plant);
  r.obs.ee_twist = r.state.robot.x_dot;
  detail::add_sensor_noise(r.obs, cfg.obs_noise_std, noise_rng);
  return r;
}

/// Observation at an episode's first tick, before any command is applied.
inline Observation initial_observation(const EnvState& s, const ControllerGains& gains,
                                       const TaskGeometry& g, const DeskPlant& plant = {}) {
  Observation o;
  o.f_ext = contact_wrench(s.robot, g, s.friction).wrench;
  o.f_in = internal_wrench(impedance_torque(s.robot, gains, Wrench::Zero(), plant), s.robot, plant);
  o.ee_twist = s.robot.x_dot;
  return o;
}

/// Insertion depth of the peg tip below the surface.
inline double insertion_depth(const EnvState& s, const TaskGeometry& g) {
  return g.surface_height - s.robot.x(2);
}

/// Success when the tip reached the target depth inside the clearance band
/// and nearly upright; timeout at the limit; otherwise still running.
inline std::optional<EpisodeOutcome> check_outcome(const EnvState& s, const TaskGeometry& g,
                                                   double elapsed, double timeout,
                                                   double max_tilt = 0.05) {
  const bool deep = insertion_depth(s, g) >= g.hole_depth_target;
  const bool centred = std::abs(s.robot.x(0)) < g.clearance;
  const bool upright = std::abs(s.robot.x(4)) < max_tilt;
  if (deep && centred && upright) return EpisodeOutcome{true, elapsed, Termination::inserted};
  if (elapsed >= timeout) return EpisodeOutcome{false, timeout, Termination::timeout};
  return std::nullopt;
}

/// Safety abort: non-finite state or EE beyond the safety distance from goal.
inline bool safety_violation(const EnvState& s, const ControllerGains& gains, const EnvConfig& cfg) {
  if (!s.robot.x.allFinite() || !s.robot.x_dot.allFinite()) return true;
  return (s.robot.x.head<3>() - gains.x_d.head<3>()).norm() > cfg.safety_distance;
}

}  // namespace tacdiff
