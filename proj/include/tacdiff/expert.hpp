// Scripted primitive-switching insertion expert used as the demonstration
// source: wiggle to align, push to insert, larger wiggle to recover when the
// insertion stalls. The expert only reads the 18-channel observation and its
// own previous command; pose estimates come from inverting the impedance law
// (f_in - F_ff = K e - D x_dot).
#pragma once

#include "tacdiff/core.hpp"
#include "tacdiff/dataset.hpp"
#include "tacdiff/environment.hpp"
#include "tacdiff/plant.hpp"

#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace tacdiff {

enum class ExpertMode { align_wiggle, push, stuck_recovery };

inline std::string_view to_string(ExpertMode m) {
  switch (m) {
    case ExpertMode::align_wiggle: return "align_wiggle";
    case ExpertMode::push: return "push";
    case ExpertMode::stuck_recovery: return "stuck_recovery";
  }
  return "?";
}

struct ExpertConfig {
  double push_force = 15.0;        // N, downward in push
  double down_bias = 10.0;         // N, downward while wiggling
  double wiggle_force = 4.0;       // N, lateral amplitude
  double wiggle_torque = 0.4;      // N m, tilt amplitude
  double wiggle_hz = 4.0;
  double recovery_gain = 2.0;      // amplitude multiplier in stuck_recovery
  double centering_force = 12.0;   // N, lateral push toward the hole
  /// Contact torque [N m] at which centring saturates. With the peg offset by
  /// more than the clearance only one side is supported, so the sign of the
  /// external tilt torque points toward the hole.
  double centering_torque_band = 0.02;
  double aligned_lateral = 3e-4;   // m
  double aligned_tilt = 0.01;      // rad
  double aligned_contact_force = 2.0;  // N, lateral external force
  long stuck_window = 500;         // ticks
  double stuck_progress = 1e-4;    // m of depth over the window
  long recovery_ticks = 500;
  double dt = 1e-3;
  WrenchLimits limits{};
};

/// Phase machine state. `depth_window` is a ring of the most recent depth
/// estimates, one per tick since the phase was entered (at most stuck_window).
struct ExpertPhase {
  ExpertMode mode = ExpertMode::align_wiggle;
  long phase_entry_tick = 0;
  std::vector<double> depth_window;
  std::size_t window_head = 0;
  double wiggle_phase = 0.0;  // rad offset of the sinusoid
  Wrench last_command = Wrench::Zero();
};

/// Pose error e = x_d - x recovered from the internal wrench.
struct ExpertEstimate {
  double lateral = 0.0;  // EE x relative to the hole centre [m]
  double tilt = 0.0;     // rad
  double depth = 0.0;    // below the surface [m]
};

inline ExpertEstimate estimate_pose(const Observation& o, const Wrench& last_command,
                                    const ControllerGains& gains, double surface_height) {
  const Vec6 spring = o.f_in - last_command + gains.damping.cwiseProduct(o.ee_twist);
  Vec6 e = Vec6::Zero();
  for (int i = 0; i < 6; ++i)
    if (gains.stiffness(i) > 0.0) e(i) = spring(i) / gains.stiffness(i);
  const Vec6 x = gains.x_d - e;
  return {x(0), x(4), surface_height - x(2)};
}

class ScriptedExpert {
 public:
  ScriptedExpert(ExpertConfig cfg, ControllerGains gains, double surface_height)
      : cfg_(cfg), gains_(std::move(gains)), surface_(surface_height) {}

  template <typename Rng>
  ExpertPhase start(Rng& rng) const {
    ExpertPhase p;
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    p.wiggle_phase = u(rng);
    return p;
  }

  /// One 1 kHz decision. Returns the (clamped) command and updates `phase`.
  template <typename Rng>
  Wrench act(const Observation& o, ExpertPhase& phase, long tick, Rng& rng) const {
    const ExpertEstimate est = estimate_pose(o, phase.last_command, gains_, surface_);
    push_depth(phase, est.depth);

    switch (phase.mode) {
      case ExpertMode::align_wiggle:
        if (std::abs(est.lateral) < cfg_.aligned_lateral && std::abs(est.tilt) < cfg_.aligned_tilt &&
            std::abs(o.f_ext(0)) < cfg_.aligned_contact_force) {
          enter(phase, ExpertMode::push, tick, est.depth);
        } else if (stalled(phase)) {
          enter(phase, ExpertMode::stuck_recovery, tick, est.depth);
          std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
          phase.wiggle_phase = u(rng);
        }
        break;
      case ExpertMode::push:
        if (stalled(phase)) {
          enter(phase, ExpertMode::stuck_recovery, tick, est.depth);
          std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
          phase.wiggle_phase = u(rng);
        }
        break;
      case ExpertMode::stuck_recovery:
        if (tick - phase.phase_entry_tick >= cfg_.recovery_ticks) {
          enter(phase, ExpertMode::align_wiggle, tick, est.depth);
        }
        break;
    }

    Wrench f = Wrench::Zero();
    const double t = static_cast<double>(tick) * cfg_.dt;
    const double s = std::sin(2.0 * std::numbers::pi * cfg_.wiggle_hz * t + phase.wiggle_phase);
    if (phase.mode == ExpertMode::push) {
      f(2) = -cfg_.push_force;
    } else {
      const double gain = phase.mode == ExpertMode::stuck_recovery ? cfg_.recovery_gain : 1.0;
      const double centre =
          cfg_.centering_force * std::clamp(o.f_ext(4) / cfg_.centering_torque_band, -1.0, 1.0);
      f(0) = centre + gain * cfg_.wiggle_force * s;
      f(2) = -cfg_.down_bias;
      f(4) = gain * cfg_.wiggle_torque * s;
    }
    f = clamp_wrench(f, cfg_.limits);
    phase.last_command = f;
    return f;
  }

  const ExpertConfig& config() const { return cfg_; }
  const ControllerGains& gains() const { return gains_; }

 private:
  void push_depth(ExpertPhase& p, double depth) const {
    const auto cap = static_cast<std::size_t>(cfg_.stuck_window);
    if (p.depth_window.size() < cap) {
      p.depth_window.push_back(depth);
    } else {
      p.depth_window[p.window_head] = depth;
      p.window_head = (p.window_head + 1) % cap;
    }
  }

  /// Window full and depth advanced less than stuck_progress across it.
  bool stalled(const ExpertPhase& p) const {
    const auto cap = static_cast<std::size_t>(cfg_.stuck_window);
    if (p.depth_window.size() < cap) return false;
    const double oldest = p.depth_window[p.window_head];
    const double newest = p.depth_window[(p.window_head + cap - 1) % cap];
    return newest - oldest < cfg_.stuck_progress;
  }

  static void enter(ExpertPhase& p, ExpertMode m, long tick, double depth) {
    p.mode = m;
    p.phase_entry_tick = tick;
    p.depth_window.clear();
    p.window_head = 0;
    p.depth_window.push_back(depth);
  }

  ExpertConfig cfg_;
  ControllerGains gains_;
  double surface_;
};

struct CollectConfig {
  EnvConfig env{};
  ExpertConfig expert{};
  /// Extra attempts allowed beyond n_episodes before giving up.
  int retry_budget = 50;
};

/// Runs one expert episode. Row t holds (o_t, a_t); a_t produces o_{t+1}.
/// The episode stops at the first terminal outcome.
inline EpisodeRecord run_expert_episode(const TaskGeometry& g, std::uint64_t seed,
                                        const CollectConfig& cfg = {}) {
  const DeskPlant plant;
  const ControllerGains gains = task_gains(g, plant, cfg.env);
  const ScriptedExpert expert(cfg.expert, gains, g.surface_height);
  std::mt19937_64 rng(seed);
  EnvState s = random_initial_state(g, cfg.env, rng, plant);
  Observation o = initial_observation(s, gains, g, plant);
  ExpertPhase phase = expert.start(rng);
  EpisodeRecord rec;
  rec.task_name = g.name;
  rec.seed = seed;
  for (long t = 0;; ++t) {
    const Wrench a = expert.act(o, phase, t, rng);
    rec.append(o, a);
    const StepResult r = env_step(s, a, gains, g, cfg.env, plant, &rng);
    s = r.state;
    o = r.obs;
    const double elapsed = static_cast<double>(s.tick) * cfg.env.dt;
    if (safety_violation(s, gains, cfg.env)) {
      rec.outcome = {false, elapsed, Termination::safety_abort};
      break;
    }
    if (auto out = check_outcome(s, g, elapsed, cfg.env.timeout, cfg.env.max_success_tilt)) {
      rec.outcome = *out;
      break;
    }
  }
  return rec;
}

/// Collects `n_episodes` successful expert demonstrations. Attempt k uses
/// seed derive_seed(seed, k); failed attempts are dropped.
inline std::vector<EpisodeRecord> collect_demonstrations(int n_episodes, const TaskGeometry& g,
                                                         std::uint64_t seed,
                                                         const CollectConfig& cfg = {},
                                                         int* attempts_out = nullptr) {
  if (n_episodes < 1) throw RangeError("collect_demonstrations: n_episodes must be >= 1");
  g.validate();
  std::vector<EpisodeRecord> out;
  const long max_attempts = static_cast<long>(n_episodes) + std::max(0, cfg.retry_budget);
  long k = 0;
  for (; k < max_attempts && static_cast<int>(out.size()) < n_episodes; ++k) {
    EpisodeRecord r = run_expert_episode(g, derive_seed(seed, static_cast<std::uint64_t>(k)), cfg);
    if (r.outcome.success) out.push_back(std::move(r));
  }
  if (attempts_out) *attempts_out = static_cast<int>(k);
  if (static_cast<int>(out.size()) < n_episodes) {
    throw Error("collect_demonstrations: only " + std::to_string(out.size()) + " of " +
                std::to_string(n_episodes) + " episodes succeeded within the retry budget");
  }
  return out;
}

}  // namespace tacdiff
