// Closed-loop evaluation: DDPM policy -> (latency) -> DS filter -> impedance
// controller -> plant, plus report aggregation and inference benchmarking.
#pragma once

#include "tacdiff/dataset.hpp"
#include "tacdiff/ddpm.hpp"
#include "tacdiff/ds_filter.hpp"
#include "tacdiff/environment.hpp"
#include "tacdiff/expert.hpp"
#include "tacdiff/model_io.hpp"
#include "tacdiff/noise_net.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

namespace tacdiff {

enum class LatencyMode { simulated, live };

struct LatencyModel {
  int inference_period_ticks = 7;
  LatencyMode mode = LatencyMode::simulated;

  /// round(1000 / hz) ticks, at least one.
  static LatencyModel from_hz(double hz, LatencyMode mode = LatencyMode::simulated) {
    if (!(hz > 0.0) || !std::isfinite(hz)) throw RangeError("inference frequency must be positive");
    return {std::max(1, static_cast<int>(std::lround(1000.0 / hz))), mode};
  }
  void validate() const {
    if (inference_period_ticks < 1) throw RangeError("inference period must be >= 1 tick");
  }
};

/// Which observation accompanies o_curr at inference time.
enum class PrevObsMode {
  previous_inference,  // the observation one inference period earlier
  previous_tick,       // the observation one control tick earlier (training convention)
};

inline std::string_view to_string(PrevObsMode m) {
  return m == PrevObsMode::previous_inference ? "previous_inference" : "previous_tick";
}

inline PrevObsMode parse_prev_obs(std::string_view s) {
  if (s == "previous_inference") return PrevObsMode::previous_inference;
  if (s == "previous_tick") return PrevObsMode::previous_tick;
  throw RangeError("unknown previous-observation mode '" + std::string(s) + "'");
}

/// Trained bundle wrapped as an observation -> physical wrench policy.
class DiffusionPolicy {
 public:
  explicit DiffusionPolicy(ModelBundle bundle)
      : bundle_(std::move(bundle)), sched_(bundle_.schedule.build()) {
    require_dim(bundle_.net.obs_dim, 2 * kObsDim, "policy conditioning width");
    require_dim(bundle_.net.action_dim, kActionDim, "policy action width");
  }

  Vec condition(const Observation& curr, const Observation& prev) const {
    Vec c(2 * kObsDim);
    c.head(kObsDim) = normalize(curr.to_vector(), bundle_.norm.obs_mean, bundle_.norm.obs_std);
    c.tail(kObsDim) = normalize(prev.to_vector(), bundle_.norm.obs_mean, bundle_.norm.obs_std);
    return c;
  }

  template <typename Rng>
  Wrench act(const Observation& curr, const Observation& prev, Rng& rng,
             std::vector<DiffusedAction>* trace = nullptr) const {
    const Vec z = sample_normalized(condition(curr, prev), rng, trace);
    return denormalize(z, bundle_.norm.action_mean, bundle_.norm.action_std);
  }

  template <typename Rng>
  Vec sample_normalized(const Vec& cond, Rng& rng, std::vector<DiffusedAction>* trace = nullptr) const {
    auto net = [this](const Vec& o, const Vec& a, int tau) { return forward(bundle_.params, o, a, tau); };
    return sample(cond, net, sched_, kActionDim, rng,
                  SamplerOptions{bundle_.schedule.final_step_noise}, trace);
  }

  const ModelBundle& bundle() const { return bundle_; }
  const VarianceSchedule& schedule() const { return sched_; }

 private:
  ModelBundle bundle_;
  VarianceSchedule sched_;
};

struct RolloutConfig {
  EnvConfig env{};
  FilterConfig filter{};
  LatencyModel latency{};
  PrevObsMode prev_obs = PrevObsMode::previous_inference;
  ExpertConfig expert{};  // used by the expert baseline policy
};

struct EpisodeReport {
  int pose = 0;
  int trial = 0;
  std::uint64_t pose_seed = 0;
  std::uint64_t trial_seed = 0;
  double init_lateral = 0.0;
  double init_tilt = 0.0;
  EpisodeOutcome outcome;
  long inferences = 0;
  std::string detail;  // diagnostic for aborts caused by non-finite values
};

/// Per-tick record of a rollout, filled when requested.
struct RolloutTrace {
  std::vector<Wrench> policy_output;  // F_df held at each tick
  std::vector<Wrench> feed_forward;   // F_ff after the filter
  std::vector<Vec6> pose;
  std::vector<Observation> observation;  // o_t seen at tick t
  std::vector<Wrench> executed;          // F_ff after the safety clamp
  std::vector<std::uint32_t> contact_flags;
};

namespace detail {

inline double elapsed_s(const EnvState& s, const EnvConfig& cfg) {
  return static_cast<double>(s.tick) * cfg.dt;
}

/// Shared tick body: steps the plant and returns a terminal outcome if any.
inline std::optional<EpisodeOutcome> advance(EnvState& s, Observation& o, const Wrench& f_ff,
                                             const ControllerGains& gains, const TaskGeometry& g,
                                             const RolloutConfig& cfg, const DeskPlant& plant,
                                             std::mt19937_64& noise_rng,
                                             RolloutTrace* trace = nullptr) {
  const StepResult r = env_step(s, f_ff, gains, g, cfg.env, plant, &noise_rng);
  if (trace) {
    trace->executed.push_back(r.applied_ff);
    trace->contact_flags.push_back(r.contact.flags);
  }
  s = r.state;
  o = r.obs;
  const double t = elapsed_s(s, cfg.env);
  if (safety_violation(s, gains, cfg.env)) return EpisodeOutcome{false, t, Termination::safety_abort};
  return check_outcome(s, g, t, cfg.env.timeout, cfg.env.max_success_tilt);
}

}  // namespace detail

/// Simulated-latency rollout. Inference is launched every period ticks on
/// (o_t, o_prev); its result becomes the held command at t + period. The
/// filter runs every tick, so F_ff is always defined (zero command before
/// the first result arrives).
inline EpisodeReport run_policy_episode(const DiffusionPolicy& policy, const TaskGeometry& g,
                                        std::uint64_t pose_seed, std::uint64_t trial_seed,
                                        const RolloutConfig& cfg, RolloutTrace* trace = nullptr) {
  cfg.latency.validate();
  cfg.filter.validate();
  const DeskPlant plant;
  const ControllerGains gains = task_gains(g, plant, cfg.env);
  std::mt19937_64 pose_rng(pose_seed);
  std::mt19937_64 policy_rng(trial_seed);
  std::mt19937_64 noise_rng(mix_seed(trial_seed));
  EnvState s = random_initial_state(g, cfg.env, pose_rng, plant);
  EpisodeReport rep;
  rep.pose_seed = pose_seed;
  rep.trial_seed = trial_seed;
  rep.init_lateral = s.robot.x(0);
  rep.init_tilt = s.robot.x(4);

  const int period = cfg.latency.inference_period_ticks;
  std::vector<Observation> history{initial_observation(s, gains, g, plant)};
  Observation o = history.front();
  FilterState<6> fs;
  Wrench held = Wrench::Zero();
  std::optional<std::pair<long, Wrench>> pending;

  for (long t = 0;; ++t) {
    if (pending && pending->first <= t) {
      held = pending->second;
      pending.reset();
    }
    if (t % period == 0) {
      const long lag = cfg.prev_obs == PrevObsMode::previous_inference ? period : 1;
      const Observation& prev = history[static_cast<std::size_t>(std::max(0L, t - lag))];
      try {
        pending = {t + period, policy.act(o, prev, policy_rng)};
      } catch (const NonFiniteError& e) {
        rep.outcome = {false, detail::elapsed_s(s, cfg.env), Termination::safety_abort};
        rep.detail = e.what();
        return rep;
      }
      ++rep.inferences;
    }
    fs = filter_step(fs, held, cfg.filter);
    if (trace) {
      trace->policy_output.push_back(held);
      trace->feed_forward.push_back(fs.f_ff);
      trace->pose.push_back(s.robot.x);
      trace->observation.push_back(o);
    }
    std::optional<EpisodeOutcome> out;
    try {
      out = detail::advance(s, o, fs.f_ff, gains, g, cfg, plant, noise_rng, trace);
    } catch (const NonFiniteError& e) {
      rep.outcome = {false, detail::elapsed_s(s, cfg.env), Termination::safety_abort};
      rep.detail = e.what();
      return rep;
    }
    history.push_back(o);
    if (out) {
      rep.outcome = *out;
      return rep;
    }
  }
}

/// Expert baseline: the scripted expert at 1 kHz with no latency or filter,
/// exactly as it acts when demonstrating.
inline EpisodeReport run_expert_eval_episode(const TaskGeometry& g, std::uint64_t pose_seed,
                                             std::uint64_t trial_seed, const RolloutConfig& cfg) {
  const DeskPlant plant;
  const ControllerGains gains = task_gains(g, plant, cfg.env);
  const ScriptedExpert expert(cfg.expert, gains, g.surface_height);
  std::mt19937_64 pose_rng(pose_seed);
  std::mt19937_64 rng(trial_seed);
  std::mt19937_64 noise_rng(mix_seed(trial_seed));
  EnvState s = random_initial_state(g, cfg.env, pose_rng, plant);
  EpisodeReport rep;
  rep.pose_seed = pose_seed;
  rep.trial_seed = trial_seed;
  rep.init_lateral = s.robot.x(0);
  rep.init_tilt = s.robot.x(4);
  Observation o = initial_observation(s, gains, g, plant);
  ExpertPhase phase = expert.start(rng);
  for (long t = 0;; ++t) {
    const Wrench a = expert.act(o, phase, t, rng);
    if (auto out = detail::advance(s, o, a, gains, g, cfg, plant, noise_rng)) {
      rep.outcome = *out;
      return rep;
    }
  }
}

/// Live mode: one inference thread samples continuously on the newest
/// observation pair while the control thread ticks at wall-clock 1 kHz and
/// picks up whatever result was published last. Not deterministic.
inline EpisodeReport run_live_episode(const DiffusionPolicy& policy, const TaskGeometry& g,
                                      std::uint64_t pose_seed, std::uint64_t trial_seed,
                                      const RolloutConfig& cfg) {
  cfg.filter.validate();
  const DeskPlant plant;
  const ControllerGains gains = task_gains(g, plant, cfg.env);
  std::mt19937_64 pose_rng(pose_seed);
  std::mt19937_64 noise_rng(mix_seed(trial_seed));
  EnvState s = random_initial_state(g, cfg.env, pose_rng, plant);
  EpisodeReport rep;
  rep.pose_seed = pose_seed;
  rep.trial_seed = trial_seed;
  rep.init_lateral = s.robot.x(0);
  rep.init_tilt = s.robot.x(4);

  struct ObsPair {
    Observation curr, prev;
  };
  LatestValueSlot<ObsPair> obs_slot;
  LatestValueSlot<Wrench> action_slot;
  std::atomic<long> inferences{0};
  std::atomic<bool> failed{false};
  Observation o = initial_observation(s, gains, g, plant);
  obs_slot.publish({o, o});

  std::jthread worker([&](std::stop_token stop) {
    std::mt19937_64 rng(trial_seed);
    std::uint64_t seen = 0;
    std::optional<ObsPair> latest;
    while (!stop.stop_requested()) {
      if (auto p = obs_slot.take_if_newer(seen)) latest = *p;
      if (!latest) {
        std::this_thread::yield();
        continue;
      }
      try {
        action_slot.publish(policy.act(latest->curr, latest->prev, rng));
        ++inferences;
      } catch (const NonFiniteError&) {
        failed = true;
        return;
      }
    }
  });

  FilterState<6> fs;
  Wrench held = Wrench::Zero();
  std::uint64_t seen = 0;
  Observation last_inference_obs = o;
  const auto tick = std::chrono::microseconds(static_cast<long>(std::lround(cfg.env.dt * 1e6)));
  auto next = std::chrono::steady_clock::now();
  for (;;) {
    if (failed) {
      rep.outcome = {false, detail::elapsed_s(s, cfg.env), Termination::safety_abort};
      break;
    }
    if (auto a = action_slot.take_if_newer(seen)) held = *a;
    fs = filter_step(fs, held, cfg.filter);
    const Observation before = o;
    std::optional<EpisodeOutcome> out = detail::advance(s, o, fs.f_ff, gains, g, cfg, plant, noise_rng);
    const Observation& prev = cfg.prev_obs == PrevObsMode::previous_tick ? before : last_inference_obs;
    obs_slot.publish({o, prev});
    if (s.tick % std::max(1, cfg.latency.inference_period_ticks) == 0) last_inference_obs = o;
    if (out) {
      rep.outcome = *out;
      break;
    }
    next += tick;
    std::this_thread::sleep_until(next);
  }
  worker.request_stop();
  worker.join();
  rep.inferences = inferences;
  return rep;
}

// ---------------------------------------------------------------------------
// Training pipeline

struct PipelineConfig {
  NetConfig net{};
  TrainConfig train{};
  ScheduleConfig schedule{};
  double split_fraction = 0.8;
  std::uint64_t split_seed = 0;
  int stride = 1;
  int prev_lag = 1;
};

struct TrainedPolicy {
  ModelBundle bundle;
  std::vector<EpochLog> history;
  std::vector<EpisodeRecord> validation;
};

/// Episode split, statistics from the training side only, then train().
inline TrainedPolicy train_policy(const std::vector<EpisodeRecord>& records, const PipelineConfig& cfg,
                                  const EpochCallback& on_epoch = {}) {
  auto [tr, va] = split(records, cfg.split_fraction, cfg.split_seed);
  const NormStats stats = compute_norm_stats(tr);
  const TrainingSet ts = build_training_pairs(tr, stats, cfg.stride, cfg.prev_lag);
  const TrainingSet vs = build_training_pairs(va, stats, cfg.stride, cfg.prev_lag);
  TrainResult res = train(ts, &vs, cfg.net, cfg.train, cfg.schedule.build(), on_epoch);
  return {ModelBundle{cfg.net, cfg.schedule, stats, std::move(res.params)}, std::move(res.history),
          std::move(va)};
}

// ---------------------------------------------------------------------------
// Aggregation

/// Linear-interpolation percentile of `v` (q in [0, 1]); NaN when empty.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct EvalReport {
  std::string task;
  std::string policy;
  int poses = 0;
  int trials_per_pose = 0;
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;       // %
  double pose_success_rate = 0.0;  // % of poses where every trial succeeded
  // Execution-time statistics over successful trials [s]; NaN without successes.
  double time_median = std::numeric_limits<double>::quiet_NaN();
  double time_p25 = std::numeric_limits<double>::quiet_NaN();
  double time_p75 = std::numeric_limits<double>::quiet_NaN();
  double time_mean = std::numeric_limits<double>::quiet_NaN();
  double efficiency = 0.0;  // success_rate / time_mean, 0 without successes
  std::vector<EpisodeReport> episodes;
  std::string fingerprint;
};

inline EvalReport aggregate(std::string task, std::string policy, int poses, int trials_per_pose,
                            std::vector<EpisodeReport> episodes) {
  EvalReport r;
  r.task = std::move(task);
  r.policy = std::move(policy);
  r.poses = poses;
  r.trials_per_pose = trials_per_pose;
  r.trials = static_cast<int>(episodes.size());
  std::vector<double> times;
  std::vector<int> pose_ok(static_cast<std::size_t>(poses), 0);
  for (const auto& e : episodes) {
    if (e.outcome.success) {
      ++r.successes;
      times.push_back(e.outcome.duration);
      ++pose_ok[static_cast<std::size_t>(e.pose)];
    }
  }
  if (r.trials > 0) r.success_rate = 100.0 * r.successes / r.trials;
  if (poses > 0) {
    const auto full = std::count(pose_ok.begin(), pose_ok.end(), trials_per_pose);
    r.pose_success_rate = 100.0 * static_cast<double>(full) / poses;
  }
  if (!times.empty()) {
    r.time_median = percentile(times, 0.5);
    r.time_p25 = percentile(times, 0.25);
    r.time_p75 = percentile(times, 0.75);
    double sum = 0.0;
    for (double t : times) sum += t;
    r.time_mean = sum / static_cast<double>(times.size());
    r.efficiency = r.success_rate / r.time_mean;
  }
  r.episodes = std::move(episodes);
  return r;
}

inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const RolloutConfig& c) {
  return {{"dt", c.env.dt},
          {"timeout", c.env.timeout},
          {"max_success_tilt", c.env.max_success_tilt},
          {"safety_distance", c.env.safety_distance},
          {"max_force", c.env.limits.max_force},
          {"max_torque", c.env.limits.max_torque},
          {"goal_depth", c.env.goal_depth},
          {"obs_noise_std", c.env.obs_noise_std},
          {"init_lateral_range", c.env.init_lateral_range},
          {"init_tilt_range", c.env.init_tilt_range},
          {"init_clearance_height", c.env.init_clearance_height},
          {"filter_enabled", c.filter.enabled},
          {"filter_alpha", c.filter.alpha},
          {"filter_beta", c.filter.beta},
          {"filter_time_unit", c.filter.time_unit == FilterTimeUnit::ticks ? "ticks" : "seconds"},
          {"inference_period_ticks", c.latency.inference_period_ticks},
          {"latency_mode", c.latency.mode == LatencyMode::simulated ? "simulated" : "live"},
          {"prev_obs", std::string(to_string(c.prev_obs))}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : r.episodes) {
    eps.push_back({{"pose", e.pose},
                   {"trial", e.trial},
                   {"pose_seed", e.pose_seed},
                   {"trial_seed", e.trial_seed},
                   {"init_lateral", e.init_lateral},
                   {"init_tilt", e.init_tilt},
                   {"success", e.outcome.success},
                   {"duration", e.outcome.duration},
                   {"termination", std::string(to_string(e.outcome.reason))},
                   {"inferences", e.inferences},
                   {"detail", e.detail}});
  }
  return {{"task", r.task},
          {"policy", r.policy},
          {"poses", r.poses},
          {"trials_per_pose", r.trials_per_pose},
          {"trials", r.trials},
          {"successes", r.successes},
          {"success_rate", r.success_rate},
          {"pose_success_rate", r.pose_success_rate},
          {"time_median", number_or_null(r.time_median)},
          {"time_p25", number_or_null(r.time_p25)},
          {"time_p75", number_or_null(r.time_p75)},
          {"time_mean", number_or_null(r.time_mean)},
          {"efficiency", r.efficiency},
          {"fingerprint", r.fingerprint},
          {"episodes", eps}};
}

/// Hex FNV-1a of a JSON document's canonical dump.
inline std::string fingerprint(const nlohmann::json& j) {
  const std::string s = j.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
  return buf;
}

struct EvalSpec {
  int poses = 50;
  int trials_per_pose = 2;
  std::uint64_t seed = 0;
  int jobs = 1;  // worker threads across episodes; results do not depend on it
};

/// Pose i uses derive_seed(seed, i); trial j of pose i uses
/// derive_seed(seed, i, j + 1). Both policies and filter settings therefore
/// see the same initial poses and sampling streams for equal seeds.
template <typename EpisodeFn>
std::vector<EpisodeReport> run_trials(const EvalSpec& spec, EpisodeFn&& fn) {
  if (spec.poses < 1 || spec.trials_per_pose < 1) throw RangeError("eval needs >= 1 pose and trial");
  const int n = spec.poses * spec.trials_per_pose;
  std::vector<EpisodeReport> out(static_cast<std::size_t>(n));
  auto work = [&](int k) {
    const int i = k / spec.trials_per_pose;
    const int j = k % spec.trials_per_pose;
    EpisodeReport r = fn(derive_seed(spec.seed, static_cast<std::uint64_t>(i)),
                         derive_seed(spec.seed, static_cast<std::uint64_t>(i),
                                     static_cast<std::uint64_t>(j + 1)));
    r.pose = i;
    r.trial = j;
    out[static_cast<std::size_t>(k)] = std::move(r);
  };
  const int jobs = std::clamp(spec.jobs, 1, n);
  if (jobs == 1) {
    for (int k = 0; k < n; ++k) work(k);
  } else {
    std::atomic<int> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (int k = next++; k < n; k = next++) work(k);
      });
    }
  }
  return out;
}

inline EvalReport evaluate_policy(const DiffusionPolicy& policy, const TaskGeometry& g,
                                  const RolloutConfig& cfg, const EvalSpec& spec,
                                  const std::string& label = "ddpm") {
  auto eps = run_trials(spec, [&](std::uint64_t ps, std::uint64_t ts) {
    return cfg.latency.mode == LatencyMode::live ? run_live_episode(policy, g, ps, ts, cfg)
                                                 : run_policy_episode(policy, g, ps, ts, cfg);
  });
  EvalReport r = aggregate(g.name, label, spec.poses, spec.trials_per_pose, std::move(eps));
  const auto& p = policy.bundle().params;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : p.layers) {
    h = fnv1a(l.W.data(), sizeof(double) * static_cast<std::size_t>(l.W.size()), h);
    h = fnv1a(l.b.data(), sizeof(double) * static_cast<std::size_t>(l.b.size()), h);
  }
  r.fingerprint = fingerprint({{"config", to_json(cfg)},
                               {"task", g.name},
                               {"seed", spec.seed},
                               {"poses", spec.poses},
                               {"trials_per_pose", spec.trials_per_pose},
                               {"model_hash", h}});
  return r;
}

inline EvalReport evaluate_expert(const TaskGeometry& g, const RolloutConfig& cfg,
                                  const EvalSpec& spec) {
  auto eps = run_trials(spec, [&](std::uint64_t ps, std::uint64_t ts) {
    return run_expert_eval_episode(g, ps, ts, cfg);
  });
  EvalReport r = aggregate(g.name, "expert", spec.poses, spec.trials_per_pose, std::move(eps));
  r.fingerprint = fingerprint({{"config", to_json(cfg)},
                               {"task", g.name},
                               {"seed", spec.seed},
                               {"poses", spec.poses},
                               {"trials_per_pose", spec.trials_per_pose},
                               {"policy", "expert"}});
  return r;
}

// ---------------------------------------------------------------------------
// Inference benchmark

struct InferenceBenchmark {
  int width = 0;
  int trials = 0;
  double median_seconds = 0.0;
  double p25_seconds = 0.0;
  double p75_seconds = 0.0;
  double frequency_hz = 0.0;  // 1 / median
};

/// Times `trials` full T-step samples on a fixed random conditioning vector.
inline InferenceBenchmark measure_inference_frequency(const NetParams& params,
                                                      const VarianceSchedule& sched,
                                                      int trials = 100, std::uint64_t seed = 0,
                                                      int warmup = 3) {
  if (trials < 1) throw RangeError("benchmark needs >= 1 trial");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Vec cond(params.config.obs_dim);
  for (Eigen::Index i = 0; i < cond.size(); ++i) cond(i) = n(rng);
  auto net = [&](const Vec& o, const Vec& a, int tau) { return forward(params, o, a, tau); };
  volatile double sink = 0.0;
  for (int i = 0; i < warmup; ++i) sink = sink + sample(cond, net, sched, params.config.action_dim, rng)(0);
  std::vector<double> secs;
  secs.reserve(static_cast<std::size_t>(trials));
  for (int i = 0; i < trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Vec a = sample(cond, net, sched, params.config.action_dim, rng);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + a(0);
    secs.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  InferenceBenchmark b;
  b.width = params.config.width;
  b.trials = trials;
  b.median_seconds = percentile(secs, 0.5);
  b.p25_seconds = percentile(secs, 0.25);
  b.p75_seconds = percentile(secs, 0.75);
  b.frequency_hz = 1.0 / b.median_seconds;
  return b;
}

// ---------------------------------------------------------------------------
// Denoising trace

struct DenoiseTrace {
  std::vector<DiffusedAction> states;  // a_T ... a_0, physical units
  Wrench ground_truth = Wrench::Zero();
};

/// Samples from one training pair's conditioning and records every
/// intermediate state (denormalized) next to the demonstrated action.
template <typename Rng>
DenoiseTrace trace_denoise(const DiffusionPolicy& policy, const Vec& cond, const Wrench& truth,
                           Rng& rng) {
  DenoiseTrace tr;
  policy.sample_normalized(cond, rng, &tr.states);
  const auto& norm = policy.bundle().norm;
  for (auto& s : tr.states) s.value = denormalize(s.value, norm.action_mean, norm.action_std);
  tr.ground_truth = truth;
  return tr;
}

// ---------------------------------------------------------------------------
// CSV export

/// tick, 18 observation channels, 6 executed wrench channels, contact flags.
inline void write_episode_trace_csv(const RolloutTrace& tr, std::ostream& out) {
  out << "tick";
  for (const auto& h : row_header())
    if (h.starts_with("o_")) out << ',' << h;
  for (const char* a : {"x", "y", "z", "rx", "ry", "rz"}) out << ",f_exec_" << a;
  out << ",contact_flags\n";
  const std::size_t n = std::min(tr.observation.size(), tr.executed.size());
  char buf[32];
  auto put = [&](double v) {
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    out << ',';
    out.write(buf, r.ptr - buf);
  };
  for (std::size_t t = 0; t < n; ++t) {
    out << t;
    const Vec o = tr.observation[t].to_vector();
    for (Eigen::Index i = 0; i < o.size(); ++i) put(o(i));
    for (int i = 0; i < 6; ++i) put(tr.executed[t](i));
    out << ',' << tr.contact_flags[t] << '\n';
  }
}

/// tau, 6 action channels, 6 ground-truth channels; one row per state a_T..a_0.
inline void write_denoise_trace_csv(const DenoiseTrace& tr, std::ostream& out,
                                    bool header = true, long sample = -1) {
  if (header) {
    if (sample >= 0) out << "sample,";
    out << "tau";
    for (int i = 0; i < 6; ++i) out << ",a" << i;
    for (int i = 0; i < 6; ++i) out << ",gt" << i;
    out << '\n';
  }
  char buf[32];
  auto put = [&](double v) {
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    out << ',';
    out.write(buf, r.ptr - buf);
  };
  for (const auto& s : tr.states) {
    if (sample >= 0) out << sample << ',';
    out << s.tau;
    for (Eigen::Index i = 0; i < s.value.size(); ++i) put(s.value(i));
    for (int i = 0; i < 6; ++i) put(tr.ground_truth(i));
    out << '\n';
  }
}

}  // namespace tacdiff
