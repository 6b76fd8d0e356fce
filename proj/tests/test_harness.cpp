#include "tacdiff/harness.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace tacdiff;

namespace {

ModelBundle random_bundle(int width, std::uint64_t seed) {
  ModelBundle b;
  b.net.width = width;
  b.net.num_residual_blocks = 1;
  b.norm = NormStats::identity(36 / 2, 6);
  b.norm.action_std.setConstant(3.0);
  b.params = NetParams::init(b.net, seed);
  return b;
}

RolloutConfig short_config() {
  RolloutConfig c;
  c.env.timeout = 0.3;
  return c;
}

EpisodeReport ep(int pose, bool ok, double t) {
  EpisodeReport e;
  e.pose = pose;
  e.outcome = {ok, t, ok ? Termination::inserted : Termination::timeout};
  return e;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::size_t count_fields(const std::string& line) { return 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')); }

}  // namespace

TEST(Latency, FromHz) {
  EXPECT_EQ(LatencyModel::from_hz(141.8).inference_period_ticks, 7);
  EXPECT_EQ(LatencyModel::from_hz(503.8).inference_period_ticks, 2);
  EXPECT_EQ(LatencyModel::from_hz(51.2).inference_period_ticks, 20);
  EXPECT_EQ(LatencyModel::from_hz(5000.0).inference_period_ticks, 1);
  EXPECT_THROW(LatencyModel::from_hz(0.0), RangeError);
  EXPECT_THROW(LatencyModel::from_hz(std::nan("")), RangeError);
  EXPECT_THROW((LatencyModel{0}.validate()), RangeError);
}

TEST(Latency, PrevObsParse) {
  EXPECT_EQ(parse_prev_obs("previous_tick"), PrevObsMode::previous_tick);
  EXPECT_EQ(parse_prev_obs(to_string(PrevObsMode::previous_inference)), PrevObsMode::previous_inference);
  EXPECT_THROW(parse_prev_obs("yesterday"), RangeError);
}

TEST(Aggregate, Percentiles) {
  EXPECT_TRUE(std::isnan(percentile({}, 0.5)));
  EXPECT_EQ(percentile({3.0}, 0.25), 3.0);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 0.25), 2.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 0.75), 4.0);
}

TEST(Aggregate, Exact) {
  std::vector<EpisodeReport> eps{ep(0, true, 2.0), ep(0, true, 4.0), ep(1, true, 3.0),
                                 ep(1, false, 10.0), ep(2, false, 10.0), ep(2, true, 5.0)};
  const EvalReport r = aggregate("cuboid", "x", 3, 2, eps);
  EXPECT_EQ(r.trials, 6);
  EXPECT_EQ(r.successes, 4);
  EXPECT_DOUBLE_EQ(r.success_rate, 100.0 * 4 / 6);
  EXPECT_DOUBLE_EQ(r.pose_success_rate, 100.0 / 3);
  EXPECT_DOUBLE_EQ(r.time_mean, 3.5);
  EXPECT_DOUBLE_EQ(r.time_median, 3.5);
  EXPECT_LE(r.time_p25, r.time_median);
  EXPECT_LE(r.time_median, r.time_p75);
  EXPECT_DOUBLE_EQ(r.efficiency, r.success_rate / r.time_mean);

  const EvalReport none = aggregate("cuboid", "x", 1, 1, {ep(0, false, 1.0)});
  EXPECT_EQ(none.success_rate, 0.0);
  EXPECT_EQ(none.efficiency, 0.0);
  EXPECT_TRUE(to_json(none)["time_median"].is_null());
}

TEST(Trials, CountAndSeeds) {
  EvalSpec spec;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> seen;
  const auto eps = run_trials(spec, [&](std::uint64_t ps, std::uint64_t ts) {
    seen.emplace_back(ps, ts);
    return EpisodeReport{};
  });
  ASSERT_EQ(eps.size(), 100u);
  std::set<std::uint64_t> poses, trials;
  for (std::size_t k = 0; k < eps.size(); ++k) {
    EXPECT_EQ(eps[k].pose, static_cast<int>(k / 2));
    EXPECT_EQ(eps[k].trial, static_cast<int>(k % 2));
    EXPECT_EQ(seen[k].first, derive_seed(0, k / 2));
    EXPECT_EQ(seen[k].second, derive_seed(0, k / 2, k % 2 + 1));
    poses.insert(seen[k].first);
    trials.insert(seen[k].second);
  }
  EXPECT_EQ(poses.size(), 50u);
  EXPECT_EQ(trials.size(), 100u);
  EXPECT_THROW(run_trials(EvalSpec{0, 2}, [](auto, auto) { return EpisodeReport{}; }), RangeError);
}

TEST(Eval, DeterministicAndThreadIndependent) {
  const DiffusionPolicy policy(random_bundle(16, 3));
  const TaskGeometry g = make_task(TaskName::cuboid);
  EvalSpec spec{3, 2, 11, 1};
  const auto a = to_json(evaluate_policy(policy, g, short_config(), spec));
  const auto b = to_json(evaluate_policy(policy, g, short_config(), spec));
  EXPECT_EQ(a.dump(), b.dump());
  spec.jobs = 3;
  EXPECT_EQ(to_json(evaluate_policy(policy, g, short_config(), spec)).dump(), a.dump());
  EXPECT_EQ(a["trials"], 6);
  EXPECT_EQ(a["fingerprint"].get<std::string>().size(), 16u);
}

TEST(Eval, FilterOffSharesPosesButChangesConfig) {
  const DiffusionPolicy policy(random_bundle(16, 4));
  const TaskGeometry g = make_task(TaskName::cuboid);
  const EvalSpec spec{2, 2, 5, 1};
  RolloutConfig off = short_config();
  off.filter.enabled = false;
  const EvalReport on_r = evaluate_policy(policy, g, short_config(), spec);
  const EvalReport off_r = evaluate_policy(policy, g, off, spec);
  for (std::size_t k = 0; k < on_r.episodes.size(); ++k) {
    EXPECT_EQ(on_r.episodes[k].init_lateral, off_r.episodes[k].init_lateral);
    EXPECT_EQ(on_r.episodes[k].init_tilt, off_r.episodes[k].init_tilt);
  }
  EXPECT_NE(on_r.fingerprint, off_r.fingerprint);
}

TEST(Rollout, LatencySemanticsAndFilterEveryTick) {
  const DiffusionPolicy policy(random_bundle(16, 5));
  const TaskGeometry g = make_task(TaskName::cuboid);
  RolloutConfig cfg = short_config();
  RolloutTrace tr;
  const EpisodeReport rep = run_policy_episode(policy, g, 21, 22, cfg, &tr);
  const int period = cfg.latency.inference_period_ticks;
  const std::size_t n = tr.policy_output.size();
  ASSERT_GT(n, static_cast<std::size_t>(3 * period));
  EXPECT_EQ(tr.feed_forward.size(), n);
  EXPECT_EQ(tr.executed.size(), n);
  EXPECT_EQ(tr.observation.size(), n);
  EXPECT_EQ(rep.inferences, static_cast<long>((n + period - 1) / period));

  // nothing has arrived during the first period
  for (int t = 0; t < period; ++t) EXPECT_EQ(tr.policy_output[t], Wrench::Zero());
  // the first result is the sample on (o_0, o_0) with the trial's stream
  std::mt19937_64 rng(22);
  const Wrench first = policy.act(tr.observation[0], tr.observation[0], rng);
  EXPECT_EQ(tr.policy_output[period], first);
  // held between arrivals
  for (std::size_t t = 1; t < n; ++t)
    if (t % period != 0) {
      EXPECT_EQ(tr.policy_output[t], tr.policy_output[t - 1]) << t;
    }
  for (const auto& f : tr.feed_forward) EXPECT_TRUE(f.allFinite());
}

TEST(Rollout, NonFiniteModelAbortsWithReason) {
  ModelBundle b = random_bundle(8, 6);
  b.params.layers[0].W(0, 0) = std::numeric_limits<double>::infinity();
  const DiffusionPolicy policy(b);
  const EpisodeReport rep = run_policy_episode(policy, make_task(TaskName::cuboid), 1, 2, short_config());
  EXPECT_FALSE(rep.outcome.success);
  EXPECT_EQ(rep.outcome.reason, Termination::safety_abort);
  EXPECT_FALSE(rep.detail.empty());
}

TEST(Rollout, PolicyRejectsWrongSchema) {
  ModelBundle b = random_bundle(8, 7);
  b.net.obs_dim = 18;
  b.params = NetParams::init(b.net, 1);
  EXPECT_THROW(DiffusionPolicy{b}, ShapeError);
}

TEST(Expert, BaselineEvalIsDeterministic) {
  const TaskGeometry g = make_task(TaskName::cuboid);
  const EvalSpec spec{4, 2, 9, 1};
  const EvalReport a = evaluate_expert(g, {}, spec);
  EXPECT_EQ(to_json(a).dump(), to_json(evaluate_expert(g, {}, spec)).dump());
  EXPECT_GE(a.successes, 7);
  EXPECT_EQ(a.policy, "expert");
}

TEST(Export, EpisodeTraceCsv) {
  const DiffusionPolicy policy(random_bundle(8, 8));
  RolloutTrace tr;
  run_policy_episode(policy, make_task(TaskName::cuboid), 3, 4, short_config(), &tr);
  std::ostringstream out;
  write_episode_trace_csv(tr, out);
  const std::string s = out.str();
  EXPECT_EQ(count_lines(s), tr.observation.size() + 1);
  EXPECT_EQ(count_fields(s.substr(0, s.find('\n'))), 26u);
  std::istringstream in(s);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) ASSERT_EQ(count_fields(line), 26u);
}

TEST(Export, DenoiseTraceRows) {
  const DiffusionPolicy policy(random_bundle(8, 9));
  std::mt19937_64 rng(1);
  Vec cond = Vec::Zero(36);
  Wrench truth;
  truth << 1, 2, 3, 4, 5, 6;
  const DenoiseTrace tr = trace_denoise(policy, cond, truth, rng);
  ASSERT_EQ(tr.states.size(), 51u);
  EXPECT_EQ(tr.states.front().tau, 50);
  EXPECT_EQ(tr.states.back().tau, 0);
  // final state is the policy's own denormalized output for the same stream
  std::mt19937_64 rng2(1);
  const Vec z = policy.sample_normalized(cond, rng2);
  EXPECT_EQ(tr.states.back().value, denormalize(z, policy.bundle().norm.action_mean, policy.bundle().norm.action_std));
  std::ostringstream out;
  write_denoise_trace_csv(tr, out);
  const std::string s = out.str();
  EXPECT_EQ(count_lines(s), 52u);
  EXPECT_EQ(s.substr(0, s.find('\n')), "tau,a0,a1,a2,a3,a4,a5,gt0,gt1,gt2,gt3,gt4,gt5");
}

TEST(Bench, LargerNetsAreSlower) {
  const VarianceSchedule sched = build_schedule(50, 1e-4, 1e-2);
  NetConfig small, big;
  small.width = 16;
  big.width = 512;
  const auto a = measure_inference_frequency(NetParams::init(small, 1), sched, 15);
  const auto b = measure_inference_frequency(NetParams::init(big, 1), sched, 15);
  EXPECT_GT(a.frequency_hz, b.frequency_hz);
  EXPECT_LE(b.p25_seconds, b.median_seconds);
  EXPECT_LE(b.median_seconds, b.p75_seconds);
  EXPECT_EQ(b.width, 512);
  EXPECT_THROW(measure_inference_frequency(NetParams::init(small, 1), sched, 0), RangeError);
}

TEST(Bench, CostScalesWithSteps) {
  NetConfig c;
  c.width = 128;
  const NetParams p = NetParams::init(c, 2);
  const auto t50 = measure_inference_frequency(p, build_schedule(50, 1e-4, 1e-2), 21);
  const auto t100 = measure_inference_frequency(p, build_schedule(100, 1e-4, 1e-2), 21);
  const double ratio = t100.median_seconds / t50.median_seconds;
  EXPECT_GT(ratio, 1.4);
  EXPECT_LT(ratio, 2.6);
}
