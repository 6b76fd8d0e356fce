// tacdiff command line: collect, train, eval, sweep, ablate-filter,
// trace-denoise, bench-inference. Every command writes CSV/JSON into its
// output directory (TACDIFF_OUT_DIR overrides --out) and prints a JSON
// summary on stdout.
#include "tacdiff/harness.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

using namespace tacdiff;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path out_dir(const std::string& flag) {
  if (const char* env = std::getenv("TACDIFF_OUT_DIR"); env && *env) return env;
  return flag;
}

fs::path prepare(const std::string& flag) {
  const fs::path p = out_dir(flag);
  fs::create_directories(p);
  return p;
}

void emit(const fs::path& dir, json summary) {
  summary["fingerprint"] = fingerprint(summary);
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  std::cout << summary.dump(2) << std::endl;
}

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

struct EnvOpts {
  void add(CLI::App* c) {
    c->add_option("--timeout", env.timeout, "episode timeout [s]");
    c->add_option("--goal-depth", env.goal_depth, "impedance set point below the hole entrance [m]");
    c->add_option("--obs-noise", env.obs_noise_std, "observation noise std");
    c->add_option("--max-success-tilt", env.max_success_tilt, "tilt bound for success [rad]");
    c->add_option("--safety-distance", env.safety_distance, "abort distance from goal [m]");
    c->add_option("--init-lateral", env.init_lateral_range, "initial lateral offset range [m]");
    c->add_option("--init-tilt", env.init_tilt_range, "initial tilt range [rad]");
    c->add_option("--max-force", env.limits.max_force, "feed-forward force clamp [N]");
    c->add_option("--max-torque", env.limits.max_torque, "feed-forward torque clamp [N m]");
  }
  EnvConfig env{};
};

struct ExpertOpts {
  void add(CLI::App* c) {
    c->add_option("--push-force", expert.push_force);
    c->add_option("--wiggle-force", expert.wiggle_force);
    c->add_option("--wiggle-torque", expert.wiggle_torque);
    c->add_option("--wiggle-hz", expert.wiggle_hz);
    c->add_option("--centering-force", expert.centering_force);
    c->add_option("--centering-band", expert.centering_torque_band);
    c->add_option("--stuck-window", expert.stuck_window);
    c->add_option("--recovery-ticks", expert.recovery_ticks);
  }
  ExpertConfig expert{};
};

struct RolloutOpts {
  void add(CLI::App* c) {
    env.add(c);
    expert.add(c);
    c->add_option("--latency-ticks", latency_ticks, "inference period in 1 ms ticks");
    c->add_option("--inference-hz", inference_hz, "derive the period as round(1000 / Hz)")
        ->excludes(c->get_option("--latency-ticks"));
    c->add_flag("--live", live, "real concurrent inference instead of simulated latency");
    c->add_option("--filter", filter, "ds filter on/off")->default_str("true");
    c->add_option("--alpha", alpha);
    c->add_option("--beta", beta);
    c->add_option("--filter-time", filter_time, "ticks | seconds")->check(CLI::IsMember({"ticks", "seconds"}));
    c->add_option("--prev-obs", prev_obs, "previous_inference | previous_tick");
    c->add_option("--poses", spec.poses);
    c->add_option("--trials", spec.trials_per_pose, "trials per pose");
    c->add_option("--seed", spec.seed);
    c->add_option("--jobs", spec.jobs, "worker threads across episodes");
  }
  RolloutConfig build() const {
    RolloutConfig r;
    r.env = env.env;
    r.expert = expert.expert;
    const LatencyMode mode = live ? LatencyMode::live : LatencyMode::simulated;
    r.latency = inference_hz > 0 ? LatencyModel::from_hz(inference_hz, mode) : LatencyModel{latency_ticks, mode};
    r.latency.validate();
    r.filter.enabled = filter;
    r.filter.alpha = alpha;
    r.filter.beta = beta;
    r.filter.time_unit = filter_time == "seconds" ? FilterTimeUnit::seconds : FilterTimeUnit::ticks;
    r.filter.dt = env.env.dt;
    r.filter.validate();
    r.prev_obs = parse_prev_obs(prev_obs);
    return r;
  }
  EnvOpts env;
  ExpertOpts expert;
  int latency_ticks = 7;
  double inference_hz = 0.0;
  bool live = false;
  bool filter = true;
  double alpha = 0.9, beta = 0.3;
  std::string filter_time = "ticks";
  std::string prev_obs = "previous_inference";
  EvalSpec spec{};
};

struct TrainOpts {
  void add(CLI::App* c) {
    c->add_option("--width", pc.net.width, "hidden width N");
    c->add_option("--blocks", pc.net.num_residual_blocks, "residual blocks");
    c->add_option("--tau-embed", pc.net.tau_embed_dim, "sinusoidal step embedding size");
    c->add_option("--epochs", pc.train.epochs);
    c->add_option("--batch", pc.train.batch_size);
    c->add_option("--lr", pc.train.adam.learning_rate);
    c->add_option("--train-seed", pc.train.seed);
    c->add_option("--validate-every", pc.train.validate_every);
    c->add_option("--max-validation", pc.train.max_validation_samples, "validation samples per check (0 = all)");
    c->add_option("--split", pc.split_fraction, "training fraction of episodes");
    c->add_option("--split-seed", pc.split_seed);
    c->add_option("--stride", pc.stride, "use every k-th tick as a training pair");
    c->add_option("--prev-lag", pc.prev_lag, "ticks between o_curr and o_prev in training pairs");
    c->add_option("--steps", pc.schedule.T, "diffusion steps T");
    c->add_option("--beta-start", pc.schedule.beta_start);
    c->add_option("--beta-end", pc.schedule.beta_end);
    c->add_flag("--final-step-noise", pc.schedule.final_step_noise, "keep the sigma term at tau = 1");
  }
  PipelineConfig pc{};
};

json net_json(const NetConfig& n) {
  return {{"width", n.width}, {"num_residual_blocks", n.num_residual_blocks}, {"obs_dim", n.obs_dim},
          {"action_dim", n.action_dim}, {"tau_embed_dim", n.tau_embed_dim}};
}

json schedule_json(const ScheduleConfig& s) {
  return {{"T", s.T}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end},
          {"final_step_noise", s.final_step_noise}};
}

DiffusionPolicy load_policy(const std::string& path) {
  return DiffusionPolicy(load_bundle(path, BundleExpectation{2 * kObsDim, kActionDim}));
}

void write_loss_csv(const fs::path& p, const std::vector<EpochLog>& h) {
  std::ofstream out(p);
  out << "epoch,train_loss,validation_loss\n";
  for (const auto& l : h)
    out << l.epoch << ',' << num(l.train_loss) << ',' << (l.validation_loss ? num(*l.validation_loss) : "") << '\n';
}

json short_report(const EvalReport& r) {
  json j = to_json(r);
  j.erase("episodes");
  return j;
}

TrainedPolicy run_train(const std::string& data, const PipelineConfig& pc, bool verbose) {
  const auto recs = read_dataset(data);
  return train_policy(recs, pc, [&](const EpochLog& l) {
    if (!verbose) return;
    std::cerr << "epoch " << l.epoch << " train " << l.train_loss;
    if (l.validation_loss) std::cerr << " val " << *l.validation_loss;
    std::cerr << '\n';
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tactile diffusion policy for insertion: data, training and evaluation"};
  app.require_subcommand(1);
  std::string out = "out";

  // collect
  auto* collect = app.add_subcommand("collect", "record expert demonstrations");
  std::string task = "cuboid";
  int episodes = 200;
  std::uint64_t collect_seed = 1;
  int retry = 50;
  EnvOpts collect_env;
  ExpertOpts collect_expert;
  collect->add_option("--task", task)->check(CLI::IsMember({"cuboid", "key", "cyl_s", "cyl_l", "prism"}));
  collect->add_option("--episodes", episodes);
  collect->add_option("--seed", collect_seed);
  collect->add_option("--retry-budget", retry);
  collect->add_option("--out", out);
  collect_env.add(collect);
  collect_expert.add(collect);

  // train
  auto* trainc = app.add_subcommand("train", "train the noise estimator on a dataset");
  std::string data;
  TrainOpts topts;
  bool quiet = false;
  trainc->add_option("--data", data, "dataset directory")->required();
  trainc->add_option("--out", out);
  trainc->add_flag("--quiet", quiet);
  topts.add(trainc);

  // eval
  auto* eval = app.add_subcommand("eval", "closed-loop evaluation of a model or the expert");
  std::string model;
  bool use_expert = false;
  int trace_episodes = 0;
  RolloutOpts eopts;
  eval->add_option("--model", model, "model bundle");
  eval->add_flag("--expert", use_expert, "evaluate the scripted expert baseline");
  eval->add_option("--task", task)->check(CLI::IsMember({"cuboid", "key", "cyl_s", "cyl_l", "prism"}));
  eval->add_option("--trace-episodes", trace_episodes, "write per-tick CSV traces for the first k episodes");
  eval->add_option("--out", out);
  eopts.add(eval);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "models x tasks success, time and efficiency tables");
  std::vector<std::string> models;
  std::vector<int> widths;
  std::vector<std::string> tasks{"cuboid", "key", "cyl_s", "cyl_l", "prism"};
  bool baseline = true;
  int bench_trials = 30;
  RolloutOpts sopts;
  TrainOpts stopts;
  sweep->add_option("--models", models, "model bundles");
  sweep->add_option("--widths", widths, "train one model per width from --data");
  sweep->add_option("--data", data, "dataset for --widths");
  sweep->add_option("--tasks", tasks);
  sweep->add_option("--baseline", baseline, "include the expert row")->default_str("true");
  sweep->add_option("--bench-trials", bench_trials);
  sweep->add_option("--out", out);
  sopts.add(sweep);
  stopts.add(sweep);

  // ablate-filter
  auto* ablate = app.add_subcommand("ablate-filter", "paired filter on/off evaluation over shared seeds");
  int batches = 3;
  RolloutOpts aopts;
  ablate->add_option("--model", model)->required();
  ablate->add_option("--task", task);
  ablate->add_option("--batches", batches, "independent seed batches");
  ablate->add_option("--out", out);
  aopts.add(ablate);

  // trace-denoise
  auto* tdn = app.add_subcommand("trace-denoise", "export a_tau for tau = T..0 on validation observations");
  int samples = 20;
  double split_fraction = 0.8;
  std::uint64_t split_seed = 0, trace_seed = 0;
  int trace_stride = 97;
  tdn->add_option("--model", model)->required();
  tdn->add_option("--data", data, "dataset directory")->required();
  tdn->add_option("--samples", samples);
  tdn->add_option("--split", split_fraction);
  tdn->add_option("--split-seed", split_seed);
  tdn->add_option("--stride", trace_stride, "tick stride when picking validation observations");
  tdn->add_option("--seed", trace_seed);
  tdn->add_option("--out", out);

  // bench-inference
  auto* bench = app.add_subcommand("bench-inference", "time full T-step sampling per width");
  std::vector<int> bench_widths{128, 256, 512, 1024};
  int steps = 50;
  int blocks = 2;
  bench->add_option("--widths", bench_widths);
  bench->add_option("--trials", bench_trials);
  bench->add_option("--steps", steps);
  bench->add_option("--blocks", blocks);
  bench->add_option("--out", out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*collect) {
      const fs::path dir = prepare(out);
      CollectConfig cc;
      cc.env = collect_env.env;
      cc.expert = collect_expert.expert;
      cc.retry_budget = retry;
      int attempts = 0;
      const auto recs = collect_demonstrations(episodes, make_task(task), collect_seed, cc, &attempts);
      write_dataset(recs, dir);
      long rows = 0;
      for (const auto& r : recs) rows += r.tick_count();
      std::ifstream m(dir / "manifest.json");
      const std::string manifest((std::istreambuf_iterator<char>(m)), std::istreambuf_iterator<char>());
      emit(dir, {{"command", "collect"},
                 {"task", task},
                 {"episodes", recs.size()},
                 {"attempts", attempts},
                 {"expert_success_rate", 100.0 * static_cast<double>(recs.size()) / attempts},
                 {"rows", rows},
                 {"seed", collect_seed},
                 {"dataset_checksum", fingerprint(json::parse(manifest))}});
    } else if (*trainc) {
      const fs::path dir = prepare(out);
      const TrainedPolicy tp = run_train(data, topts.pc, !quiet);
      save_bundle(tp.bundle, dir / "model.bin");
      write_loss_csv(dir / "loss.csv", tp.history);
      json j{{"command", "train"},
             {"data", data},
             {"net", net_json(tp.bundle.net)},
             {"schedule", schedule_json(tp.bundle.schedule)},
             {"epochs", topts.pc.train.epochs},
             {"batch_size", topts.pc.train.batch_size},
             {"learning_rate", topts.pc.train.adam.learning_rate},
             {"seed", topts.pc.train.seed},
             {"split", topts.pc.split_fraction},
             {"split_seed", topts.pc.split_seed},
             {"stride", topts.pc.stride},
             {"prev_lag", topts.pc.prev_lag},
             {"final_train_loss", tp.history.back().train_loss}};
      for (auto it = tp.history.rbegin(); it != tp.history.rend(); ++it) {
        if (it->validation_loss) {
          j["final_validation_loss"] = *it->validation_loss;
          break;
        }
      }
      const auto& p = tp.bundle.params;
      const Vec flat = p.flatten();
      j["model_checksum"] = fingerprint(json(std::vector<double>(flat.begin(), flat.end())));
      emit(dir, j);
    } else if (*eval) {
      if (model.empty() == !use_expert) throw RangeError("eval needs exactly one of --model or --expert");
      const fs::path dir = prepare(out);
      const RolloutConfig rc = eopts.build();
      const TaskGeometry g = make_task(task);
      EvalReport r;
      if (use_expert) {
        r = evaluate_expert(g, rc, eopts.spec);
      } else {
        const DiffusionPolicy pol = load_policy(model);
        r = evaluate_policy(pol, g, rc, eopts.spec);
        for (int k = 0; k < std::min(trace_episodes, eopts.spec.poses * eopts.spec.trials_per_pose); ++k) {
          const auto& e = r.episodes[static_cast<std::size_t>(k)];
          RolloutTrace tr;
          run_policy_episode(pol, g, e.pose_seed, e.trial_seed, rc, &tr);
          std::ofstream f(dir / ("trace_" + std::to_string(e.pose) + "_" + std::to_string(e.trial) + ".csv"));
          write_episode_trace_csv(tr, f);
        }
      }
      std::ofstream(dir / "report.json") << to_json(r).dump(2) << '\n';
      json j = short_report(r);
      j["command"] = "eval";
      j["config"] = to_json(rc);
      emit(dir, j);
    } else if (*sweep) {
      const fs::path dir = prepare(out);
      std::vector<std::pair<std::string, std::string>> labelled;  // label, path
      for (const auto& m : models) labelled.emplace_back(fs::path(m).stem().string(), m);
      for (int w : widths) {
        if (data.empty()) throw RangeError("--widths needs --data");
        PipelineConfig pc = stopts.pc;
        pc.net.width = w;
        const TrainedPolicy tp = run_train(data, pc, false);
        const fs::path p = dir / ("model_N" + std::to_string(w) + ".bin");
        save_bundle(tp.bundle, p);
        write_loss_csv(dir / ("loss_N" + std::to_string(w) + ".csv"), tp.history);
        labelled.emplace_back("N" + std::to_string(w), p.string());
      }
      if (labelled.empty() && !baseline) throw RangeError("sweep needs --models, --widths or the baseline");
      const RolloutConfig rc = sopts.build();
      std::ofstream table(dir / "success.csv"), times(dir / "times.csv"), eff(dir / "efficiency.csv");
      table << "policy,inference_hz";
      eff << "policy";
      for (const auto& t : tasks) {
        table << ',' << t;
        eff << ',' << t;
      }
      table << ",average\n";
      eff << ",average\n";
      times << "policy,task,median,p25,p75,mean,successes,trials\n";
      json rows = json::array();
      auto run_row = [&](const std::string& label, double hz, auto&& evaluate) {
        table << label << ',' << num(hz);
        eff << label;
        double sum_rate = 0, sum_eff = 0;
        json row{{"policy", label}, {"inference_hz", hz}};
        for (const auto& t : tasks) {
          const EvalReport r = evaluate(make_task(t));
          table << ',' << num(r.success_rate);
          eff << ',' << num(r.efficiency);
          times << label << ',' << t << ',' << num(r.time_median) << ',' << num(r.time_p25) << ','
                << num(r.time_p75) << ',' << num(r.time_mean) << ',' << r.successes << ',' << r.trials << '\n';
          sum_rate += r.success_rate;
          sum_eff += r.efficiency;
          row["tasks"][t] = short_report(r);
        }
        const double n = static_cast<double>(tasks.size());
        table << ',' << num(sum_rate / n) << '\n';
        eff << ',' << num(sum_eff / n) << '\n';
        row["average_success_rate"] = sum_rate / n;
        rows.push_back(row);
      };
      for (const auto& [label, path] : labelled) {
        const DiffusionPolicy pol = load_policy(path);
        const InferenceBenchmark b = measure_inference_frequency(pol.bundle().params, pol.schedule(), bench_trials);
        run_row(label, b.frequency_hz, [&](const TaskGeometry& g) { return evaluate_policy(pol, g, rc, sopts.spec, label); });
      }
      if (baseline) {
        run_row("expert", std::numeric_limits<double>::quiet_NaN(),
                [&](const TaskGeometry& g) { return evaluate_expert(g, rc, sopts.spec); });
      }
      emit(dir, {{"command", "sweep"}, {"config", to_json(rc)}, {"rows", rows}});
    } else if (*ablate) {
      const fs::path dir = prepare(out);
      const DiffusionPolicy pol = load_policy(model);
      RolloutOpts on_opts = aopts, off_opts = aopts;
      on_opts.filter = true;
      off_opts.filter = false;
      const RolloutConfig on = on_opts.build(), off = off_opts.build();
      const TaskGeometry g = make_task(task);
      std::ofstream csv(dir / "ablation.csv");
      csv << "batch,seed,success_on,success_off,difference\n";
      json bj = json::array();
      int non_negative = 0;
      for (int b = 0; b < batches; ++b) {
        EvalSpec spec = aopts.spec;
        spec.seed = aopts.spec.seed + static_cast<std::uint64_t>(b) * 1000;
        const EvalReport ron = evaluate_policy(pol, g, on, spec);
        const EvalReport roff = evaluate_policy(pol, g, off, spec);
        const double d = ron.success_rate - roff.success_rate;
        non_negative += d >= 0;
        csv << b << ',' << spec.seed << ',' << num(ron.success_rate) << ',' << num(roff.success_rate) << ','
            << num(d) << '\n';
        bj.push_back({{"batch", b}, {"seed", spec.seed}, {"on", short_report(ron)}, {"off", short_report(roff)}});
      }
      emit(dir, {{"command", "ablate-filter"},
                 {"task", task},
                 {"config_on", to_json(on)},
                 {"batches", bj},
                 {"non_negative_batches", non_negative}});
    } else if (*tdn) {
      const fs::path dir = prepare(out);
      const DiffusionPolicy pol = load_policy(model);
      const auto recs = read_dataset(data);
      const auto va = split(recs, split_fraction, split_seed).second;
      const TrainingSet vs = build_training_pairs(va, pol.bundle().norm, trace_stride);
      std::mt19937_64 rng(trace_seed);
      const int m = static_cast<int>(std::min<Eigen::Index>(samples, vs.size()));
      int closer = 0;
      for (int j = 0; j < m; ++j) {
        const Wrench truth =
            denormalize(vs.actions.col(j), pol.bundle().norm.action_mean, pol.bundle().norm.action_std);
        const DenoiseTrace tr = trace_denoise(pol, vs.obs.col(j), truth, rng);
        closer += (tr.states.back().value - truth).norm() < (tr.states.front().value - truth).norm();
        std::ofstream f(dir / ("denoise_" + std::to_string(j) + ".csv"));
        write_denoise_trace_csv(tr, f);
      }
      emit(dir, {{"command", "trace-denoise"},
                 {"samples", m},
                 {"final_closer_than_initial", closer},
                 {"fraction_closer", m ? static_cast<double>(closer) / m : 0.0}});
    } else if (*bench) {
      const fs::path dir = prepare(out);
      const VarianceSchedule sched = build_schedule(steps, 1e-4, 1e-2);
      std::ofstream csv(dir / "bench.csv");
      csv << "width,median_s,p25_s,p75_s,frequency_hz,latency_ticks\n";
      json rows = json::array();
      for (int w : bench_widths) {
        NetConfig c;
        c.width = w;
        c.num_residual_blocks = blocks;
        const InferenceBenchmark b = measure_inference_frequency(NetParams::init(c, 1), sched, bench_trials);
        const int ticks = LatencyModel::from_hz(b.frequency_hz).inference_period_ticks;
        csv << w << ',' << num(b.median_seconds) << ',' << num(b.p25_seconds) << ',' << num(b.p75_seconds)
            << ',' << num(b.frequency_hz) << ',' << ticks << '\n';
        rows.push_back({{"width", w}, {"frequency_hz", b.frequency_hz}, {"latency_ticks", ticks}});
      }
      emit(dir, {{"command", "bench-inference"}, {"steps", steps}, {"results", rows}});
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
