// Demonstration episodes: on-disk layout, normalization statistics,
// conditioning pairs and the train/validation split.
//
// Directory layout (schema version 1):
//   manifest.json          schema_version, task, episode list with per-file
//                          FNV-1a checksums, row counts, outcomes, norm stats
//   episode_00000.csv ...  header line, then one row per 1 ms tick with 24
//                          fields: 18 observation channels then 6 action
//                          channels, printed with 17 significant digits
#pragma once

#include "tacdiff/core.hpp"
#include "tacdiff/environment.hpp"
#include "tacdiff/model_io.hpp"
#include "tacdiff/noise_net.hpp"
#include "tacdiff/normalization.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace tacdiff {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr int kObsDim = Observation::kDim;
inline constexpr int kActionDim = 6;
inline constexpr int kRowFields = kObsDim + kActionDim;

struct EpisodeRecord {
  std::string task_name;
  std::uint64_t seed = 0;
  Mat obs;      // 18 x ticks
  Mat actions;  // 6 x ticks
  EpisodeOutcome outcome;

  long tick_count() const { return static_cast<long>(obs.cols()); }

  void append(const Observation& o, const Wrench& a) {
    const Eigen::Index n = obs.cols();
    obs.conservativeResize(kObsDim, n + 1);
    actions.conservativeResize(kActionDim, n + 1);
    obs.col(n) = o.to_vector();
    actions.col(n) = a;
  }
  bool operator==(const EpisodeRecord& o) const {
    return task_name == o.task_name && seed == o.seed && obs == o.obs && actions == o.actions &&
           outcome == o.outcome;
  }
};

inline std::vector<std::string> row_header() {
  static const char* groups[] = {"fext", "fin", "twist"};
  static const char* axes[] = {"x", "y", "z", "rx", "ry", "rz"};
  std::vector<std::string> h;
  for (const char* g : groups)
    for (const char* a : axes) h.push_back(std::string("o_") + g + "_" + a);
  for (const char* a : axes) h.push_back(std::string("a_") + a);
  return h;
}

namespace detail {

inline std::string episode_csv(const EpisodeRecord& r) {
  std::string out;
  const auto header = row_header();
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += '\n';
  char buf[64];
  for (Eigen::Index t = 0; t < r.obs.cols(); ++t) {
    for (int i = 0; i < kRowFields; ++i) {
      const double v = i < kObsDim ? r.obs(i, t) : r.actions(i - kObsDim, t);
      const auto res = std::to_chars(buf, buf + sizeof(buf), v);
      if (i) out += ',';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorruptFileError("missing file " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void parse_episode_csv(const std::string& text, const std::string& name, EpisodeRecord& r) {
  std::size_t pos = text.find('\n');
  if (pos == std::string::npos) throw CorruptFileError(name + ": missing header");
  std::vector<std::array<double, kRowFields>> rows;
  ++pos;
  long row = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::array<double, kRowFields> vals{};
    int field = 0;
    const char* p = text.data() + pos;
    const char* e = text.data() + end;
    while (p <= e && field <= kRowFields) {
      const char* comma = std::find(p, e, ',');
      if (field == kRowFields) {
        field = kRowFields + 1;
        break;
      }
      double v = 0.0;
      const auto res = std::from_chars(p, comma, v);
      if (res.ec != std::errc() || res.ptr != comma) {
        throw CorruptFileError(name + ": row " + std::to_string(row) + " field " +
                               std::to_string(field) + " is not a number");
      }
      if (!std::isfinite(v)) {
        throw CorruptFileError(name + ": row " + std::to_string(row) + " field " +
                               std::to_string(field) + " is not finite");
      }
      vals[field++] = v;
      p = comma + 1;
      if (comma == e) break;
    }
    if (field != kRowFields) {
      throw CorruptFileError(name + ": row " + std::to_string(row) + " does not have " +
                             std::to_string(kRowFields) + " fields");
    }
    rows.push_back(vals);
    ++row;
    pos = end + 1;
  }
  r.obs.resize(kObsDim, static_cast<Eigen::Index>(rows.size()));
  r.actions.resize(kActionDim, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (int i = 0; i < kObsDim; ++i) r.obs(i, static_cast<Eigen::Index>(t)) = rows[t][i];
    for (int i = 0; i < kActionDim; ++i)
      r.actions(i, static_cast<Eigen::Index>(t)) = rows[t][kObsDim + i];
  }
}

inline nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline Vec json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

/// Per-channel z-score statistics over every row of `records`.
inline NormStats compute_norm_stats(const std::vector<EpisodeRecord>& records) {
  Eigen::Index total = 0;
  for (const auto& r : records) total += r.obs.cols();
  if (total == 0) throw RangeError("compute_norm_stats: empty dataset");
  Mat obs(kObsDim, total), act(kActionDim, total);
  Eigen::Index o = 0;
  for (const auto& r : records) {
    obs.middleCols(o, r.obs.cols()) = r.obs;
    act.middleCols(o, r.actions.cols()) = r.actions;
    o += r.obs.cols();
  }
  auto [om, os] = column_moments(obs);
  auto [am, as] = column_moments(act);
  return {om, os, am, as};
}

inline nlohmann::json norm_stats_json(const NormStats& s) {
  return {{"obs_mean", detail::vec_json(s.obs_mean)},
          {"obs_std", detail::vec_json(s.obs_std)},
          {"action_mean", detail::vec_json(s.action_mean)},
          {"action_std", detail::vec_json(s.action_std)}};
}

/// Writes one CSV per episode plus manifest.json. Creates `dir` if needed.
inline void write_dataset(const std::vector<EpisodeRecord>& records,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema_version"] = kDatasetSchemaVersion;
  manifest["row_fields"] = kRowFields;
  manifest["tick_seconds"] = 1e-3;
  manifest["columns"] = row_header();
  nlohmann::json episodes = nlohmann::json::array();
  long total_rows = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    char name[32];
    std::snprintf(name, sizeof(name), "episode_%05zu.csv", i);
    const std::string text = detail::episode_csv(r);
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out << text;
    episodes.push_back({{"file", name},
                        {"task", r.task_name},
                        {"seed", r.seed},
                        {"ticks", r.tick_count()},
                        {"success", r.outcome.success},
                        {"duration", r.outcome.duration},
                        {"termination", std::string(to_string(r.outcome.reason))},
                        {"checksum", detail::hex64(fnv1a(text.data(), text.size()))}});
    total_rows += r.tick_count();
  }
  manifest["episodes"] = episodes;
  manifest["episode_count"] = records.size();
  manifest["total_rows"] = total_rows;
  if (!records.empty()) {
    manifest["task"] = records.front().task_name;
    if (total_rows > 0) manifest["norm_stats"] = norm_stats_json(compute_norm_stats(records));
  }
  std::ofstream m(dir / "manifest.json", std::ios::trunc);
  if (!m) throw Error("cannot write manifest in " + dir.string());
  m << manifest.dump(2) << '\n';
}

inline Termination parse_termination(const std::string& s) {
  for (Termination t : {Termination::inserted, Termination::timeout, Termination::safety_abort})
    if (to_string(t) == s) return t;
  throw CorruptFileError("manifest: unknown termination '" + s + "'");
}

/// Reads and validates a dataset directory: schema version, per-row field
/// count and finiteness (reported with the row index), then file checksums.
inline std::vector<EpisodeRecord> read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw CorruptFileError("dataset " + dir.string() + " has no manifest.json");
  }
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(detail::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("manifest.json: ") + e.what());
  }
  if (!m.contains("schema_version") || m["schema_version"].get<int>() != kDatasetSchemaVersion) {
    throw IncompatibleError("dataset schema version mismatch (expected " +
                            std::to_string(kDatasetSchemaVersion) + ")");
  }
  std::vector<EpisodeRecord> out;
  for (const auto& e : m.at("episodes")) {
    const std::string file = e.at("file").get<std::string>();
    const std::string text = detail::read_file(dir / file);
    EpisodeRecord r;
    r.task_name = e.at("task").get<std::string>();
    r.seed = e.at("seed").get<std::uint64_t>();
    r.outcome.success = e.at("success").get<bool>();
    r.outcome.duration = e.at("duration").get<double>();
    r.outcome.reason = parse_termination(e.at("termination").get<std::string>());
    detail::parse_episode_csv(text, file, r);
    if (r.tick_count() != e.at("ticks").get<long>()) {
      throw CorruptFileError(file + ": row count differs from manifest");
    }
    if (detail::hex64(fnv1a(text.data(), text.size())) != e.at("checksum").get<std::string>()) {
      throw CorruptFileError(file + ": checksum mismatch");
    }
    out.push_back(std::move(r));
  }
  if (m.contains("episode_count") && m["episode_count"].get<std::size_t>() != out.size()) {
    throw CorruptFileError("manifest episode_count differs from listed episodes");
  }
  return out;
}

/// Concatenates [normalize(o_t), normalize(o_{t-1})] with target normalize(a_t)
/// for every tick (tick 0 uses o_0 as its own predecessor). With stride k only
/// ticks t = 0, k, 2k, ... are emitted; the predecessor is always t - 1.
inline TrainingSet build_training_pairs(const std::vector<EpisodeRecord>& records,
                                        const NormStats& stats, int stride = 1, int prev_lag = 1) {
  if (stride < 1) throw RangeError("build_training_pairs: stride must be >= 1");
  if (prev_lag < 1) throw RangeError("build_training_pairs: prev_lag must be >= 1");
  Eigen::Index total = 0;
  for (const auto& r : records) total += (r.tick_count() + stride - 1) / stride;
  TrainingSet ts{Mat(2 * kObsDim, total), Mat(kActionDim, total)};
  Eigen::Index col = 0;
  for (const auto& r : records) {
    for (Eigen::Index t = 0; t < r.obs.cols(); t += stride) {
      const Eigen::Index prev = std::max<Eigen::Index>(0, t - prev_lag);
      ts.obs.col(col).head(kObsDim) = normalize(r.obs.col(t), stats.obs_mean, stats.obs_std);
      ts.obs.col(col).tail(kObsDim) = normalize(r.obs.col(prev), stats.obs_mean, stats.obs_std);
      ts.actions.col(col) = normalize(r.actions.col(t), stats.action_mean, stats.action_std);
      ++col;
    }
  }
  return ts;
}

/// Episode-level shuffle split: round(fraction * n) episodes go to training.
inline std::pair<std::vector<EpisodeRecord>, std::vector<EpisodeRecord>> split(
    const std::vector<EpisodeRecord>& records, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw RangeError("split fraction must be in (0, 1)");
  const std::size_t n = records.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    throw RangeError("split leaves the training or validation side empty");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::pair<std::vector<EpisodeRecord>, std::vector<EpisodeRecord>> out;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? out.first : out.second).push_back(records[idx[i]]);
  return out;
}

}  // namespace tacdiff
