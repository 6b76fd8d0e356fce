#include "tacdiff/dataset.hpp"
#include "tacdiff/expert.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace tacdiff;
namespace fs = std::filesystem;

namespace {

EpisodeRecord synthetic(std::uint64_t seed, int ticks) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 3.0);
  EpisodeRecord r;
  r.task_name = "cuboid";
  r.seed = seed;
  for (int t = 0; t < ticks; ++t) {
    Observation o;
    for (int i = 0; i < 6; ++i) {
      o.f_ext(i) = d(rng);
      o.f_in(i) = d(rng) * 1e-7;
      o.ee_twist(i) = d(rng) * 1e3;
    }
    Wrench a;
    for (int i = 0; i < 6; ++i) a(i) = d(rng);
    r.append(o, a);
  }
  r.outcome = {true, ticks * 1e-3, Termination::inserted};
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "tacdiff_test_dataset" / name;
  fs::remove_all(p);
  return p;
}

void replace_in_file(const fs::path& p, const std::string& from, const std::string& to) {
  std::ifstream in(p);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = s.find(from);
  ASSERT_NE(pos, std::string::npos);
  s.replace(pos, from.size(), to);
  std::ofstream(p, std::ios::trunc) << s;
}

}  // namespace

TEST(Storage, RoundTripIsBitwise) {
  std::vector<EpisodeRecord> recs{synthetic(1, 30), synthetic(2, 5), synthetic(3, 17)};
  recs[1].outcome = {false, 10.0, Termination::timeout};
  const auto dir = fresh_dir("roundtrip");
  write_dataset(recs, dir);
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(back[i], recs[i]) << i;
}

TEST(Storage, RealEpisodesRoundTrip) {
  const auto recs = collect_demonstrations(2, make_task(TaskName::cuboid), 9);
  const auto dir = fresh_dir("real");
  write_dataset(recs, dir);
  EXPECT_EQ(read_dataset(dir), recs);
}

TEST(Storage, ManifestCounts) {
  const std::vector<EpisodeRecord> recs{synthetic(1, 30), synthetic(2, 5), synthetic(3, 17)};
  const auto dir = fresh_dir("manifest");
  write_dataset(recs, dir);
  std::ifstream in(dir / "manifest.json");
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m["schema_version"], kDatasetSchemaVersion);
  EXPECT_EQ(m["episode_count"], 3);
  EXPECT_EQ(m["total_rows"], 52);
  EXPECT_EQ(m["row_fields"], 24);
  EXPECT_EQ(m["columns"].size(), 24u);
  int csv = 0;
  for (const auto& e : fs::directory_iterator(dir)) csv += e.path().extension() == ".csv";
  EXPECT_EQ(csv, 3);
  EXPECT_EQ(m["episodes"].size(), 3u);
  EXPECT_EQ(m["norm_stats"]["obs_mean"].size(), 18u);
}

TEST(Storage, EveryRowHasTwentyFourFields) {
  const auto dir = fresh_dir("fields");
  write_dataset({synthetic(4, 12)}, dir);
  std::ifstream in(dir / "episode_00000.csv");
  std::string line;
  int rows = 0;
  std::getline(in, line);  // header
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 23);
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 23);
    ++rows;
  }
  EXPECT_EQ(rows, 12);
}

TEST(Storage, NanRowRejectedWithIndex) {
  const auto recs = std::vector<EpisodeRecord>{synthetic(5, 10)};
  const auto dir = fresh_dir("nan");
  write_dataset(recs, dir);
  // replace the first field of row 6 (line 8 including header)
  const auto path = dir / "episode_00000.csv";
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  lines[7] = "nan" + lines[7].substr(lines[7].find(','));
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
  out.close();
  try {
    read_dataset(dir);
    FAIL() << "expected CorruptFileError";
  } catch (const CorruptFileError& e) {
    EXPECT_NE(std::string(e.what()).find("row 6"), std::string::npos) << e.what();
  }
}

TEST(Storage, ShortRowRejected) {
  const auto dir = fresh_dir("short");
  write_dataset({synthetic(6, 4)}, dir);
  const auto path = dir / "episode_00000.csv";
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  lines[2] = lines[2].substr(0, lines[2].rfind(','));
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
  out.close();
  EXPECT_THROW(read_dataset(dir), CorruptFileError);
}

TEST(Storage, ChecksumMismatchRejected) {
  const auto dir = fresh_dir("checksum");
  write_dataset({synthetic(7, 4)}, dir);
  const auto path = dir / "episode_00000.csv";
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  lines[1] = "0" + lines[1].substr(lines[1].find(','));
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
  out.close();
  try {
    read_dataset(dir);
    FAIL();
  } catch (const CorruptFileError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST(Storage, SchemaAndManifestErrors) {
  EXPECT_THROW(read_dataset(fresh_dir("missing")), CorruptFileError);
  const auto dir = fresh_dir("schema");
  write_dataset({synthetic(8, 3)}, dir);
  replace_in_file(dir / "manifest.json", "\"schema_version\": 1", "\"schema_version\": 2");
  EXPECT_THROW(read_dataset(dir), IncompatibleError);
}

TEST(NormStats, MeanAndStd) {
  const std::vector<EpisodeRecord> recs{synthetic(1, 40), synthetic(2, 25)};
  const NormStats s = compute_norm_stats(recs);
  Mat all(18, 65);
  all << recs[0].obs, recs[1].obs;
  for (int i = 0; i < 18; ++i) {
    double m = 0;
    for (int j = 0; j < 65; ++j) m += all(i, j);
    m /= 65;
    double v = 0;
    for (int j = 0; j < 65; ++j) v += (all(i, j) - m) * (all(i, j) - m);
    const double sd = std::max(std::sqrt(v / 65), kStdFloor);
    EXPECT_NEAR(s.obs_mean(i), m, 1e-12 * std::max(1.0, std::abs(m)));
    EXPECT_NEAR(s.obs_std(i), sd, 1e-12 * std::max(1.0, sd));
  }
  // normalized set has zero mean and unit std in non-floored channels
  for (int i = 0; i < 18; ++i) {
    double m = 0, v = 0;
    for (int j = 0; j < 65; ++j) m += (all(i, j) - s.obs_mean(i)) / s.obs_std(i);
    m /= 65;
    for (int j = 0; j < 65; ++j) {
      const double z = (all(i, j) - s.obs_mean(i)) / s.obs_std(i) - m;
      v += z * z;
    }
    EXPECT_LT(std::abs(m), 1e-9);
    if (s.obs_std(i) > kStdFloor) {
      EXPECT_NEAR(std::sqrt(v / 65), 1.0, 1e-9);
    }
  }
}

TEST(NormStats, ConstantChannelIsFloored) {
  EpisodeRecord r = synthetic(3, 20);
  r.obs.row(7).setConstant(2.5);
  const NormStats s = compute_norm_stats({r});
  EXPECT_EQ(s.obs_std(7), kStdFloor);
  const Vec z = normalize(r.obs.col(4), s.obs_mean, s.obs_std);
  EXPECT_EQ(z(7), 0.0);
}

TEST(NormStats, RoundTripAndEmpty) {
  const NormStats s = compute_norm_stats({synthetic(9, 30)});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 10.0);
  for (int k = 0; k < 50; ++k) {
    Vec x(18);
    for (auto& v : x) v = d(rng);
    EXPECT_LT((denormalize(normalize(x, s.obs_mean, s.obs_std), s.obs_mean, s.obs_std) - x)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12 * 50);
  }
  EXPECT_THROW(compute_norm_stats({}), RangeError);
  EXPECT_THROW(compute_norm_stats({EpisodeRecord{}}), RangeError);
}

TEST(Pairs, CountAndBoundary) {
  const std::vector<EpisodeRecord> recs{synthetic(1, 13), synthetic(2, 7)};
  const NormStats s = compute_norm_stats(recs);
  const TrainingSet ts = build_training_pairs(recs, s);
  ASSERT_EQ(ts.size(), 20);
  EXPECT_EQ(ts.obs.rows(), 36);
  EXPECT_EQ(ts.actions.rows(), 6);
  EXPECT_EQ(ts.obs.col(0).head(18), ts.obs.col(0).tail(18));
  EXPECT_EQ(ts.obs.col(13).head(18), ts.obs.col(13).tail(18));  // second episode starts fresh
  EXPECT_EQ(ts.obs.col(14).tail(18), ts.obs.col(13).head(18));
}

TEST(Pairs, ThreeTickHandAssembly) {
  EpisodeRecord r;
  r.task_name = "cuboid";
  Observation o0, o1, o2;
  for (int i = 0; i < 6; ++i) {
    o0.f_ext(i) = i;
    o1.f_ext(i) = 2 * i + 1;
    o2.f_ext(i) = -i;
    o0.f_in(i) = 0.5;
    o1.f_in(i) = 1.5;
    o2.f_in(i) = 1.0;
    o1.ee_twist(i) = 0.25 * i;
  }
  Wrench a0 = Wrench::Constant(1), a1 = Wrench::Constant(2), a2 = Wrench::Constant(6);
  r.append(o0, a0);
  r.append(o1, a1);
  r.append(o2, a2);
  NormStats s = NormStats::identity(18, 6);
  for (int i = 0; i < 18; ++i) {
    s.obs_mean(i) = 0.1 * i;
    s.obs_std(i) = 1.0 + 0.5 * i;
  }
  s.action_mean.setConstant(3.0);
  s.action_std.setConstant(2.0);
  const TrainingSet ts = build_training_pairs({r}, s);
  const Observation* obs[3] = {&o0, &o1, &o2};
  const Wrench* act[3] = {&a0, &a1, &a2};
  for (int t = 0; t < 3; ++t) {
    const auto cur = obs[t]->to_vector();
    const auto prev = obs[t == 0 ? 0 : t - 1]->to_vector();
    for (int i = 0; i < 18; ++i) {
      EXPECT_EQ(ts.obs(i, t), (cur(i) - 0.1 * i) / (1.0 + 0.5 * i));
      EXPECT_EQ(ts.obs(18 + i, t), (prev(i) - 0.1 * i) / (1.0 + 0.5 * i));
    }
    for (int i = 0; i < 6; ++i) EXPECT_EQ(ts.actions(i, t), ((*act[t])(i) - 3.0) / 2.0);
  }
}

TEST(Split, EightTwo) {
  std::vector<EpisodeRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(synthetic(static_cast<std::uint64_t>(i), 3));
  const auto [tr, va] = split(recs, 0.8, 42);
  EXPECT_EQ(tr.size(), 8u);
  EXPECT_EQ(va.size(), 2u);
  std::set<std::uint64_t> seen;
  for (const auto& r : tr) seen.insert(r.seed);
  for (const auto& r : va) EXPECT_TRUE(seen.insert(r.seed).second);
  EXPECT_EQ(seen.size(), 10u);

  const auto [tr2, va2] = split(recs, 0.8, 42);
  EXPECT_EQ(tr, tr2);
  EXPECT_EQ(va, va2);
}

TEST(Split, Errors) {
  std::vector<EpisodeRecord> recs{synthetic(1, 3), synthetic(2, 3)};
  EXPECT_THROW(split(recs, 0.0, 1), RangeError);
  EXPECT_THROW(split(recs, 1.0, 1), RangeError);
  EXPECT_THROW(split({synthetic(1, 3)}, 0.8, 1), RangeError);
}
