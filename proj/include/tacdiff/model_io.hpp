// Self-contained model bundle: network config, schedule config, normalization
// statistics and weights in one checksummed binary file.
//
// Layout (little-endian, host double format):
//   magic        8 bytes  "TACDIFF\0"
//   version      u32      kBundleVersion
//   net config   5 x i32  width, blocks, obs_dim, action_dim, tau_embed_dim
//   schedule     i32 T, f64 beta_start, f64 beta_end, u8 final_step_noise
//   norm stats   4 x (i64 n, n x f64)  obs_mean, obs_std, action_mean, action_std
//   layers       i64 count, then per layer: i64 rows, i64 cols, rows*cols f64
//                (column-major), i64 n, n x f64 bias
//   checksum     u64 FNV-1a over every preceding byte
#pragma once

#include "tacdiff/core.hpp"
#include "tacdiff/ddpm.hpp"
#include "tacdiff/noise_net.hpp"
#include "tacdiff/normalization.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace tacdiff {

inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr char kBundleMagic[8] = {'T', 'A', 'C', 'D', 'I', 'F', 'F', '\0'};

struct ScheduleConfig {
  int T = 50;
  double beta_start = 1e-4;
  double beta_end = 1e-2;
  bool final_step_noise = false;

  VarianceSchedule build() const { return build_schedule(T, beta_start, beta_end); }
  bool operator==(const ScheduleConfig&) const = default;
};

struct ModelBundle {
  NetConfig net;
  ScheduleConfig schedule;
  NormStats norm;
  NetParams params;
};

inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void put_vec(const Vec& v) {
    put<std::int64_t>(v.size());
    put_bytes(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t n) : data_(data), n_(n) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  Vec get_vec(std::int64_t max_len) {
    const auto n = get<std::int64_t>();
    if (n < 0 || n > max_len) throw CorruptFileError("model bundle: implausible vector length");
    Vec v(n);
    get_bytes(v.data(), sizeof(double) * static_cast<std::size_t>(n));
    return v;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > n_) throw CorruptFileError("model bundle: unexpected end of file");
  }
  const char* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_bundle(const ModelBundle& b, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.put_bytes(kBundleMagic, sizeof(kBundleMagic));
  w.put<std::uint32_t>(kBundleVersion);
  w.put<std::int32_t>(b.net.width);
  w.put<std::int32_t>(b.net.num_residual_blocks);
  w.put<std::int32_t>(b.net.obs_dim);
  w.put<std::int32_t>(b.net.action_dim);
  w.put<std::int32_t>(b.net.tau_embed_dim);
  w.put<std::int32_t>(b.schedule.T);
  w.put<double>(b.schedule.beta_start);
  w.put<double>(b.schedule.beta_end);
  w.put<std::uint8_t>(b.schedule.final_step_noise ? 1 : 0);
  w.put_vec(b.norm.obs_mean);
  w.put_vec(b.norm.obs_std);
  w.put_vec(b.norm.action_mean);
  w.put_vec(b.norm.action_std);
  w.put<std::int64_t>(static_cast<std::int64_t>(b.params.layers.size()));
  for (const auto& l : b.params.layers) {
    w.put<std::int64_t>(l.W.rows());
    w.put<std::int64_t>(l.W.cols());
    w.put_bytes(l.W.data(), sizeof(double) * static_cast<std::size_t>(l.W.size()));
    w.put_vec(l.b);
  }
  const std::uint64_t sum = fnv1a(w.bytes().data(), w.bytes().size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  out.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
  if (!out) throw Error("failed writing " + path.string());
}

/// Expected network I/O shape, checked on load.
struct BundleExpectation {
  int obs_dim = 0;
  int action_dim = 0;
};

inline ModelBundle load_bundle(const std::filesystem::path& path,
                               std::optional<BundleExpectation> expect = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model bundle " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kBundleMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
    throw CorruptFileError("model bundle: file too short");
  }
  if (std::memcmp(bytes.data(), kBundleMagic, sizeof(kBundleMagic)) != 0) {
    throw CorruptFileError("model bundle: bad magic");
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof(kBundleMagic), sizeof(version));
  if (version != kBundleVersion) {
    throw IncompatibleError("model bundle: version " + std::to_string(version) +
                            " unsupported (expected " + std::to_string(kBundleVersion) + ")");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (fnv1a(bytes.data(), body) != stored) {
    throw CorruptFileError("model bundle: checksum mismatch (truncated or damaged file)");
  }

  detail::ByteReader r(bytes.data(), body);
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  r.get<std::uint32_t>();
  ModelBundle b;
  b.net.width = r.get<std::int32_t>();
  b.net.num_residual_blocks = r.get<std::int32_t>();
  b.net.obs_dim = r.get<std::int32_t>();
  b.net.action_dim = r.get<std::int32_t>();
  b.net.tau_embed_dim = r.get<std::int32_t>();
  b.net.validate();
  b.schedule.T = r.get<std::int32_t>();
  b.schedule.beta_start = r.get<double>();
  b.schedule.beta_end = r.get<double>();
  b.schedule.final_step_noise = r.get<std::uint8_t>() != 0;
  constexpr std::int64_t kMaxLen = std::int64_t{1} << 28;
  b.norm.obs_mean = r.get_vec(kMaxLen);
  b.norm.obs_std = r.get_vec(kMaxLen);
  b.norm.action_mean = r.get_vec(kMaxLen);
  b.norm.action_std = r.get_vec(kMaxLen);

  if (expect) {
    if (b.net.obs_dim != expect->obs_dim || b.net.action_dim != expect->action_dim) {
      throw IncompatibleError("model bundle: network expects obs_dim " +
                              std::to_string(b.net.obs_dim) + ", action_dim " +
                              std::to_string(b.net.action_dim) + "; caller needs " +
                              std::to_string(expect->obs_dim) + ", " +
                              std::to_string(expect->action_dim));
    }
  }

  b.params = NetParams::zeros(b.net);
  const auto count = r.get<std::int64_t>();
  if (count != static_cast<std::int64_t>(b.params.layers.size())) {
    throw CorruptFileError("model bundle: layer count does not match network config");
  }
  for (auto& l : b.params.layers) {
    const auto rows = r.get<std::int64_t>();
    const auto cols = r.get<std::int64_t>();
    if (rows != l.W.rows() || cols != l.W.cols()) {
      throw CorruptFileError("model bundle: layer shape does not match network config");
    }
    r.get_bytes(l.W.data(), sizeof(double) * static_cast<std::size_t>(l.W.size()));
    Vec bias = r.get_vec(kMaxLen);
    if (bias.size() != l.b.size()) throw CorruptFileError("model bundle: bias length mismatch");
    l.b = std::move(bias);
  }
  if (r.position() != body) throw CorruptFileError("model bundle: trailing bytes");
  for (const auto& l : b.params.layers) {
    if (!l.W.allFinite() || !l.b.allFinite()) throw CorruptFileError("model bundle: non-finite weight");
  }
  return b;
}

}  // namespace tacdiff
