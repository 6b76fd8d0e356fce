// Residual-MLP noise estimator eps_hat(obs, a_tau, tau): forward pass,
// exact backpropagation of the mean noise-prediction loss, Adam, and the
// minibatch training loop.
//
// Layout (width N, B residual blocks):
//   x   = [obs ; a_tau ; sinusoidal(tau)]
//   h_0 = relu(W_in x + b_in)
//   h_k = h_{k-1} + W_k2 relu(W_k1 h_{k-1} + b_k1) + b_k2      k = 1..B
//   y   = W_out h_B + b_out
#pragma once

#include "tacdiff/core.hpp"
#include "tacdiff/ddpm.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace tacdiff {

struct NetConfig {
  int width = 256;
  int num_residual_blocks = 2;
  int obs_dim = 36;
  int action_dim = 6;
  int tau_embed_dim = 16;

  int input_dim() const { return obs_dim + action_dim + tau_embed_dim; }

  void validate() const {
    if (width < 1 || num_residual_blocks < 1 || obs_dim < 1 || action_dim < 1 ||
        tau_embed_dim < 2 || tau_embed_dim % 2 != 0) {
      throw RangeError("invalid network configuration");
    }
  }
  bool operator==(const NetConfig&) const = default;
};

struct Layer {
  Mat W;
  Vec b;
};

/// Network weights. Layer order: input, (inner, outer) per residual block, output.
/// Gradients use the same type.
struct NetParams {
  NetConfig config;
  std::vector<Layer> layers;

  static NetParams zeros(const NetConfig& cfg) {
    cfg.validate();
    NetParams p;
    p.config = cfg;
    const int n = cfg.width;
    p.layers.push_back({Mat::Zero(n, cfg.input_dim()), Vec::Zero(n)});
    for (int k = 0; k < cfg.num_residual_blocks; ++k) {
      p.layers.push_back({Mat::Zero(n, n), Vec::Zero(n)});
      p.layers.push_back({Mat::Zero(n, n), Vec::Zero(n)});
    }
    p.layers.push_back({Mat::Zero(cfg.action_dim, n), Vec::Zero(cfg.action_dim)});
    return p;
  }

  /// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
  static NetParams init(const NetConfig& cfg, std::uint64_t seed) {
    NetParams p = zeros(cfg);
    std::mt19937_64 rng(seed);
    for (auto& layer : p.layers) {
      const double bound = std::sqrt(6.0 / static_cast<double>(layer.W.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index j = 0; j < layer.W.cols(); ++j)
        for (Eigen::Index i = 0; i < layer.W.rows(); ++i) layer.W(i, j) = u(rng);
    }
    return p;
  }

  const Layer& input() const { return layers.front(); }
  const Layer& inner(int k) const { return layers[1 + 2 * k]; }
  const Layer& outer(int k) const { return layers[2 + 2 * k]; }
  const Layer& output() const { return layers.back(); }
  Layer& input() { return layers.front(); }
  Layer& inner(int k) { return layers[1 + 2 * k]; }
  Layer& outer(int k) { return layers[2 + 2 * k]; }
  Layer& output() { return layers.back(); }

  Eigen::Index num_parameters() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.W.size() + l.b.size();
    return n;
  }

  Vec flatten() const {
    Vec out(num_parameters());
    Eigen::Index o = 0;
    for (const auto& l : layers) {
      out.segment(o, l.W.size()) = l.W.reshaped();
      o += l.W.size();
      out.segment(o, l.b.size()) = l.b;
      o += l.b.size();
    }
    return out;
  }

  void assign(const Vec& flat) {
    require_dim(flat.size(), num_parameters(), "NetParams::assign");
    Eigen::Index o = 0;
    for (auto& l : layers) {
      l.W.reshaped() = flat.segment(o, l.W.size());
      o += l.W.size();
      l.b = flat.segment(o, l.b.size());
      o += l.b.size();
    }
  }

  bool operator==(const NetParams& other) const {
    if (!(config == other.config) || layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].W != other.layers[i].W || layers[i].b != other.layers[i].b) return false;
    }
    return true;
  }
};

/// Sinusoidal position code of the diffusion step: [sin(tau w_0), cos(tau w_0), ...]
/// with w_i = 10000^(-i / (dim/2)).
inline Vec tau_embedding(int tau, int dim) {
  Vec e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    e(2 * i) = std::sin(tau * w);
    e(2 * i + 1) = std::cos(tau * w);
  }
  return e;
}

namespace detail {

inline void check_layer_finite(const Mat& m, std::size_t layer) {
  if (!m.allFinite()) {
    throw NonFiniteError("noise estimator: non-finite activation at layer " +
                         std::to_string(layer));
  }
}

}  // namespace detail

/// Activations kept for backpropagation.
struct ForwardCache {
  Mat x;                 // stacked network input
  Mat z0;                // input layer pre-activation
  std::vector<Mat> h;    // residual stream entering block k (h[B] is the final stream)
  std::vector<Mat> z1;   // inner pre-activation of block k
};

/// Batched forward; each column is one sample.
inline Mat forward_batch(const NetParams& p, const Mat& obs, const Mat& a_tau,
                         std::span<const int> taus, ForwardCache* cache = nullptr) {
  const NetConfig& c = p.config;
  const Eigen::Index batch = obs.cols();
  require_dim(obs.rows(), c.obs_dim, "forward observation");
  require_dim(a_tau.rows(), c.action_dim, "forward action");
  require_dim(a_tau.cols(), batch, "forward batch size");
  require_dim(static_cast<Eigen::Index>(taus.size()), batch, "forward step count");

  Mat x(c.input_dim(), batch);
  x.topRows(c.obs_dim) = obs;
  x.middleRows(c.obs_dim, c.action_dim) = a_tau;
  for (Eigen::Index j = 0; j < batch; ++j)
    x.col(j).tail(c.tau_embed_dim) = tau_embedding(taus[j], c.tau_embed_dim);

  Mat z0 = p.input().W * x;
  z0.colwise() += p.input().b;
  Mat h = z0.cwiseMax(0.0);
  detail::check_layer_finite(h, 0);

  if (cache) {
    cache->h.clear();
    cache->z1.clear();
  }
  for (int k = 0; k < c.num_residual_blocks; ++k) {
    Mat z1 = p.inner(k).W * h;
    z1.colwise() += p.inner(k).b;
    Mat next = h;
    next.noalias() += p.outer(k).W * z1.cwiseMax(0.0);
    next.colwise() += p.outer(k).b;
    detail::check_layer_finite(next, static_cast<std::size_t>(1 + 2 * k + 1));
    if (cache) {
      cache->h.push_back(std::move(h));
      cache->z1.push_back(std::move(z1));
    }
    h = std::move(next);
  }
  Mat y = p.output().W * h;
  y.colwise() += p.output().b;
  detail::check_layer_finite(y, p.layers.size() - 1);
  if (cache) {
    cache->h.push_back(std::move(h));
    cache->x = std::move(x);
    cache->z0 = std::move(z0);
  }
  return y;
}

/// Single-sample forward (matrix-vector path).
inline Vec forward(const NetParams& p, const Vec& obs, const Vec& a_tau, int tau) {
  const NetConfig& c = p.config;
  require_dim(obs.size(), c.obs_dim, "forward observation");
  require_dim(a_tau.size(), c.action_dim, "forward action");
  if (!obs.allFinite() || !a_tau.allFinite()) throw NonFiniteError("forward: non-finite input");
  Vec x(c.input_dim());
  x << obs, a_tau, tau_embedding(tau, c.tau_embed_dim);
  Vec h = (p.input().W * x + p.input().b).cwiseMax(0.0);
  detail::check_layer_finite(h, 0);
  Vec z(c.width);
  for (int k = 0; k < c.num_residual_blocks; ++k) {
    z.noalias() = p.inner(k).W * h;
    z += p.inner(k).b;
    h.noalias() += p.outer(k).W * z.cwiseMax(0.0);
    h += p.outer(k).b;
    detail::check_layer_finite(h, static_cast<std::size_t>(2 + 2 * k));
  }
  Vec y = p.output().W * h + p.output().b;
  detail::check_layer_finite(y, p.layers.size() - 1);
  return y;
}

/// Training minibatch: diffused actions with their step indices and the
/// noise that produced them.
struct Batch {
  Mat obs;
  Mat a_tau;
  std::vector<int> tau;
  Mat eps;

  Eigen::Index size() const { return obs.cols(); }
};

struct Gradients {
  NetParams grad;
  double loss = 0.0;
};

/// Mean noise-prediction loss of a batch (no gradient).
inline double batch_loss(const NetParams& p, const Batch& b) {
  const Mat y = forward_batch(p, b.obs, b.a_tau, b.tau);
  require_dim(b.eps.rows(), y.rows(), "batch noise");
  return (y - b.eps).colwise().squaredNorm().mean();
}

/// Exact gradient of mean_j ||eps_hat_j - eps_j||^2 with respect to every parameter.
inline Gradients backward(const NetParams& p, const Batch& b) {
  if (b.size() == 0) throw ShapeError("backward: empty batch");
  require_dim(b.eps.rows(), p.config.action_dim, "batch noise");
  require_dim(b.eps.cols(), b.size(), "batch noise count");
  ForwardCache cache;
  const Mat y = forward_batch(p, b.obs, b.a_tau, b.tau, &cache);
  const Mat diff = y - b.eps;
  const double inv_b = 1.0 / static_cast<double>(b.size());

  Gradients g{NetParams::zeros(p.config), diff.colwise().squaredNorm().sum() * inv_b};
  Mat dy = (2.0 * inv_b) * diff;

  const int blocks = p.config.num_residual_blocks;
  g.grad.output().W.noalias() = dy * cache.h[blocks].transpose();
  g.grad.output().b = dy.rowwise().sum();
  Mat dh = p.output().W.transpose() * dy;

  for (int k = blocks - 1; k >= 0; --k) {
    const Mat& z1 = cache.z1[k];
    g.grad.outer(k).W.noalias() = dh * z1.cwiseMax(0.0).transpose();
    g.grad.outer(k).b = dh.rowwise().sum();
    Mat dz1 = p.outer(k).W.transpose() * dh;
    dz1.array() *= (z1.array() > 0.0).cast<double>();
    g.grad.inner(k).W.noalias() = dz1 * cache.h[k].transpose();
    g.grad.inner(k).b = dz1.rowwise().sum();
    dh.noalias() += p.inner(k).W.transpose() * dz1;
  }
  dh.array() *= (cache.z0.array() > 0.0).cast<double>();
  g.grad.input().W.noalias() = dh * cache.x.transpose();
  g.grad.input().b = dh.rowwise().sum();
  return g;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Layer> m;
  std::vector<Layer> v;
  long step = 0;

  static AdamState zeros_like(const NetParams& p) {
    AdamState s;
    for (const auto& l : p.layers) {
      s.m.push_back({Mat::Zero(l.W.rows(), l.W.cols()), Vec::Zero(l.b.size())});
      s.v.push_back({Mat::Zero(l.W.rows(), l.W.cols()), Vec::Zero(l.b.size())});
    }
    return s;
  }
};

/// Bias-corrected Adam: p -= lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(NetParams& p, const NetParams& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (grads.layers.size() != p.layers.size() || state.m.size() != p.layers.size()) {
    throw ShapeError("adam_step: parameter/gradient/state layout mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const auto& gl = grads.layers[i];
    require_dim(gl.W.size(), l.W.size(), "adam_step gradient");
    state.m[i].W = cfg.beta1 * state.m[i].W + (1.0 - cfg.beta1) * gl.W;
    state.v[i].W = cfg.beta2 * state.v[i].W + (1.0 - cfg.beta2) * gl.W.cwiseProduct(gl.W);
    l.W.array() -= cfg.learning_rate * (state.m[i].W.array() / bc1) /
                   ((state.v[i].W.array() / bc2).sqrt() + cfg.epsilon);
    state.m[i].b = cfg.beta1 * state.m[i].b + (1.0 - cfg.beta1) * gl.b;
    state.v[i].b = cfg.beta2 * state.v[i].b + (1.0 - cfg.beta2) * gl.b.cwiseProduct(gl.b);
    l.b.array() -= cfg.learning_rate * (state.m[i].b.array() / bc1) /
                   ((state.v[i].b.array() / bc2).sqrt() + cfg.epsilon);
  }
}

struct TrainConfig {
  int epochs = 300;
  int batch_size = 256;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  int validate_every = 5;
  /// Cap on validation samples per evaluation (0 = all).
  Eigen::Index max_validation_samples = 20000;
};

/// Normalized (conditioning, clean action) pairs stored one per column.
struct TrainingSet {
  Mat obs;
  Mat actions;

  Eigen::Index size() const { return obs.cols(); }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> validation_loss;
};

struct TrainResult {
  NetParams params;
  std::vector<EpochLog> history;
};

namespace detail {

template <typename Rng>
Batch make_batch(const TrainingSet& data, std::span<const Eigen::Index> idx,
                 const VarianceSchedule& sched, Rng& rng) {
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  Batch b;
  b.obs.resize(data.obs.rows(), n);
  b.a_tau.resize(data.actions.rows(), n);
  b.eps.resize(data.actions.rows(), n);
  b.tau.resize(n);
  std::uniform_int_distribution<int> step(1, sched.T);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < n; ++j) {
    b.obs.col(j) = data.obs.col(idx[j]);
    const int tau = step(rng);
    b.tau[j] = tau;
    for (Eigen::Index i = 0; i < b.eps.rows(); ++i) b.eps(i, j) = normal(rng);
    const double ab = sched.alpha_bar[tau - 1];
    b.a_tau.col(j) = std::sqrt(ab) * data.actions.col(idx[j]) + std::sqrt(1.0 - ab) * b.eps.col(j);
  }
  return b;
}

}  // namespace detail

/// Mean loss over (a capped prefix of) a dataset with a fixed noise stream,
/// so successive evaluations are comparable.
inline double evaluate_loss(const NetParams& p, const TrainingSet& data,
                            const VarianceSchedule& sched, std::uint64_t seed,
                            Eigen::Index max_samples = 0, Eigen::Index chunk = 4096) {
  Eigen::Index n = data.size();
  if (max_samples > 0) n = std::min(n, max_samples);
  if (n == 0) throw RangeError("evaluate_loss: empty dataset");
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  double total = 0.0;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    const Batch b = detail::make_batch(data, std::span(idx).subspan(start, len), sched, rng);
    total += batch_loss(p, b) * static_cast<double>(len);
  }
  return total / static_cast<double>(n);
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minibatch Adam on the noise-prediction loss. Each epoch is one shuffled
/// pass over `train_set`; validation runs at every multiple of
/// `validate_every` epochs when a validation set is supplied.
inline TrainResult train(const TrainingSet& train_set, const TrainingSet* validation,
                         const NetConfig& net_cfg, const TrainConfig& cfg,
                         const VarianceSchedule& sched, const EpochCallback& on_epoch = {}) {
  net_cfg.validate();
  if (train_set.size() == 0) throw RangeError("train: empty training set");
  if (cfg.batch_size < 1 || !(cfg.adam.learning_rate > 0.0) || cfg.epochs < 0) {
    throw RangeError("train: invalid training configuration");
  }
  require_dim(train_set.obs.rows(), net_cfg.obs_dim, "training observations");
  require_dim(train_set.actions.rows(), net_cfg.action_dim, "training actions");

  TrainResult result{NetParams::init(net_cfg, cfg.seed), {}};
  AdamState state = AdamState::zeros_like(result.params);
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

  std::vector<Eigen::Index> order(train_set.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    Eigen::Index seen = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      const Batch b = detail::make_batch(train_set, std::span(order).subspan(start, len), sched, rng);
      Gradients g = backward(result.params, b);
      if (!std::isfinite(g.loss)) {
        throw NonFiniteError("train: loss diverged in epoch " + std::to_string(epoch));
      }
      adam_step(result.params, g.grad, state, cfg.adam);
      sum += g.loss * static_cast<double>(len);
      seen += static_cast<Eigen::Index>(len);
    }
    EpochLog log{epoch, sum / static_cast<double>(seen), std::nullopt};
    if (validation && validation->size() > 0 && cfg.validate_every > 0 &&
        epoch % cfg.validate_every == 0) {
      log.validation_loss = evaluate_loss(result.params, *validation, sched, cfg.seed + 1,
                                          cfg.max_validation_samples);
    }
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace tacdiff
