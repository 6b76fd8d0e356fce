// Second-order dynamic-system filter that turns low-rate policy outputs into
// a smooth 1 kHz feed-forward wrench:
//
//   F_ff'' = alpha * (beta * (F_df - F_ff) - F_ff')
//
// integrated with semi-implicit Euler. The default time unit is one control
// tick (step 1); `TimeUnit::seconds` integrates with step dt instead.
#pragma once

#include "tacdiff/core.hpp"

#include <atomic>
#include <mutex>
#include <optional>
#include <vector>

namespace tacdiff {

enum class FilterTimeUnit { ticks, seconds };

struct FilterConfig {
  double alpha = 0.9;
  double beta = 0.3;
  FilterTimeUnit time_unit = FilterTimeUnit::ticks;
  double dt = 1e-3;       // only used with FilterTimeUnit::seconds
  bool enabled = true;    // false = pass-through (zero-order hold only)

  double step() const { return time_unit == FilterTimeUnit::ticks ? 1.0 : dt; }
  void validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0) || !(dt > 0.0)) {
      throw RangeError("filter coefficients must be positive");
    }
  }
};

template <int Dim = 6>
struct FilterState {
  using Vector = Eigen::Matrix<double, Dim, 1>;
  Vector f_ff = Vector::Zero();
  Vector f_ff_dot = Vector::Zero();
};

template <int Dim>
FilterState<Dim> filter_step(const FilterState<Dim>& s,
                             const typename FilterState<Dim>::Vector& f_df,
                             const FilterConfig& cfg = {}) {
  if (!f_df.allFinite()) throw NonFiniteError("filter_step: non-finite input");
  if (!cfg.enabled) return {f_df, FilterState<Dim>::Vector::Zero()};
  const double h = cfg.step();
  const auto acc = cfg.alpha * (cfg.beta * (f_df - s.f_ff) - s.f_ff_dot);
  FilterState<Dim> out;
  out.f_ff_dot = s.f_ff_dot + acc * h;
  out.f_ff = s.f_ff + out.f_ff_dot * h;
  return out;
}

/// A policy output and the tick at which it becomes available.
template <int Dim = 6>
struct TimedCommand {
  long tick = 0;
  typename FilterState<Dim>::Vector value;
};

/// Zero-order-holds `commands` (sorted by tick) and filters every tick.
/// Before the first command arrives the held input is zero.
template <int Dim = 6>
std::vector<typename FilterState<Dim>::Vector> run_filtered(
    const std::vector<TimedCommand<Dim>>& commands, long total_ticks, const FilterConfig& cfg = {}) {
  using V = typename FilterState<Dim>::Vector;
  if (commands.empty()) throw RangeError("run_filtered: empty policy sequence");
  if (total_ticks < 0) throw RangeError("run_filtered: negative length");
  std::vector<V> out;
  out.reserve(static_cast<std::size_t>(total_ticks));
  FilterState<Dim> s;
  V held = V::Zero();
  std::size_t next = 0;
  for (long t = 0; t < total_ticks; ++t) {
    while (next < commands.size() && commands[next].tick <= t) held = commands[next++].value;
    s = filter_step(s, held, cfg);
    out.push_back(s.f_ff);
  }
  return out;
}

/// Convenience overload: one command every `inference_period_ticks`,
/// starting at tick 0.
template <int Dim = 6>
std::vector<typename FilterState<Dim>::Vector> run_filtered(
    const std::vector<typename FilterState<Dim>::Vector>& outputs, int inference_period_ticks,
    long total_ticks, const FilterConfig& cfg = {}) {
  if (inference_period_ticks < 1) throw RangeError("inference period must be >= 1 tick");
  std::vector<TimedCommand<Dim>> cmds;
  cmds.reserve(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i)
    cmds.push_back({static_cast<long>(i) * inference_period_ticks, outputs[i]});
  return run_filtered<Dim>(cmds, total_ticks, cfg);
}

/// Single-producer single-consumer "latest value" slot. The consumer never
/// blocks on the producer: `latest()` returns whatever was published last.
template <typename T>
class LatestValueSlot {
 public:
  void publish(T value) {
    std::lock_guard lock(mutex_);
    value_ = std::move(value);
    version_.fetch_add(1, std::memory_order_release);
  }
  /// Returns the newest value if it differs from `seen_version`.
  std::optional<T> take_if_newer(std::uint64_t& seen_version) {
    const auto v = version_.load(std::memory_order_acquire);
    if (v == seen_version) return std::nullopt;
    std::unique_lock lock(mutex_, std::try_to_lock);
    if (!lock.owns_lock() || !value_) return std::nullopt;
    seen_version = version_.load(std::memory_order_relaxed);
    return value_;
  }

 private:
  std::mutex mutex_;
  std::optional<T> value_;
  std::atomic<std::uint64_t> version_{0};
};

}  // namespace tacdiff
