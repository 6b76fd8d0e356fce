// Per-dimension z-scoring of observations and actions.
#pragma once

#include "tacdiff/core.hpp"

#include <algorithm>

namespace tacdiff {

inline constexpr double kStdFloor = 1e-6;

struct NormStats {
  Vec obs_mean;
  Vec obs_std;
  Vec action_mean;
  Vec action_std;

  /// Identity statistics (mean 0, std 1).
  static NormStats identity(Eigen::Index obs_dim, Eigen::Index action_dim) {
    return {Vec::Zero(obs_dim), Vec::Ones(obs_dim), Vec::Zero(action_dim), Vec::Ones(action_dim)};
  }
  bool operator==(const NormStats&) const = default;
};

/// Column-wise mean and floored population std of samples stored one per column.
inline std::pair<Vec, Vec> column_moments(const Mat& samples) {
  if (samples.cols() == 0) throw RangeError("cannot compute statistics of an empty set");
  const double n = static_cast<double>(samples.cols());
  Vec mean = samples.rowwise().sum() / n;
  Vec var = (samples.colwise() - mean).array().square().rowwise().sum() / n;
  Vec std = var.array().sqrt().max(kStdFloor);
  return {mean, std};
}

inline Vec normalize(const Vec& x, const Vec& mean, const Vec& std) {
  require_dim(x.size(), mean.size(), "normalize");
  return ((x - mean).array() / std.array()).matrix();
}

inline Vec denormalize(const Vec& z, const Vec& mean, const Vec& std) {
  require_dim(z.size(), mean.size(), "denormalize");
  return (z.array() * std.array()).matrix() + mean;
}

}  // namespace tacdiff
