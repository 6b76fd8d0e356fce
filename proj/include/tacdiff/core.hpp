// Common vector types and the error hierarchy shared by every tacdiff module.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tacdiff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension or layout mismatch between arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its documented domain (step index, probability, ...).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared where only finite values are allowed.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Rank-deficient Jacobian handed to a pseudo-inverse.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// File failed structural validation (truncated, bad checksum, bad row).
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

/// File is well formed but was written for a different schema or shape.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const std::string& what) {
  if (!m.allFinite()) throw NonFiniteError(what + ": non-finite value");
}

inline void require_dim(Eigen::Index got, Eigen::Index want, const std::string& what) {
  if (got != want) {
    throw ShapeError(what + ": expected dimension " + std::to_string(want) + ", got " +
                     std::to_string(got));
  }
}

/// splitmix64 finalizer; used to derive independent per-episode seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ b);
}

}  // namespace tacdiff
