#pragma once

// Shared numeric types, error types and the seeded random generator used by
// every other header in the library.

#include <Eigen/Dense>

#include <cmath>
#include <compare>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace harmonpaint {

/// Row-major dense matrix. Patch-indexed tensors keep one patch per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Spatial resolution of a patch grid. Flattening is row-major:
/// patch (i, j) has flat index i * width + j.
struct Resolution {
  int height = 0;
  int width = 0;

  [[nodiscard]] int patches() const { return height * width; }
  auto operator<=>(const Resolution&) const = default;
};

inline std::string to_string(Resolution r) {
  return std::to_string(r.height) + "x" + std::to_string(r.width);
}

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when the unmasked region is empty, so no style statistics exist.
class UnrepresentableStyle : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt or truncated attention dump.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// SplitMix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Deterministic per-purpose sub-seed, e.g. derive_seed(seed, "noise").
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  return mix64(seed ^ mix64(fnv1a(purpose)));
}

/// Seeded generator with a fully specified output sequence: mt19937_64 for
/// raw bits, 53-bit uniforms in (0,1), and Box-Muller normals.
/// std::normal_distribution is avoided because its algorithm is
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal();
    return m;
  }

  Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(lo, hi);
    return m;
  }

  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace harmonpaint
