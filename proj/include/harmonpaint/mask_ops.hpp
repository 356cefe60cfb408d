#pragma once

// Mask representations: binary grids, their row-major flattening, the
// tau-smoothed soft vector, and the rank-1 region weights built from it.

#include "harmonpaint/core.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace harmonpaint {

/// H x W grid of {0,1}; 1 marks the region to inpaint.
class BinaryMask {
 public:
  BinaryMask() = default;

  BinaryMask(Resolution res, std::vector<std::uint8_t> values) : res_(res), values_(std::move(values)) {
    require(res.height >= 1 && res.width >= 1, "mask dimensions must be >= 1, got " + to_string(res));
    require(values_.size() == static_cast<std::size_t>(res.patches()),
            "mask value count does not match " + to_string(res));
    for (auto v : values_) require(v <= 1, "mask values must be 0 or 1");
  }

  static BinaryMask filled(Resolution res, std::uint8_t value) {
    return BinaryMask(res, std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(res.patches(), 0)), value));
  }

  /// Rows given top to bottom.
  static BinaryMask from_rows(const std::vector<std::vector<int>>& rows) {
    require(!rows.empty() && !rows.front().empty(), "mask rows must be non-empty");
    const Resolution res{static_cast<int>(rows.size()), static_cast<int>(rows.front().size())};
    std::vector<std::uint8_t> values;
    values.reserve(static_cast<std::size_t>(res.patches()));
    for (const auto& row : rows) {
      require(static_cast<int>(row.size()) == res.width, "ragged mask rows");
      for (int v : row) {
        require(v == 0 || v == 1, "mask values must be 0 or 1");
        values.push_back(static_cast<std::uint8_t>(v));
      }
    }
    return BinaryMask(res, std::move(values));
  }

  [[nodiscard]] Resolution resolution() const { return res_; }
  [[nodiscard]] int height() const { return res_.height; }
  [[nodiscard]] int width() const { return res_.width; }
  [[nodiscard]] std::uint8_t at(int i, int j) const { return values_[static_cast<std::size_t>(i * res_.width + j)]; }
  [[nodiscard]] std::span<const std::uint8_t> values() const { return values_; }

  [[nodiscard]] int masked_count() const {
    int n = 0;
    for (auto v : values_) n += v;
    return n;
  }

  bool operator==(const BinaryMask&) const = default;

 private:
  Resolution res_;
  std::vector<std::uint8_t> values_;
};

/// Flattened binary mask, values in {0,1}.
struct FlatMask {
  Resolution source;
  Vector values;

  [[nodiscard]] Eigen::Index size() const { return values.size(); }
  [[nodiscard]] int masked_count() const { return static_cast<int>(values.sum()); }
};

/// (1 - tau) * mask + tau / HW.
struct SoftMaskVector {
  Resolution source;
  double tau = 0.0;
  Vector values;

  [[nodiscard]] Eigen::Index size() const { return values.size(); }
};

/// Area-average the mask over each target cell, then threshold at coverage
/// >= 0.5 (ties count as masked). Overlaps are computed in integer units
/// scaled by the target size, so the tie test is exact.
inline BinaryMask resize_mask(const BinaryMask& mask, Resolution target) {
  require(target.height >= 1 && target.width >= 1, "resize target must be >= 1x1, got " + to_string(target));
  const std::int64_t H = mask.height(), W = mask.width();
  const std::int64_t h = target.height, w = target.width;
  if (H == h && W == w) return mask;

  // Source row i spans [i*h, (i+1)*h); target row r spans [r*H, (r+1)*H).
  auto overlaps = [](std::int64_t src, std::int64_t dst, std::int64_t cell) {
    std::vector<std::pair<std::int64_t, std::int64_t>> spans;  // (source index, overlap length)
    const std::int64_t lo = cell * src, hi = (cell + 1) * src;
    for (std::int64_t s = lo / dst; s * dst < hi && s < src; ++s) {
      const std::int64_t a = std::max(lo, s * dst), b = std::min(hi, (s + 1) * dst);
      if (b > a) spans.emplace_back(s, b - a);
    }
    return spans;
  };

  std::vector<std::uint8_t> out(static_cast<std::size_t>(h * w));
  for (std::int64_t r = 0; r < h; ++r) {
    const auto rows = overlaps(H, h, r);
    for (std::int64_t c = 0; c < w; ++c) {
      const auto cols = overlaps(W, w, c);
      std::int64_t covered = 0;
      for (auto [si, oy] : rows)
        for (auto [sj, ox] : cols)
          if (mask.at(static_cast<int>(si), static_cast<int>(sj))) covered += oy * ox;
      // cell area in scaled units is H * W
      out[static_cast<std::size_t>(r * w + c)] = (2 * covered >= H * W) ? 1 : 0;
    }
  }
  return BinaryMask(target, std::move(out));
}

inline FlatMask flatten_mask(const BinaryMask& mask) {
  FlatMask flat{mask.resolution(), Vector(mask.resolution().patches())};
  const auto values = mask.values();
  for (std::size_t i = 0; i < values.size(); ++i) flat.values[static_cast<Eigen::Index>(i)] = values[i];
  return flat;
}

inline BinaryMask unflatten_mask(const FlatMask& flat) {
  require(flat.size() == flat.source.patches(), "flat mask length does not match its source resolution");
  std::vector<std::uint8_t> values(static_cast<std::size_t>(flat.size()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const double v = flat.values[i];
    require(v == 0.0 || v == 1.0, "flat mask values must be 0 or 1");
    values[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
  }
  return BinaryMask(flat.source, std::move(values));
}

inline SoftMaskVector soften_mask(const FlatMask& mf, double tau) {
  require(tau >= 0.0 && tau < 1.0, "tau must lie in [0, 1), got " + std::to_string(tau));
  const double hw = static_cast<double>(mf.size());
  SoftMaskVector soft{mf.source, tau, Vector(mf.size())};
  for (Eigen::Index i = 0; i < mf.size(); ++i) soft.values[i] = (1.0 - tau) * mf.values[i] + tau / hw;
  return soft;
}

/// Materialized in/out weights; in = m m^T, out = (1-m)(1-m)^T.
/// The attention paths never build these, see sams.hpp.
inline std::pair<Matrix, Matrix> region_weights(const SoftMaskVector& soft) {
  const Vector& m = soft.values;
  const Vector inv = Vector::Ones(m.size()) - m;
  return {m * m.transpose(), inv * inv.transpose()};
}

}  // namespace harmonpaint
