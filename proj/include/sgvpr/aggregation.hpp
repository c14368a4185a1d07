#pragma once

// Multi-modal spatial pyramid aggregation.
//
// Patch tokens are viewed as a g_h x g_w map. The descriptor is
//   [f_global, GeM of each 2x2 cell (row-major), GeM of each 3x3 cell]
// L2-normalised, i.e. 14 * D values.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sgvpr/common.hpp"

namespace sgvpr {

inline constexpr double kGemEps = 1e-6;
inline constexpr double kDefaultGemP = 3.0;
inline constexpr int kPyramidBlocks = 1 + 4 + 9;

struct FeatureMap {
  int grid_h = 0;
  int grid_w = 0;
  Mat values;  // (grid_h * grid_w) x D, row-major cell order

  FeatureMap() = default;
  FeatureMap(int gh, int gw, Mat v) : grid_h(gh), grid_w(gw), values(std::move(v)) {
    if (gh <= 0 || gw <= 0 || values.rows() != static_cast<Eigen::Index>(gh) * gw)
      throw std::invalid_argument(detail::concat("feature map: ", values.rows(), " tokens do not fill a ",
                                                 gh, "x", gw, " grid"));
  }

  int dim() const { return static_cast<int>(values.cols()); }
  auto cell(int r, int c) const { return values.row(static_cast<Eigen::Index>(r) * grid_w + c); }
};

// Half-open rectangle of grid cells.
struct Region {
  int row0, row1, col0, col1;

  int cells() const { return (row1 - row0) * (col1 - col0); }
  bool operator==(const Region&) const = default;
};

// k x k contiguous cells, boundaries at floor(i * g / k), row-major order.
inline std::vector<Region> partition_grid(int grid_h, int grid_w, int k) {
  if (k <= 0) throw std::invalid_argument("partition_grid: k must be positive");
  if (grid_h < k || grid_w < k)
    throw std::invalid_argument(detail::concat("partition_grid: ", grid_h, "x", grid_w,
                                               " grid is smaller than ", k, "x", k));
  std::vector<Region> out;
  out.reserve(static_cast<std::size_t>(k) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      out.push_back({i * grid_h / k, (i + 1) * grid_h / k, j * grid_w / k, (j + 1) * grid_w / k});
  return out;
}

inline std::vector<Region> partition_grid(const FeatureMap& map, int k) {
  return partition_grid(map.grid_h, map.grid_w, k);
}

inline Mat gather_region(const FeatureMap& map, const Region& r) {
  Mat rows(r.cells(), map.dim());
  Eigen::Index k = 0;
  for (int y = r.row0; y < r.row1; ++y)
    for (int x = r.col0; x < r.col1; ++x) rows.row(k++) = map.cell(y, x);
  return rows;
}

// Generalised mean per channel over the rows of `region`, inputs clamped
// at eps: out_d = (mean_r max(x_rd, eps)^p)^(1/p).
inline Vec gem_pool(const Mat& region, double p, double eps = kGemEps) {
  if (region.rows() == 0) throw std::invalid_argument("gem_pool: empty region");
  if (!(p >= 1.0)) throw std::invalid_argument(detail::concat("gem_pool: p must be >= 1, got ", p));
  const Eigen::Index n = region.rows();
  Vec out(region.cols());
  for (Eigen::Index d = 0; d < region.cols(); ++d) {
    if (p == 1.0) {
      double sum = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) sum += std::max(region(r, d), eps);
      out(d) = sum / static_cast<double>(n);
      continue;
    }
    // Scale by the channel max so large p cannot overflow.
    double top = eps;
    for (Eigen::Index r = 0; r < n; ++r) top = std::max(top, region(r, d));
    double sum = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) sum += std::pow(std::max(region(r, d), eps) / top, p);
    out(d) = top * std::pow(sum / static_cast<double>(n), 1.0 / p);
  }
  return out;
}

// Gradient of gem_pool. `pooled` is the forward output. Returns dL/dregion
// and adds dL/dp into d_p.
inline Mat gem_pool_backward(const Mat& region, double p, const Vec& pooled, const Vec& d_out,
                             double& d_p, double eps = kGemEps) {
  const Eigen::Index n = region.rows();
  Mat d_region = Mat::Zero(n, region.cols());
  for (Eigen::Index d = 0; d < region.cols(); ++d) {
    const double y = pooled(d);
    double mean_pow = 0.0, mean_pow_log = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double x = region(r, d);
      const double u = std::max(x, eps) / y;
      const double up = std::pow(u, p);
      mean_pow += up;
      mean_pow_log += up * std::log(u);
      if (x > eps) d_region(r, d) = d_out(d) * std::pow(u, p - 1.0) / static_cast<double>(n);
    }
    mean_pow /= static_cast<double>(n);
    mean_pow_log /= static_cast<double>(n);
    // d ln y / dp = -ln(M)/p^2 + E[u^p ln u]/(p M) with u = x / y; M = 1
    // up to rounding since y is the generalised mean itself.
    d_p += d_out(d) * y * (-std::log(mean_pow) / (p * p) + mean_pow_log / (p * mean_pow));
  }
  return d_region;
}

inline Vec l2_normalize(const Vec& x) {
  const double n = x.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("l2_normalize: zero or non-finite norm");
  return x / n;
}

// Backward of y = x / |x| given y and |x|.
inline Vec l2_normalize_backward(const Vec& y, double norm, const Vec& dy) {
  return (dy - y * y.dot(dy)) / norm;
}

// Concatenated pyramid before normalisation.
inline Vec pyramid_concat(const FeatureMap& map, const Vec& f_global, double p) {
  const int dim = map.dim();
  if (f_global.size() != dim)
    throw std::invalid_argument(detail::concat("pyramid: f_global dim ", f_global.size(), " != map dim ", dim));
  const auto cells2 = partition_grid(map, 2);
  const auto cells3 = partition_grid(map, 3);
  Vec out(static_cast<Eigen::Index>(kPyramidBlocks) * dim);
  out.head(dim) = f_global;
  Eigen::Index off = dim;
  for (const auto* level : {&cells2, &cells3})
    for (const Region& r : *level) {
      out.segment(off, dim) = gem_pool(gather_region(map, r), p);
      off += dim;
    }
  return out;
}

inline Vec pyramid_aggregate(const FeatureMap& map, const Vec& f_global, double p) {
  return l2_normalize(pyramid_concat(map, f_global, p));
}

struct PyramidGrad {
  Mat map;  // same shape as map.values
  Vec f_global;
  double p = 0.0;
};

inline PyramidGrad pyramid_aggregate_backward(const FeatureMap& map, const Vec& f_global, double p,
                                              const Vec& d_desc) {
  const int dim = map.dim();
  const Vec raw = pyramid_concat(map, f_global, p);
  const double norm = raw.norm();
  const Vec d_raw = l2_normalize_backward(raw / norm, norm, d_desc);

  PyramidGrad g{Mat::Zero(map.values.rows(), dim), d_raw.head(dim), 0.0};
  Eigen::Index off = dim;
  for (int k : {2, 3})
    for (const Region& r : partition_grid(map, k)) {
      const Mat region = gather_region(map, r);
      const Mat d_region = gem_pool_backward(region, p, raw.segment(off, dim), d_raw.segment(off, dim), g.p);
      Eigen::Index row = 0;
      for (int y = r.row0; y < r.row1; ++y)
        for (int x = r.col0; x < r.col1; ++x)
          g.map.row(static_cast<Eigen::Index>(y) * map.grid_w + x) += d_region.row(row++);
      off += dim;
    }
  return g;
}

}  // namespace sgvpr
