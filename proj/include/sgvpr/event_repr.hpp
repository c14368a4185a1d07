#pragma once

// Event stream -> event frame -> backbone input image.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "sgvpr/common.hpp"

namespace sgvpr {

struct Resolution {
  int width = 0;
  int height = 0;

  bool operator==(const Resolution&) const = default;
};

struct Event {
  std::int64_t t = 0;  // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // +1 or -1

  bool operator==(const Event&) const = default;
};

struct EventStream {
  Resolution resolution;
  std::vector<Event> events;

  bool operator==(const EventStream&) const = default;
};

// Throws DataError on the first event that breaks the stream invariants
// (bounds, polarity, timestamp order).
inline void validate_stream(const EventStream& stream) {
  const auto& r = stream.resolution;
  if (r.width <= 0 || r.height <= 0)
    throw DataError(detail::concat("invalid resolution ", r.width, "x", r.height));
  for (std::size_t k = 0; k < stream.events.size(); ++k) {
    const Event& e = stream.events[k];
    if (e.x >= r.width || e.y >= r.height)
      throw DataError(detail::concat("event ", k, " at (", e.x, ",", e.y,
                                     ") outside ", r.width, "x", r.height));
    if (e.p != 1 && e.p != -1)
      throw DataError(detail::concat("event ", k, " has polarity ", int(e.p)));
    if (e.t < 0) throw DataError(detail::concat("event ", k, " has negative timestamp"));
    if (k > 0 && e.t < stream.events[k - 1].t)
      throw DataError(detail::concat("event ", k, " breaks timestamp order"));
  }
}

inline constexpr std::int64_t kDefaultWindowUs = 33000;

// Splits a stream into consecutive half-open windows of length window_us.
// Windows are anchored at the first event timestamp, window k covering
// [t0 + k*window, t0 + (k+1)*window). Empty interior windows are kept so
// that index k always maps to the same time span.
inline std::vector<EventStream> slice_stream(const EventStream& stream,
                                             std::int64_t window_us) {
  if (window_us <= 0)
    throw std::invalid_argument(detail::concat("window must be positive, got ", window_us));
  std::vector<EventStream> out;
  if (stream.events.empty()) return out;
  const std::int64_t t0 = stream.events.front().t;
  const std::int64_t span = stream.events.back().t - t0;
  const std::size_t count = static_cast<std::size_t>(span / window_us) + 1;
  out.resize(count, EventStream{stream.resolution, {}});
  for (const Event& e : stream.events) {
    const auto k = static_cast<std::size_t>((e.t - t0) / window_us);
    out[k].events.push_back(e);
  }
  return out;
}

// Signed per-pixel accumulation, row-major (values(y, x)).
struct EventFrame {
  Resolution resolution;
  Mat values;

  bool operator==(const EventFrame& o) const {
    return resolution == o.resolution && values == o.values;
  }
};

inline EventFrame accumulate_frame(const EventStream& stream) {
  const auto& r = stream.resolution;
  if (r.width <= 0 || r.height <= 0)
    throw DataError(detail::concat("invalid resolution ", r.width, "x", r.height));
  EventFrame frame{r, Mat::Zero(r.height, r.width)};
  for (std::size_t k = 0; k < stream.events.size(); ++k) {
    const Event& e = stream.events[k];
    if (e.x >= r.width || e.y >= r.height)
      throw std::out_of_range(detail::concat("event ", k, " at (", e.x, ",", e.y,
                                             ") outside ", r.width, "x", r.height));
    frame.values(e.y, e.x) += e.p;
  }
  return frame;
}

// 3 x S x S image in [0, 1], grayscale replicated to three channels.
struct ImageTensor {
  int side = 0;
  std::array<Mat, 3> channels;

  const Mat& gray() const { return channels[0]; }
};

inline constexpr double kDefaultClipPercentile = 0.99;

// Linear-interpolated percentile (q in [0, 1]) of the non-zero |values|.
// Returns 0 for an all-zero frame.
inline double abs_percentile(const Mat& values, double q) {
  std::vector<double> mags;
  mags.reserve(static_cast<std::size_t>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double a = std::abs(values.data()[i]);
    if (a > 0.0) mags.push_back(a);
  }
  if (mags.empty()) return 0.0;
  std::sort(mags.begin(), mags.end());
  const double pos = q * static_cast<double>(mags.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, mags.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return mags[lo] + frac * (mags[hi] - mags[lo]);
}

// Bilinear resize with half-pixel centres and edge clamping. A resize to
// the same size is the identity.
inline Mat resize_bilinear(const Mat& src, int out_rows, int out_cols) {
  if (out_rows <= 0 || out_cols <= 0)
    throw std::invalid_argument("resize_bilinear: target size must be positive");
  const Eigen::Index in_rows = src.rows();
  const Eigen::Index in_cols = src.cols();
  if (in_rows == out_rows && in_cols == out_cols) return src;
  Mat out(out_rows, out_cols);
  const double sy = static_cast<double>(in_rows) / out_rows;
  const double sx = static_cast<double>(in_cols) / out_cols;
  auto coord = [](double c, Eigen::Index n, Eigen::Index& i0, Eigen::Index& i1, double& w) {
    c = std::clamp(c, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<Eigen::Index>(std::floor(c));
    i1 = std::min<Eigen::Index>(i0 + 1, n - 1);
    w = c - static_cast<double>(i0);
  };
  for (int r = 0; r < out_rows; ++r) {
    Eigen::Index y0, y1;
    double wy;
    coord((r + 0.5) * sy - 0.5, in_rows, y0, y1, wy);
    for (int c = 0; c < out_cols; ++c) {
      Eigen::Index x0, x1;
      double wx;
      coord((c + 0.5) * sx - 0.5, in_cols, x0, x1, wx);
      const double top = (1 - wx) * src(y0, x0) + wx * src(y0, x1);
      const double bot = (1 - wx) * src(y1, x0) + wx * src(y1, x1);
      out(r, c) = (1 - wy) * top + wy * bot;
    }
  }
  return out;
}

// Clips at the given percentile of |values|, maps [-cap, cap] onto [0, 1]
// (zero accumulation lands on 0.5), resizes to side x side.
inline ImageTensor frame_to_image(const EventFrame& frame, int side,
                                  double clip_percentile = kDefaultClipPercentile) {
  if (side <= 0) throw std::invalid_argument(detail::concat("image side must be positive, got ", side));
  ImageTensor img;
  img.side = side;
  const double cap = abs_percentile(frame.values, clip_percentile);
  Mat gray;
  if (cap <= 0.0) {
    gray = Mat::Constant(side, side, 0.5);
  } else {
    const Mat mapped = frame.values.unaryExpr(
        [cap](double v) { return std::clamp(v, -cap, cap) / (2.0 * cap) + 0.5; });
    gray = resize_bilinear(mapped, side, side).cwiseMax(0.0).cwiseMin(1.0);
  }
  img.channels = {gray, gray, gray};
  return img;
}

}  // namespace sgvpr
