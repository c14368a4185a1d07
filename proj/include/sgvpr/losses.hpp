#pragma once

// Training objectives: Multi-Similarity loss over place descriptors,
// symmetric InfoNCE between the global visual and sentence tokens, and
// their weighted sum. Every loss returns its analytic gradient alongside
// the value; grad_check() compares such gradients to central differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sgvpr/common.hpp"

namespace sgvpr {

struct MSParams {
  double alpha = 1.0;
  double beta = 50.0;
  double lambda = 1.0;
};

struct ContrastiveParams {
  double tau = 0.07;
  double gamma = 0.15;
};

namespace detail {

// log(1 + sum_k exp(z_k)), stable for large z.
inline double log1p_sum_exp(const std::vector<double>& z) {
  double m = 0.0;
  for (double v : z) m = std::max(m, v);
  double s = std::exp(-m);
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

// Row normalisation with zero rows mapped to zero.
inline Mat normalize_rows(const Mat& x, Vec& norms) {
  norms = x.rowwise().norm();
  Mat y = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (norms(i) > 0.0) y.row(i) /= norms(i);
    else y.row(i).setZero();
  }
  return y;
}

inline Mat normalize_rows_backward(const Mat& y, const Vec& norms, const Mat& dy) {
  Mat dx = Mat::Zero(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (!(norms(i) > 0.0)) continue;
    dx.row(i) = (dy.row(i) - y.row(i) * y.row(i).dot(dy.row(i))) / norms(i);
  }
  return dx;
}

}  // namespace detail

struct LossWithGrad {
  double value = 0.0;
  Mat grad;  // dL/d(input rows)
};

inline constexpr double kUnitNormTolerance = 1e-4;

inline LossWithGrad ms_loss(const Mat& descriptors, const std::vector<std::int64_t>& labels,
                            const MSParams& params = {}) {
  const Eigen::Index b = descriptors.rows();
  if (static_cast<Eigen::Index>(labels.size()) != b)
    throw std::invalid_argument("ms_loss: label count != batch size");
  if (b == 0) throw std::invalid_argument("ms_loss: empty batch");
  if (!(params.alpha > 0 && params.beta > 0 && params.lambda > 0))
    throw std::invalid_argument("ms_loss: alpha, beta and lambda must be positive");
  Vec norms;
  const Mat x = detail::normalize_rows(descriptors, norms);
  for (Eigen::Index i = 0; i < b; ++i)
    if (!(std::abs(norms(i) - 1.0) <= kUnitNormTolerance))
      throw std::invalid_argument(detail::concat("ms_loss: descriptor ", i, " has norm ", norms(i)));

  const Mat sim = x * x.transpose();
  Mat d_sim = Mat::Zero(b, b);
  double total = 0.0;
  std::vector<double> zp, zn;
  std::vector<Eigen::Index> kp, kn;
  for (Eigen::Index i = 0; i < b; ++i) {
    zp.clear(), zn.clear(), kp.clear(), kn.clear();
    for (Eigen::Index k = 0; k < b; ++k) {
      if (k == i) continue;
      if (labels[k] == labels[i]) {
        zp.push_back(-params.alpha * (sim(i, k) - params.lambda));
        kp.push_back(k);
      } else {
        zn.push_back(params.beta * (sim(i, k) - params.lambda));
        kn.push_back(k);
      }
    }
    const double lp = detail::log1p_sum_exp(zp);
    const double ln = detail::log1p_sum_exp(zn);
    total += lp / params.alpha + ln / params.beta;
    // d/dS of (1/a) log(1 + sum e^{-a(S-l)}) = -e^{z}/(1 + sum e^{z}) = -exp(z - lp)
    for (std::size_t q = 0; q < kp.size(); ++q) d_sim(i, kp[q]) -= std::exp(zp[q] - lp);
    for (std::size_t q = 0; q < kn.size(); ++q) d_sim(i, kn[q]) += std::exp(zn[q] - ln);
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  d_sim *= inv_b;
  const Mat d_x = (d_sim + d_sim.transpose()) * x;
  return {total * inv_b, detail::normalize_rows_backward(x, norms, d_x)};
}

struct InfoNceResult {
  double value = 0.0;
  Mat grad_v;
  Mat grad_t;
};

// Symmetric InfoNCE over cosine similarities with matched rows as
// positives.
inline InfoNceResult infonce_loss(const Mat& v, const Mat& t, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument(detail::concat("infonce_loss: tau must be positive, got ", tau));
  if (v.rows() != t.rows() || v.cols() != t.cols())
    throw std::invalid_argument("infonce_loss: batch shapes differ");
  const Eigen::Index b = v.rows();
  if (b == 0) throw std::invalid_argument("infonce_loss: empty batch");
  Vec nv, nt;
  const Mat vn = detail::normalize_rows(v, nv);
  const Mat tn = detail::normalize_rows(t, nt);
  const Mat logits = vn * tn.transpose() / tau;

  // Row-wise log-softmax of `a` and its softmax.
  auto log_softmax_rows = [](const Mat& a, Mat& soft) {
    Mat ls(a.rows(), a.cols());
    soft.resize(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double m = a.row(i).maxCoeff();
      const double lse = m + std::log((a.row(i).array() - m).exp().sum());
      ls.row(i) = a.row(i).array() - lse;
      soft.row(i) = ls.row(i).array().exp();
    }
    return ls;
  };
  Mat soft_vt, soft_tv;
  const Mat ls_vt = log_softmax_rows(logits, soft_vt);
  const Mat ls_tv = log_softmax_rows(logits.transpose(), soft_tv);
  const double loss = 0.0 - (ls_vt.diagonal().sum() + ls_tv.diagonal().sum()) / (2.0 * static_cast<double>(b));

  const Mat eye = Mat::Identity(b, b);
  const Mat d_logits = ((soft_vt - eye) + (soft_tv - eye).transpose()) / (2.0 * static_cast<double>(b));
  const Mat d_vn = d_logits * tn / tau;
  const Mat d_tn = d_logits.transpose() * vn / tau;
  return {loss, detail::normalize_rows_backward(vn, nv, d_vn), detail::normalize_rows_backward(tn, nt, d_tn)};
}

inline double total_loss(double ms, double con, double gamma) { return ms + gamma * con; }

// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  Eigen::Index worst_index = -1;
  bool passed = true;
};

inline constexpr double kGradCheckStep = 1e-4;

// Central differences with the given step, compared elementwise to
// `analytic`. Relative error is |a - n| / max(|a|, |n|, floor); the floor
// keeps near-zero components from dividing by roundoff.
inline GradCheckReport grad_check(const std::function<double(const Vec&)>& fn, const Vec& point,
                                  const Vec& analytic, double tolerance, double step = kGradCheckStep,
                                  double floor = 1e-6) {
  if (analytic.size() != point.size()) throw std::invalid_argument("grad_check: gradient size mismatch");
  GradCheckReport rep;
  Vec x = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    const double orig = x(i);
    x(i) = orig + step;
    const double fp = fn(x);
    x(i) = orig - step;
    const double fm = fn(x);
    x(i) = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double abs_err = std::abs(numeric - analytic(i));
    const double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic(i)), floor});
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    if (rel > rep.max_rel_error || rep.worst_index < 0) {
      rep.max_rel_error = std::max(rep.max_rel_error, rel);
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error <= tolerance;
  return rep;
}

}  // namespace sgvpr
