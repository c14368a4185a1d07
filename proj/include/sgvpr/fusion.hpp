#pragma once

// Text-guided semantic fusion.
//
//   f_global = MLP([v_cls; t_s])
//   m_i      = max_j cos(v_i, w_j)                 over valid words j
//   K        = indices of the k = max(1, floor(rho * N)) largest m_i
//   v'_i     = v_i + alpha * (v_i .* w_best(i))    for i in K, else v_i
//
// Each forward function has a matching *_backward that accumulates
// parameter gradients. The selection is piecewise constant, so gradients
// flow through the selected values only, never through the choice of K.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sgvpr/common.hpp"

namespace sgvpr {

// Two-layer feed-forward map 2D -> 2D -> D with a GELU hidden layer.
struct Mlp {
  Mat w1;  // 2D x 2D
  Vec b1;  // 2D
  Mat w2;  // D x 2D
  Vec b2;  // D

  int in_dim() const { return static_cast<int>(w1.cols()); }
  int out_dim() const { return static_cast<int>(w2.rows()); }

  static Mlp random(int dim, Rng& rng) {
    const int in = 2 * dim, hidden = 2 * dim;
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    return {rng.normal_matrix(hidden, in, s), Vec::Zero(hidden),
            rng.normal_matrix(dim, hidden, 1.0 / std::sqrt(static_cast<double>(hidden))),
            Vec::Zero(dim)};
  }
};

struct MlpGrad {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;

  explicit MlpGrad(const Mlp& m)
      : w1(Mat::Zero(m.w1.rows(), m.w1.cols())),
        b1(Vec::Zero(m.b1.size())),
        w2(Mat::Zero(m.w2.rows(), m.w2.cols())),
        b2(Vec::Zero(m.b2.size())) {}
};

struct FusionParams {
  Mlp mlp;
  double alpha = 0.0;
  double rho = 0.25;
};

struct FusionGrad {
  MlpGrad mlp;
  double alpha = 0.0;

  explicit FusionGrad(const FusionParams& p) : mlp(p.mlp) {}
};

namespace detail {

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Global context aggregation

inline Vec global_fusion(const Vec& v_cls, const Vec& t_s, const FusionParams& params) {
  const Mlp& m = params.mlp;
  if (v_cls.size() + t_s.size() != m.in_dim() || v_cls.size() != t_s.size())
    throw std::invalid_argument(detail::concat("global_fusion: dims ", v_cls.size(), "+", t_s.size(),
                                               " do not match MLP input ", m.in_dim()));
  Vec x(m.in_dim());
  x << v_cls, t_s;
  const Vec h = (m.w1 * x + m.b1).unaryExpr(&detail::gelu);
  return m.w2 * h + m.b2;
}

struct GlobalFusionInputGrad {
  Vec v_cls;
  Vec t_s;
};

inline GlobalFusionInputGrad global_fusion_backward(const Vec& v_cls, const Vec& t_s,
                                                    const FusionParams& params, const Vec& d_out,
                                                    FusionGrad& grad) {
  const Mlp& m = params.mlp;
  Vec x(m.in_dim());
  x << v_cls, t_s;
  const Vec pre = m.w1 * x + m.b1;
  const Vec h = pre.unaryExpr(&detail::gelu);
  grad.mlp.w2.noalias() += d_out * h.transpose();
  grad.mlp.b2 += d_out;
  const Vec d_pre = (m.w2.transpose() * d_out).cwiseProduct(pre.unaryExpr(&detail::gelu_grad));
  grad.mlp.w1.noalias() += d_pre * x.transpose();
  grad.mlp.b1 += d_pre;
  const Vec dx = m.w1.transpose() * d_pre;
  const auto d = v_cls.size();
  return {dx.head(d), dx.tail(d)};
}

// ---------------------------------------------------------------------------
// Word-to-patch relevance

struct Relevance {
  Vec scores;                 // N, each in [-1, 1]
  std::vector<int> best_word; // N, argmax word index (lowest on ties)
};

inline Relevance relevance_scores(const Mat& v_patch, const Mat& t_w, const std::vector<bool>& valid) {
  if (v_patch.cols() != t_w.cols())
    throw std::invalid_argument(detail::concat("relevance_scores: patch dim ", v_patch.cols(),
                                               " != word dim ", t_w.cols()));
  if (static_cast<Eigen::Index>(valid.size()) != t_w.rows())
    throw std::invalid_argument("relevance_scores: mask length != word count");
  std::vector<Eigen::Index> words;
  for (Eigen::Index j = 0; j < t_w.rows(); ++j)
    if (valid[j]) words.push_back(j);
  if (words.empty()) throw std::invalid_argument("relevance_scores: no valid word token");

  const Eigen::Index n = v_patch.rows();
  Vec word_inv(t_w.rows());
  for (Eigen::Index j : words) {
    const double nw = t_w.row(j).norm();
    word_inv(j) = nw > 0.0 ? 1.0 / nw : 0.0;
  }
  Relevance r{Vec(n), std::vector<int>(n, 0)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double nv = v_patch.row(i).norm();
    const double inv = nv > 0.0 ? 1.0 / nv : 0.0;
    double best = -std::numeric_limits<double>::infinity();
    Eigen::Index arg = words.front();
    for (Eigen::Index j : words) {
      double c = v_patch.row(i).dot(t_w.row(j)) * inv * word_inv(j);
      c = std::clamp(c, -1.0, 1.0);
      if (c > best) {
        best = c;
        arg = j;
      }
    }
    r.scores(i) = best;
    r.best_word[i] = static_cast<int>(arg);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Ratio-based top-k selection

struct SelectionResult {
  Vec scores;
  std::vector<int> indices;   // ascending
  std::vector<int> word_idx;  // parallel to indices; empty if no words given
};

inline int selection_count(double rho, int n) {
  if (!(rho > 0.0 && rho <= 1.0))
    throw std::invalid_argument(detail::concat("selection ratio must be in (0, 1], got ", rho));
  if (n < 1) throw std::invalid_argument("selection needs at least one patch");
  // The epsilon absorbs products such as 0.15 * 20 landing just below 3.
  const int k = static_cast<int>(std::floor(rho * n + 1e-9));
  return std::max(1, k);
}

inline SelectionResult select_topk(const Vec& scores, double rho) {
  const int n = static_cast<int>(scores.size());
  const int k = selection_count(rho, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores(a) > scores(b); });
  SelectionResult sel{scores, std::vector<int>(order.begin(), order.begin() + k), {}};
  std::sort(sel.indices.begin(), sel.indices.end());
  return sel;
}

inline SelectionResult select_topk(const Relevance& rel, double rho) {
  SelectionResult sel = select_topk(rel.scores, rho);
  sel.word_idx.reserve(sel.indices.size());
  for (int i : sel.indices) sel.word_idx.push_back(rel.best_word[i]);
  return sel;
}

// ---------------------------------------------------------------------------
// Semantic injection

inline Mat semantic_inject(const Mat& v_patch, const Mat& t_w, const SelectionResult& sel, double alpha) {
  if (sel.word_idx.size() != sel.indices.size())
    throw std::invalid_argument("semantic_inject: selection carries no word indices");
  Mat out = v_patch;
  if (alpha == 0.0) return out;
  for (std::size_t s = 0; s < sel.indices.size(); ++s) {
    const int i = sel.indices[s];
    if (i < 0 || i >= v_patch.rows()) throw std::out_of_range("semantic_inject: patch index");
    out.row(i) += alpha * v_patch.row(i).cwiseProduct(t_w.row(sel.word_idx[s]));
  }
  return out;
}

struct InjectGrad {
  Mat v_patch;
  Mat t_w;
  double alpha = 0.0;
};

inline InjectGrad semantic_inject_backward(const Mat& v_patch, const Mat& t_w, const SelectionResult& sel,
                                           double alpha, const Mat& d_out) {
  InjectGrad g{d_out, Mat::Zero(t_w.rows(), t_w.cols()), 0.0};
  for (std::size_t s = 0; s < sel.indices.size(); ++s) {
    const int i = sel.indices[s];
    const int j = sel.word_idx[s];
    const auto dy = d_out.row(i);
    g.v_patch.row(i) += alpha * dy.cwiseProduct(t_w.row(j));
    g.t_w.row(j) += alpha * dy.cwiseProduct(v_patch.row(i));
    g.alpha += dy.dot(v_patch.row(i).cwiseProduct(t_w.row(j)));
  }
  return g;
}

}  // namespace sgvpr
