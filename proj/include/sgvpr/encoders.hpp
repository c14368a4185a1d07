#pragma once

// Dual-stream encoding behind a pluggable backend interface.
//
// Two deterministic toy backends make the whole pipeline testable without
// pretrained weights:
//   * ToyVisualBackend: each patch of the centred image is flattened and
//     mapped to D by a seeded linear map; the global token applies a second
//     seeded map to a patch-sized area-averaged thumbnail of the image.
//   * ToyTextBackend: lower-cased alphanumeric words, each embedded by a
//     vector drawn from an RNG seeded with the word's hash; the sentence
//     token is the mean of the valid word rows.

#include <cctype>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sgvpr/common.hpp"
#include "sgvpr/event_repr.hpp"

namespace sgvpr {

// Text used when a sample has no description.
inline constexpr std::string_view kPlaceholderDescription = "an unannotated place";

struct VisualEncoding {
  Vec cls;        // D
  Mat patch;      // N x D, patches in row-major grid order
  int grid_h = 0;
  int grid_w = 0;

  int num_patches() const { return static_cast<int>(patch.rows()); }
  int dim() const { return static_cast<int>(patch.cols()); }
};

struct TextEncoding {
  Mat words;               // L x D, padded rows are zero before projection
  Vec sentence;            // D
  std::vector<bool> valid; // length L

  int valid_count() const {
    int n = 0;
    for (bool v : valid) n += v;
    return n;
  }
  int dim() const { return static_cast<int>(words.cols()); }
};

// A mutable view onto one parameter tensor.
struct ParamRef {
  std::string name;
  Mat* value;
};

class VisualBackend {
 public:
  virtual ~VisualBackend() = default;

  virtual std::string name() const = 0;
  virtual int embed_dim() const = 0;
  virtual int input_side() const = 0;
  virtual int grid_h() const = 0;
  virtual int grid_w() const = 0;
  virtual VisualEncoding encode(const ImageTensor& image) const = 0;

  bool trainable() const { return trainable_; }
  void set_trainable(bool on) { trainable_ = on; }

  // Backbone weights; empty for backends that cannot be fine-tuned.
  virtual std::vector<ParamRef> parameters() { return {}; }

  // Adds dLoss/dWeights for one image into `grads` (same order as
  // parameters()). Only called when trainable().
  virtual void accumulate_gradient(const ImageTensor& /*image*/, const Vec& /*d_cls*/,
                                   const Mat& /*d_patch*/, std::vector<Mat>& /*grads*/) const {}

 protected:
  void check_image(const ImageTensor& image) const {
    if (image.side != input_side() || image.channels[0].rows() != input_side() ||
        image.channels[0].cols() != input_side())
      throw std::invalid_argument(detail::concat(name(), ": expected 3x", input_side(), "x",
                                                 input_side(), " image, got 3x", image.side, "x",
                                                 image.side));
  }

 private:
  bool trainable_ = false;
};

class TextBackend {
 public:
  virtual ~TextBackend() = default;

  virtual std::string name() const = 0;
  virtual int embed_dim() const = 0;
  virtual int token_length() const = 0;
  virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
  virtual TextEncoding encode(std::string_view text) const = 0;
};

// ---------------------------------------------------------------------------

class ToyVisualBackend final : public VisualBackend {
 public:
  ToyVisualBackend(int side, int patch, int dim, std::uint64_t seed)
      : side_(side), patch_(patch), dim_(dim) {
    if (side <= 0 || patch <= 0 || side % patch != 0)
      throw ConfigError(detail::concat("toy visual backend: side ", side,
                                       " is not a positive multiple of patch ", patch));
    if (dim <= 0) throw ConfigError("toy visual backend: dim must be positive");
    const int in = 3 * patch * patch;
    Rng rng(mix_seed(seed, 0x7669));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    patch_map_ = rng.normal_matrix(dim, in, scale);
    cls_map_ = rng.normal_matrix(dim, in, scale);
  }

  std::string name() const override { return "toy"; }
  int embed_dim() const override { return dim_; }
  int input_side() const override { return side_; }
  int grid_h() const override { return side_ / patch_; }
  int grid_w() const override { return side_ / patch_; }
  int patch_size() const { return patch_; }

  // Centred, flattened patch (channel-major, then row, then column).
  Vec patch_vector(const ImageTensor& image, int gy, int gx) const {
    Vec v(3 * patch_ * patch_);
    Eigen::Index k = 0;
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < patch_; ++r)
        for (int q = 0; q < patch_; ++q) v(k++) = image.channels[c](gy * patch_ + r, gx * patch_ + q) - 0.5;
    return v;
  }

  Vec thumbnail_vector(const ImageTensor& image) const {
    const int cell = side_ / patch_;
    Vec v(3 * patch_ * patch_);
    Eigen::Index k = 0;
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < patch_; ++r)
        for (int q = 0; q < patch_; ++q)
          v(k++) = image.channels[c].block(r * cell, q * cell, cell, cell).mean() - 0.5;
    return v;
  }

  VisualEncoding encode(const ImageTensor& image) const override {
    check_image(image);
    VisualEncoding enc;
    enc.grid_h = grid_h();
    enc.grid_w = grid_w();
    enc.patch.resize(enc.grid_h * enc.grid_w, dim_);
    for (int gy = 0; gy < enc.grid_h; ++gy)
      for (int gx = 0; gx < enc.grid_w; ++gx)
        enc.patch.row(gy * enc.grid_w + gx) = (patch_map_ * patch_vector(image, gy, gx)).transpose();
    enc.cls = cls_map_ * thumbnail_vector(image);
    return enc;
  }

  std::vector<ParamRef> parameters() override {
    return {{"backbone.patch_map", &patch_map_}, {"backbone.cls_map", &cls_map_}};
  }

  void accumulate_gradient(const ImageTensor& image, const Vec& d_cls, const Mat& d_patch,
                           std::vector<Mat>& grads) const override {
    for (int gy = 0; gy < grid_h(); ++gy)
      for (int gx = 0; gx < grid_w(); ++gx)
        grads[0].noalias() += d_patch.row(gy * grid_w() + gx).transpose() *
                              patch_vector(image, gy, gx).transpose();
    grads[1].noalias() += d_cls * thumbnail_vector(image).transpose();
  }

  const Mat& patch_map() const { return patch_map_; }
  const Mat& cls_map() const { return cls_map_; }

 private:
  int side_;
  int patch_;
  int dim_;
  Mat patch_map_;
  Mat cls_map_;
};

class ToyTextBackend final : public TextBackend {
 public:
  ToyTextBackend(int dim, int token_length, std::uint64_t seed)
      : dim_(dim), length_(token_length), seed_(seed) {
    if (dim <= 0 || token_length <= 0) throw ConfigError("toy text backend: dim and length must be positive");
  }

  std::string name() const override { return "toy"; }
  int embed_dim() const override { return dim_; }
  int token_length() const override { return length_; }

  std::vector<std::string> tokenize(std::string_view text) const override {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isalnum(c) || c >= 0x80) {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else if (!cur.empty()) {
        tokens.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
  }

  Vec token_embedding(std::string_view token) const {
    Rng rng(mix_seed(seed_, fnv1a64(token)));
    Vec v(dim_);
    for (int d = 0; d < dim_; ++d) v(d) = rng.normal();
    return v / std::sqrt(static_cast<double>(dim_));
  }

  TextEncoding encode(std::string_view text) const override {
    auto tokens = tokenize(text);
    if (tokens.empty()) tokens = tokenize(kPlaceholderDescription);
    if (static_cast<int>(tokens.size()) > length_) tokens.resize(length_);
    TextEncoding enc;
    enc.words = Mat::Zero(length_, dim_);
    enc.valid.assign(length_, false);
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      enc.words.row(static_cast<Eigen::Index>(j)) = token_embedding(tokens[j]).transpose();
      enc.valid[j] = true;
    }
    const auto n = static_cast<Eigen::Index>(tokens.size());
    enc.sentence = enc.words.topRows(n).colwise().mean().transpose();
    return enc;
  }

 private:
  int dim_;
  int length_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Shared-space projection: one affine map per stream.

struct Projection {
  Mat weight;  // out x in
  Vec bias;    // out

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }

  static Projection identity(int dim) { return {Mat::Identity(dim, dim), Vec::Zero(dim)}; }

  static Projection random(int in, int out, Rng& rng) {
    return {rng.normal_matrix(out, in, 1.0 / std::sqrt(static_cast<double>(in))), Vec::Zero(out)};
  }

  Vec apply(const Vec& x) const {
    check(static_cast<int>(x.size()));
    return weight * x + bias;
  }

  // Row-wise application to an R x in matrix.
  Mat apply_rows(const Mat& x) const {
    check(static_cast<int>(x.cols()));
    Mat y = x * weight.transpose();
    y.rowwise() += bias.transpose();
    return y;
  }

  void check(int in) const {
    if (in != in_dim())
      throw std::invalid_argument(detail::concat("projection expects dim ", in_dim(), ", got ", in));
  }
};

struct ProjectionGrad {
  Mat weight;
  Vec bias;

  explicit ProjectionGrad(const Projection& p)
      : weight(Mat::Zero(p.weight.rows(), p.weight.cols())), bias(Vec::Zero(p.bias.size())) {}
};

// Backward of apply / apply_rows. Accumulates parameter gradients and
// returns the gradient w.r.t. the input.
inline Vec projection_backward(const Projection& p, const Vec& x, const Vec& dy, ProjectionGrad& g) {
  g.weight.noalias() += dy * x.transpose();
  g.bias += dy;
  return p.weight.transpose() * dy;
}

inline Mat projection_backward_rows(const Projection& p, const Mat& x, const Mat& dy,
                                    ProjectionGrad& g) {
  g.weight.noalias() += dy.transpose() * x;
  g.bias += dy.colwise().sum().transpose();
  return dy * p.weight;
}

inline VisualEncoding project_to_shared(const VisualEncoding& enc, const Projection& p) {
  VisualEncoding out;
  out.grid_h = enc.grid_h;
  out.grid_w = enc.grid_w;
  out.cls = p.apply(enc.cls);
  out.patch = p.apply_rows(enc.patch);
  return out;
}

inline TextEncoding project_to_shared(const TextEncoding& enc, const Projection& p) {
  TextEncoding out;
  out.valid = enc.valid;
  out.sentence = p.apply(enc.sentence);
  out.words = p.apply_rows(enc.words);
  return out;
}

}  // namespace sgvpr
