#pragma once

// The end-to-end descriptor pipeline:
//   encode -> project to shared D -> global fusion + relevance/top-k/injection
//   -> spatial pyramid -> per-frame unit descriptor
// A sample descriptor is the renormalised mean of its five frame
// descriptors. Forward passes can keep their intermediates so the trainer
// can run the matching backward pass.

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "sgvpr/aggregation.hpp"
#include "sgvpr/dataset.hpp"
#include "sgvpr/encoders.hpp"
#include "sgvpr/fusion.hpp"

namespace sgvpr {

enum class FusionMode { VisionOnly, GlobalOnly, LocalOnly, Full };

inline bool uses_global_fusion(FusionMode m) { return m == FusionMode::GlobalOnly || m == FusionMode::Full; }
inline bool uses_local_fusion(FusionMode m) { return m == FusionMode::LocalOnly || m == FusionMode::Full; }

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::VisionOnly: return "vision_only";
    case FusionMode::GlobalOnly: return "global";
    case FusionMode::LocalOnly: return "local";
    case FusionMode::Full: return "full";
  }
  return "?";
}

inline std::optional<FusionMode> parse_fusion_mode(std::string_view s) {
  if (s == "vision_only") return FusionMode::VisionOnly;
  if (s == "global") return FusionMode::GlobalOnly;
  if (s == "local") return FusionMode::LocalOnly;
  if (s == "full") return FusionMode::Full;
  return std::nullopt;
}

// Row labels used in ablation tables.
inline std::string table_label(FusionMode m) {
  switch (m) {
    case FusionMode::VisionOnly: return "Baseline (Vision Only)";
    case FusionMode::GlobalOnly: return "+ Global Fusion (cls-fusion)";
    case FusionMode::LocalOnly: return "+ Local Fusion (patch-fusion)";
    case FusionMode::Full: return "+ Full Fusion (Global + Local)";
  }
  return "?";
}

struct ModelOptions {
  int shared_dim = 64;
  double rho = 0.25;
  double alpha_init = 0.0;
  double gem_p = kDefaultGemP;
  bool learnable_p = false;
  FusionMode mode = FusionMode::Full;
  double clip_percentile = kDefaultClipPercentile;
  std::uint64_t seed = 0;
};

// Trainable parameters outside the backbones.
struct HeadParams {
  Projection visual;
  Projection text;
  FusionParams fusion;
  double gem_p = kDefaultGemP;
};

struct HeadGrads {
  ProjectionGrad visual;
  ProjectionGrad text;
  FusionGrad fusion;
  double gem_p = 0.0;
  std::vector<Mat> backbone;

  explicit HeadGrads(const HeadParams& p)
      : visual(p.visual), text(p.text), fusion(p.fusion) {}
};

// Visits (name, data, size) for every trainable tensor, in a fixed order
// shared by parameters and gradients.
template <typename P, typename Fn>
void visit_head(P& p, bool learnable_p, Fn&& fn) {
  fn("proj.visual.weight", p.visual.weight.data(), p.visual.weight.size());
  fn("proj.visual.bias", p.visual.bias.data(), p.visual.bias.size());
  fn("proj.text.weight", p.text.weight.data(), p.text.weight.size());
  fn("proj.text.bias", p.text.bias.data(), p.text.bias.size());
  fn("fusion.mlp.w1", p.fusion.mlp.w1.data(), p.fusion.mlp.w1.size());
  fn("fusion.mlp.b1", p.fusion.mlp.b1.data(), p.fusion.mlp.b1.size());
  fn("fusion.mlp.w2", p.fusion.mlp.w2.data(), p.fusion.mlp.w2.size());
  fn("fusion.mlp.b2", p.fusion.mlp.b2.data(), p.fusion.mlp.b2.size());
  fn("fusion.alpha", &p.fusion.alpha, Eigen::Index{1});
  if (learnable_p) fn("aggregation.gem_p", &p.gem_p, Eigen::Index{1});
}

struct FrameForward {
  VisualEncoding native;
  VisualEncoding proj;
  Vec f_global;
  SelectionResult sel;
  Mat fused_patch;
  Vec descriptor;
};

struct SampleForward {
  TextEncoding text_native;
  TextEncoding text_proj;
  std::array<FrameForward, kFramesPerSample> frames;
  Vec mean_raw;
  Vec descriptor;
  Vec visual_token;  // mean projected v_cls over frames
};

class SgVprModel {
 public:
  SgVprModel(std::shared_ptr<VisualBackend> visual, std::shared_ptr<TextBackend> text, ModelOptions opts)
      : visual_(std::move(visual)), text_(std::move(text)), opts_(opts) {
    if (!visual_ || !text_) throw ConfigError("model needs both a visual and a text backend");
    if (opts.shared_dim <= 0) throw ConfigError("shared_dim must be positive");
    if (visual_->grid_h() < 3 || visual_->grid_w() < 3)
      throw ConfigError(detail::concat("visual patch grid ", visual_->grid_h(), "x", visual_->grid_w(),
                                       " is smaller than the 3x3 pyramid level"));
    selection_count(opts.rho, 1);  // validates rho
    Rng rng(mix_seed(opts.seed, 0x4ead));
    head_.visual = Projection::random(visual_->embed_dim(), opts.shared_dim, rng);
    head_.text = Projection::random(text_->embed_dim(), opts.shared_dim, rng);
    head_.fusion.mlp = Mlp::random(opts.shared_dim, rng);
    head_.fusion.alpha = opts.alpha_init;
    head_.fusion.rho = opts.rho;
    head_.gem_p = opts.gem_p;
  }

  const ModelOptions& options() const { return opts_; }
  HeadParams& head() { return head_; }
  const HeadParams& head() const { return head_; }
  VisualBackend& visual() { return *visual_; }
  const VisualBackend& visual() const { return *visual_; }
  const TextBackend& text() const { return *text_; }
  int input_side() const { return visual_->input_side(); }
  int descriptor_dim() const { return kPyramidBlocks * opts_.shared_dim; }
  void set_mode(FusionMode m) { opts_.mode = m; }

  // -------------------------------------------------------------------------
  // Flat parameter access (head, then backbone if trainable).

  Vec flatten() {
    std::vector<double> flat;
    visit_all([&](const std::string&, double* d, Eigen::Index n) { flat.insert(flat.end(), d, d + n); });
    return Eigen::Map<Vec>(flat.data(), static_cast<Eigen::Index>(flat.size()));
  }

  void unflatten(const Vec& flat) {
    Eigen::Index off = 0;
    visit_all([&](const std::string&, double* d, Eigen::Index n) {
      if (off + n > flat.size()) throw std::invalid_argument("unflatten: vector too short");
      std::copy(flat.data() + off, flat.data() + off + n, d);
      off += n;
    });
    if (off != flat.size()) throw std::invalid_argument("unflatten: vector too long");
  }

  HeadGrads zero_grads() {
    HeadGrads g(head_);
    if (visual_->trainable())
      for (const ParamRef& p : visual_->parameters()) g.backbone.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
    return g;
  }

  Vec flatten(HeadGrads& g) {
    std::vector<double> flat;
    auto push = [&](const std::string&, double* d, Eigen::Index n) { flat.insert(flat.end(), d, d + n); };
    visit_head(g, opts_.learnable_p, push);
    if (visual_->trainable())
      for (Mat& m : g.backbone) push("", m.data(), m.size());
    return Eigen::Map<Vec>(flat.data(), static_cast<Eigen::Index>(flat.size()));
  }

  template <typename Fn>
  void visit_all(Fn&& fn) {
    visit_head(head_, opts_.learnable_p, fn);
    if (visual_->trainable())
      for (const ParamRef& p : visual_->parameters()) fn(p.name, p.value->data(), p.value->size());
  }

  // -------------------------------------------------------------------------
  // Forward

  TextEncoding encode_text(std::string_view description) const { return text_->encode(description); }

  VisualEncoding encode_image(const ImageTensor& image) const { return visual_->encode(image); }

  ImageTensor prepare(const EventFrame& frame) const {
    return frame_to_image(frame, visual_->input_side(), opts_.clip_percentile);
  }

  // One frame given native encodings and the already-projected text.
  // `frozen` pins the top-k selection (used by gradient checks).
  FrameForward forward_frame(const VisualEncoding& native, const TextEncoding& text_proj,
                             const SelectionResult* frozen = nullptr) const {
    FrameForward f;
    f.native = native;
    f.proj = project_to_shared(native, head_.visual);
    const FusionMode mode = opts_.mode;
    f.f_global = uses_global_fusion(mode) ? global_fusion(f.proj.cls, text_proj.sentence, head_.fusion) : f.proj.cls;
    if (uses_local_fusion(mode)) {
      f.sel = frozen ? *frozen : select_topk(relevance_scores(f.proj.patch, text_proj.words, text_proj.valid), head_.fusion.rho);
      f.fused_patch = semantic_inject(f.proj.patch, text_proj.words, f.sel, head_.fusion.alpha);
    } else {
      f.fused_patch = f.proj.patch;
    }
    f.descriptor = pyramid_aggregate(FeatureMap(f.proj.grid_h, f.proj.grid_w, f.fused_patch), f.f_global, head_.gem_p);
    return f;
  }

  // `frozen` pins each frame's selection (gradient checks only).
  SampleForward forward_sample(const std::array<VisualEncoding, kFramesPerSample>& natives,
                               const TextEncoding& text_native,
                               const std::array<SelectionResult, kFramesPerSample>* frozen = nullptr) const {
    SampleForward s;
    s.text_native = text_native;
    s.text_proj = project_to_shared(text_native, head_.text);
    s.mean_raw = Vec::Zero(descriptor_dim());
    s.visual_token = Vec::Zero(opts_.shared_dim);
    for (int k = 0; k < kFramesPerSample; ++k) {
      s.frames[k] = forward_frame(natives[k], s.text_proj, frozen ? &(*frozen)[k] : nullptr);
      s.mean_raw += s.frames[k].descriptor / kFramesPerSample;
      s.visual_token += s.frames[k].proj.cls / kFramesPerSample;
    }
    s.descriptor = l2_normalize(s.mean_raw);
    return s;
  }

  Vec describe_sample(const std::array<ImageTensor, kFramesPerSample>& images, std::string_view description) const {
    std::array<VisualEncoding, kFramesPerSample> natives;
    for (int k = 0; k < kFramesPerSample; ++k) natives[k] = visual_->encode(images[k]);
    return forward_sample(natives, text_->encode(description)).descriptor;
  }

  // -------------------------------------------------------------------------
  // Backward

  struct FrameGradOut {
    Vec d_native_cls;
    Mat d_native_patch;
  };

  // Accumulates parameter gradients for one frame and the gradient into the
  // projected text tokens. d_extra_cls is added to dL/d(projected v_cls).
  FrameGradOut backward_frame(const FrameForward& f, const TextEncoding& text_proj, const Vec& d_desc,
                              const Vec& d_extra_cls, HeadGrads& g, Vec& d_ts, Mat& d_tw) const {
    const FusionMode mode = opts_.mode;
    const PyramidGrad pg =
        pyramid_aggregate_backward(FeatureMap(f.proj.grid_h, f.proj.grid_w, f.fused_patch), f.f_global, head_.gem_p, d_desc);
    g.gem_p += pg.p;
    Mat d_patch;
    if (uses_local_fusion(mode)) {
      const InjectGrad ig = semantic_inject_backward(f.proj.patch, text_proj.words, f.sel, head_.fusion.alpha, pg.map);
      d_patch = ig.v_patch;
      d_tw += ig.t_w;
      g.fusion.alpha += ig.alpha;
    } else {
      d_patch = pg.map;
    }
    Vec d_cls;
    if (uses_global_fusion(mode)) {
      const auto gg = global_fusion_backward(f.proj.cls, text_proj.sentence, head_.fusion, pg.f_global, g.fusion);
      d_cls = gg.v_cls;
      d_ts += gg.t_s;
    } else {
      d_cls = pg.f_global;
    }
    d_cls += d_extra_cls;
    FrameGradOut out;
    out.d_native_patch = projection_backward_rows(head_.visual, f.native.patch, d_patch, g.visual);
    out.d_native_cls = projection_backward(head_.visual, f.native.cls, d_cls, g.visual);
    return out;
  }

  // Backward through forward_sample given dL/d(sample descriptor) and
  // dL/d(visual token), dL/d(projected sentence). Backbone gradients are
  // only accumulated when the backbone is trainable and `images` is given.
  void backward_sample(const SampleForward& s, const Vec& d_desc, const Vec& d_visual_token, const Vec& d_sentence,
                       HeadGrads& g, const std::array<ImageTensor, kFramesPerSample>* images = nullptr) const {
    const double norm = s.mean_raw.norm();
    const Vec d_mean = l2_normalize_backward(s.descriptor, norm, d_desc) / kFramesPerSample;
    const Vec d_cls_extra = d_visual_token / kFramesPerSample;
    Vec d_ts = d_sentence;
    Mat d_tw = Mat::Zero(s.text_proj.words.rows(), s.text_proj.words.cols());
    for (int k = 0; k < kFramesPerSample; ++k) {
      const FrameGradOut fo = backward_frame(s.frames[k], s.text_proj, d_mean, d_cls_extra, g, d_ts, d_tw);
      if (visual_->trainable() && images)
        visual_->accumulate_gradient((*images)[k], fo.d_native_cls, fo.d_native_patch, g.backbone);
    }
    projection_backward(head_.text, s.text_native.sentence, d_ts, g.text);
    projection_backward_rows(head_.text, s.text_native.words, d_tw, g.text);
  }

 private:
  std::shared_ptr<VisualBackend> visual_;
  std::shared_ptr<TextBackend> text_;
  ModelOptions opts_;
  HeadParams head_;
};

}  // namespace sgvpr
