#include <gtest/gtest.h>

#include "sgvpr/losses.hpp"
#include "sgvpr/model.hpp"

using namespace sgvpr;

namespace {

using Images = std::array<ImageTensor, kFramesPerSample>;

ImageTensor random_image(Rng& rng, int side) {
  ImageTensor img;
  img.side = side;
  Mat g(side, side);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform();
  img.channels = {g, g, g};
  return img;
}

Images random_images(Rng& rng, int side) {
  Images out;
  for (auto& i : out) i = random_image(rng, side);
  return out;
}

SgVprModel small_model(FusionMode mode, bool learnable_p = true, bool trainable = false, std::uint64_t seed = 1) {
  ModelOptions o;
  o.shared_dim = 8;
  o.rho = 0.25;
  o.alpha_init = 0.4;
  o.learnable_p = learnable_p;
  o.mode = mode;
  o.seed = seed;
  auto vis = std::make_shared<ToyVisualBackend>(16, 4, 8, seed);
  vis->set_trainable(trainable);
  SgVprModel m(vis, std::make_shared<ToyTextBackend>(8, 10, seed), o);
  m.head().fusion.mlp.b1.setConstant(0.05);
  m.head().fusion.mlp.b2.setConstant(0.3);
  return m;
}

// Scalar probe of one sample's outputs with fixed top-k choices; returns the
// numeric-vs-analytic worst relative error over all trainable parameters.
double fused_gradient_error(SgVprModel& model, std::uint64_t seed) {
  Rng rng(seed);
  const Images images = random_images(rng, model.input_side());
  const TextEncoding text = model.encode_text("red brick tower beside a quiet road");
  auto natives_of = [&] {
    std::array<VisualEncoding, kFramesPerSample> n;
    for (int k = 0; k < kFramesPerSample; ++k) n[k] = model.encode_image(images[k]);
    return n;
  };
  const SampleForward s0 = model.forward_sample(natives_of(), text);
  std::array<SelectionResult, kFramesPerSample> frozen;
  for (int k = 0; k < kFramesPerSample; ++k) frozen[k] = s0.frames[k].sel;
  const Vec u_desc = rng.normal_matrix(model.descriptor_dim(), 1);
  const Vec u_tok = rng.normal_matrix(8, 1), u_sent = rng.normal_matrix(8, 1);

  HeadGrads g = model.zero_grads();
  model.backward_sample(s0, u_desc, u_tok, u_sent, g, &images);
  const Vec analytic = model.flatten(g);
  const Vec theta = model.flatten();
  auto f = [&](const Vec& z) {
    model.unflatten(z);
    const SampleForward s = model.forward_sample(natives_of(), text, &frozen);
    model.unflatten(theta);
    return s.descriptor.dot(u_desc) + s.visual_token.dot(u_tok) + s.text_proj.sentence.dot(u_sent);
  };
  return grad_check(f, theta, analytic, 1e-4).max_rel_error;
}

}  // namespace

TEST(model, descriptor_has_fourteen_blocks_and_unit_norm) {
  SgVprModel m = small_model(FusionMode::Full);
  Rng rng(2);
  const Vec d = m.describe_sample(random_images(rng, 16), "a bench under a tree");
  EXPECT_EQ(d.size(), 14 * 8);
  EXPECT_NEAR(d.norm(), 1.0, 1e-12);
}

TEST(model, five_identical_frames_equal_single_frame_descriptor) {
  SgVprModel m = small_model(FusionMode::Full);
  Rng rng(3);
  const ImageTensor img = random_image(rng, 16);
  Images same;
  same.fill(img);
  const TextEncoding tp = project_to_shared(m.encode_text("old gate"), m.head().text);
  const Vec single = m.forward_frame(m.encode_image(img), tp).descriptor;
  EXPECT_LT((m.describe_sample(same, "old gate") - single).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(model, deterministic_descriptor) {
  Rng rng(4);
  const Images imgs = random_images(rng, 16);
  EXPECT_EQ(small_model(FusionMode::Full).describe_sample(imgs, "x y"),
            small_model(FusionMode::Full).describe_sample(imgs, "x y"));
}

TEST(model, vision_only_ignores_text) {
  SgVprModel m = small_model(FusionMode::VisionOnly);
  Rng rng(5);
  const Images imgs = random_images(rng, 16);
  EXPECT_EQ(m.describe_sample(imgs, "glass tower"), m.describe_sample(imgs, "muddy field"));
  m.set_mode(FusionMode::Full);
  EXPECT_NE(m.describe_sample(imgs, "glass tower"), m.describe_sample(imgs, "muddy field"));
}

TEST(model, rejects_grid_below_three) {
  ModelOptions o;
  o.shared_dim = 4;
  EXPECT_THROW(SgVprModel(std::make_shared<ToyVisualBackend>(8, 4, 4, 0), std::make_shared<ToyTextBackend>(4, 5, 0), o),
               ConfigError);
}

TEST(model, flatten_round_trip) {
  SgVprModel m = small_model(FusionMode::Full);
  Vec theta = m.flatten();
  theta.array() += 0.25;
  m.unflatten(theta);
  EXPECT_EQ(m.flatten(), theta);
  EXPECT_THROW(m.unflatten(Vec::Zero(theta.size() + 1)), std::invalid_argument);
}

TEST(model, full_fused_gradient_matches_finite_differences) {
  for (FusionMode mode : {FusionMode::Full, FusionMode::GlobalOnly, FusionMode::LocalOnly, FusionMode::VisionOnly}) {
    SgVprModel m = small_model(mode);
    EXPECT_LT(fused_gradient_error(m, 11), 1e-4) << to_string(mode);
  }
}

TEST(model, trainable_backbone_gradient_matches_finite_differences) {
  SgVprModel m = small_model(FusionMode::Full, false, true);
  EXPECT_LT(fused_gradient_error(m, 12), 1e-4);
}

TEST(model, frozen_backbone_gets_no_gradient_and_is_not_a_parameter) {
  SgVprModel frozen = small_model(FusionMode::Full, false, false);
  SgVprModel open = small_model(FusionMode::Full, false, true);
  const auto n_backbone = 2 * 8 * 48;
  EXPECT_EQ(open.flatten().size() - frozen.flatten().size(), n_backbone);
  HeadGrads g = frozen.zero_grads();
  EXPECT_TRUE(g.backbone.empty());
  Rng rng(6);
  const Images imgs = random_images(rng, 16);
  std::array<VisualEncoding, kFramesPerSample> natives;
  for (int k = 0; k < kFramesPerSample; ++k) natives[k] = frozen.encode_image(imgs[k]);
  const auto s = frozen.forward_sample(natives, frozen.encode_text("lamp post"));
  const Mat before = dynamic_cast<const ToyVisualBackend&>(frozen.visual()).patch_map();
  frozen.backward_sample(s, Vec::Ones(frozen.descriptor_dim()), Vec::Ones(8), Vec::Ones(8), g, &imgs);
  EXPECT_TRUE(g.backbone.empty());
  EXPECT_EQ(dynamic_cast<const ToyVisualBackend&>(frozen.visual()).patch_map(), before);
}

TEST(fusion_mode, names_round_trip) {
  for (FusionMode m : {FusionMode::VisionOnly, FusionMode::GlobalOnly, FusionMode::LocalOnly, FusionMode::Full})
    EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
  EXPECT_FALSE(parse_fusion_mode("both").has_value());
}
