#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sgvpr/aggregation.hpp"
#include "sgvpr/losses.hpp"

using namespace sgvpr;

TEST(gem_pool, p_one_is_arithmetic_mean) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(20));
    Mat x(n, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 0.01 + rng.uniform();
    const Vec g = gem_pool(x, 1.0);
    for (int d = 0; d < 3; ++d) {
      double s = 0;
      for (int r = 0; r < n; ++r) s += x(r, d);
      EXPECT_EQ(g(d), s / n);
    }
  }
}

TEST(gem_pool, large_p_approaches_max) {
  Mat x(3, 1);
  x << 1, 2, 4;
  const double g = gem_pool(x, 100.0)(0);
  EXPECT_LE(std::abs(g - 4.0), 0.05 * 4.0);
  EXPECT_LE(g, 4.0);
}

TEST(gem_pool, single_element_and_clamp) {
  Mat x(1, 3);
  x << 0.5, -2.0, 0.0;
  const Vec g = gem_pool(x, 3.0);
  EXPECT_NEAR(g(0), 0.5, 1e-15);
  EXPECT_NEAR(g(1), kGemEps, 1e-20);
  EXPECT_NEAR(g(2), kGemEps, 1e-20);
}

TEST(gem_pool, rejects_empty_region_and_small_p) {
  EXPECT_THROW(gem_pool(Mat(0, 3), 3.0), std::invalid_argument);
  EXPECT_THROW(gem_pool(Mat::Ones(2, 2), 0.5), std::invalid_argument);
}

TEST(gem_pool, matches_formula_and_is_monotone) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(30));
    const double p = 1.0 + 5.0 * rng.uniform();
    const Mat x = rng.normal_matrix(n, 1);
    std::vector<double> xs(x.data(), x.data() + n);
    const double got = gem_pool(x, p)(0);
    EXPECT_NEAR(got, oracle::gem(xs, p), 1e-9);
    Mat bumped = x;
    bumped(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))), 0) += rng.uniform();
    EXPECT_GE(gem_pool(bumped, p)(0), got - 1e-15);
  }
}

TEST(gem_pool, gradient_matches_finite_differences_including_p) {
  Rng rng(3);
  Mat x(6, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 0.1 + rng.uniform();
  const double p = 2.5;
  const Vec up = rng.normal_matrix(2, 1);
  double dp = 0;
  const Mat dx = gem_pool_backward(x, p, gem_pool(x, p), up, dp);
  auto fx = [&](const Vec& z) { return gem_pool(Eigen::Map<const Mat>(z.data(), 6, 2), p).dot(up); };
  EXPECT_LT(grad_check(fx, Eigen::Map<const Vec>(x.data(), x.size()), Eigen::Map<const Vec>(dx.data(), dx.size()), 1e-4)
                .max_rel_error,
            1e-4);
  auto fp = [&](const Vec& z) { return gem_pool(x, z(0)).dot(up); };
  EXPECT_LT(grad_check(fp, Vec::Constant(1, p), Vec::Constant(1, dp), 1e-4).max_rel_error, 1e-4);
}

TEST(partition_grid, four_by_four_into_two_by_two) {
  const auto r = partition_grid(4, 4, 2);
  ASSERT_EQ(r.size(), 4u);
  for (const auto& c : r) EXPECT_EQ(c.cells(), 4);
  EXPECT_EQ(r[1], (Region{0, 2, 2, 4}));
}

TEST(partition_grid, five_by_five_uses_floor_boundaries) {
  const auto r = partition_grid(5, 5, 3);
  EXPECT_EQ(r[0].row1 - r[0].row0, 1);
  EXPECT_EQ(r[3].row1 - r[3].row0, 2);
  EXPECT_EQ(r[6].row1 - r[6].row0, 2);
  EXPECT_EQ(r[6].row0, 3);
  EXPECT_EQ(r[8].row1, 5);
}

TEST(partition_grid, cells_tile_grid_exactly_once) {
  for (int gh = 3; gh <= 16; ++gh)
    for (int gw = 3; gw <= 16; ++gw)
      for (int k : {2, 3}) {
        std::vector<int> hits(static_cast<std::size_t>(gh * gw), 0);
        const auto regions = partition_grid(gh, gw, k);
        ASSERT_EQ(regions.size(), static_cast<std::size_t>(k * k));
        for (const auto& r : regions) {
          EXPECT_LE(r.row1 - r.row0 - gh / k, 1);
          EXPECT_LE(r.col1 - r.col0 - gw / k, 1);
          for (int y = r.row0; y < r.row1; ++y)
            for (int x = r.col0; x < r.col1; ++x) ++hits[static_cast<std::size_t>(y * gw + x)];
        }
        for (int h : hits) EXPECT_EQ(h, 1);
      }
}

TEST(partition_grid, rejects_grid_smaller_than_k) {
  EXPECT_THROW(partition_grid(2, 5, 3), std::invalid_argument);
}

TEST(feature_map, reshape_keeps_row_major_order) {
  Rng rng(4);
  const Mat v = rng.normal_matrix(12, 3);
  const FeatureMap m(3, 4, v);
  EXPECT_EQ(m.cell(2, 1), v.row(9));
  EXPECT_THROW(FeatureMap(3, 3, v), std::invalid_argument);
}

TEST(pyramid_aggregate, constant_map_gives_equal_blocks) {
  const FeatureMap m(6, 6, Mat::Constant(36, 2, 0.7));
  const Vec raw = pyramid_concat(m, Vec::Zero(2), 3.0);
  ASSERT_EQ(raw.size(), 28);
  for (int b = 1; b < 14; ++b) {
    EXPECT_NEAR(raw(2 * b), 0.7, 1e-15);
    EXPECT_NEAR(raw(2 * b + 1), 0.7, 1e-15);
  }
}

TEST(pyramid_aggregate, dimension_is_fourteen_d_and_unit_norm) {
  Rng rng(5);
  const FeatureMap m(8, 8, rng.normal_matrix(64, 64));
  const Vec out = pyramid_aggregate(m, rng.normal_matrix(64, 1), 3.0);
  EXPECT_EQ(out.size(), 896);
  EXPECT_NEAR(out.norm(), 1.0, 1e-12);
  EXPECT_TRUE(out.allFinite());
}

TEST(pyramid_aggregate, matches_brute_force_oracle) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const int gh = 3 + static_cast<int>(rng.below(6)), gw = 3 + static_cast<int>(rng.below(6));
    const int d = 1 + static_cast<int>(rng.below(32));
    const double p = 1.0 + 3.0 * rng.uniform();
    const Mat v = rng.normal_matrix(gh * gw, d);
    const Vec f = rng.normal_matrix(d, 1);
    const FeatureMap m(gh, gw, v);
    EXPECT_LT((pyramid_concat(m, f, p) - oracle::pyramid_raw(v, gh, gw, f, p)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((pyramid_aggregate(m, f, p) - oracle::pyramid(v, gh, gw, f, p)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(pyramid_aggregate, permuting_inside_region_keeps_its_block) {
  Rng rng(7);
  Mat v = rng.normal_matrix(16, 4);
  const FeatureMap a(4, 4, v);
  v.row(0).swap(v.row(5));  // both inside the top-left 2x2 region
  const FeatureMap b(4, 4, v);
  const Vec f = rng.normal_matrix(4, 1);
  EXPECT_LT((pyramid_concat(a, f, 3.0).segment(4, 4) - pyramid_concat(b, f, 3.0).segment(4, 4)).cwiseAbs().maxCoeff(),
            1e-15);
}

TEST(pyramid_aggregate, gradient_matches_finite_differences) {
  Rng rng(8);
  const int d = 8;
  Mat v = rng.normal_matrix(16, d);
  v.array() += 1.0;  // keep entries clear of the clamp kink
  const Vec f = rng.normal_matrix(d, 1), up = rng.normal_matrix(14 * d, 1);
  const double p = 3.0;
  const PyramidGrad g = pyramid_aggregate_backward(FeatureMap(4, 4, v), f, p, up);
  auto fv = [&](const Vec& z) { return pyramid_aggregate(FeatureMap(4, 4, Eigen::Map<const Mat>(z.data(), 16, d)), f, p).dot(up); };
  auto ff = [&](const Vec& z) { return pyramid_aggregate(FeatureMap(4, 4, v), z, p).dot(up); };
  auto fp = [&](const Vec& z) { return pyramid_aggregate(FeatureMap(4, 4, v), f, z(0)).dot(up); };
  EXPECT_LT(grad_check(fv, Eigen::Map<const Vec>(v.data(), v.size()), Eigen::Map<const Vec>(g.map.data(), g.map.size()), 1e-4)
                .max_rel_error,
            1e-4);
  EXPECT_LT(grad_check(ff, f, g.f_global, 1e-4).max_rel_error, 1e-4);
  EXPECT_LT(grad_check(fp, Vec::Constant(1, p), Vec::Constant(1, g.p), 1e-4).max_rel_error, 1e-4);
}

TEST(l2_normalize, rejects_zero_vector) {
  EXPECT_THROW(l2_normalize(Vec::Zero(4)), NumericalError);
}
