#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sgvpr/losses.hpp"

using namespace sgvpr;

namespace {

Mat unit_rows(Mat m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

std::vector<std::int64_t> random_labels(Rng& rng, int b, int n_labels) {
  std::vector<std::int64_t> l;
  for (int i = 0; i < b; ++i) l.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n_labels))));
  return l;
}

Vec flat(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }

}  // namespace

TEST(ms_loss, identical_pair_is_log_two) {
  Mat x(2, 3);
  x << 0.6, 0.8, 0, 0.6, 0.8, 0;
  EXPECT_NEAR(ms_loss(x, {5, 5}).value, std::log(2.0), 1e-9);
}

TEST(ms_loss, orthogonal_negatives_give_near_zero) {
  Mat x(2, 2);
  x << 1, 0, 0, 1;
  const double l = ms_loss(x, {0, 1}).value;
  EXPECT_NEAR(l, std::log1p(std::exp(-50.0)) / 50.0, 1e-18);
  EXPECT_LT(l, 1e-20);
}

TEST(ms_loss, rejects_non_unit_rows_and_bad_shapes) {
  EXPECT_THROW(ms_loss(Mat::Constant(2, 2, 1.0), {0, 1}), std::invalid_argument);
  EXPECT_THROW(ms_loss(Mat::Identity(2, 2), {0}), std::invalid_argument);
  EXPECT_THROW(ms_loss(Mat::Identity(2, 2), {0, 1}, {1, 50, 0}), std::invalid_argument);
}

TEST(ms_loss, accepts_rows_within_tolerance) {
  Mat x = Mat::Identity(2, 2) * (1.0 + 5e-5);
  EXPECT_NO_THROW(ms_loss(x, {0, 1}));
}

TEST(ms_loss, non_negative_and_matches_oracle) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 2 + static_cast<int>(rng.below(15)), d = 1 + static_cast<int>(rng.below(32));
    const Mat x = unit_rows(rng.normal_matrix(b, d));
    const auto labels = random_labels(rng, b, 1 + static_cast<int>(rng.below(5)));
    const double got = ms_loss(x, labels).value;
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, oracle::ms_loss(x, labels, 1, 50, 1), 1e-6);
  }
}

TEST(ms_loss, zero_when_margins_are_wide) {
  MSParams p{20.0, 50.0, 0.5};
  Mat x(4, 2);
  x << 1, 0, 1, 0, 0, 1, 0, 1;
  EXPECT_LT(ms_loss(x, {0, 0, 1, 1}, p).value, 1e-4);
}

TEST(ms_loss, gradient_matches_finite_differences) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const int b = 8, d = 8;
    const Mat x = unit_rows(rng.normal_matrix(b, d));
    const auto labels = random_labels(rng, b, 3);
    const LossWithGrad l = ms_loss(x, labels);
    // Perturbations are renormalised so every probe stays a valid input;
    // the analytic gradient is already tangent to the sphere.
    auto f = [&](const Vec& z) { return ms_loss(unit_rows(Eigen::Map<const Mat>(z.data(), b, d)), labels).value; };
    EXPECT_LT(grad_check(f, flat(x), flat(l.grad), 1e-4).max_rel_error, 1e-4);
  }
}

TEST(infonce_loss, single_pair_is_exactly_zero) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const InfoNceResult r = infonce_loss(rng.normal_matrix(1, 7), rng.normal_matrix(1, 7), 0.07);
    EXPECT_EQ(r.value, 0.0);
    EXPECT_FALSE(std::signbit(r.value));
  }
}

TEST(infonce_loss, aligned_orthonormal_pair) {
  const Mat e = Mat::Identity(2, 2);
  EXPECT_NEAR(infonce_loss(e, e, 0.07).value, std::log1p(std::exp(-1.0 / 0.07)), 1e-15);
}

TEST(infonce_loss, matches_oracle_and_is_symmetric) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 1 + static_cast<int>(rng.below(16)), d = 1 + static_cast<int>(rng.below(32));
    const Mat v = rng.normal_matrix(b, d), t = rng.normal_matrix(b, d);
    const double tau = 0.05 + rng.uniform();
    const double got = infonce_loss(v, t, tau).value;
    EXPECT_NEAR(got, oracle::infonce(v, t, tau), 1e-6);
    EXPECT_NEAR(got, infonce_loss(t, v, tau).value, 1e-12);
  }
}

TEST(infonce_loss, invariant_under_common_permutation) {
  Rng rng(5);
  const Mat v = rng.normal_matrix(6, 4), t = rng.normal_matrix(6, 4);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  EXPECT_NEAR(infonce_loss(perm * v, perm * t, 0.07).value, infonce_loss(v, t, 0.07).value, 1e-12);
}

TEST(infonce_loss, rejects_bad_tau_and_shapes) {
  EXPECT_THROW(infonce_loss(Mat::Ones(2, 2), Mat::Ones(2, 2), 0.0), std::invalid_argument);
  EXPECT_THROW(infonce_loss(Mat::Ones(2, 2), Mat::Ones(3, 2), 0.07), std::invalid_argument);
}

TEST(infonce_loss, gradient_matches_finite_differences) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const int b = 6, d = 8;
    const Mat v = rng.normal_matrix(b, d), t = rng.normal_matrix(b, d);
    const InfoNceResult r = infonce_loss(v, t, 0.07);
    auto fv = [&](const Vec& z) { return infonce_loss(Eigen::Map<const Mat>(z.data(), b, d), t, 0.07).value; };
    auto ft = [&](const Vec& z) { return infonce_loss(v, Eigen::Map<const Mat>(z.data(), b, d), 0.07).value; };
    EXPECT_LT(grad_check(fv, flat(v), flat(r.grad_v), 1e-4).max_rel_error, 1e-4);
    EXPECT_LT(grad_check(ft, flat(t), flat(r.grad_t), 1e-4).max_rel_error, 1e-4);
  }
}

TEST(total_loss, weighted_sum) {
  EXPECT_NEAR(total_loss(1.0, 2.0, 0.15), 1.3, 1e-15);
  EXPECT_EQ(total_loss(0.7, 5.0, 0.0), 0.7);
  EXPECT_NEAR(total_loss(0.7, 3.0, 0.2) - total_loss(0.7, 2.0, 0.2), 0.2, 1e-15);
}

TEST(grad_check, quadratic_is_exact) {
  Rng rng(7);
  const Mat a = rng.normal_matrix(5, 5);
  const Mat q = a * a.transpose();
  const Vec x = rng.normal_matrix(5, 1);
  auto f = [&](const Vec& z) { return 0.5 * z.dot(q * z); };
  const auto rep = grad_check(f, x, q * x, 1e-6);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(grad_check, flags_wrong_gradient) {
  auto f = [](const Vec& z) { return z.squaredNorm(); };
  const Vec x = Vec::Ones(3);
  const auto rep = grad_check(f, x, Vec::Constant(3, 1.0), 1e-4);
  EXPECT_FALSE(rep.passed);
  EXPECT_GE(rep.worst_index, 0);
}
