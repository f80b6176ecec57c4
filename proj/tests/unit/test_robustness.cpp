#include "advgen/error.hpp"
#include "advgen/robustness.hpp"
#include "attack_fixtures.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace advgen;

namespace {

/// Plain enumeration of {-1,+1}^m with a running sign vector, for cross-checks.
double brute_force_l1(const Eigen::MatrixXd& w, double eps) {
  const auto m = w.cols();
  double best = 0;
  for (std::int64_t mask = 0; mask < (std::int64_t{1} << m); ++mask) {
    double total = 0;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double row = 0;
      for (Eigen::Index j = 0; j < m; ++j) row += w(i, j) * ((mask >> j) & 1 ? eps : -eps);
      total += std::abs(row);
    }
    best = std::max(best, total);
  }
  return best;
}

class LinearMap final : public attack::LatentGenerator {
 public:
  explicit LinearMap(torch::Tensor g) : g_(std::move(g)) {}
  std::int64_t latent_dim() const override { return g_.size(1); }
  std::int64_t class_count() const override { return 2; }
  ImageShape image_shape() const override { return {1, 4, 4}; }
  torch::Tensor generate(const torch::Tensor& z, std::int64_t) const override { return g_.matmul(z).view({1, 4, 4}); }

 private:
  torch::Tensor g_;
};

}  // namespace

TEST(Bound, FormulaValues) {
  robust::BoundInstance in;
  in.n = 100;
  in.m = 4;
  in.epsilon = 0.1;
  in.entry_bound = 1;
  in.delta = 0.05;
  const double oracle = 4 * 0.1 * std::sqrt(4 * (4 * std::log(2.0) + std::log(20.0)) / 100) + 0.4;
  EXPECT_NEAR(robust::prop1_bound(in), oracle, 1e-12);
  EXPECT_NEAR(robust::prop1_bound(in), 0.5922, 1e-4);
  in.delta = 1;
  EXPECT_NEAR(robust::prop1_bound(in), 0.4 * std::sqrt(4 * 4 * std::log(2.0) / 100) + 0.4, 1e-12);
  in.delta = 0;
  EXPECT_THROW(in.validate(), ValidationError);
}

TEST(WorstCase, WorkedMatrix) {
  Eigen::MatrixXd w(2, 3);
  w << 1, -2, 3, 0, 1, -1;
  EXPECT_DOUBLE_EQ(robust::worst_case_l1_exact(w, 1.0), 8.0);
  EXPECT_DOUBLE_EQ(brute_force_l1(w, 1.0), 8.0);
  EXPECT_DOUBLE_EQ(robust::worst_case_l1_exact(Eigen::MatrixXd::Zero(3, 4), 0.5), 0.0);
}

TEST(WorstCase, SingleRowClosedFormIsExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXd w(1, 8);
    for (int j = 0; j < 8; ++j) w(0, j) = u(rng);
    double l1 = 0;
    for (int j = 0; j < 8; ++j) l1 += std::abs(w(0, j));
    EXPECT_EQ(robust::worst_case_l1_exact(w, 0.1), 0.1 * l1);
  }
}

TEST(WorstCase, PropertiesOnRandomMatrices) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 30; ++t) {
    Eigen::MatrixXd w(5, 6);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    const double exact = robust::worst_case_l1_exact(w, 0.3);
    EXPECT_NEAR(exact, brute_force_l1(w, 0.3), 1e-12);
    EXPECT_NEAR(exact, 0.3 * robust::worst_case_l1_exact(w, 1.0), 1e-12);
    EXPECT_LE(exact, robust::row_sum_relaxation(w, 0.3) + 1e-12);
    for (int k = 0; k < 20; ++k) {
      Eigen::VectorXd dx(6);
      for (int j = 0; j < 6; ++j) dx(j) = 0.3 * u(rng);
      EXPECT_LE((w * dx).lpNorm<1>(), exact + 1e-12);
    }
  }
  EXPECT_THROW(robust::worst_case_l1_exact(Eigen::MatrixXd::Ones(1, 21), 1.0), ValidationError);
}

TEST(MonteCarlo, ReproducibleAndConsistent) {
  robust::BoundInstance in;
  in.n = 20;
  in.m = 6;
  in.epsilon = 0.1;
  const auto a = robust::monte_carlo_violation_rate(in, 60, 5, 1);
  const auto b = robust::monte_carlo_violation_rate(in, 60, 5, 3);
  ASSERT_EQ(a.records.size(), 60u);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].normalized_worst_case, b.records[i].normalized_worst_case);
    EXPECT_EQ(a.records[i].seed, mix_seed(5, i));
    const auto w = robust::sample_matrix(in, a.records[i].seed);
    EXPECT_EQ(a.records[i].normalized_worst_case, robust::worst_case_l1_exact(w, 0.1) / 20);
    if (!a.records[i].violated) EXPECT_LE(a.records[i].normalized_worst_case, a.bound);
    EXPECT_LE(w.cwiseAbs().maxCoeff(), 1.0);
  }
  EXPECT_EQ(a.violations, 0);
  EXPECT_EQ(a.to_json().at("records").size(), 60u);
  EXPECT_NE(a.summary_csv().find("violation_fraction"), std::string::npos);
}

TEST(MonteCarlo, ZeroLawNeverViolates) {
  robust::BoundInstance in;
  in.law = robust::MatrixLaw::zero;
  const auto r = robust::monte_carlo_violation_rate(in, 10, 1);
  EXPECT_EQ(r.violations, 0);
  EXPECT_EQ(r.max_normalized_worst_case, 0.0);
  in.law = robust::parse_matrix_law("rademacher");
  const auto w = robust::sample_matrix(in, 3);
  EXPECT_EQ(w.cwiseAbs().minCoeff(), 1.0);
}

TEST(Jacobian, MatchesFiniteDifferences) {
  test::LinearGenerator g(5, 2, 3);
  auto z = torch::randn({5}, real_options());
  auto fn = [&](const torch::Tensor& v) { return g.generate(v, 1); };
  const auto j = robust::jacobian(fn, z);
  const auto fd = robust::jacobian_fd(fn, z);
  ASSERT_EQ(j.rows(), 16);
  ASSERT_EQ(j.cols(), 5);
  for (Eigen::Index i = 0; i < j.size(); ++i) {
    EXPECT_LE(test::rel_err(j.data()[i], fd.data()[i], 1e-6), 1e-3);
  }
}

TEST(Jacobian, LinearProbeValues) {
  auto gmat = torch::randn({16, 3}, real_options());
  auto w = torch::randn({16}, real_options());
  LinearMap g(gmat);
  robust::ScoreFn score = [&](const torch::Tensor& x) { return x.flatten().dot(w); };
  const auto probe = robust::jacobian_probe(g, 0, score, 4, 0.2, 1);
  const double proxy = 0.2 * gmat.abs().sum().item<double>() / 16;
  const double exact = 0.2 * w.matmul(gmat).abs().sum().item<double>();
  ASSERT_EQ(probe.samples.size(), 4u);
  for (const auto& s : probe.samples) {
    EXPECT_NEAR(s.generator_row_proxy, proxy, 1e-12);
    EXPECT_NEAR(s.score_worst_case, exact, 1e-12);
  }
  EXPECT_NEAR(probe.median_ratio(), exact / proxy, 1e-9);
  EXPECT_TRUE(probe.flagged.empty());
}

TEST(Jacobian, NonFiniteFlagged) {
  auto gmat = torch::randn({16, 2}, real_options());
  LinearMap g(gmat);
  robust::ScoreFn score = [](const torch::Tensor& x) { return x.sum() * std::numeric_limits<double>::quiet_NaN(); };
  const auto probe = robust::jacobian_probe(g, 0, score, 3, 0.1, 2);
  EXPECT_EQ(probe.flagged.size(), 3u);
  for (const auto& s : probe.samples) EXPECT_FALSE(s.finite);
  EXPECT_NE(probe.flagged[0].find("z0=["), std::string::npos);
}
