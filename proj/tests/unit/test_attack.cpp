#include "advgen/attack.hpp"
#include "advgen/error.hpp"
#include "attack_fixtures.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace advgen;
using attack::AttackConfig;

namespace {

/// Classifier whose probabilities ignore the image.
clf::FunctionClassifier constant_classifier(std::vector<double> probs) {
  const auto k = static_cast<std::int64_t>(probs.size());
  auto lp = torch::tensor(probs, real_options()).log();
  return clf::FunctionClassifier([lp, k](const torch::Tensor& x) { return lp.expand({x.size(0), k}); }, k,
                                 {1, 4, 4});
}

AttackConfig toy_config(std::int64_t source, std::optional<std::int64_t> target) {
  AttackConfig c;
  c.y_source = source;
  c.y_target = target;
  c.lambda1 = 0.1;
  c.epsilon = 1.0;
  c.alpha = 0.5;
  c.steps = 30;
  c.max_restarts = 20;
  c.normalize_latent_grad = true;
  return c;
}

}  // namespace

TEST(Losses, WorkedExamples) {
  auto x = torch::zeros({1, 4, 4}, real_options());
  EXPECT_NEAR(attack::loss_l0(constant_classifier({0.5, 0.5}), x, 1).item<double>(), std::log(2.0), 1e-12);
  EXPECT_NEAR(attack::loss_l0(constant_classifier({0.0, 1.0}), x, 1).item<double>(), 0.0, 1e-12);
  EXPECT_NEAR(attack::loss_l0_untargeted(constant_classifier({0.25, 0.25, 0.25, 0.25}), x, 2).item<double>(),
              std::log(4.0), 1e-12);
  EXPECT_NEAR(attack::loss_l0_untargeted(constant_classifier({0.1, 0.6, 0.3}), x, 1).item<double>(), -std::log(0.3),
              1e-12);
  auto z0 = torch::zeros({2}, real_options());
  EXPECT_DOUBLE_EQ(attack::loss_l1(z0, z0, 0.1).item<double>(), 0.0);
  EXPECT_NEAR(attack::loss_l1(torch::tensor({0.3, -0.05}, real_options()), z0, 0.1).item<double>(), 0.1, 1e-12);
  EXPECT_NEAR(attack::loss_l2(constant_classifier({1.0, 0.0}), x, 0).item<double>(), 0.0, 1e-12);
  const double e1 = std::exp(-1.0);
  EXPECT_NEAR(attack::loss_l2(constant_classifier({e1, 1 - e1}), x, 0).item<double>(), 1.0, 1e-12);
}

TEST(Losses, ConfidenceFloor) {
  auto x = torch::zeros({1, 4, 4}, real_options());
  auto f = clf::FunctionClassifier(
      [](const torch::Tensor& in) {
        return torch::tensor({0.0, -1000.0}, real_options()).expand({in.size(0), 2});
      },
      2, {1, 4, 4});
  EXPECT_NEAR(attack::loss_l0(f, x, 1).item<double>(), -std::log(attack::kConfidenceFloor), 1e-9);
}

TEST(Losses, NoiseAugmentExamples) {
  auto img = torch::rand({1, 4, 4}, real_options()) * 0.5 + 0.25;
  auto tau = torch::randn({1, 4, 4}, real_options());
  EXPECT_TRUE(torch::equal(attack::noise_augment(img, tau, 0.0), img));
  auto saturated = attack::noise_augment(img, torch::full({1, 4, 4}, 1e3, real_options()), 0.1);
  EXPECT_LT((saturated - (img + 0.1)).abs().max().item<double>(), 1e-12);
  for (int i = 0; i < 20; ++i) {
    auto r = torch::rand({1, 4, 4}, real_options());
    auto t = torch::randn({1, 4, 4}, real_options()) * 10;
    EXPECT_LE((attack::noise_augment(r, t, 0.07) - r).abs().max().item<double>(), 0.07 + 1e-12);
  }
  EXPECT_THROW(attack::noise_augment(img, torch::zeros({1, 2, 2}, real_options()), 0.1), DimensionError);
}

TEST(Losses, TotalLossComposition) {
  test::LinearGenerator g(5, 3, 1);
  auto f = test::logistic_classifier(3, 2);
  auto aux = test::logistic_classifier(3, 3);
  auto c = toy_config(0, 2);
  c.lambda1 = 0;
  c.lambda2 = 0;
  attack::LatentState s{torch::randn({5}, real_options()), torch::zeros({5}, real_options()), std::nullopt};
  auto t = attack::total_loss(s, c, g, f, &aux);
  EXPECT_DOUBLE_EQ(t.terms.total, t.terms.l0);
  c.lambda1 = 3;
  c.lambda2 = 0.5;
  c.epsilon = 0.2;
  t = attack::total_loss(s, c, g, f, &aux);
  EXPECT_NEAR(t.terms.total, t.terms.l0 + 3 * t.terms.l1 + 0.5 * t.terms.l2, 1e-12);
  EXPECT_THROW(attack::total_loss(s, c, g, f, nullptr), ValidationError);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  test::LinearGenerator g(6, 3, 4);
  auto f = test::logistic_classifier(3, 5);
  auto aux = test::logistic_classifier(3, 6);
  auto c = toy_config(1, 2);
  c.lambda1 = 2;
  c.lambda2 = 0.7;
  c.epsilon = 0.05;
  c.epsilon_attack = 0.1;
  for (int trial = 0; trial < 5; ++trial) {
    auto z0 = torch::randn({6}, real_options());
    // Keep every |z - z0| at least 0.01 away from the l1 kink at eps.
    auto offset = torch::rand({6}, real_options()) * 0.5 + 0.06;
    offset = offset * (torch::rand({6}, real_options()) > 0.5).to(kReal).mul(2).sub(1);
    auto z = (z0 + offset).requires_grad_();
    auto tau = torch::randn({1, 4, 4}, real_options()).requires_grad_();
    auto loss = [&](const torch::Tensor& zz, const torch::Tensor& tt) {
      return attack::total_loss({zz, z0, tt}, c, g, f, &aux).total;
    };
    loss(z, tau).backward();
    auto fd_z = test::central_difference([&](const torch::Tensor& v) { return loss(v, tau.detach()).item<double>(); }, z);
    auto fd_t = test::central_difference([&](const torch::Tensor& v) { return loss(z.detach(), v).item<double>(); },
                                         tau);
    for (std::int64_t i = 0; i < 6; ++i) {
      EXPECT_LE(test::rel_err(z.grad()[i].item<double>(), fd_z[i].item<double>(), 1e-6), 1e-4);
    }
    auto gt = tau.grad().view(-1), ft = fd_t.view(-1);
    for (std::int64_t i = 0; i < 16; ++i) {
      EXPECT_LE(test::rel_err(gt[i].item<double>(), ft[i].item<double>(), 1e-6), 1e-4);
    }
  }
}

TEST(Config, JsonRoundTripAndStrictness) {
  auto c = toy_config(1, 0);
  c.epsilon_attack = 0.3;
  c.tau_init = attack::TauInit::zero;
  c.latent_mode = attack::LatentMode::frozen;
  const auto back = AttackConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  auto j = c.to_json();
  j["y_target"] = nullptr;
  EXPECT_FALSE(AttackConfig::from_json(j).targeted());
  j["lamda1"] = 3;
  EXPECT_THROW(AttackConfig::from_json(j), ValidationError);
}

TEST(Config, Validation) {
  auto c = toy_config(1, 1);
  EXPECT_THROW(c.validate(3), ValidationError);
  c = toy_config(0, 3);
  EXPECT_THROW(c.validate(3), ValidationError);
  c = toy_config(0, 1);
  c.steps = -1;
  EXPECT_THROW(c.validate(3), ValidationError);
  c = toy_config(0, 1);
  c.max_restarts = 0;
  EXPECT_THROW(c.validate(3), ValidationError);
  c = toy_config(0, 1);
  c.epsilon_attack = -0.1;
  EXPECT_THROW(c.validate(3), ValidationError);
  EXPECT_NO_THROW(toy_config(2, 1).validate(3));
}

TEST(RunAttack, ZeroStepSizeKeepsLossConstant) {
  test::LinearGenerator g(4, 2, 7);
  auto f = test::logistic_classifier(2, 8);
  auto c = toy_config(0, 1);
  c.alpha = 0;
  c.epsilon_attack = 0.1;
  c.max_restarts = 1;
  const auto r = attack::run_attack(c, g, f, nullptr);
  ASSERT_EQ(r.trace.size(), 30u);
  for (const auto& t : r.trace) EXPECT_DOUBLE_EQ(t.total, r.trace.front().total);
}

TEST(RunAttack, SuccessIsSoundAndDeterministic) {
  test::LinearGenerator g(6, 3, 9);
  auto f = test::logistic_classifier(3, 10, 3.0);
  for (std::int64_t s = 0; s < 3; ++s) {
    for (std::int64_t t = 0; t < 3; ++t) {
      if (s == t) continue;
      auto c = toy_config(s, t);
      c.seed = static_cast<std::uint64_t>(10 * s + t);
      const auto r = attack::run_attack(c, g, f, nullptr);
      const auto again = attack::run_attack(c, g, f, nullptr);
      EXPECT_TRUE(torch::equal(r.image, again.image));
      EXPECT_EQ(r.restarts_used, again.restarts_used);
      if (r.status == attack::AttackStatus::success) {
        EXPECT_EQ(f.predict(r.image.unsqueeze(0))[0].item<std::int64_t>(), t);
        EXPECT_TRUE(torch::equal(r.image, g.generate(r.z, s)));
      }
    }
  }
}

TEST(RunAttack, NoiseStaysWithinBudget) {
  test::LinearGenerator g(4, 2, 11);
  auto f = test::logistic_classifier(2, 12, 5.0);
  auto c = toy_config(0, 1);
  c.epsilon_attack = 0.05;
  c.max_restarts = 3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    c.seed = seed;
    const auto r = attack::run_attack(c, g, f, nullptr);
    ASSERT_TRUE(r.tau.has_value());
    EXPECT_LE((r.image - g.generate(r.z, 0)).abs().max().item<double>(), 0.05 + 1e-6);
  }
}

TEST(RunAttack, UnreachableTargetExhaustsBudget) {
  test::LinearGenerator g(4, 2, 13);
  auto f = constant_classifier({0.9, 0.1});
  auto c = toy_config(0, 1);
  c.max_restarts = 4;
  c.steps = 3;
  const auto r = attack::run_attack(c, g, f, nullptr);
  EXPECT_EQ(r.status, attack::AttackStatus::budget_exhausted);
  EXPECT_EQ(r.restarts_used, 4);
  EXPECT_EQ(r.prediction, 0);
  c.y_target.reset();
  c.y_source = 1;
  EXPECT_EQ(attack::run_attack(c, g, f, nullptr).status, attack::AttackStatus::success);
}

TEST(RunAttack, NonFiniteLossRestartsWithDiagnostic) {
  class NanGenerator final : public attack::LatentGenerator {
   public:
    std::int64_t latent_dim() const override { return 2; }
    std::int64_t class_count() const override { return 2; }
    ImageShape image_shape() const override { return {1, 4, 4}; }
    torch::Tensor generate(const torch::Tensor& z, std::int64_t) const override {
      return (z.sum() * std::numeric_limits<double>::quiet_NaN()).expand({1, 4, 4});
    }
  } g;
  auto f = test::logistic_classifier(2, 1);
  auto c = toy_config(0, 1);
  c.max_restarts = 3;
  const auto r = attack::run_attack(c, g, f, nullptr);
  EXPECT_EQ(r.status, attack::AttackStatus::budget_exhausted);
  EXPECT_EQ(r.diagnostics.size(), 3u);
}

TEST(RunAttack, LargeLatentPenaltyKeepsZNearAnchor) {
  test::LinearGenerator g(6, 2, 21);
  auto f = test::logistic_classifier(2, 22, 3.0);
  auto c = toy_config(0, 1);
  c.lambda1 = 1e4;
  c.epsilon = 0.5;
  // A normalized step of length alpha overshoots the box by at most alpha / sqrt(m) in l1 mean.
  c.alpha = 0.002;
  c.steps = 500;
  int accepted = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    c.seed = seed;
    const auto r = attack::run_attack(c, g, f, nullptr);
    if (r.status != attack::AttackStatus::success) continue;
    ++accepted;
    EXPECT_LE(attack::loss_l1(r.z, r.z0, c.epsilon).item<double>(), 1e-3);
  }
  EXPECT_GT(accepted, 0);
}

TEST(RunAttacks, ParallelMapMatchesSequentialSeeds) {
  test::LinearGenerator g(4, 3, 15);
  auto f = test::logistic_classifier(3, 16, 3.0);
  auto base = toy_config(0, 1);
  base.seed = 99;
  const auto tasks = attack::make_tasks(3, true, 2);
  ASSERT_EQ(tasks.size(), 12u);
  const auto seq = attack::run_attacks(base, tasks, g, f, nullptr, 1);
  const auto par = attack::run_attacks(base, tasks, g, f, nullptr, 3);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    EXPECT_TRUE(torch::equal(seq[i].image, par[i].image));
    auto c = base;
    c.y_source = tasks[i].y_source;
    c.y_target = tasks[i].y_target;
    c.seed = mix_seed(base.seed, i);
    EXPECT_TRUE(torch::equal(attack::run_attack(c, g, f, nullptr).image, seq[i].image));
  }
  EXPECT_EQ(attack::make_tasks(3, false, 2).size(), 6u);
}

TEST(DatasetAdapter, IndexingAndUniformAnchors) {
  const std::int64_t n0 = 5;
  auto pixels = torch::rand({8, 1, 4, 4}, real_options());
  auto labels = torch::tensor({0, 1, 0, 0, 1, 0, 0, 1}, index_options());
  auto g = attack::dataset_generator_adapter({pixels, labels}, 3 - 1, 0);
  EXPECT_EQ(g.class_size(0), n0);
  EXPECT_TRUE(torch::equal(g.generate(torch::tensor({2.0}, real_options()), 0), pixels[3]));
  EXPECT_THROW(g.generate(torch::tensor({5.0}, real_options()), 0), DimensionError);
  EXPECT_THROW(attack::dataset_generator_adapter({pixels, labels}, 3, 2), ValidationError);

  auto gen = make_generator(1);
  const int draws = 50000;
  std::vector<int> counts(n0);
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(g.sample_anchor(0, gen).item<double>())];
  const double expected = static_cast<double>(draws) / n0;
  const double sigma = std::sqrt(draws * (1.0 / n0) * (1 - 1.0 / n0));
  for (int c : counts) EXPECT_LE(std::abs(c - expected), 3 * sigma);
}

TEST(DatasetAdapter, FrozenSaturatedNoiseStepIsFgsm) {
  // Binary logistic classifier: untargeted L0 = -log(1 - p_s), whose descent direction
  // in x is sign(grad_x -log p_s), the FGSM direction.
  auto pixels = torch::rand({6, 1, 4, 4}, real_options()) * 0.6 + 0.2;
  auto labels = torch::tensor({0, 0, 0, 1, 1, 1}, index_options());
  auto g = attack::dataset_generator_adapter({pixels, labels}, 2, 0);
  auto wgen = make_generator(3);
  auto w = torch::randn({2, 16}, wgen, real_options());
  clf::FunctionClassifier f([w](const torch::Tensor& x) { return torch::log_softmax(x.flatten(1).matmul(w.t()), 1); },
                            2, {1, 4, 4});
  AttackConfig c;
  c.y_source = 0;
  c.lambda1 = 0;
  c.lambda2 = 0;
  c.epsilon_attack = 0.1;
  c.alpha = 1e6;
  c.steps = 1;
  c.max_restarts = 1;
  c.latent_mode = attack::LatentMode::frozen;
  c.tau_init = attack::TauInit::zero;
  c.normalize_noise_grad = false;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    c.seed = seed;
    const auto r = attack::run_attack(c, g, f, nullptr);
    auto x = g.generate(r.z0, 0).unsqueeze(0).detach().requires_grad_();
    torch::nll_loss(f.log_probs(x), torch::tensor({0}, index_options())).backward();
    auto direction = (r.image - x.detach()[0]).sign();
    EXPECT_TRUE(torch::equal(direction, x.grad()[0].sign()));
  }
}

TEST(Persistence, WriteAndReadResults) {
  test::TempDir dir;
  test::LinearGenerator g(4, 2, 17);
  auto f = test::logistic_classifier(2, 18, 3.0);
  const auto tasks = attack::make_tasks(2, true, 2);
  const auto results = attack::run_attacks(toy_config(0, 1), tasks, g, f, nullptr, 1);
  const auto entries = attack::write_results(dir.path(), tasks, results, "abc");
  ASSERT_EQ(entries.size(), 4u);
  EXPECT_EQ(entries[0].id, "adv-000000");
  EXPECT_TRUE(std::filesystem::exists(dir / "adv-000003.png"));
  const auto stored = attack::read_results(dir.path());
  ASSERT_EQ(stored.entries.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(stored.entries[i].to_json(), entries[i].to_json());
    EXPECT_TRUE(torch::equal(stored.images.pixels[static_cast<std::int64_t>(i)], results[i].image));
  }
  EXPECT_EQ(attack::ManifestEntry::from_json(entries[1].to_json()).to_json(), entries[1].to_json());
  EXPECT_THROW(attack::ManifestEntry::from_json({{"id", "x"}}), ValidationError);
}
