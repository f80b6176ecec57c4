#include "advgen/acgan.hpp"
#include "advgen/data.hpp"
#include "advgen/error.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace advgen;

namespace {

gan::GanBundle small_bundle(gan::Architecture kind = gan::Architecture::mlp, ImageShape shape = {1, 8, 8},
                            std::uint64_t seed = 1) {
  gan::GanArchitecture arch;
  arch.kind = kind;
  arch.hidden = kind == gan::Architecture::mlp ? 32 : 8;
  return gan::GanBundle::create(arch, 6, 3, shape, seed);
}

ImageBatch toy_data(std::int64_t per_class = 40) {
  data::SyntheticOptions o;
  o.class_count = 3;
  o.per_class = per_class;
  return data::make_synthetic_dataset(o).train;
}

}  // namespace

TEST(Generator, UpsampleBlockCounts) {
  EXPECT_EQ(gan::generator_upsample_blocks(32), 3);
  EXPECT_EQ(gan::generator_upsample_blocks(28), 2);
  EXPECT_EQ(gan::generator_upsample_blocks(64), 4);
  EXPECT_EQ(gan::generator_upsample_blocks(8), 1);
}

TEST(Generator, OutputShapesAndRange) {
  for (auto kind : {gan::Architecture::mlp, gan::Architecture::resnet}) {
    for (ImageShape shape : {ImageShape{1, 8, 8}, ImageShape{1, 28, 28}, ImageShape{3, 32, 32}}) {
      auto b = small_bundle(kind, shape);
      auto x = b.generate_batch(torch::randn({4, 6}, real_options()), torch::tensor({0, 1, 2, 0}, index_options()));
      EXPECT_EQ(x.sizes(), torch::IntArrayRef(shape.batch_dims(4)));
      EXPECT_GE(x.min().item<double>(), 0.0);
      EXPECT_LE(x.max().item<double>(), 1.0);
      EXPECT_EQ(b.aux_log_probs(x).sizes(), (std::vector<std::int64_t>{4, 3}));
      EXPECT_EQ(b.discriminator->critic(x).sizes(), (std::vector<std::int64_t>{4}));
    }
  }
}

TEST(Generator, RejectsBadLatentOrClass) {
  auto b = small_bundle();
  EXPECT_THROW(b.generate(torch::zeros({5}, real_options()), 0), DimensionError);
  EXPECT_THROW(b.generate(torch::zeros({6}, real_options()), 3), DimensionError);
  EXPECT_THROW(b.generate(torch::zeros({6}, real_options()), -1), DimensionError);
}

TEST(Generator, SameSeedSameWeightsAndDifferentiableInZ) {
  auto a = small_bundle(gan::Architecture::mlp, {1, 8, 8}, 9);
  auto b = small_bundle(gan::Architecture::mlp, {1, 8, 8}, 9);
  auto z = torch::randn({6}, real_options()).requires_grad_();
  EXPECT_TRUE(torch::equal(a.generate(z, 1), b.generate(z, 1)));
  a.generate(z, 1).sum().backward();
  ASSERT_TRUE(z.grad().defined());
  EXPECT_GT(z.grad().abs().sum().item<double>(), 0.0);
}

TEST(GradientPenalty, LinearCriticClosedForm) {
  // d(x) = <w, x> has gradient w everywhere, so GP = (||w|| - 1)^2.
  auto w = torch::randn({1, 2, 3}, real_options());
  gan::CriticFn critic = [&](const torch::Tensor& x) { return (x * w).sum({1, 2, 3}); };
  auto real = torch::rand({5, 1, 2, 3}, real_options());
  auto fake = torch::rand({5, 1, 2, 3}, real_options());
  auto gen = make_generator(3);
  const double expected = std::pow(w.norm().item<double>() - 1.0, 2);
  EXPECT_NEAR(gan::gradient_penalty(critic, real, fake, gan::sample_mix(5, gen)).item<double>(), expected, 1e-12);
}

TEST(GradientPenalty, MatchesFiniteDifferencesInCriticParameters) {
  auto w = torch::randn({12, 4}, real_options()).requires_grad_();
  auto v = torch::randn({4}, real_options()).requires_grad_();
  gan::CriticFn critic = [&](const torch::Tensor& x) { return torch::tanh(x.flatten(1).matmul(w)).matmul(v); };
  auto real = torch::rand({6, 1, 3, 4}, real_options());
  auto fake = torch::rand({6, 1, 3, 4}, real_options());
  auto gen = make_generator(4);
  auto mix = gan::sample_mix(6, gen);
  auto loss = [&] { return gan::gradient_penalty(critic, real, fake, mix); };
  EXPECT_LE(test::max_param_grad_error({w, v}, loss, 30, 11), 1e-4);
}

TEST(GanLosses, TermsMatchManualComputation) {
  auto b = small_bundle();
  auto data = toy_data(4);
  auto z = torch::randn({data.size(), 6}, real_options());
  auto y = torch::randint(3, {data.size()}, index_options());
  auto gen = make_generator(2);
  auto mix = gan::sample_mix(data.size(), gen);
  const auto d = gan::discriminator_step_loss(b, data, z, y, 10.0, mix);
  auto fake = b.generate_batch(z, y).detach();
  EXPECT_NEAR(d.fake_term, b.discriminator->critic(fake).mean().item<double>(), 1e-12);
  EXPECT_NEAR(d.real_term, b.discriminator->critic(data.pixels).mean().item<double>(), 1e-12);
  auto lp = b.aux_log_probs(data.pixels);
  EXPECT_NEAR(d.aux_term, -lp.gather(1, data.labels->unsqueeze(1)).mean().item<double>(), 1e-12);
  EXPECT_NEAR(d.total.item<double>(), d.fake_term - d.real_term + d.aux_term + 10.0 * d.penalty, 1e-10);

  const auto g = gan::generator_step_loss(b, z, y);
  EXPECT_NEAR(g.adversarial_term, -b.discriminator->critic(fake).mean().item<double>(), 1e-12);
  EXPECT_NEAR(g.aux_term, -b.aux_log_probs(fake).gather(1, y.unsqueeze(1)).mean().item<double>(), 1e-12);
}

TEST(GanLosses, MatchFiniteDifferences) {
  auto b = small_bundle();
  auto data = toy_data(3);
  auto z = torch::randn({data.size(), 6}, real_options());
  auto y = torch::randint(3, {data.size()}, index_options());
  auto gen = make_generator(5);
  auto mix = gan::sample_mix(data.size(), gen);
  auto d_loss = [&] { return gan::discriminator_step_loss(b, data, z, y, 10.0, mix).total; };
  EXPECT_LE(test::max_param_grad_error(b.discriminator->parameters(), d_loss, 20, 1), 1e-3);
  auto g_loss = [&] { return gan::generator_step_loss(b, z, y).total; };
  EXPECT_LE(test::max_param_grad_error(b.generator->parameters(), g_loss, 20, 2), 1e-3);
}

TEST(GanLosses, ValidateInputs) {
  auto b = small_bundle();
  auto data = toy_data(2);
  auto z = torch::randn({data.size(), 6}, real_options());
  auto y = torch::zeros({data.size()}, index_options());
  auto mix = torch::rand({data.size()}, real_options());
  EXPECT_THROW(gan::discriminator_step_loss(b, data, z, y, -1.0, mix), ValidationError);
  ImageBatch unlabeled{data.pixels, std::nullopt};
  EXPECT_THROW(gan::discriminator_step_loss(b, unlabeled, z, y, 1.0, mix), ValidationError);
}

TEST(Bundle, SaveLoadRoundTripAndVersionCheck) {
  test::TempDir dir;
  for (auto kind : {gan::Architecture::mlp, gan::Architecture::resnet}) {
    auto b = small_bundle(kind);
    gan::save_bundle(b, dir / "b.ckpt");
    auto c = gan::load_bundle(dir / "b.ckpt");
    auto z = torch::randn({6}, real_options());
    EXPECT_TRUE(torch::equal(b.generate(z, 2), c.generate(z, 2)));
    auto x = torch::rand({2, 1, 8, 8}, real_options());
    EXPECT_TRUE(torch::equal(b.aux_log_probs(x), c.aux_log_probs(x)));
    auto copy = b.clone();
    EXPECT_TRUE(torch::equal(b.generate(z, 0), copy.generate(z, 0)));
  }
  auto bytes = test::read_file(dir / "b.ckpt");
  bytes[8] = 99;
  test::write_file(dir / "bad.ckpt", bytes);
  EXPECT_THROW(gan::load_bundle(dir / "bad.ckpt"), CheckpointVersionError);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  gan::GanTrainConfig c;
  c.lambda_gp = 3;
  c.critic_steps = 2;
  c.seed = 77;
  const auto back = gan::GanTrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.critic_steps = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Trainer, ResumeContinuesTheSameTrajectory) {
  test::TempDir dir;
  auto data = toy_data(10);
  gan::GanTrainConfig c;
  c.batch_size = 8;
  c.critic_steps = 2;
  c.total_steps = 4;
  c.seed = 13;
  gan::GanTrainer straight(small_bundle(), c, data);
  straight.run_until(4);

  gan::GanTrainer first(small_bundle(), c, data);
  first.run_until(2);
  first.save_checkpoint(dir / "t.ckpt");
  auto resumed = gan::GanTrainer::resume(dir / "t.ckpt", data);
  EXPECT_EQ(resumed.bundle().step, 2);
  resumed.run_until(4);

  const auto pa = straight.bundle().generator->parameters();
  const auto pb = resumed.bundle().generator->parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(torch::equal(pa[i], pb[i]));
  EXPECT_EQ(straight.curves().discriminator, resumed.curves().discriminator);
  EXPECT_EQ(resumed.curves().generator.size(), 4u);
}

TEST(Trainer, ConditioningAgreementIsAFraction) {
  auto b = small_bundle();
  const double a = gan::conditioning_agreement(b, 60, 1);
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 1.0);
  EXPECT_EQ(a, gan::conditioning_agreement(b, 60, 1));
}
