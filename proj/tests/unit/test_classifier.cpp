#include "advgen/classifier.hpp"
#include "advgen/data.hpp"
#include "advgen/error.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

using namespace advgen;
using nlohmann::json;

namespace {

clf::ClassifierSpec spec_for(clf::Architecture arch, ImageShape input, std::int64_t k) {
  clf::ClassifierSpec s;
  s.arch = arch;
  s.input = input;
  s.class_count = k;
  s.base_maps = 4;
  s.resnet_blocks = {1, 1, 1};
  return s;
}

data::SyntheticDataset toy(std::int64_t per_class = 60) {
  data::SyntheticOptions o;
  o.per_class = per_class;
  o.seed = 4;
  return data::make_synthetic_dataset(o);
}

}  // namespace

TEST(Networks, OutputShapesAndNormalization) {
  struct Case {
    clf::Architecture arch;
    ImageShape input;
  };
  for (const auto& c : {Case{clf::Architecture::madry_cnn, {1, 28, 28}}, Case{clf::Architecture::resnet, {3, 32, 32}},
                        Case{clf::Architecture::resnet, {1, 28, 28}}, Case{clf::Architecture::mlp, {1, 8, 8}},
                        Case{clf::Architecture::logistic, {1, 8, 8}}}) {
    auto f = clf::build_untrained(spec_for(c.arch, c.input, 10), 1);
    auto lp = f->log_probs(torch::rand(c.input.batch_dims(3), real_options()));
    EXPECT_EQ(lp.sizes(), (std::vector<std::int64_t>{3, 10})) << clf::to_string(c.arch);
    EXPECT_LT((lp.exp().sum(1) - 1).abs().max().item<double>(), 1e-12);
  }
}

TEST(Networks, ResnetStageLayout) {
  clf::ResNetImpl net({3, 32, 32}, 10, 16, {10, 9, 9});
  EXPECT_EQ(net.residual_block_count(), 28);
  EXPECT_EQ(net.resize_block_count(), 2);
}

TEST(Networks, RejectsWrongInputShape) {
  auto f = clf::build_untrained(spec_for(clf::Architecture::mlp, {1, 8, 8}, 2), 1);
  EXPECT_THROW(f->log_probs(torch::rand({2, 1, 7, 8}, real_options())), DimensionError);
}

TEST(Spec, JsonRoundTripAndValidation) {
  auto s = spec_for(clf::Architecture::resnet, {3, 32, 32}, 10);
  s.regime = clf::Regime::adversarial;
  EXPECT_EQ(clf::ClassifierSpec::from_json(s.to_json()).to_json(), s.to_json());
  s.class_count = 1;
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_THROW(clf::parse_architecture("vgg"), ValidationError);
}

TEST(Training, ReachesHighAccuracyDeterministically) {
  const auto ds = toy();
  auto s = spec_for(clf::Architecture::mlp, {1, 8, 8}, 2);
  clf::TrainConfig c;
  c.steps = 150;
  c.seed = 3;
  const auto a = clf::build_and_train(s, ds.train, ds.test, c);
  const auto b = clf::build_and_train(s, ds.train, ds.test, c);
  EXPECT_GE(a.heldout_accuracy, 0.95);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.loss_curve.size(), 150u);
  EXPECT_DOUBLE_EQ(clf::accuracy(*a.classifier, ds.test), a.heldout_accuracy);
}

TEST(Training, AdversarialRegimeRuns) {
  const auto ds = toy(20);
  auto s = spec_for(clf::Architecture::logistic, {1, 8, 8}, 2);
  s.regime = clf::Regime::adversarial;
  clf::TrainConfig c;
  c.steps = 5;
  c.batch_size = 16;
  const auto t = clf::build_and_train(s, ds.train, ds.test, c);
  EXPECT_EQ(t.loss_curve.size(), 5u);
  for (double l : t.loss_curve) EXPECT_TRUE(std::isfinite(l));
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  test::TempDir dir;
  for (auto arch : {clf::Architecture::madry_cnn, clf::Architecture::resnet, clf::Architecture::mlp}) {
    const ImageShape shape = arch == clf::Architecture::mlp ? ImageShape{1, 8, 8} : ImageShape{1, 28, 28};
    auto f = clf::build_untrained(spec_for(arch, shape, 10), 2);
    clf::save_classifier(*f, dir / "f.ckpt");
    auto g = clf::load_classifier(dir / "f.ckpt");
    auto x = torch::rand(shape.batch_dims(2), real_options());
    EXPECT_TRUE(torch::equal(f->log_probs(x), g->log_probs(x))) << clf::to_string(arch);
  }
  test::write_file(dir / "junk.ckpt", "not a checkpoint");
  EXPECT_THROW(clf::load_classifier(dir / "junk.ckpt"), CheckpointError);
}

TEST(External, TorchScriptGoldenOutputs) {
  std::ifstream in(test::data_dir() / "external" / "golden.json");
  const auto golden = json::parse(in);
  auto x = torch::tensor(golden.at("input").get<std::vector<double>>(), real_options()).view({5, 1, 4, 4});
  auto expected = torch::tensor(golden.at("log_probs").get<std::vector<double>>(), real_options()).view({5, 3});
  for (const std::string name : {"linear_logits.pt", "linear_probs.pt"}) {
    auto f = clf::load_classifier(test::data_dir() / "external" / name);
    EXPECT_EQ(f->class_count(), 3);
    EXPECT_EQ(f->input_shape(), (ImageShape{1, 4, 4}));
    // float32 model: compare at single-precision accuracy.
    EXPECT_LT((f->log_probs(x) - expected).abs().max().item<double>(), 1e-5) << name;
  }
}

TEST(External, DifferentiableThroughAdapter) {
  auto f = clf::load_classifier(test::data_dir() / "external" / "linear_logits.pt");
  auto x = torch::rand({2, 1, 4, 4}, real_options()).requires_grad_();
  f->log_probs(x).select(1, 0).sum().backward();
  ASSERT_TRUE(x.grad().defined());
  EXPECT_GT(x.grad().abs().sum().item<double>(), 0.0);
}

TEST(Accuracy, CountsCorrectPredictions) {
  clf::FunctionClassifier always_one(
      [](const torch::Tensor& x) {
        return torch::log_softmax(torch::tensor({0.0, 1.0}, real_options()).expand({x.size(0), 2}), 1);
      },
      2, {1, 2, 2});
  ImageBatch b{torch::rand({8, 1, 2, 2}, real_options()), torch::tensor({1, 1, 0, 1, 0, 0, 1, 1}, index_options())};
  EXPECT_DOUBLE_EQ(clf::accuracy(always_one, b, 3), 5.0 / 8.0);
  EXPECT_THROW(clf::accuracy(always_one, ImageBatch{b.pixels, std::nullopt}), ValidationError);
}
