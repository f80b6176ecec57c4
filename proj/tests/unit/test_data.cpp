#include "advgen/data.hpp"
#include "advgen/error.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <set>
#include <sstream>

using namespace advgen;
using nlohmann::json;

namespace {

void put_be32(std::string& s, std::uint32_t v) {
  for (int shift : {24, 16, 8, 0}) s.push_back(static_cast<char>((v >> shift) & 0xFF));
}

/// Writes an IDX image/label pair with pixel value (i*7 + r*3 + c) % 256.
void write_mnist(const std::filesystem::path& dir, const std::string& prefix, std::uint32_t n,
                 const std::vector<std::uint8_t>& labels) {
  std::string img, lbl;
  put_be32(img, 0x803);
  put_be32(img, n);
  put_be32(img, 28);
  put_be32(img, 28);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int r = 0; r < 28; ++r) {
      for (int c = 0; c < 28; ++c) img.push_back(static_cast<char>((i * 7 + r * 3 + c) % 256));
    }
  }
  put_be32(lbl, 0x801);
  put_be32(lbl, n);
  for (auto l : labels) lbl.push_back(static_cast<char>(l));
  test::write_file(dir / (prefix + "-images-idx3-ubyte"), img);
  test::write_file(dir / (prefix + "-labels-idx1-ubyte"), lbl);
}

}  // namespace

TEST(Synthetic, DeterministicShapesAndBalancedLabels) {
  data::SyntheticOptions o;
  o.per_class = 20;
  o.seed = 5;
  const auto a = data::make_synthetic_dataset(o);
  const auto b = data::make_synthetic_dataset(o);
  EXPECT_TRUE(torch::equal(a.train.pixels, b.train.pixels));
  EXPECT_EQ(a.train.size() + a.test.size(), 40);
  EXPECT_EQ(a.train.pixels.sizes(), (std::vector<std::int64_t>{a.train.size(), 1, 8, 8}));
  EXPECT_EQ((*a.train.labels == 0).sum().item<std::int64_t>(), (*a.train.labels == 1).sum().item<std::int64_t>());
  EXPECT_NO_THROW(a.train.validate(2));
  o.seed = 6;
  EXPECT_FALSE(torch::equal(data::make_synthetic_dataset(o).train.pixels, a.train.pixels));
}

TEST(Synthetic, RejectsBadOptions) {
  data::SyntheticOptions o;
  o.class_count = 1;
  EXPECT_THROW(data::make_synthetic_dataset(o), ValidationError);
  o = {};
  o.test_fraction = 1.0;
  EXPECT_THROW(data::make_synthetic_dataset(o), ValidationError);
}

TEST(Synthetic, MaterializedRoundTrip) {
  test::TempDir dir;
  data::SyntheticOptions o;
  o.per_class = 10;
  const auto ds = data::make_synthetic_dataset(o);
  data::materialize_dataset(dir.path(), ds.spec, {{"train", ds.train}, {"test", ds.test}});
  const auto spec = data::read_materialized_spec(dir.path());
  EXPECT_EQ(spec.class_count, 2);
  const auto train = data::load_dataset(spec, dir.path(), "train");
  EXPECT_LT((train.data().pixels - ds.train.pixels).abs().max().item<double>(), 1e-12);
  EXPECT_TRUE(torch::equal(*train.data().labels, *ds.train.labels));
  const auto all = data::load_for_mode(spec, dir.path(), data::LoadMode::gan_training);
  EXPECT_EQ(all.size(), ds.train.size() + ds.test.size());
}

TEST(Cursor, ShuffledEpochCoversEverySampleOnce) {
  data::SyntheticOptions o;
  o.per_class = 25;
  const auto ds = data::make_synthetic_dataset(o);
  data::Dataset d(ds.spec, ds.train);
  auto cursor = d.cursor(3);
  std::int64_t seen = 0;
  auto sum = torch::zeros({}, real_options());
  while (auto batch = cursor.next(7)) {
    EXPECT_LE(batch->size(), 7);
    seen += batch->size();
    sum += batch->pixels.sum();
  }
  EXPECT_EQ(seen, d.size());
  EXPECT_NEAR(sum.item<double>(), ds.train.pixels.sum().item<double>(), 1e-8);
  EXPECT_FALSE(cursor.next(7).has_value());
}

TEST(Mnist, ReadsIdxFiles) {
  test::TempDir dir;
  write_mnist(dir.path(), "t10k", 3, {7, 0, 9});
  const auto ds = data::load_dataset(data::DatasetSpec::mnist(), dir.path(), "test");
  ASSERT_EQ(ds.size(), 3);
  EXPECT_EQ((*ds.data().labels)[2].item<std::int64_t>(), 9);
  // pixel (i=1, r=2, c=5) = (7 + 6 + 5) % 256 = 18
  EXPECT_DOUBLE_EQ(ds.data().pixels[1][0][2][5].item<double>(), 18.0 / 255.0);
}

TEST(Mnist, MissingAndCorruptFiles) {
  test::TempDir dir;
  try {
    data::load_dataset(data::DatasetSpec::mnist(), dir.path(), "train");
    FAIL() << "expected MissingFilesError";
  } catch (const MissingFilesError& e) {
    EXPECT_EQ(e.partition(), "train");
  }
  write_mnist(dir.path(), "train", 2, {1, 12});
  try {
    data::load_dataset(data::DatasetSpec::mnist(), dir.path(), "train");
    FAIL() << "expected CorruptRecordError";
  } catch (const CorruptRecordError& e) {
    EXPECT_EQ(e.index(), 1);
  }
}

TEST(Svhn, MatFixtureMatchesGolden) {
  std::ifstream in(test::data_dir() / "svhn" / "golden.json");
  const auto golden = json::parse(in);
  for (const std::string partition : {"train", "test"}) {
    const auto ds = data::load_dataset(data::DatasetSpec::svhn(), test::data_dir() / "svhn", partition);
    const auto& g = golden.at(partition);
    const auto labels = g.at("labels").get<std::vector<std::int64_t>>();
    ASSERT_EQ(ds.size(), static_cast<std::int64_t>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      EXPECT_EQ((*ds.data().labels)[static_cast<std::int64_t>(i)].item<std::int64_t>(), labels[i]);
    }
    for (const auto& p : g.at("probes")) {
      const auto v = ds.data().pixels[p[0].get<std::int64_t>()][p[1].get<std::int64_t>()][p[2].get<std::int64_t>()]
                                     [p[3].get<std::int64_t>()]
                         .item<double>();
      EXPECT_DOUBLE_EQ(v, p[4].get<double>() / 255.0) << partition << ' ' << p.dump();
    }
  }
  EXPECT_THROW(data::load_dataset(data::DatasetSpec::svhn(), test::data_dir() / "svhn", "extra"), MissingFilesError);
}

TEST(Celeba, AttributeTableAndGenderLabels) {
  std::istringstream in("2\nA Male B\n000001.jpg  -1  1 -1\n000002.jpg 1 -1 1\n");
  const auto table = data::parse_attribute_table(in);
  ASSERT_EQ(table.filenames.size(), 2u);
  EXPECT_EQ(data::celeba_gender_labels(table), (std::vector<std::int64_t>{1, 0}));
  std::istringstream no_male("1\nA B\n000001.jpg 1 1\n");
  EXPECT_THROW(data::celeba_gender_labels(data::parse_attribute_table(no_male)), ValidationError);
}

TEST(Celeba, JpegFixtureMatchesIndependentCropResize) {
  const auto ds = data::load_dataset(data::DatasetSpec::celeba_gender(), test::data_dir() / "celeba", "train");
  ASSERT_EQ(ds.size(), 3);
  EXPECT_TRUE(torch::equal(*ds.data().labels, torch::tensor({1, 0, 1}, index_options())));
  const auto raw = test::read_file(test::data_dir() / "celeba" / "expected_64.f32");
  ASSERT_EQ(raw.size(), 3u * 3 * 64 * 64 * 4);
  auto expected = torch::from_blob(const_cast<char*>(raw.data()), {3, 3, 64, 64}, torch::kFloat32).to(kReal);
  // Both sides decode with libjpeg; allow one 8-bit step for IDCT differences.
  EXPECT_LT((ds.data().pixels - expected).abs().max().item<double>(), 1.5 / 255.0);
}

TEST(Celeba, CenterCropResizeOfConstantIsConstant) {
  auto img = torch::full({3, 218, 178}, 0.25, real_options());
  auto out = data::center_crop_resize(img, 64);
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{3, 64, 64}));
  EXPECT_LT((out - 0.25).abs().max().item<double>(), 1e-12);
  EXPECT_THROW(data::center_crop_resize(torch::zeros({4, 4}, real_options()), 2), DimensionError);
}

TEST(DatasetSpec, StandardPartitionSizes) {
  EXPECT_EQ(data::DatasetSpec::mnist().splits.at("train"), 60000);
  EXPECT_EQ(data::DatasetSpec::svhn().splits.at("extra"), 531131);
  EXPECT_EQ(data::DatasetSpec::celeba_gender().shape, (ImageShape{3, 64, 64}));
  EXPECT_THROW(data::load_dataset(data::DatasetSpec::mnist(), "/nonexistent", "extra"), ValidationError);
  EXPECT_THROW(data::parse_dataset_name("cifar"), ValidationError);
}
