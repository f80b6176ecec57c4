#pragma once

#include "advgen/image.hpp"

#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace advgen::data {

enum class DatasetName { mnist, svhn, celeba_gender, synthetic };

std::string to_string(DatasetName name);
DatasetName parse_dataset_name(std::string_view text);

struct DatasetSpec {
  DatasetName name = DatasetName::synthetic;
  std::int64_t class_count = 2;
  ImageShape shape;
  /// Partition name -> sample count. A count of -1 means "whatever the files hold".
  std::map<std::string, std::int64_t> splits;

  void validate() const;
  bool has_partition(std::string_view partition) const;

  static DatasetSpec mnist();
  static DatasetSpec svhn();
  /// Faces center-cropped and resized to 64x64; label 0 = female, 1 = male.
  static DatasetSpec celeba_gender();
};

/// Index at which the CelebA attribute list is split into train/test.
inline constexpr std::int64_t kCelebaTrainCount = 150000;
inline constexpr std::int64_t kCelebaRecordCount = 202599;

class Cursor;

/// Immutable in-memory dataset. Safe to share between threads; iteration state
/// lives in independent cursors.
class Dataset {
 public:
  Dataset(DatasetSpec spec, ImageBatch data);

  const DatasetSpec& spec() const noexcept { return *spec_; }
  const ImageBatch& data() const noexcept { return *data_; }
  std::int64_t size() const { return data_->size(); }

  /// Shuffled (or sequential) batch stream; the permutation is fixed by `seed`.
  Cursor cursor(std::uint64_t seed, bool shuffle = true) const;

 private:
  std::shared_ptr<const DatasetSpec> spec_;
  std::shared_ptr<const ImageBatch> data_;
};

class Cursor {
 public:
  Cursor(std::shared_ptr<const ImageBatch> data, std::uint64_t seed, bool shuffle);

  /// Next batch of at most `batch_size` samples, or nullopt once exhausted.
  std::optional<ImageBatch> next(std::int64_t batch_size);
  void rewind() { position_ = 0; }

 private:
  std::shared_ptr<const ImageBatch> data_;
  torch::Tensor order_;
  std::int64_t position_ = 0;
};

enum class LoadMode {
  classifier_training,  ///< training partition only
  gan_training,         ///< every partition concatenated (train, test, extra)
};

/// Loads one partition from `root`, laid out as the standard distribution of each
/// dataset (MNIST IDX files, SVHN *_32x32.mat, CelebA list_attr_celeba.txt +
/// img_align_celeba/, synthetic index.jsonl + PNGs).
Dataset load_dataset(const DatasetSpec& spec, const std::filesystem::path& root, std::string_view partition);
Dataset load_for_mode(const DatasetSpec& spec, const std::filesystem::path& root, LoadMode mode);

// -- synthetic desk-scale data ----------------------------------------------

struct SyntheticOptions {
  std::uint64_t seed = 0;
  std::int64_t class_count = 2;
  std::int64_t height = 8;
  std::int64_t width = 8;
  std::int64_t channels = 1;
  std::int64_t per_class = 500;
  double test_fraction = 0.2;
};

struct SyntheticDataset {
  DatasetSpec spec;
  ImageBatch train;
  ImageBatch test;

  ImageBatch all() const;
};

/// Gaussian blobs at class-dependent positions on a circle, with jitter in
/// position and amplitude and a faint noise floor. Pixels are multiples of 1/255
/// so PNG materialization is lossless. Splits are stratified per class.
SyntheticDataset make_synthetic_dataset(const SyntheticOptions& options);

/// Writes `<dir>/images/<id>.png`, `<dir>/index.jsonl` and `<dir>/dataset.json`.
void materialize_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                         const std::map<std::string, ImageBatch>& partitions);

/// Reads the spec stored by materialize_dataset.
DatasetSpec read_materialized_spec(const std::filesystem::path& dir);

// -- CelebA -------------------------------------------------------------------

struct AttributeTable {
  std::vector<std::string> attribute_names;
  std::vector<std::string> filenames;
  std::vector<std::vector<int>> values;  ///< one row per record, entries in {-1, +1}
};

/// Parses list_attr_celeba.txt (record count, header line, then rows).
AttributeTable parse_attribute_table(std::istream& in);

/// 0 = female (Male == -1), 1 = male (Male == +1). Throws ValidationError when the
/// table lacks the Male attribute.
std::vector<std::int64_t> celeba_gender_labels(const AttributeTable& table);

/// Square center crop followed by area resize, for (C,H,W) images.
torch::Tensor center_crop_resize(const torch::Tensor& image, std::int64_t size);

}  // namespace advgen::data
