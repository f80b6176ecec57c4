#include "advgen/data.hpp"

#include "advgen/error.hpp"
#include "matfile.hpp"

#include <json.hpp>

#include <jpeglib.h>
#include <zlib.h>

#include <cmath>
#include <csetjmp>
#include <fstream>
#include <numbers>
#include <sstream>

namespace advgen::data {

namespace fs = std::filesystem;

std::string to_string(DatasetName name) {
  switch (name) {
    case DatasetName::mnist: return "mnist";
    case DatasetName::svhn: return "svhn";
    case DatasetName::celeba_gender: return "celeba-gender";
    case DatasetName::synthetic: return "synthetic";
  }
  return "?";
}

DatasetName parse_dataset_name(std::string_view text) {
  if (text == "mnist") return DatasetName::mnist;
  if (text == "svhn") return DatasetName::svhn;
  if (text == "celeba-gender") return DatasetName::celeba_gender;
  if (text == "synthetic") return DatasetName::synthetic;
  throw ValidationError("unknown dataset '" + std::string(text) + "'");
}

void DatasetSpec::validate() const {
  if (class_count < 2) throw ValidationError("class_count must be at least 2");
  if (name == DatasetName::celeba_gender && class_count != 2) {
    throw ValidationError("celeba-gender has exactly 2 classes");
  }
  if (shape.channels <= 0 || shape.height <= 0 || shape.width <= 0) {
    throw ValidationError("image shape must be positive");
  }
  if (splits.empty()) throw ValidationError("dataset spec declares no partitions");
}

bool DatasetSpec::has_partition(std::string_view partition) const {
  return splits.find(std::string(partition)) != splits.end();
}

DatasetSpec DatasetSpec::mnist() {
  return {DatasetName::mnist, 10, {1, 28, 28}, {{"train", 60000}, {"test", 10000}}};
}

DatasetSpec DatasetSpec::svhn() {
  return {DatasetName::svhn, 10, {3, 32, 32}, {{"train", 73257}, {"test", 26032}, {"extra", 531131}}};
}

DatasetSpec DatasetSpec::celeba_gender() {
  return {DatasetName::celeba_gender,
          2,
          {3, 64, 64},
          {{"train", kCelebaTrainCount}, {"test", kCelebaRecordCount - kCelebaTrainCount}}};
}

// -- Dataset / Cursor -----------------------------------------------------------

Dataset::Dataset(DatasetSpec spec, ImageBatch data)
    : spec_(std::make_shared<const DatasetSpec>(std::move(spec))),
      data_(std::make_shared<const ImageBatch>(std::move(data))) {
  data_->validate(spec_->class_count);
}

Cursor Dataset::cursor(std::uint64_t seed, bool shuffle) const { return Cursor(data_, seed, shuffle); }

Cursor::Cursor(std::shared_ptr<const ImageBatch> data, std::uint64_t seed, bool shuffle) : data_(std::move(data)) {
  const auto n = data_->size();
  if (shuffle) {
    auto gen = make_generator(seed);
    order_ = torch::randperm(n, gen, index_options());
  } else {
    order_ = torch::arange(n, index_options());
  }
}

std::optional<ImageBatch> Cursor::next(std::int64_t batch_size) {
  if (batch_size <= 0) throw ValidationError("batch_size must be positive");
  const auto n = order_.size(0);
  if (position_ >= n) return std::nullopt;
  const auto end = std::min(n, position_ + batch_size);
  auto batch = data_->index_select(order_.slice(0, position_, end));
  position_ = end;
  return batch;
}

// -- MNIST ------------------------------------------------------------------------

namespace {

fs::path find_variant(const fs::path& root, const std::string& base) {
  for (const auto& candidate : {root / base, root / (base + ".gz")}) {
    if (fs::exists(candidate)) return candidate;
  }
  return {};
}

std::string read_gz_or_raw(const fs::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw Error("cannot open " + path.string());
  std::string out;
  char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw CorruptRecordError(0, "gzip stream error in " + path.string());
  return out;
}

std::uint32_t be32(const std::string& bytes, std::size_t pos) {
  if (pos + 4 > bytes.size()) throw CorruptRecordError(0, "truncated IDX header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

ImageBatch load_mnist(const fs::path& root, std::string_view partition) {
  const std::string prefix = partition == "train" ? "train" : "t10k";
  const auto img_path = find_variant(root, prefix + "-images-idx3-ubyte");
  const auto lbl_path = find_variant(root, prefix + "-labels-idx1-ubyte");
  if (img_path.empty() || lbl_path.empty()) {
    throw MissingFilesError(std::string(partition), "expected " + prefix + "-{images-idx3,labels-idx1}-ubyte[.gz] in " +
                                                        root.string());
  }
  const auto images = read_gz_or_raw(img_path);
  const auto labels = read_gz_or_raw(lbl_path);
  if (be32(images, 0) != 0x00000803) throw CorruptRecordError(0, "bad IDX image magic");
  if (be32(labels, 0) != 0x00000801) throw CorruptRecordError(0, "bad IDX label magic");
  const std::int64_t n = be32(images, 4), rows = be32(images, 8), cols = be32(images, 12);
  if (static_cast<std::int64_t>(be32(labels, 4)) != n) throw CorruptRecordError(0, "image/label count mismatch");
  const std::int64_t per = rows * cols;
  const auto available = static_cast<std::int64_t>(images.size() - 16) / per;
  if (available < n) throw CorruptRecordError(available, "image file truncated");
  if (static_cast<std::int64_t>(labels.size()) - 8 < n) {
    throw CorruptRecordError(static_cast<std::int64_t>(labels.size()) - 8, "label file truncated");
  }
  auto pix = torch::from_blob(const_cast<char*>(images.data() + 16), {n, 1, rows, cols}, torch::kUInt8)
                 .to(kReal)
                 .div(255.0);
  auto lab = torch::from_blob(const_cast<char*>(labels.data() + 8), {n}, torch::kUInt8).to(torch::kInt64);
  for (std::int64_t i = 0; i < n; ++i) {
    if (static_cast<unsigned char>(labels[8 + i]) > 9) throw CorruptRecordError(i, "label out of range");
  }
  return {pix, lab};
}

// -- SVHN -------------------------------------------------------------------------

ImageBatch load_svhn(const fs::path& root, std::string_view partition) {
  const auto path = root / (std::string(partition) + "_32x32.mat");
  if (!fs::exists(path)) throw MissingFilesError(std::string(partition), path.string() + " not found");
  std::map<std::string, detail::MatArray> arrays;
  try {
    arrays = detail::read_mat_file(path);
  } catch (const CorruptRecordError&) {
    throw;
  } catch (const Error& e) {
    throw CorruptRecordError(0, e.what());
  }
  auto xi = arrays.find("X");
  auto yi = arrays.find("y");
  if (xi == arrays.end() || yi == arrays.end()) throw CorruptRecordError(0, "SVHN file lacks X or y");
  const auto& x = xi->second;
  const auto& y = yi->second;
  if (x.dims.size() != 4 || x.dims[2] != 3) throw CorruptRecordError(0, "SVHN X must be (H,W,3,N)");
  const std::int64_t h = x.dims[0], w = x.dims[1], n = x.dims[3];
  if (y.numel() != n) throw CorruptRecordError(0, "SVHN label count mismatch");
  torch::Tensor raw;
  if (x.is_uint8) {
    raw = torch::from_blob(const_cast<std::uint8_t*>(x.u8.data()), {n, 3, w, h}, torch::kUInt8).to(kReal).div(255.0);
  } else {
    raw = torch::from_blob(const_cast<double*>(x.f64.data()), {n, 3, w, h}, kReal).clone().div(255.0);
  }
  // Column-major (H,W,C,N) read as row-major (N,C,W,H).
  auto pixels = raw.permute({0, 1, 3, 2}).contiguous();
  std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = y.f64.empty() ? static_cast<double>(y.u8[i]) : y.f64[i];
    if (v < 1 || v > 10 || v != std::floor(v)) throw CorruptRecordError(i, "SVHN label outside 1..10");
    labels[i] = static_cast<std::int64_t>(v) % 10;  // digit 0 is stored as 10
  }
  return {pixels, torch::tensor(labels, index_options())};
}

// -- CelebA -----------------------------------------------------------------------

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

torch::Tensor decode_jpeg(const fs::path& path, std::int64_t record) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptRecordError(record, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = [](j_common_ptr c) { std::longjmp(reinterpret_cast<JpegError*>(c->err)->jump, 1); };
  std::vector<unsigned char> pixels;
  std::int64_t h = 0, w = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw CorruptRecordError(record, "undecodable JPEG " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = cinfo.output_height;
  w = cinfo.output_width;
  pixels.resize(static_cast<std::size_t>(h * w * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return torch::from_blob(pixels.data(), {h, w, 3}, torch::kUInt8).permute({2, 0, 1}).to(kReal).div(255.0);
}

ImageBatch load_celeba(const fs::path& root, std::string_view partition) {
  const auto attr_path = root / "list_attr_celeba.txt";
  const auto image_dir = root / "img_align_celeba";
  if (!fs::exists(attr_path)) throw MissingFilesError(std::string(partition), attr_path.string() + " not found");
  if (!fs::is_directory(image_dir)) {
    throw MissingFilesError(std::string(partition), image_dir.string() + " not found");
  }
  std::ifstream in(attr_path);
  const auto table = parse_attribute_table(in);
  const auto labels = celeba_gender_labels(table);
  const std::int64_t total = static_cast<std::int64_t>(table.filenames.size());
  const std::int64_t split = std::min(kCelebaTrainCount, total);
  const std::int64_t begin = partition == "train" ? 0 : split;
  const std::int64_t end = partition == "train" ? split : total;
  const auto size = DatasetSpec::celeba_gender().shape.height;
  auto pixels = torch::empty({end - begin, 3, size, size}, real_options());
  for (std::int64_t i = begin; i < end; ++i) {
    const auto path = image_dir / table.filenames[static_cast<std::size_t>(i)];
    if (!fs::exists(path)) throw MissingFilesError(std::string(partition), path.string() + " not found");
    pixels[i - begin] = center_crop_resize(decode_jpeg(path, i), size);
  }
  std::vector<std::int64_t> part(labels.begin() + begin, labels.begin() + end);
  return {pixels, torch::tensor(part, index_options())};
}

// -- materialized synthetic ---------------------------------------------------------

ImageBatch load_materialized(const fs::path& root, std::string_view partition, const DatasetSpec& spec) {
  const auto index_path = root / "index.jsonl";
  if (!fs::exists(index_path)) throw MissingFilesError(std::string(partition), index_path.string() + " not found");
  std::ifstream in(index_path);
  std::string line;
  std::vector<torch::Tensor> images;
  std::vector<std::int64_t> labels;
  std::int64_t record = 0;
  for (; std::getline(in, line); ++record) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (j.at("split").get<std::string>() != partition) continue;
      const auto path = root / j.at("path").get<std::string>();
      auto image = read_png(path);
      if (image.sizes() != torch::IntArrayRef(spec.shape.dims())) {
        throw CorruptRecordError(record, "image shape differs from dataset spec");
      }
      images.push_back(image);
      labels.push_back(j.at("label").get<std::int64_t>());
    } catch (const CorruptRecordError&) {
      throw;
    } catch (const std::exception& e) {
      throw CorruptRecordError(record, e.what());
    }
  }
  if (images.empty()) throw MissingFilesError(std::string(partition), "index lists no records for this partition");
  return {torch::stack(images), torch::tensor(labels, index_options())};
}

}  // namespace

Dataset load_dataset(const DatasetSpec& spec, const fs::path& root, std::string_view partition) {
  spec.validate();
  if (!spec.has_partition(partition)) {
    throw ValidationError("dataset " + to_string(spec.name) + " has no partition '" + std::string(partition) + "'");
  }
  ImageBatch batch;
  switch (spec.name) {
    case DatasetName::mnist: batch = load_mnist(root, partition); break;
    case DatasetName::svhn: batch = load_svhn(root, partition); break;
    case DatasetName::celeba_gender: batch = load_celeba(root, partition); break;
    case DatasetName::synthetic: batch = load_materialized(root, partition, spec); break;
  }
  return Dataset(spec, std::move(batch));
}

Dataset load_for_mode(const DatasetSpec& spec, const fs::path& root, LoadMode mode) {
  if (mode == LoadMode::classifier_training) return load_dataset(spec, root, "train");
  std::vector<ImageBatch> parts;
  for (const auto* name : {"train", "test", "extra"}) {
    if (spec.has_partition(name)) parts.push_back(load_dataset(spec, root, name).data());
  }
  return Dataset(spec, ImageBatch::concat(parts));
}

// -- synthetic ------------------------------------------------------------------------

ImageBatch SyntheticDataset::all() const {
  const std::vector<ImageBatch> parts{train, test};
  return ImageBatch::concat(parts);
}

SyntheticDataset make_synthetic_dataset(const SyntheticOptions& o) {
  if (o.class_count < 2) throw ValidationError("synthetic dataset needs at least 2 classes");
  if (o.per_class < 1) throw ValidationError("per_class must be at least 1");
  if (o.height < 2 || o.width < 2 || o.channels < 1) throw ValidationError("invalid synthetic resolution");
  if (o.test_fraction < 0.0 || o.test_fraction >= 1.0) throw ValidationError("test_fraction must lie in [0,1)");

  auto gen = make_generator(o.seed);
  const auto k = o.class_count, n = o.per_class, h = o.height, w = o.width;
  const double side = static_cast<double>(std::min(h, w));
  const double radius = 0.28 * side;
  const double sigma = 0.12 * side;

  // Samples are generated sample-major, class-minor: index = j * K + class.
  auto labels = torch::arange(k, index_options()).repeat({n});
  auto angle = labels.to(kReal) * (2.0 * std::numbers::pi / static_cast<double>(k));
  auto cy = (h - 1) / 2.0 + radius * torch::sin(angle) + (torch::rand({n * k}, gen, real_options()) - 0.5);
  auto cx = (w - 1) / 2.0 + radius * torch::cos(angle) + (torch::rand({n * k}, gen, real_options()) - 0.5);
  auto amplitude = 0.75 + 0.25 * torch::rand({n * k}, gen, real_options());
  auto ys = torch::arange(h, real_options()).view({1, h, 1});
  auto xs = torch::arange(w, real_options()).view({1, 1, w});
  auto d2 = (ys - cy.view({-1, 1, 1})).pow(2) + (xs - cx.view({-1, 1, 1})).pow(2);
  auto blob = amplitude.view({-1, 1, 1}) * torch::exp(-d2 / (2.0 * sigma * sigma));
  auto noise = 0.05 * torch::rand({n * k, o.channels, h, w}, gen, real_options());
  auto pixels = quantize_8bit(noise + blob.unsqueeze(1));

  const auto n_train = static_cast<std::int64_t>(std::ceil(static_cast<double>(n) * (1.0 - o.test_fraction)));
  SyntheticDataset out;
  out.spec.name = DatasetName::synthetic;
  out.spec.class_count = k;
  out.spec.shape = {o.channels, h, w};
  out.spec.splits = {{"train", n_train * k}, {"test", (n - n_train) * k}};
  out.train = ImageBatch{pixels.slice(0, 0, n_train * k).contiguous(), labels.slice(0, 0, n_train * k).contiguous()};
  out.test = ImageBatch{pixels.slice(0, n_train * k).contiguous(), labels.slice(0, n_train * k).contiguous()};
  return out;
}

void materialize_dataset(const fs::path& dir, const DatasetSpec& spec, const std::map<std::string, ImageBatch>& partitions) {
  spec.validate();
  fs::create_directories(dir / "images");
  std::ofstream index(dir / "index.jsonl", std::ios::trunc);
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [name, batch] : partitions) {
    batch.validate(spec.class_count);
    if (!batch.labels) throw ValidationError("materialized partitions must be labeled");
    for (std::int64_t i = 0; i < batch.size(); ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s-%06lld", name.c_str(), static_cast<long long>(i));
      const std::string rel = std::string("images/") + id + ".png";
      write_png(dir / rel, batch.pixels[i]);
      nlohmann::json line = {{"id", id}, {"label", (*batch.labels)[i].item<std::int64_t>()}, {"path", rel},
                             {"split", name}};
      index << line.dump() << '\n';
    }
    splits[name] = batch.size();
  }
  nlohmann::json meta = {{"name", to_string(spec.name)},
                         {"class_count", spec.class_count},
                         {"shape", spec.shape.dims()},
                         {"splits", splits}};
  std::ofstream(dir / "dataset.json", std::ios::trunc) << meta.dump(2) << '\n';
}

DatasetSpec read_materialized_spec(const fs::path& dir) {
  const auto path = dir / "dataset.json";
  if (!fs::exists(path)) throw MissingFilesError("*", path.string() + " not found");
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    DatasetSpec spec;
    spec.name = parse_dataset_name(j.at("name").get<std::string>());
    spec.class_count = j.at("class_count").get<std::int64_t>();
    const auto shape = j.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 3) throw ValidationError("dataset.json shape must be [C,H,W]");
    spec.shape = {shape[0], shape[1], shape[2]};
    spec.splits = j.at("splits").get<std::map<std::string, std::int64_t>>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed dataset.json: ") + e.what());
  }
}

// -- CelebA attributes ----------------------------------------------------------------

AttributeTable parse_attribute_table(std::istream& in) {
  AttributeTable table;
  std::string line;
  if (!std::getline(in, line)) throw CorruptRecordError(0, "empty attribute table");
  std::int64_t declared = 0;
  try {
    declared = std::stoll(line);
  } catch (const std::exception&) {
    throw CorruptRecordError(0, "first line must hold the record count");
  }
  if (!std::getline(in, line)) throw CorruptRecordError(0, "missing attribute header");
  {
    std::istringstream header(line);
    std::string name;
    while (header >> name) table.attribute_names.push_back(name);
  }
  const auto width = table.attribute_names.size();
  std::int64_t record = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    std::string file;
    row >> file;
    std::vector<int> values;
    int v = 0;
    while (row >> v) {
      if (v != -1 && v != 1) throw CorruptRecordError(record, "attribute value must be -1 or 1");
      values.push_back(v);
    }
    if (values.size() != width) throw CorruptRecordError(record, "attribute count differs from header");
    table.filenames.push_back(file);
    table.values.push_back(std::move(values));
    ++record;
  }
  if (record != declared) {
    throw CorruptRecordError(record, "table declares " + std::to_string(declared) + " records");
  }
  return table;
}

std::vector<std::int64_t> celeba_gender_labels(const AttributeTable& table) {
  const auto it = std::find(table.attribute_names.begin(), table.attribute_names.end(), "Male");
  if (it == table.attribute_names.end()) throw ValidationError("attribute table has no 'Male' attribute");
  const auto col = static_cast<std::size_t>(it - table.attribute_names.begin());
  std::vector<std::int64_t> labels;
  labels.reserve(table.values.size());
  for (const auto& row : table.values) labels.push_back(row[col] == 1 ? 1 : 0);
  return labels;
}

torch::Tensor center_crop_resize(const torch::Tensor& image, std::int64_t size) {
  if (image.dim() != 3) throw DimensionError("center_crop_resize expects (C,H,W)");
  const auto h = image.size(1), w = image.size(2);
  const auto side = std::min(h, w);
  auto crop = image.slice(1, (h - side) / 2, (h - side) / 2 + side).slice(2, (w - side) / 2, (w - side) / 2 + side);
  namespace F = torch::nn::functional;
  auto resized = F::interpolate(crop.unsqueeze(0).to(kReal),
                                F::InterpolateFuncOptions().size(std::vector<std::int64_t>{size, size}).mode(torch::kArea));
  return resized.squeeze(0).clamp(0.0, 1.0);
}

}  // namespace advgen::data
