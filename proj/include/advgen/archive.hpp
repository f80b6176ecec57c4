#pragma once

#include "advgen/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace advgen {

/// Single-file container: magic, format version, a JSON header (metadata plus an
/// entry table) and a raw little-endian payload. Used for every checkpoint and for
/// bit-exact ImageBatch serialization.
class Archive {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  explicit Archive(std::string kind = "generic") : kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }
  nlohmann::json& meta() noexcept { return meta_; }
  const nlohmann::json& meta() const noexcept { return meta_; }

  void put(const std::string& name, const torch::Tensor& tensor);
  void put_blob(const std::string& name, std::string bytes);

  bool contains(std::string_view name) const;
  torch::Tensor tensor(std::string_view name) const;
  const std::string& blob(std::string_view name) const;
  std::vector<std::string> tensor_names() const;

  std::string to_bytes() const;
  /// Throws CheckpointVersionError on a version mismatch and CheckpointError when
  /// the kind differs from `expected_kind` (empty accepts any kind).
  static Archive from_bytes(std::string_view bytes, std::string_view expected_kind = {});

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path, std::string_view expected_kind = {});

 private:
  std::string kind_;
  nlohmann::json meta_ = nlohmann::json::object();
  std::map<std::string, torch::Tensor, std::less<>> tensors_;
  std::map<std::string, std::string, std::less<>> blobs_;
};

/// Stores every parameter and buffer of `module` under `prefix`.
void put_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module);
/// Copies tensors back into an already-constructed module of the same architecture.
void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module);

/// Stores Adam moments per parameter index under `name` and restores them.
void put_optimizer(Archive& archive, const std::string& name, const torch::optim::Adam& optimizer);
void load_optimizer(const Archive& archive, const std::string& name, torch::optim::Adam& optimizer);

}  // namespace advgen
