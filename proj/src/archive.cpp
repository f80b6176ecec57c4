#include "advgen/archive.hpp"

#include "advgen/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace advgen {
namespace {

static_assert(std::endian::native == std::endian::little, "archive payloads are little-endian");

constexpr char kMagic[8] = {'A', 'D', 'V', 'G', 'A', 'R', 'C', 'H'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat64: return "f64";
    case torch::kFloat32: return "f32";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    case torch::kBool: return "bool";
    default: throw CheckpointError(std::string("unsupported tensor dtype ") + c10::toString(t));
  }
}

torch::ScalarType parse_dtype(const std::string& s) {
  if (s == "f64") return torch::kFloat64;
  if (s == "f32") return torch::kFloat32;
  if (s == "i64") return torch::kInt64;
  if (s == "u8") return torch::kUInt8;
  if (s == "bool") return torch::kBool;
  throw CheckpointError("unknown dtype in archive: " + s);
}

template <typename T>
void write_pod(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_pod(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw CheckpointError("truncated archive");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void Archive::put(const std::string& name, const torch::Tensor& tensor) {
  tensors_[name] = tensor.detach().contiguous().clone();
}

void Archive::put_blob(const std::string& name, std::string bytes) { blobs_[name] = std::move(bytes); }

bool Archive::contains(std::string_view name) const {
  return tensors_.find(name) != tensors_.end() || blobs_.find(name) != blobs_.end();
}

torch::Tensor Archive::tensor(std::string_view name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw CheckpointError("archive has no tensor '" + std::string(name) + "'");
  return it->second;
}

const std::string& Archive::blob(std::string_view name) const {
  auto it = blobs_.find(name);
  if (it == blobs_.end()) throw CheckpointError("archive has no blob '" + std::string(name) + "'");
  return it->second;
}

std::vector<std::string> Archive::tensor_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : tensors_) names.push_back(name);
  return names;
}

std::string Archive::to_bytes() const {
  nlohmann::json header;
  header["kind"] = kind_;
  header["meta"] = meta_;
  auto entries = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : tensors_) {
    const auto nbytes = static_cast<std::size_t>(t.numel()) * t.element_size();
    entries.push_back({{"name", name},
                       {"type", "tensor"},
                       {"dtype", dtype_name(t.scalar_type())},
                       {"shape", t.sizes().vec()},
                       {"offset", payload.size()},
                       {"bytes", nbytes}});
    payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  for (const auto& [name, b] : blobs_) {
    entries.push_back({{"name", name}, {"type", "blob"}, {"offset", payload.size()}, {"bytes", b.size()}});
    payload.append(b);
  }
  header["entries"] = std::move(entries);
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kFormatVersion);
  write_pod<std::uint64_t>(out, header_text.size());
  out += header_text;
  out += payload;
  return out;
}

Archive Archive::from_bytes(std::string_view bytes, std::string_view expected_kind) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not an advgen archive (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = read_pod<std::uint32_t>(bytes, pos);
  if (version != kFormatVersion) {
    throw CheckpointVersionError("archive format version " + std::to_string(version) + " != supported " +
                                 std::to_string(kFormatVersion));
  }
  const auto header_len = read_pod<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw CheckpointError("truncated archive header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt archive header: ") + e.what());
  }
  pos += header_len;
  const std::string_view payload = bytes.substr(pos);

  Archive archive(header.at("kind").get<std::string>());
  if (!expected_kind.empty() && archive.kind_ != expected_kind) {
    throw CheckpointError("archive kind '" + archive.kind_ + "' where '" + std::string(expected_kind) +
                          "' was expected");
  }
  archive.meta_ = header.at("meta");
  for (const auto& e : header.at("entries")) {
    const auto offset = e.at("offset").get<std::size_t>();
    const auto nbytes = e.at("bytes").get<std::size_t>();
    if (offset + nbytes > payload.size()) throw CheckpointError("archive entry exceeds payload");
    const auto name = e.at("name").get<std::string>();
    if (e.at("type") == "blob") {
      archive.blobs_[name] = std::string(payload.substr(offset, nbytes));
      continue;
    }
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(parse_dtype(e.at("dtype"))));
    if (static_cast<std::size_t>(t.numel()) * t.element_size() != nbytes) {
      throw CheckpointError("archive entry '" + name + "' size does not match its shape");
    }
    std::memcpy(t.data_ptr(), payload.data() + offset, nbytes);
    archive.tensors_[name] = std::move(t);
  }
  return archive;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = to_bytes();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path, std::string_view expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_bytes(ss.str(), expected_kind);
}

void put_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(true)) archive.put(prefix + "param." + p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) archive.put(prefix + "buffer." + b.key(), b.value());
}

void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& key, torch::Tensor target) {
    const auto source = archive.tensor(key);
    if (source.sizes() != target.sizes()) {
      throw CheckpointError("shape mismatch for '" + key + "'");
    }
    target.copy_(source);
  };
  for (auto& p : module.named_parameters(true)) copy_into(prefix + "param." + p.key(), p.value());
  for (auto& b : module.named_buffers(true)) copy_into(prefix + "buffer." + b.key(), b.value());
}

void put_optimizer(Archive& archive, const std::string& name, const torch::optim::Adam& optimizer) {
  // torch's own serializer keys state by tensor address, so its bytes differ run to run.
  std::int64_t k = 0;
  for (const auto& group : optimizer.param_groups()) {
    for (const auto& p : group.params()) {
      const auto key = name + "." + std::to_string(k++) + ".";
      const auto it = optimizer.state().find(p.unsafeGetTensorImpl());
      if (it == optimizer.state().end()) continue;
      const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
      archive.put(key + "step", torch::tensor(st.step(), torch::kInt64));
      archive.put(key + "exp_avg", st.exp_avg());
      archive.put(key + "exp_avg_sq", st.exp_avg_sq());
      if (st.max_exp_avg_sq().defined()) archive.put(key + "max_exp_avg_sq", st.max_exp_avg_sq());
    }
  }
}

void load_optimizer(const Archive& archive, const std::string& name, torch::optim::Adam& optimizer) {
  std::int64_t k = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const auto key = name + "." + std::to_string(k++) + ".";
      if (!archive.contains(key + "step")) continue;
      auto st = std::make_unique<torch::optim::AdamParamState>();
      st->step(archive.tensor(key + "step").item<std::int64_t>());
      const auto restore = [&](const std::string& entry) {
        const auto t = archive.tensor(key + entry);
        if (t.sizes() != p.sizes()) throw CheckpointError("optimizer state shape mismatch for '" + key + entry + "'");
        return t.to(p.options()).clone();
      };
      st->exp_avg(restore("exp_avg"));
      st->exp_avg_sq(restore("exp_avg_sq"));
      if (archive.contains(key + "max_exp_avg_sq")) st->max_exp_avg_sq(restore("max_exp_avg_sq"));
      optimizer.state()[p.unsafeGetTensorImpl()] = std::move(st);
    }
  }
}

}  // namespace advgen
