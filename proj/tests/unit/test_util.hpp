#pragma once

#include "advgen/tensor.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace advgen::test {

inline std::filesystem::path data_dir() { return ADVGEN_TEST_DATA_DIR; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "advgen") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of a scalar function of a double tensor along every coordinate.
template <class Fn>
torch::Tensor central_difference(Fn&& fn, const torch::Tensor& x, double h = 1e-6) {
  auto flat = x.detach().clone().contiguous().view(-1);
  auto grad = torch::zeros_like(flat);
  auto* p = flat.data_ptr<double>();
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = fn(flat.view(x.sizes()));
    p[i] = keep - h;
    const double down = fn(flat.view(x.sizes()));
    p[i] = keep;
    grad[i] = (up - down) / (2 * h);
  }
  return grad.view(x.sizes());
}

/// Runs `cmd` through the shell and returns its exit status.
inline int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace advgen::test

namespace advgen::test {

/// Compares autograd with central differences on `count` random coordinates of
/// `params`; returns the largest relative error. `loss` must rebuild its graph.
template <class Fn>
double max_param_grad_error(std::vector<torch::Tensor> params, Fn&& loss, std::int64_t count, std::uint64_t seed,
                            double h = 1e-6, double floor = 1e-6) {
  for (auto& p : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  loss().backward();
  std::vector<torch::Tensor> grads;
  for (auto& p : params) grads.push_back(p.grad().defined() ? p.grad().clone() : torch::zeros_like(p));
  std::mt19937_64 rng(seed);
  double worst = 0;
  // The loss may itself need autograd (gradient penalties), so only the edits run without it.
  auto set = [](torch::Tensor flat, std::int64_t i, double value) {
    torch::NoGradGuard no_grad;
    flat[i] = value;
  };
  for (std::int64_t k = 0; k < count; ++k) {
    const auto which = rng() % params.size();
    auto flat = params[which].view(-1);
    auto gflat = grads[which].view(-1);
    const auto i = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(flat.numel()));
    const double keep = flat[i].item<double>();
    set(flat, i, keep + h);
    const double up = loss().template item<double>();
    set(flat, i, keep - h);
    const double down = loss().template item<double>();
    set(flat, i, keep);
    worst = std::max(worst, rel_err(gflat[i].item<double>(), (up - down) / (2 * h), floor));
  }
  return worst;
}

}  // namespace advgen::test
