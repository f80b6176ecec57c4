#include "advgen/perturb.hpp"

#include "advgen/error.hpp"

#include <cmath>

namespace advgen::clf {

namespace {

void check_pixels(const torch::Tensor& x, const torch::Tensor& y) {
  if (x.dim() != 4) throw DimensionError("expected an (N,C,H,W) batch");
  if (y.dim() != 1 || y.size(0) != x.size(0)) throw DimensionError("expected one label per image");
  if (x.numel() > 0 && (x.min().item<double>() < 0 || x.max().item<double>() > 1)) {
    throw ValidationError("pixels must lie in [0,1]");
  }
}

/// Gradient of the summed -log f(y|x); summing keeps per-image gradients independent.
torch::Tensor loss_gradient(const Classifier& f, const torch::Tensor& x, const torch::Tensor& y) {
  auto input = x.detach().clone().requires_grad_(true);
  auto loss = torch::nll_loss(f.log_probs(input), y, {}, at::Reduction::Sum);
  return torch::autograd::grad({loss}, {input})[0];
}

}  // namespace

torch::Tensor fgsm(const Classifier& f, const torch::Tensor& x, const torch::Tensor& y_true, double epsilon) {
  if (!(epsilon >= 0)) throw ValidationError("epsilon must be non-negative");
  check_pixels(x, y_true);
  auto g = loss_gradient(f, x, y_true);
  return (x + epsilon * g.sign()).clamp(0.0, 1.0).detach();
}

torch::Tensor pgd(const Classifier& f, const torch::Tensor& x, const torch::Tensor& y, const PgdOptions& options) {
  if (!(options.epsilon >= 0)) throw ValidationError("epsilon must be non-negative");
  if (options.steps < 1) throw ValidationError("PGD needs at least one step");
  if (!(options.step_size > 0)) throw ValidationError("step_size must be positive");
  check_pixels(x, y);
  const auto lower = x - options.epsilon;
  const auto upper = x + options.epsilon;
  auto adv = x.detach().clone();
  if (options.random_start) {
    auto gen = make_generator(options.seed);
    auto noise = torch::rand(x.sizes(), gen, x.options()) * (2 * options.epsilon) - options.epsilon;
    adv = (x + noise).clamp(0.0, 1.0);
  }
  const double direction = options.targeted ? -1.0 : 1.0;
  for (std::int64_t i = 0; i < options.steps; ++i) {
    auto g = loss_gradient(f, adv, y);
    adv = adv + direction * options.step_size * g.sign();
    adv = torch::min(torch::max(adv, lower), upper).clamp(0.0, 1.0).detach();
  }
  return adv;
}

std::int64_t schedule_iterations(double epsilon_255) {
  return static_cast<std::int64_t>(std::floor(std::min(epsilon_255 + 4.0, 1.25 * epsilon_255)));
}

ScheduleDraw adversarial_train_schedule(torch::Generator& gen) {
  const auto draw = torch::randn({1}, gen, real_options()).item<double>();
  ScheduleDraw s;
  s.epsilon_255 = std::min(std::abs(kScheduleStd * draw), kScheduleMax);
  s.iterations = schedule_iterations(s.epsilon_255);
  return s;
}

}  // namespace advgen::clf
