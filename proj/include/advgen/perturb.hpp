#pragma once

#include "advgen/classifier.hpp"

namespace advgen::clf {

/// clip(x + eps * sign(grad_x -log f(y|x)), 0, 1) for a batch.
torch::Tensor fgsm(const Classifier& f, const torch::Tensor& x, const torch::Tensor& y_true, double epsilon);

struct PgdOptions {
  double epsilon = 0.3;
  std::int64_t steps = 40;
  double step_size = 0.01;
  bool targeted = false;
  bool random_start = true;
  std::uint64_t seed = 0;
};

/// Iterated sign steps projected onto the l_inf ball around x and onto [0,1].
/// Untargeted mode ascends -log f(y|x) for the true label; targeted mode descends
/// it for the target label.
torch::Tensor pgd(const Classifier& f, const torch::Tensor& x, const torch::Tensor& y, const PgdOptions& options);

/// Radius drawn for one adversarial-training batch, on the [0,255] pixel scale.
struct ScheduleDraw {
  double epsilon_255 = 0;
  std::int64_t iterations = 0;

  double epsilon_unit() const { return epsilon_255 / 255.0; }
};

inline constexpr double kScheduleStd = 8.0;
inline constexpr double kScheduleMax = 16.0;

/// floor(min(eps + 4, 1.25 * eps)).
std::int64_t schedule_iterations(double epsilon_255);

/// eps = min(|N(0, 8)|, 16).
ScheduleDraw adversarial_train_schedule(torch::Generator& gen);

}  // namespace advgen::clf
