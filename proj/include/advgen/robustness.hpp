#pragma once

#include "advgen/attack.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace advgen::robust {

enum class MatrixLaw { uniform, rademacher, zero };

std::string to_string(MatrixLaw law);
MatrixLaw parse_matrix_law(std::string_view text);

/// Random n x m matrix with independent entries bounded by entry_bound.
struct BoundInstance {
  std::int64_t n = 1;
  std::int64_t m = 1;
  double epsilon = 0.1;
  double entry_bound = 1.0;
  double delta = 0.05;
  MatrixLaw law = MatrixLaw::uniform;

  void validate() const;
};

/// 4 eps K sqrt(m (m log 2 + log(1/delta)) / n) + eps K m.
double prop1_bound(const BoundInstance& instance);

inline constexpr std::int64_t kDefaultVertexLimit = 20;

/// max over the 2^m vertices of the eps-ball of ||W dx||_1, which is the maximum
/// over the whole ball by convexity. Evaluated as eps * max_s ||W s||_1 with
/// s in {-1,+1}^m, each vertex summed from scratch in column order. Throws
/// ValidationError when m exceeds `vertex_limit`.
double worst_case_l1_exact(const Eigen::MatrixXd& w, double epsilon,
                           std::int64_t vertex_limit = kDefaultVertexLimit);

/// eps * sum_i ||row_i(W)||_1: rows maximized independently, an upper bound on the exact value.
double row_sum_relaxation(const Eigen::MatrixXd& w, double epsilon);

Eigen::MatrixXd sample_matrix(const BoundInstance& instance, std::uint64_t seed);

struct TrialRecord {
  std::uint64_t seed = 0;
  double normalized_worst_case = 0;  ///< (1/n) * worst_case_l1_exact
  bool violated = false;
};

struct MonteCarloReport {
  BoundInstance instance;
  double bound = 0;
  std::int64_t trials = 0;
  std::int64_t violations = 0;
  double violation_fraction = 0;
  double mean_normalized_worst_case = 0;
  double max_normalized_worst_case = 0;
  std::vector<TrialRecord> records;

  nlohmann::json to_json() const;
  std::string summary_csv() const;
};

/// Trial t samples W with seed mix_seed(seed, t); trials run on `workers` threads
/// and are aggregated in trial order.
MonteCarloReport monte_carlo_violation_rate(const BoundInstance& instance, std::int64_t trials, std::uint64_t seed,
                                            std::int64_t workers = 1);

// -- linearization probe --------------------------------------------------------

using ScoreFn = std::function<torch::Tensor(const torch::Tensor& image)>;

/// Reverse-mode Jacobian of a map from a length-m latent to an arbitrary tensor,
/// flattened to (n, m).
Eigen::MatrixXd jacobian(const std::function<torch::Tensor(const torch::Tensor&)>& fn, const torch::Tensor& z);
/// Central finite-difference Jacobian, for cross-checks.
Eigen::MatrixXd jacobian_fd(const std::function<torch::Tensor(const torch::Tensor&)>& fn, const torch::Tensor& z,
                            double h = 1e-6);

struct ProbeSample {
  std::vector<double> z0;
  double score_worst_case = 0;     ///< eps * ||J_s||_1, exact for the 1-row score map
  double generator_row_proxy = 0;  ///< (1/n) * eps * sum_i ||row_i(J_g)||_1, an upper bound
  double ratio = 0;                ///< score_worst_case / generator_row_proxy
  bool finite = true;
};

struct JacobianProbe {
  std::int64_t n = 0;
  std::int64_t m = 0;
  double epsilon = 0;
  std::int64_t label = 0;
  std::vector<ProbeSample> samples;
  std::vector<std::string> flagged;  ///< non-finite Jacobians, with the offending z0

  double median_score_worst_case() const;
  double median_generator_proxy() const;
  double median_ratio() const;
  nlohmann::json to_json() const;
};

/// Margin score log f(1|x) - log f(0|x) for binary classifiers.
ScoreFn binary_margin_score(const clf::Classifier& f);

JacobianProbe jacobian_probe(const attack::LatentGenerator& generator, std::int64_t label, const ScoreFn& score,
                             std::int64_t samples, double epsilon, std::uint64_t seed);

}  // namespace advgen::robust
