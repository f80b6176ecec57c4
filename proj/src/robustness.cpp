#include "advgen/robustness.hpp"

#include "advgen/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

namespace advgen::robust {

std::string to_string(MatrixLaw law) {
  switch (law) {
    case MatrixLaw::uniform: return "uniform";
    case MatrixLaw::rademacher: return "rademacher";
    case MatrixLaw::zero: return "zero";
  }
  return "unknown";
}

MatrixLaw parse_matrix_law(std::string_view text) {
  for (auto law : {MatrixLaw::uniform, MatrixLaw::rademacher, MatrixLaw::zero}) {
    if (text == to_string(law)) return law;
  }
  throw ValidationError("unknown matrix law '" + std::string(text) + "'");
}

void BoundInstance::validate() const {
  if (n < 1 || m < 1) throw ValidationError("n and m must be at least 1");
  if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
  if (!(entry_bound > 0)) throw ValidationError("entry bound K must be positive");
  if (!(delta > 0 && delta <= 1)) throw ValidationError("delta must lie in (0,1]");
}

double prop1_bound(const BoundInstance& instance) {
  instance.validate();
  const auto n = static_cast<double>(instance.n);
  const auto m = static_cast<double>(instance.m);
  const auto ek = instance.epsilon * instance.entry_bound;
  return 4.0 * ek * std::sqrt(m * (m * std::log(2.0) + std::log(1.0 / instance.delta)) / n) + ek * m;
}

double worst_case_l1_exact(const Eigen::MatrixXd& w, double epsilon, std::int64_t vertex_limit) {
  const auto m = static_cast<std::int64_t>(w.cols());
  if (m > vertex_limit || m > 62) {
    throw ValidationError("exact worst case needs m <= " + std::to_string(vertex_limit) + ", got " +
                          std::to_string(m));
  }
  if (!(epsilon >= 0)) throw ValidationError("epsilon must be non-negative");
  const auto n = w.rows();
  double best = 0;
  const std::uint64_t vertices = std::uint64_t{1} << m;
  for (std::uint64_t mask = 0; mask < vertices; ++mask) {
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double row = 0;
      for (Eigen::Index j = 0; j < m; ++j) {
        const bool negative = (mask >> j) & 1U;
        row += negative ? -w(i, j) : w(i, j);
      }
      total += std::abs(row);
    }
    best = std::max(best, total);
  }
  return epsilon * best;
}

double row_sum_relaxation(const Eigen::MatrixXd& w, double epsilon) { return epsilon * w.cwiseAbs().sum(); }

Eigen::MatrixXd sample_matrix(const BoundInstance& instance, std::uint64_t seed) {
  instance.validate();
  auto gen = make_generator(seed);
  const auto k = instance.entry_bound;
  torch::Tensor t;
  switch (instance.law) {
    case MatrixLaw::uniform:
      t = torch::rand({instance.n, instance.m}, gen, real_options()) * (2 * k) - k;
      break;
    case MatrixLaw::rademacher:
      t = (torch::randint(2, {instance.n, instance.m}, gen, real_options()) * 2 - 1) * k;
      break;
    case MatrixLaw::zero: t = torch::zeros({instance.n, instance.m}, real_options()); break;
  }
  t = t.contiguous();
  Eigen::MatrixXd w(instance.n, instance.m);
  const auto* p = t.data_ptr<double>();
  for (std::int64_t i = 0; i < instance.n; ++i) {
    for (std::int64_t j = 0; j < instance.m; ++j) w(i, j) = p[i * instance.m + j];
  }
  return w;
}

nlohmann::json MonteCarloReport::to_json() const {
  nlohmann::json trials_json = nlohmann::json::array();
  for (const auto& r : records) {
    trials_json.push_back({{"seed", r.seed}, {"normalized_worst_case", r.normalized_worst_case}, {"violated", r.violated}});
  }
  return {{"instance",
           {{"n", instance.n},
            {"m", instance.m},
            {"epsilon", instance.epsilon},
            {"K", instance.entry_bound},
            {"delta", instance.delta},
            {"law", to_string(instance.law)}}},
          {"bound", bound},
          {"trials", trials},
          {"violations", violations},
          {"violation_fraction", violation_fraction},
          {"mean_normalized_worst_case", mean_normalized_worst_case},
          {"max_normalized_worst_case", max_normalized_worst_case},
          {"records", trials_json}};
}

std::string MonteCarloReport::summary_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "n,m,epsilon,K,delta,law,bound,trials,violations,violation_fraction,mean_normalized,max_normalized\n";
  out << instance.n << ',' << instance.m << ',' << instance.epsilon << ',' << instance.entry_bound << ','
      << instance.delta << ',' << to_string(instance.law) << ',' << bound << ',' << trials << ',' << violations << ','
      << violation_fraction << ',' << mean_normalized_worst_case << ',' << max_normalized_worst_case << '\n';
  return out.str();
}

MonteCarloReport monte_carlo_violation_rate(const BoundInstance& instance, std::int64_t trials, std::uint64_t seed,
                                            std::int64_t workers) {
  instance.validate();
  if (trials < 1) throw ValidationError("trials must be positive");
  if (instance.m > kDefaultVertexLimit) throw ValidationError("m exceeds the exact-oracle limit");
  MonteCarloReport report;
  report.instance = instance;
  report.bound = prop1_bound(instance);
  report.trials = trials;
  report.records.resize(static_cast<std::size_t>(trials));
  std::atomic<std::int64_t> next{0};
  auto worker = [&] {
    for (auto t = next++; t < trials; t = next++) {
      auto& r = report.records[static_cast<std::size_t>(t)];
      r.seed = mix_seed(seed, static_cast<std::uint64_t>(t));
      const auto w = sample_matrix(instance, r.seed);
      r.normalized_worst_case = worst_case_l1_exact(w, instance.epsilon) / static_cast<double>(instance.n);
      r.violated = r.normalized_worst_case > report.bound;
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::int64_t i = 0; i < workers; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  double sum = 0;
  for (const auto& r : report.records) {
    report.violations += r.violated ? 1 : 0;
    sum += r.normalized_worst_case;
    report.max_normalized_worst_case = std::max(report.max_normalized_worst_case, r.normalized_worst_case);
  }
  report.violation_fraction = static_cast<double>(report.violations) / static_cast<double>(trials);
  report.mean_normalized_worst_case = sum / static_cast<double>(trials);
  return report;
}

// -- linearization probe --------------------------------------------------------

Eigen::MatrixXd jacobian(const std::function<torch::Tensor(const torch::Tensor&)>& fn, const torch::Tensor& z) {
  auto input = z.detach().to(kReal).clone().requires_grad_(true);
  auto out = fn(input).reshape({-1});
  const auto n = out.size(0);
  const auto m = input.numel();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, m);
  for (std::int64_t i = 0; i < n; ++i) {
    if (!out.requires_grad()) break;
    auto g = torch::autograd::grad({out[i]}, {input}, {}, /*retain_graph=*/true, false, /*allow_unused=*/true)[0];
    if (!g.defined()) continue;
    g = g.reshape({-1}).contiguous();
    const auto* p = g.data_ptr<double>();
    for (std::int64_t k = 0; k < m; ++k) j(i, k) = p[k];
  }
  return j;
}

Eigen::MatrixXd jacobian_fd(const std::function<torch::Tensor(const torch::Tensor&)>& fn, const torch::Tensor& z,
                            double h) {
  torch::NoGradGuard no_grad;
  auto base = z.detach().to(kReal).reshape({-1}).clone();
  const auto m = base.numel();
  Eigen::MatrixXd j;
  for (std::int64_t k = 0; k < m; ++k) {
    auto plus = base.clone();
    auto minus = base.clone();
    plus[k] += h;
    minus[k] -= h;
    auto diff = ((fn(plus.view(z.sizes())) - fn(minus.view(z.sizes()))) / (2 * h)).reshape({-1}).contiguous();
    if (k == 0) j = Eigen::MatrixXd::Zero(diff.numel(), m);
    const auto* p = diff.data_ptr<double>();
    for (std::int64_t i = 0; i < diff.numel(); ++i) j(i, k) = p[i];
  }
  return j;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const auto mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

template <class Get>
std::vector<double> finite_values(const std::vector<ProbeSample>& samples, Get get) {
  std::vector<double> out;
  for (const auto& s : samples) {
    if (s.finite) out.push_back(get(s));
  }
  return out;
}

}  // namespace

double JacobianProbe::median_score_worst_case() const {
  return median(finite_values(samples, [](const ProbeSample& s) { return s.score_worst_case; }));
}

double JacobianProbe::median_generator_proxy() const {
  return median(finite_values(samples, [](const ProbeSample& s) { return s.generator_row_proxy; }));
}

double JacobianProbe::median_ratio() const {
  return median(finite_values(samples, [](const ProbeSample& s) { return s.ratio; }));
}

nlohmann::json JacobianProbe::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : samples) {
    rows.push_back({{"z0", s.z0},
                    {"score_worst_case", s.score_worst_case},
                    {"generator_row_proxy", s.generator_row_proxy},
                    {"ratio", s.ratio},
                    {"finite", s.finite}});
  }
  return {{"n", n},
          {"m", m},
          {"epsilon", epsilon},
          {"label", label},
          {"generator_proxy_is_upper_bound", true},
          {"median_score_worst_case", median_score_worst_case()},
          {"median_generator_proxy", median_generator_proxy()},
          {"median_ratio", median_ratio()},
          {"flagged", flagged},
          {"samples", rows}};
}

ScoreFn binary_margin_score(const clf::Classifier& f) {
  if (f.class_count() != 2) throw ValidationError("margin score needs a binary classifier");
  return [&f](const torch::Tensor& image) {
    auto lp = f.log_probs(image.dim() == 3 ? image.unsqueeze(0) : image);
    return (lp.select(1, 1) - lp.select(1, 0)).sum();
  };
}

JacobianProbe jacobian_probe(const attack::LatentGenerator& generator, std::int64_t label, const ScoreFn& score,
                             std::int64_t samples, double epsilon, std::uint64_t seed) {
  if (samples < 1) throw ValidationError("probe needs at least one sample");
  if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
  if (generator.discrete_latent()) throw ValidationError("probe needs a differentiable generator");
  JacobianProbe probe;
  probe.n = generator.image_shape().numel();
  probe.m = generator.latent_dim();
  probe.epsilon = epsilon;
  probe.label = label;
  auto gen = make_generator(seed);
  auto g = [&](const torch::Tensor& z) { return generator.generate(z, label); };
  auto s = [&](const torch::Tensor& z) { return score(generator.generate(z, label)); };
  for (std::int64_t k = 0; k < samples; ++k) {
    auto z0 = generator.sample_anchor(label, gen);
    ProbeSample sample;
    auto flat = z0.contiguous();
    sample.z0.assign(flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel());
    const auto jg = jacobian(g, z0);
    const auto js = jacobian(s, z0);
    sample.finite = jg.allFinite() && js.allFinite();
    if (!sample.finite) {
      std::ostringstream msg;
      msg << "non-finite Jacobian at sample " << k << " z0=[";
      for (std::size_t i = 0; i < sample.z0.size(); ++i) msg << (i ? "," : "") << sample.z0[i];
      msg << ']';
      probe.flagged.push_back(msg.str());
    } else {
      sample.score_worst_case = epsilon * js.cwiseAbs().sum();
      sample.generator_row_proxy = row_sum_relaxation(jg, epsilon) / static_cast<double>(probe.n);
      sample.ratio = sample.generator_row_proxy > 0 ? sample.score_worst_case / sample.generator_row_proxy
                                                    : std::numeric_limits<double>::infinity();
    }
    probe.samples.push_back(std::move(sample));
  }
  return probe;
}

}  // namespace advgen::robust
