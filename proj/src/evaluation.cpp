#include "advgen/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <set>
#include <sstream>

namespace advgen::eval {

std::string to_string(RecordMode mode) { return mode == RecordMode::label ? "label" : "ab_pick"; }

VoteSummary majority_vote(std::span<const AnnotationRecord> records, std::int64_t quorum) {
  if (quorum < 1) throw ValidationError("quorum must be positive");
  if (static_cast<std::int64_t>(records.size()) != quorum) {
    throw ValidationError("majority vote needs exactly " + std::to_string(quorum) + " records, got " +
                          std::to_string(records.size()));
  }
  std::map<std::int64_t, std::int64_t> counts;
  for (const auto& r : records) {
    if (r.mode != RecordMode::label) throw ValidationError("majority vote takes label records only");
    if (r.image_id != records.front().image_id) throw ValidationError("records span several images");
    ++counts[r.label];
  }
  VoteSummary v;
  v.image_id = records.front().image_id;
  v.quorum = quorum;
  std::int64_t holders = 0;
  for (const auto& [label, count] : counts) {
    if (count > v.agreement_count) {
      v.agreement_count = count;
      v.majority_label = label;
      holders = 1;
    } else if (count == v.agreement_count) {
      ++holders;
    }
  }
  if (holders > 1) v.majority_label = kTie;
  return v;
}

std::map<std::string, VoteSummary> summarize_votes(std::span<const AnnotationRecord> records, std::int64_t quorum) {
  std::map<std::string, std::vector<AnnotationRecord>> by_image;
  for (const auto& r : records) {
    if (r.mode == RecordMode::label) by_image[r.image_id].push_back(r);
  }
  std::map<std::string, VoteSummary> out;
  for (auto& [id, list] : by_image) {
    if (static_cast<std::int64_t>(list.size()) < quorum) continue;
    list.resize(static_cast<std::size_t>(quorum));
    out.emplace(id, majority_vote(list, quorum));
  }
  return out;
}

Attempt Attempt::from_manifest(const attack::ManifestEntry& entry) {
  return {entry.id, entry.y_source, entry.y_target, entry.status, entry.prediction};
}

MissingVotesError::MissingVotesError(std::vector<std::string> ids)
    : ValidationError([&] {
        std::string msg = "missing votes for " + std::to_string(ids.size()) + " image(s):";
        for (std::size_t i = 0; i < ids.size() && i < 20; ++i) msg += " " + ids[i];
        if (ids.size() > 20) msg += " ...";
        return msg;
      }()),
      ids_(std::move(ids)) {}

namespace {

nlohmann::json cell_json(const RateCell& c) {
  return {{"attempted", c.attempted}, {"successes", c.successes}, {"rate", c.rate()}};
}

bool fooled(const Attempt& a) {
  return a.y_target ? a.prediction == *a.y_target : a.prediction != a.y_source;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

nlohmann::json SuccessReport::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& [key, cell] : cells) {
    auto j = cell_json(cell);
    j["source"] = key.first;
    j["target"] = key.second == kUntargeted ? nlohmann::json(nullptr) : nlohmann::json(key.second);
    cells_json.push_back(j);
  }
  nlohmann::json sources = nlohmann::json::object();
  for (const auto& [s, cell] : per_source) sources[std::to_string(s)] = cell_json(cell);
  return {{"cells", cells_json}, {"per_source", sources}, {"overall", cell_json(overall)}};
}

SuccessReport success_rate(std::span<const Attempt> attempts, const std::map<std::string, VoteSummary>& votes,
                           const SuccessOptions& options) {
  SuccessReport report;
  std::vector<std::string> missing;
  for (const auto& a : attempts) {
    const bool exhausted = a.status == attack::AttackStatus::budget_exhausted;
    if (exhausted && !options.include_exhausted) continue;
    bool success = false;
    if (!exhausted) {
      const auto it = votes.find(a.id);
      if (it == votes.end()) {
        missing.push_back(a.id);
        continue;
      }
      success = fooled(a) && it->second.majority_label == a.y_source;
    }
    const auto inc = [&](RateCell& c) {
      ++c.attempted;
      if (success) ++c.successes;
    };
    inc(report.cells[{a.y_source, a.y_target.value_or(kUntargeted)}]);
    inc(report.per_source[a.y_source]);
    inc(report.overall);
  }
  if (!missing.empty()) throw MissingVotesError(std::move(missing));
  return report;
}

TransferSet select_valid(std::span<const Attempt> attempts, const torch::Tensor& images,
                         const std::map<std::string, VoteSummary>& votes) {
  if (images.dim() != 4 || images.size(0) != static_cast<std::int64_t>(attempts.size())) {
    throw DimensionError("one image per attempt expected");
  }
  std::vector<std::int64_t> keep;
  TransferSet out;
  for (std::size_t i = 0; i < attempts.size(); ++i) {
    const auto& a = attempts[i];
    if (a.status != attack::AttackStatus::success) continue;
    const auto it = votes.find(a.id);
    if (it == votes.end() || it->second.majority_label != a.y_source) continue;
    keep.push_back(static_cast<std::int64_t>(i));
    out.y_source.push_back(a.y_source);
  }
  out.images = images.index_select(0, torch::tensor(keep, index_options()));
  return out;
}

std::vector<TransferEntry> transfer_matrix(const TransferSet& valid,
                                           std::span<const std::pair<std::string, const clf::Classifier*>> classifiers) {
  if (valid.y_source.empty()) throw ValidationError("transfer matrix needs a non-empty valid set");
  if (valid.images.size(0) != static_cast<std::int64_t>(valid.y_source.size())) {
    throw DimensionError("valid set images and labels differ in count");
  }
  const auto labels = torch::tensor(valid.y_source, index_options());
  std::vector<TransferEntry> out;
  torch::NoGradGuard no_grad;
  for (const auto& [name, f] : classifiers) {
    if (f == nullptr) throw ValidationError("null classifier '" + name + "'");
    std::int64_t correct = 0;
    const auto n = valid.images.size(0);
    for (std::int64_t b = 0; b < n; b += 512) {
      const auto e = std::min(b + 512, n);
      correct += f->predict(valid.images.slice(0, b, e)).eq(labels.slice(0, b, e)).sum().item<std::int64_t>();
    }
    out.push_back({name, 100.0 * static_cast<double>(correct) / static_cast<double>(n)});
  }
  return out;
}

double ab_detection_rate(std::span<const AbPair> pairs, std::span<const AbPick> picks) {
  if (picks.empty()) throw ValidationError("no A/B picks");
  std::map<std::string, std::int64_t> synthetic_position;
  for (const auto& p : pairs) {
    if (p.synthetic_position != 0 && p.synthetic_position != 1) throw ValidationError("positions are 0 or 1");
    if (!synthetic_position.emplace(p.pair_id, p.synthetic_position).second) {
      throw ValidationError("duplicate pair id " + p.pair_id);
    }
  }
  std::int64_t hits = 0;
  for (const auto& pick : picks) {
    const auto it = synthetic_position.find(pick.pair_id);
    if (it == synthetic_position.end()) throw ValidationError("pick names unknown pair " + pick.pair_id);
    if (pick.picked_position == it->second) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(picks.size());
}

std::int64_t AgreementHistogram::total() const {
  std::int64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

nlohmann::json AgreementHistogram::to_json() const {
  nlohmann::json bins = nlohmann::json::object();
  for (std::size_t k = 0; k < counts.size(); ++k) bins[std::to_string(k + 1)] = counts[k];
  return {{"quorum", quorum}, {"counts", bins}, {"total", total()}};
}

AgreementHistogram agreement_histogram(const std::map<std::string, VoteSummary>& votes, std::int64_t quorum) {
  if (quorum < 1) throw ValidationError("quorum must be positive");
  AgreementHistogram h;
  h.quorum = quorum;
  h.counts.assign(static_cast<std::size_t>(quorum), 0);
  for (const auto& [id, v] : votes) {
    if (v.agreement_count < 1 || v.agreement_count > quorum) {
      throw ValidationError("agreement count of " + id + " outside [1, quorum]");
    }
    ++h.counts[static_cast<std::size_t>(v.agreement_count - 1)];
  }
  return h;
}

nlohmann::json ReferenceValues::all() {
  using J = nlohmann::json;
  return J{
      {"certified_defenses",
       {{"raghunathan",
         {{"per_source", {90.8, 48.3, 86.7, 93.7, 94.7, 85.7, 93.4, 80.8, 96.8, 95.0}},
          {"overall", 86.6},
          {"certified_error_upper_bound", 35.0}}},
        {"kolter_wong",
         {{"per_source", {94.2, 57.3, 92.2, 94.0, 93.7, 89.6, 95.7, 81.4, 96.3, 93.5}},
          {"overall", 88.8},
          {"certified_error_upper_bound", 5.8}}}}},
      {"adversarially_trained",
       J::array({J{{"dataset", "mnist"}, {"classifier", "madry-cnn"}, {"clean_accuracy", 98.4},
                   {"pgd_success", 10.4}, {"ours_without_noise", 85.2}, {"ours_with_noise", 85.0},
                   {"epsilon_attack", 0.3}},
                 J{{"dataset", "svhn"}, {"classifier", "resnet"}, {"clean_accuracy", 96.3},
                   {"pgd_success", 59.9}, {"ours_without_noise", 84.2}, {"ours_with_noise", 91.6},
                   {"epsilon_attack", 0.03}},
                 J{{"dataset", "celeba-gender"}, {"classifier", "resnet"}, {"clean_accuracy", 97.3},
                   {"pgd_success", 20.5}, {"ours_without_noise", 91.1}, {"ours_with_noise", 86.7},
                   {"epsilon_attack", 0.03}}})},
      {"transfer",
       {{"classifiers", {"madry-no-adv", "madry-adv", "resnet-no-adv", "resnet-adv", "raghunathan", "kolter-wong"}},
        {"no_attack", {99.5, 98.4, 99.3, 99.4, 95.8, 98.2}},
        {"ours_without_noise", {95.1, 0.0, 92.7, 93.7, 77.1, 84.3}},
        {"ours_with_noise", {78.3, 0.0, 73.8, 84.9, 78.1, 63.0}}}},
      {"ab_detection", {{"pgd_eps_0.31", 92.9}, {"ours", 76.8}}},
      {"human_ground_truth_agreement", 99.6},
      {"celeba_unanimous_fraction", 55.0}};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json transfer_json = nlohmann::json::array();
  for (const auto& e : transfer) transfer_json.push_back({{"classifier", e.classifier}, {"accuracy", e.accuracy}});
  return {{"success", success.to_json()},
          {"transfer", transfer_json},
          {"ab_detection", ab_detection ? nlohmann::json(*ab_detection) : nlohmann::json(nullptr)},
          {"agreement_histogram", histogram.to_json()},
          {"reference", ReferenceValues::all()}};
}

std::string per_source_table_csv(const std::vector<std::pair<std::string, SuccessReport>>& rows,
                                 std::int64_t class_count) {
  std::ostringstream out;
  out << "classifier";
  for (std::int64_t k = 0; k < class_count; ++k) out << ',' << k;
  out << ",overall\n";
  for (const auto& [name, report] : rows) {
    out << name;
    for (std::int64_t k = 0; k < class_count; ++k) {
      const auto it = report.per_source.find(k);
      out << ',' << (it == report.per_source.end() ? "" : percent(it->second.rate()));
    }
    out << ',' << percent(report.overall.rate()) << '\n';
  }
  return out.str();
}

std::string robust_table_csv(const std::vector<RobustClassifierRow>& rows) {
  std::ostringstream out;
  out << "classifier,clean_accuracy,pgd_success,ours_without_noise,ours_with_noise,epsilon_attack\n";
  const auto opt = [](const std::optional<double>& v) { return v ? percent(*v) : std::string(); };
  for (const auto& r : rows) {
    out << r.classifier << ',' << percent(r.clean_accuracy) << ',' << opt(r.pgd_success) << ','
        << opt(r.ours_without_noise) << ',' << opt(r.ours_with_noise) << ',' << r.epsilon_attack << '\n';
  }
  return out.str();
}

std::string targeted_matrix_csv(const SuccessReport& report, std::int64_t class_count) {
  std::ostringstream out;
  out << "source\\target";
  for (std::int64_t t = 0; t < class_count; ++t) out << ',' << t;
  out << '\n';
  for (std::int64_t s = 0; s < class_count; ++s) {
    out << s;
    for (std::int64_t t = 0; t < class_count; ++t) {
      const auto it = report.cells.find({s, t});
      out << ',' << (s == t || it == report.cells.end() ? "" : percent(it->second.rate()));
    }
    out << '\n';
  }
  return out.str();
}

std::string transfer_table_csv(const std::vector<std::pair<std::string, std::vector<TransferEntry>>>& rows) {
  std::ostringstream out;
  out << "attack";
  if (!rows.empty()) {
    for (const auto& e : rows.front().second) out << ',' << e.classifier;
  }
  out << '\n';
  for (const auto& [name, entries] : rows) {
    out << name;
    for (const auto& e : entries) out << ',' << percent(e.accuracy);
    out << '\n';
  }
  return out.str();
}

// -- sample grids ---------------------------------------------------------------

namespace {

/// 3x5 glyphs, one row per 3-bit group, most significant bit on the left.
const std::map<char, std::array<std::uint8_t, 5>>& font() {
  static const std::map<char, std::array<std::uint8_t, 5>> glyphs{
      {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
      {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
      {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'N', {5, 7, 7, 7, 5}}, {'A', {2, 5, 7, 5, 5}},
      {'T', {7, 2, 2, 2, 2}}, {'I', {7, 2, 2, 2, 7}}, {'E', {7, 4, 6, 4, 7}}, {'-', {0, 0, 7, 0, 0}},
      {'?', {7, 1, 2, 0, 2}}};
  return glyphs;
}

struct Canvas {
  std::int64_t width;
  std::int64_t height;
  std::vector<std::uint8_t> rgb;

  Canvas(std::int64_t w, std::int64_t h, std::uint8_t fill)
      : width(w), height(h), rgb(static_cast<std::size_t>(w * h * 3), fill) {}

  void set(std::int64_t x, std::int64_t y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto* p = &rgb[static_cast<std::size_t>((y * width + x) * 3)];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void fill(std::int64_t x0, std::int64_t y0, std::int64_t w, std::int64_t h, std::array<std::uint8_t, 3> c) {
    for (std::int64_t y = y0; y < y0 + h; ++y) {
      for (std::int64_t x = x0; x < x0 + w; ++x) set(x, y, c);
    }
  }

  void text(std::int64_t x0, std::int64_t y0, const std::string& s, std::int64_t px) {
    if (s.empty()) return;
    const auto advance = 4 * px;
    fill(x0, y0, advance * static_cast<std::int64_t>(s.size()) + px, 7 * px, {0, 0, 0});
    std::int64_t x = x0 + px;
    for (char ch : s) {
      const auto it = font().find(ch);
      const auto& glyph = it == font().end() ? font().at('?') : it->second;
      for (std::int64_t row = 0; row < 5; ++row) {
        for (std::int64_t col = 0; col < 3; ++col) {
          if ((glyph[static_cast<std::size_t>(row)] >> (2 - col)) & 1) {
            fill(x + col * px, y0 + px + row * px, px, px, {255, 255, 255});
          }
        }
      }
      x += advance;
    }
  }
};

constexpr std::array<std::uint8_t, 3> kGreen{0, 200, 0};
constexpr std::array<std::uint8_t, 3> kRed{220, 0, 0};

std::string label_text(std::int64_t label) {
  if (label == kNA) return "NA";
  if (label == kTie) return "TIE";
  return std::to_string(label);
}

}  // namespace

std::vector<std::uint8_t> export_grid(std::span<const GridCell> cells, const GridLayout& layout) {
  if (layout.rows < 1 || layout.cols < 1 || layout.scale < 1 || layout.border < 0) {
    throw ValidationError("grid layout dimensions must be positive");
  }
  if (static_cast<std::int64_t>(cells.size()) != layout.expected_cells()) {
    throw ValidationError("grid expects " + std::to_string(layout.expected_cells()) + " cells, got " +
                          std::to_string(cells.size()));
  }
  if (cells.empty()) throw ValidationError("grid has no cells");
  const auto dims = cells.front().image.sizes();
  if (cells.front().image.dim() != 3) throw DimensionError("grid cells hold (C,H,W) images");
  const auto channels = dims[0], h = dims[1], w = dims[2];
  if (channels != 1 && channels != 3) throw DimensionError("grid images need 1 or 3 channels");
  const auto gap = std::int64_t{2};
  const auto cell_w = w * layout.scale + 2 * layout.border;
  const auto cell_h = h * layout.scale + 2 * layout.border;
  Canvas canvas(layout.cols * cell_w + (layout.cols + 1) * gap, layout.rows * cell_h + (layout.rows + 1) * gap, 64);
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  const auto px = std::max<std::int64_t>(1, layout.scale / 2);
  for (const auto& cell : cells) {
    if (cell.row < 0 || cell.row >= layout.rows || cell.col < 0 || cell.col >= layout.cols) {
      throw ValidationError("grid cell outside the layout");
    }
    if (layout.skip_diagonal && cell.row == cell.col) throw ValidationError("targeted grids leave the diagonal empty");
    if (!seen.insert({cell.row, cell.col}).second) throw ValidationError("grid cell filled twice");
    if (cell.image.sizes() != dims) throw DimensionError("grid images differ in shape");
    const auto x0 = gap + cell.col * (cell_w + gap);
    const auto y0 = gap + cell.row * (cell_h + gap);
    canvas.fill(x0, y0, cell_w, cell_h, cell.success ? kGreen : kRed);
    auto bytes = (cell.image.detach().to(kReal).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
    const auto* p = bytes.data_ptr<std::uint8_t>();
    for (std::int64_t y = 0; y < h * layout.scale; ++y) {
      for (std::int64_t x = 0; x < w * layout.scale; ++x) {
        const auto sy = y / layout.scale, sx = x / layout.scale;
        std::array<std::uint8_t, 3> c;
        for (std::int64_t k = 0; k < 3; ++k) {
          const auto ch = channels == 1 ? 0 : k;
          c[static_cast<std::size_t>(k)] = p[(ch * h + sy) * w + sx];
        }
        canvas.set(x0 + layout.border + x, y0 + layout.border + y, c);
      }
    }
    canvas.text(x0 + layout.border, y0 + layout.border, cell.annotation, px);
  }
  return encode_rgb_png(canvas.rgb, canvas.height, canvas.width);
}

std::vector<GridCell> grid_cells_from_results(const attack::StoredResults& results,
                                              const std::map<std::string, VoteSummary>& votes,
                                              AnnotationSource source, const GridLayout& layout) {
  if (static_cast<std::int64_t>(results.entries.size()) != results.images.size()) {
    throw ValidationError("stored results and images differ in count");
  }
  std::vector<GridCell> cells;
  std::set<std::pair<std::int64_t, std::int64_t>> used;
  std::map<std::int64_t, std::int64_t> next_col;
  for (std::size_t i = 0; i < results.entries.size(); ++i) {
    const auto& e = results.entries[i];
    std::int64_t row = e.y_source;
    std::int64_t col = 0;
    if (e.y_target) {
      col = *e.y_target;
    } else {
      col = next_col[row]++;
    }
    if (row >= layout.rows || col >= layout.cols || !used.insert({row, col}).second) continue;
    const auto vote = votes.find(e.id);
    GridCell cell;
    cell.image = results.images.pixels[static_cast<std::int64_t>(i)];
    cell.row = row;
    cell.col = col;
    cell.success = vote != votes.end() && vote->second.majority_label == e.y_source;
    if (source == AnnotationSource::prediction) {
      cell.annotation = std::to_string(e.prediction);
    } else {
      cell.annotation = vote == votes.end() ? "?" : label_text(vote->second.majority_label);
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace advgen::eval
