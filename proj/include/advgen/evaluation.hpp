#pragma once

#include "advgen/attack.hpp"
#include "advgen/classifier.hpp"
#include "advgen/error.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace advgen::eval {

/// Worker answer "not a legitimate image / no class".
inline constexpr std::int64_t kNA = -1;
/// Majority outcome when the top count is shared.
inline constexpr std::int64_t kTie = -2;
/// Target column used for untargeted attempts.
inline constexpr std::int64_t kUntargeted = -1;

inline constexpr std::int64_t kDefaultQuorum = 5;

enum class RecordMode { label, ab_pick };

std::string to_string(RecordMode mode);

struct AnnotationRecord {
  std::string image_id;
  std::string worker_id;
  std::int64_t label = kNA;  ///< class, kNA, or the picked position in ab_pick mode
  RecordMode mode = RecordMode::label;
  std::int64_t timestamp = 0;
};

struct VoteSummary {
  std::string image_id;
  std::int64_t majority_label = kTie;
  std::int64_t agreement_count = 0;
  std::int64_t quorum = kDefaultQuorum;
};

/// Strict plurality over exactly `quorum` records; NA is an ordinary label and a
/// shared top count yields kTie. Throws ValidationError on a wrong record count.
VoteSummary majority_vote(std::span<const AnnotationRecord> records, std::int64_t quorum = kDefaultQuorum);

/// Groups label-mode records by image and votes every image that reached quorum.
std::map<std::string, VoteSummary> summarize_votes(std::span<const AnnotationRecord> records,
                                                   std::int64_t quorum = kDefaultQuorum);

struct Attempt {
  std::string id;
  std::int64_t y_source = 0;
  std::optional<std::int64_t> y_target;
  attack::AttackStatus status = attack::AttackStatus::success;
  std::int64_t prediction = -1;

  static Attempt from_manifest(const attack::ManifestEntry& entry);
};

struct RateCell {
  std::int64_t attempted = 0;
  std::int64_t successes = 0;

  /// Percentage in [0,100]; 0 for an empty cell.
  double rate() const { return attempted == 0 ? 0.0 : 100.0 * static_cast<double>(successes) / attempted; }
  double failure_rate() const { return attempted == 0 ? 0.0 : 100.0 - rate(); }
};

struct SuccessOptions {
  /// Count budget_exhausted attempts as failures instead of dropping them.
  bool include_exhausted = false;
};

class MissingVotesError : public ValidationError {
 public:
  explicit MissingVotesError(std::vector<std::string> ids);
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  std::vector<std::string> ids_;
};

struct SuccessReport {
  std::map<std::pair<std::int64_t, std::int64_t>, RateCell> cells;  ///< (source, target or kUntargeted)
  std::map<std::int64_t, RateCell> per_source;
  RateCell overall;

  nlohmann::json to_json() const;
};

/// success = fooled (guaranteed for success-status attempts) and majority == source.
/// TIE and NA majorities are failures.
SuccessReport success_rate(std::span<const Attempt> attempts, const std::map<std::string, VoteSummary>& votes,
                           const SuccessOptions& options = {});

struct TransferSet {
  torch::Tensor images;                ///< (N,C,H,W) human-verified adversarial examples
  std::vector<std::int64_t> y_source;  ///< their source classes
};

/// Keeps success-status attempts whose majority vote equals the source class.
TransferSet select_valid(std::span<const Attempt> attempts, const torch::Tensor& images,
                         const std::map<std::string, VoteSummary>& votes);

struct TransferEntry {
  std::string classifier;
  double accuracy = 0;  ///< percent predicted as the source class
};

/// Throws ValidationError on an empty set.
std::vector<TransferEntry> transfer_matrix(const TransferSet& valid,
                                           std::span<const std::pair<std::string, const clf::Classifier*>> classifiers);

struct AbPair {
  std::string pair_id;
  std::string synthetic_id;
  std::string real_id;
  std::int64_t synthetic_position = 0;  ///< 0 = left/A, 1 = right/B
};

struct AbPick {
  std::string pair_id;
  std::int64_t picked_position = 0;
};

/// 100 * (picks landing on the synthetic member) / picks. Throws ValidationError
/// for picks naming unknown pairs, or when there are no picks.
double ab_detection_rate(std::span<const AbPair> pairs, std::span<const AbPick> picks);

struct AgreementHistogram {
  std::int64_t quorum = kDefaultQuorum;
  std::vector<std::int64_t> counts;  ///< counts[k-1] = images whose agreement_count is k

  std::int64_t total() const;
  nlohmann::json to_json() const;
};

AgreementHistogram agreement_histogram(const std::map<std::string, VoteSummary>& votes,
                                       std::int64_t quorum = kDefaultQuorum);

/// Reference figures, carried into reports for side-by-side reading only.
struct ReferenceValues {
  static nlohmann::json all();
};

struct EvalReport {
  SuccessReport success;
  std::vector<TransferEntry> transfer;
  std::optional<double> ab_detection;
  AgreementHistogram histogram;

  nlohmann::json to_json() const;
};

/// Success-rate table by source class, one row per classifier (certified-defense layout).
std::string per_source_table_csv(const std::vector<std::pair<std::string, SuccessReport>>& rows,
                                 std::int64_t class_count);

struct RobustClassifierRow {
  std::string classifier;
  double clean_accuracy = 0;
  std::optional<double> pgd_success;
  std::optional<double> ours_without_noise;
  std::optional<double> ours_with_noise;
  double epsilon_attack = 0;
};

/// Overall success table (adversarially trained classifier layout).
std::string robust_table_csv(const std::vector<RobustClassifierRow>& rows);

/// Source x target success-rate matrix; diagonal blank for targeted attacks.
std::string targeted_matrix_csv(const SuccessReport& report, std::int64_t class_count);

/// Transferability table: one row per attack type, one column per classifier.
std::string transfer_table_csv(const std::vector<std::pair<std::string, std::vector<TransferEntry>>>& rows);

// -- sample grids ---------------------------------------------------------------

struct GridCell {
  torch::Tensor image;  ///< (C,H,W)
  std::int64_t row = 0;
  std::int64_t col = 0;
  bool success = false;    ///< green border when true, red otherwise
  std::string annotation;  ///< drawn in the upper-left corner
};

struct GridLayout {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t scale = 4;
  std::int64_t border = 2;
  bool skip_diagonal = false;  ///< targeted grids leave (i,i) empty

  std::int64_t expected_cells() const { return rows * cols - (skip_diagonal ? std::min(rows, cols) : 0); }
};

enum class AnnotationSource { prediction, worker_label };

/// Renders a PNG; throws ValidationError when the cells do not fill the layout exactly.
std::vector<std::uint8_t> export_grid(std::span<const GridCell> cells, const GridLayout& layout);

/// One cell per (source, target) pair from targeted results (first attempt per pair),
/// or per (source, replicate) for untargeted results laid out row-wise.
std::vector<GridCell> grid_cells_from_results(const attack::StoredResults& results,
                                              const std::map<std::string, VoteSummary>& votes,
                                              AnnotationSource source, const GridLayout& layout);

}  // namespace advgen::eval
