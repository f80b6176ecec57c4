#pragma once

#include "advgen/classifier.hpp"
#include "advgen/evaluation.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace advgen::annotate {

enum class TaskMode { label, ab };

std::string to_string(TaskMode mode);
TaskMode parse_task_mode(std::string_view text);

struct ServiceConfig {
  std::int64_t quorum = eval::kDefaultQuorum;
  std::int64_t page_size = 10;
  /// Outstanding pages older than this are released (0 = never).
  std::int64_t lease_seconds = 0;
  std::filesystem::path log_path;   ///< append-only JSONL event log
  std::filesystem::path image_dir;  ///< PNG store, one file per image id; empty keeps PNGs in memory
  /// Seconds since the epoch; injectable so replayed logs are reproducible.
  std::function<std::int64_t()> clock;
  /// Test hook run after an event is durably appended and before it is applied.
  std::function<void(std::string_view event)> after_append;
};

struct LabelItemInput {
  std::string id;
  std::vector<std::uint8_t> png;
};

struct AbItemInput {
  std::string pair_id;
  std::vector<std::uint8_t> left_png;
  std::vector<std::uint8_t> right_png;
  std::int64_t synthetic_position = 0;
};

struct BatchInput {
  TaskMode mode = TaskMode::label;
  std::int64_t class_count = 2;
  std::vector<LabelItemInput> images;
  std::vector<AbItemInput> pairs;

  nlohmann::json to_json() const;  ///< HTTP body form, PNGs base64-encoded
  static BatchInput from_json(const nlohmann::json& j);
};

struct PageItem {
  std::string id;
  std::int64_t class_count = 0;  ///< label mode: options are 0..K-1 plus NA
  std::string image_url;         ///< label mode
  std::string left_url;          ///< ab mode
  std::string right_url;         ///< ab mode
};

struct TaskPage {
  std::string page_id;
  std::string worker;
  TaskMode mode = TaskMode::label;
  std::vector<PageItem> items;

  nlohmann::json to_json() const;
  static TaskPage from_json(const nlohmann::json& j);
};

struct SubmitAck {
  std::string page_id;
  std::int64_t records = 0;
  bool duplicate = false;  ///< page already closed with identical answers
};

struct Stats {
  std::int64_t items_total = 0;
  std::int64_t pending = 0;
  std::int64_t complete = 0;
  std::int64_t outstanding_pages = 0;
  std::map<std::string, std::int64_t> per_worker;  ///< submitted answers per worker
  eval::AgreementHistogram histogram;              ///< completed label-mode images

  nlohmann::json to_json() const;
};

/// Local stand-in for the crowdsourcing backend. Every state transition is an event
/// appended (and fsync'ed) to the log before it is applied, and the in-memory state
/// is rebuilt by replaying the log on construction. One mutex serializes writers.
class AnnotationService {
 public:
  explicit AnnotationService(ServiceConfig config);
  ~AnnotationService();

  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  /// Returns the batch id (content hash). Re-enqueueing identical content is a
  /// no-op; an existing id with different content throws ValidationError.
  std::string enqueue_batch(const BatchInput& batch);

  /// Up to page_size items the worker has never been assigned, most-needed first;
  /// nullopt when nothing is eligible. A final page may be short when fewer than
  /// page_size items remain eligible for this worker.
  std::optional<TaskPage> next_page(const std::string& worker, TaskMode mode = TaskMode::label);

  /// Labels are classes or eval::kNA for label pages and positions {0,1} for A/B
  /// pages. Throws ValidationError for partial/invalid answers, StalePageError for
  /// unknown or foreign pages, ConflictError for pages whose lease expired.
  SubmitAck submit_page(const std::string& worker, const std::string& page_id,
                        const std::vector<std::int64_t>& labels);

  Stats stats() const;
  std::vector<eval::AnnotationRecord> records() const;
  std::map<std::string, eval::VoteSummary> votes() const;
  std::vector<eval::AbPair> ab_key() const;
  std::optional<std::vector<std::uint8_t>> image_png(const std::string& image_id) const;

  /// Canonical serialization of the derived state; equal iff states are equal.
  std::string state_digest() const;

  const ServiceConfig& config() const noexcept { return config_; }

 private:
  struct Item {
    std::string id;
    TaskMode mode = TaskMode::label;
    std::int64_t class_count = 0;
    std::string hash;
    std::int64_t order = 0;
    std::string left_id, right_id;
    std::int64_t synthetic_position = 0;
    std::set<std::string> seen_by;    ///< every worker ever assigned
    std::int64_t outstanding = 0;     ///< open page slots
    std::vector<std::pair<std::string, std::int64_t>> answers;  ///< (worker, label)
  };
  struct Page {
    std::string id;
    std::string worker;
    TaskMode mode = TaskMode::label;
    std::vector<std::string> items;
    std::int64_t issued = 0;
    bool open = true;
    bool expired = false;
    std::vector<std::int64_t> labels;
  };

  void append(const nlohmann::json& event);
  void apply(const nlohmann::json& event);
  void expire_stale(std::int64_t now);
  std::int64_t now() const;
  void store_png(const std::string& id, const std::vector<std::uint8_t>& png);
  TaskPage make_page_view(const Page& page) const;

  ServiceConfig config_;
  std::FILE* log_ = nullptr;
  mutable std::mutex mutex_;
  std::map<std::string, Item> items_;
  std::map<std::string, Page> pages_;
  std::set<std::string> batches_;
  std::vector<eval::AnnotationRecord> records_;
  std::map<std::string, std::vector<std::uint8_t>> memory_images_;
  std::int64_t next_order_ = 0;
  std::int64_t page_counter_ = 0;
};

// -- A/B pairing ------------------------------------------------------------------

struct AbPairing {
  std::vector<AbItemInput> items;
  std::vector<eval::AbPair> key;
};

/// Pairs each synthetic image with a distinct random real image (without
/// replacement while the pool lasts) and randomizes left/right under `seed`.
AbPairing make_ab_pairs(const std::vector<std::string>& synthetic_ids, const torch::Tensor& synthetic,
                        const torch::Tensor& real, std::uint64_t seed);

// -- simulated workers -------------------------------------------------------------

/// Answers one page item; for A/B items the return value is a position.
using WorkerPolicy = std::function<std::int64_t(const PageItem& item)>;

/// Always the ground-truth label (or the synthetic position for A/B items).
WorkerPolicy ground_truth_worker(std::map<std::string, std::int64_t> truth);
/// Ground truth flipped with probability p to a uniformly chosen other class.
WorkerPolicy noisy_worker(std::map<std::string, std::int64_t> truth, double flip_probability,
                          std::int64_t class_count, std::uint64_t seed);
/// Labels with an independent classifier's argmax.
WorkerPolicy classifier_worker(clf::ClassifierPtr f, std::map<std::string, torch::Tensor> images);
/// Uniform random A/B picks.
WorkerPolicy random_picker(std::uint64_t seed);

/// Round-robin over workers until every one of them receives an empty page.
/// Returns the number of pages submitted.
std::int64_t run_simulated_workers(AnnotationService& service,
                                   const std::vector<std::pair<std::string, WorkerPolicy>>& workers,
                                   TaskMode mode = TaskMode::label);

}  // namespace advgen::annotate
