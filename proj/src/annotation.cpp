#include "advgen/annotation.hpp"

#include "advgen/error.hpp"
#include "advgen/hash.hpp"
#include "advgen/image.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>

#include <unistd.h>

namespace advgen::annotate {

using nlohmann::json;

std::string to_string(TaskMode mode) { return mode == TaskMode::label ? "label" : "ab"; }

TaskMode parse_task_mode(std::string_view text) {
  if (text == "label") return TaskMode::label;
  if (text == "ab") return TaskMode::ab;
  throw ValidationError("unknown task mode '" + std::string(text) + "'");
}

namespace {

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id.front() == '.') return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

std::string png_hash(const std::vector<std::uint8_t>& png) { return sha256_hex(png); }

std::string left_id(const std::string& pair_id) { return pair_id + "-a"; }
std::string right_id(const std::string& pair_id) { return pair_id + "-b"; }

}  // namespace

// -- wire formats ---------------------------------------------------------------

json BatchInput::to_json() const {
  json j{{"mode", annotate::to_string(mode)}, {"class_count", class_count}};
  if (mode == TaskMode::label) {
    j["images"] = json::array();
    for (const auto& im : images) j["images"].push_back({{"id", im.id}, {"png", base64_encode(im.png)}});
  } else {
    j["pairs"] = json::array();
    for (const auto& p : pairs) {
      j["pairs"].push_back({{"pair_id", p.pair_id},
                            {"left_png", base64_encode(p.left_png)},
                            {"right_png", base64_encode(p.right_png)},
                            {"synthetic_position", p.synthetic_position}});
    }
  }
  return j;
}

BatchInput BatchInput::from_json(const json& j) {
  BatchInput b;
  try {
    b.mode = parse_task_mode(j.value("mode", std::string("label")));
    b.class_count = j.value("class_count", b.class_count);
    if (b.mode == TaskMode::label) {
      for (const auto& im : j.at("images")) {
        b.images.push_back({im.at("id").get<std::string>(), base64_decode(im.at("png").get<std::string>())});
      }
    } else {
      for (const auto& p : j.at("pairs")) {
        b.pairs.push_back({p.at("pair_id").get<std::string>(), base64_decode(p.at("left_png").get<std::string>()),
                           base64_decode(p.at("right_png").get<std::string>()),
                           p.at("synthetic_position").get<std::int64_t>()});
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed batch: ") + e.what());
  }
  return b;
}

json TaskPage::to_json() const {
  json items_json = json::array();
  for (const auto& it : items) {
    if (mode == TaskMode::label) {
      json options = json::array();
      for (std::int64_t k = 0; k < it.class_count; ++k) options.push_back(k);
      options.push_back("NA");
      items_json.push_back({{"id", it.id}, {"image_url", it.image_url}, {"options", options}});
    } else {
      items_json.push_back({{"id", it.id}, {"left_url", it.left_url}, {"right_url", it.right_url}});
    }
  }
  return {{"page_id", page_id}, {"worker", worker}, {"mode", annotate::to_string(mode)}, {"items", items_json}};
}

TaskPage TaskPage::from_json(const json& j) {
  TaskPage p;
  try {
    p.page_id = j.at("page_id").get<std::string>();
    p.worker = j.at("worker").get<std::string>();
    p.mode = parse_task_mode(j.at("mode").get<std::string>());
    for (const auto& it : j.at("items")) {
      PageItem item;
      item.id = it.at("id").get<std::string>();
      if (p.mode == TaskMode::label) {
        item.image_url = it.at("image_url").get<std::string>();
        item.class_count = static_cast<std::int64_t>(it.at("options").size()) - 1;
      } else {
        item.left_url = it.at("left_url").get<std::string>();
        item.right_url = it.at("right_url").get<std::string>();
      }
      p.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed page: ") + e.what());
  }
  return p;
}

json Stats::to_json() const {
  return {{"items_total", items_total},         {"pending", pending},
          {"complete", complete},               {"outstanding_pages", outstanding_pages},
          {"per_worker", per_worker},           {"agreement_histogram", histogram.to_json()}};
}

// -- service ----------------------------------------------------------------------

AnnotationService::AnnotationService(ServiceConfig config) : config_(std::move(config)) {
  if (config_.quorum < 1) throw ValidationError("quorum must be positive");
  if (config_.page_size < 1) throw ValidationError("page_size must be positive");
  if (config_.lease_seconds < 0) throw ValidationError("lease_seconds must be non-negative");
  if (!config_.image_dir.empty()) std::filesystem::create_directories(config_.image_dir);
  if (config_.log_path.empty()) return;
  if (config_.log_path.has_parent_path()) std::filesystem::create_directories(config_.log_path.parent_path());
  std::string content;
  {
    std::ifstream in(config_.log_path, std::ios::binary);
    content.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::size_t pos = 0;
  std::size_t good_end = 0;
  std::int64_t index = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    const auto end = nl == std::string::npos ? content.size() : nl;
    const auto line = content.substr(pos, end - pos);
    const auto next = nl == std::string::npos ? content.size() : nl + 1;
    ++index;
    if (!line.empty()) {
      json event;
      try {
        event = json::parse(line);
      } catch (const json::parse_error&) {
        // A torn final line from a crash mid-write is dropped; anything earlier is corruption.
        if (content.find_first_not_of('\n', next) != std::string::npos) {
          throw CorruptRecordError(index - 1, "unparsable event log line: " + line);
        }
        break;
      }
      try {
        apply(event);
      } catch (const std::out_of_range& e) {
        throw CorruptRecordError(index - 1, std::string("event refers to unknown state: ") + e.what());
      } catch (const json::exception& e) {
        throw CorruptRecordError(index - 1, std::string("malformed event: ") + e.what());
      }
    }
    pos = next;
    good_end = next;
  }
  if (good_end < content.size()) std::filesystem::resize_file(config_.log_path, good_end);
  log_ = std::fopen(config_.log_path.c_str(), "ab");
  if (!log_) throw Error("cannot open event log " + config_.log_path.string());
  if (good_end > 0 && content[good_end - 1] != '\n' && std::fputc('\n', log_) == EOF) {
    throw Error("cannot append to event log " + config_.log_path.string());
  }
}

AnnotationService::~AnnotationService() {
  if (log_) std::fclose(log_);
}

std::int64_t AnnotationService::now() const {
  if (config_.clock) return config_.clock();
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

void AnnotationService::append(const json& event) {
  const auto line = event.dump() + "\n";
  if (log_) {
    if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0 ||
        ::fsync(::fileno(log_)) != 0) {
      throw Error("cannot append to event log " + config_.log_path.string());
    }
  }
  if (config_.after_append) config_.after_append(line);
}

void AnnotationService::store_png(const std::string& id, const std::vector<std::uint8_t>& png) {
  if (config_.image_dir.empty()) {
    memory_images_[id] = png;
    return;
  }
  const auto path = config_.image_dir / (id + ".png");
  if (std::filesystem::exists(path)) return;
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void AnnotationService::apply(const json& event) {
  const auto ev = event.at("ev").get<std::string>();
  if (ev == "enqueue") {
    batches_.insert(event.at("batch").get<std::string>());
    const auto mode = parse_task_mode(event.at("mode").get<std::string>());
    const auto k = event.at("class_count").get<std::int64_t>();
    for (const auto& it : event.at("items")) {
      const auto id = it.at("id").get<std::string>();
      if (items_.contains(id)) continue;
      Item item;
      item.id = id;
      item.mode = mode;
      item.class_count = k;
      item.hash = it.at("hash").get<std::string>();
      item.order = next_order_++;
      if (mode == TaskMode::ab) {
        item.left_id = left_id(id);
        item.right_id = right_id(id);
        item.synthetic_position = it.at("synthetic_position").get<std::int64_t>();
      }
      items_.emplace(id, std::move(item));
    }
  } else if (ev == "assign") {
    Page page;
    page.id = event.at("page").get<std::string>();
    page.worker = event.at("worker").get<std::string>();
    page.mode = parse_task_mode(event.at("mode").get<std::string>());
    page.items = event.at("items").get<std::vector<std::string>>();
    page.issued = event.at("ts").get<std::int64_t>();
    for (const auto& id : page.items) {
      auto& item = items_.at(id);
      item.seen_by.insert(page.worker);
      ++item.outstanding;
    }
    ++page_counter_;
    pages_.emplace(page.id, std::move(page));
  } else if (ev == "submit") {
    auto& page = pages_.at(event.at("page").get<std::string>());
    if (!page.open) return;  // resubmission already applied
    page.open = false;
    page.labels = event.at("labels").get<std::vector<std::int64_t>>();
    const auto ts = event.at("ts").get<std::int64_t>();
    for (std::size_t i = 0; i < page.items.size(); ++i) {
      auto& item = items_.at(page.items[i]);
      --item.outstanding;
      item.answers.emplace_back(page.worker, page.labels[i]);
      records_.push_back({item.id, page.worker, page.labels[i],
                          page.mode == TaskMode::label ? eval::RecordMode::label : eval::RecordMode::ab_pick, ts});
    }
  } else if (ev == "expire") {
    auto& page = pages_.at(event.at("page").get<std::string>());
    if (!page.open) return;
    page.open = false;
    page.expired = true;
    for (const auto& id : page.items) --items_.at(id).outstanding;
  } else {
    throw CorruptRecordError(-1, "unknown event '" + ev + "'");
  }
}

void AnnotationService::expire_stale(std::int64_t now) {
  if (config_.lease_seconds <= 0) return;
  std::vector<std::string> stale;
  for (const auto& [id, page] : pages_) {
    if (page.open && now - page.issued >= config_.lease_seconds) stale.push_back(id);
  }
  for (const auto& id : stale) {
    json event{{"ts", now}, {"ev", "expire"}, {"page", id}};
    append(event);
    apply(event);
  }
}

std::string AnnotationService::enqueue_batch(const BatchInput& batch) {
  if (batch.class_count < 2) throw ValidationError("class_count must be at least 2");
  json items = json::array();
  std::set<std::string> ids;
  std::vector<std::pair<std::string, const std::vector<std::uint8_t>*>> pngs;
  const auto check_png = [](const std::vector<std::uint8_t>& png, const std::string& id) {
    try {
      decode_png(png);
    } catch (const Error& e) {
      throw ValidationError("image " + id + " is not a readable PNG: " + e.what());
    }
  };
  if (batch.mode == TaskMode::label) {
    if (!batch.pairs.empty()) throw ValidationError("label batches carry images, not pairs");
    for (const auto& im : batch.images) {
      if (!valid_id(im.id)) throw ValidationError("invalid image id '" + im.id + "'");
      if (!ids.insert(im.id).second) throw ValidationError("duplicate image id '" + im.id + "' in batch");
      check_png(im.png, im.id);
      items.push_back({{"id", im.id}, {"hash", png_hash(im.png)}});
      pngs.emplace_back(im.id, &im.png);
    }
  } else {
    if (!batch.images.empty()) throw ValidationError("A/B batches carry pairs, not images");
    for (const auto& p : batch.pairs) {
      if (!valid_id(p.pair_id)) throw ValidationError("invalid pair id '" + p.pair_id + "'");
      if (!ids.insert(p.pair_id).second) throw ValidationError("duplicate pair id '" + p.pair_id + "' in batch");
      if (p.synthetic_position != 0 && p.synthetic_position != 1) throw ValidationError("synthetic_position is 0 or 1");
      check_png(p.left_png, p.pair_id);
      check_png(p.right_png, p.pair_id);
      items.push_back({{"id", p.pair_id},
                       {"hash", sha256_hex(png_hash(p.left_png) + png_hash(p.right_png) +
                                           std::to_string(p.synthetic_position))},
                       {"synthetic_position", p.synthetic_position}});
      pngs.emplace_back(left_id(p.pair_id), &p.left_png);
      pngs.emplace_back(right_id(p.pair_id), &p.right_png);
    }
  }
  if (items.empty()) throw ValidationError("empty batch");
  const auto batch_id =
      sha256_hex(json{{"mode", to_string(batch.mode)}, {"class_count", batch.class_count}, {"items", items}}.dump());

  std::lock_guard lock(mutex_);
  if (batches_.contains(batch_id)) return batch_id;
  for (const auto& it : items) {
    const auto found = items_.find(it.at("id").get<std::string>());
    if (found == items_.end()) continue;
    if (found->second.hash != it.at("hash").get<std::string>() || found->second.mode != batch.mode) {
      throw ValidationError("id '" + found->first + "' already enqueued with different content");
    }
  }
  for (const auto& [id, png] : pngs) store_png(id, *png);
  json event{{"ts", now()},
             {"ev", "enqueue"},
             {"batch", batch_id},
             {"mode", to_string(batch.mode)},
             {"class_count", batch.class_count},
             {"items", items}};
  append(event);
  apply(event);
  return batch_id;
}

TaskPage AnnotationService::make_page_view(const Page& page) const {
  TaskPage view;
  view.page_id = page.id;
  view.worker = page.worker;
  view.mode = page.mode;
  for (const auto& id : page.items) {
    const auto& item = items_.at(id);
    PageItem pi;
    pi.id = id;
    pi.class_count = item.class_count;
    if (page.mode == TaskMode::label) {
      pi.image_url = "/images/" + id + ".png";
    } else {
      pi.left_url = "/images/" + item.left_id + ".png";
      pi.right_url = "/images/" + item.right_id + ".png";
    }
    view.items.push_back(std::move(pi));
  }
  return view;
}

std::optional<TaskPage> AnnotationService::next_page(const std::string& worker, TaskMode mode) {
  if (worker.empty()) throw ValidationError("worker id must be non-empty");
  std::lock_guard lock(mutex_);
  const auto t = now();
  expire_stale(t);
  std::vector<const Item*> eligible;
  for (const auto& [id, item] : items_) {
    if (item.mode != mode || item.seen_by.contains(worker)) continue;
    const auto filled = static_cast<std::int64_t>(item.answers.size()) + item.outstanding;
    if (filled < config_.quorum) eligible.push_back(&item);
  }
  if (eligible.empty()) return std::nullopt;
  // Images closest to quorum first so partially labeled images complete early.
  std::stable_sort(eligible.begin(), eligible.end(), [](const Item* a, const Item* b) {
    const auto fa = static_cast<std::int64_t>(a->answers.size()) + a->outstanding;
    const auto fb = static_cast<std::int64_t>(b->answers.size()) + b->outstanding;
    return fa != fb ? fa > fb : a->order < b->order;
  });
  if (static_cast<std::int64_t>(eligible.size()) > config_.page_size) {
    eligible.resize(static_cast<std::size_t>(config_.page_size));
  }
  std::vector<std::string> ids;
  for (const auto* item : eligible) ids.push_back(item->id);
  const auto page_id = "page-" + std::to_string(page_counter_ + 1);
  json event{{"ts", t}, {"ev", "assign"}, {"page", page_id}, {"worker", worker}, {"mode", to_string(mode)},
             {"items", ids}};
  append(event);
  apply(event);
  return make_page_view(pages_.at(page_id));
}

SubmitAck AnnotationService::submit_page(const std::string& worker, const std::string& page_id,
                                         const std::vector<std::int64_t>& labels) {
  std::lock_guard lock(mutex_);
  const auto t = now();
  expire_stale(t);
  const auto it = pages_.find(page_id);
  if (it == pages_.end()) throw StalePageError("unknown page '" + page_id + "'");
  const auto& page = it->second;
  if (page.worker != worker) throw StalePageError("page '" + page_id + "' belongs to another worker");
  if (!page.open) {
    if (page.expired) throw ConflictError("lease on page '" + page_id + "' expired; fetch a new page");
    if (page.labels == labels) {
      return {page_id, static_cast<std::int64_t>(labels.size()), true};
    }
    throw StalePageError("page '" + page_id + "' was already submitted with different answers");
  }
  if (labels.size() != page.items.size()) {
    throw ValidationError("page '" + page_id + "' needs " + std::to_string(page.items.size()) + " answers, got " +
                          std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& item = items_.at(page.items[i]);
    const auto v = labels[i];
    const bool ok = page.mode == TaskMode::label ? (v == eval::kNA || (v >= 0 && v < item.class_count))
                                                 : (v == 0 || v == 1);
    if (!ok) throw ValidationError("invalid answer " + std::to_string(v) + " for item " + item.id);
  }
  json event{{"ts", t}, {"ev", "submit"}, {"page", page_id}, {"worker", worker}, {"labels", labels}};
  append(event);
  apply(event);
  return {page_id, static_cast<std::int64_t>(labels.size()), false};
}

Stats AnnotationService::stats() const {
  std::lock_guard lock(mutex_);
  Stats s;
  s.items_total = static_cast<std::int64_t>(items_.size());
  for (const auto& [id, item] : items_) {
    if (static_cast<std::int64_t>(item.answers.size()) >= config_.quorum) {
      ++s.complete;
    } else {
      ++s.pending;
    }
  }
  for (const auto& [id, page] : pages_) {
    if (page.open) ++s.outstanding_pages;
  }
  for (const auto& r : records_) ++s.per_worker[r.worker_id];
  s.histogram = eval::agreement_histogram(eval::summarize_votes(records_, config_.quorum), config_.quorum);
  return s;
}

std::vector<eval::AnnotationRecord> AnnotationService::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::map<std::string, eval::VoteSummary> AnnotationService::votes() const {
  std::lock_guard lock(mutex_);
  return eval::summarize_votes(records_, config_.quorum);
}

std::vector<eval::AbPair> AnnotationService::ab_key() const {
  std::lock_guard lock(mutex_);
  std::vector<eval::AbPair> key;
  for (const auto& [id, item] : items_) {
    if (item.mode != TaskMode::ab) continue;
    const bool left = item.synthetic_position == 0;
    key.push_back({id, left ? item.left_id : item.right_id, left ? item.right_id : item.left_id,
                   item.synthetic_position});
  }
  return key;
}

std::optional<std::vector<std::uint8_t>> AnnotationService::image_png(const std::string& image_id) const {
  if (!valid_id(image_id)) return std::nullopt;
  std::lock_guard lock(mutex_);
  if (config_.image_dir.empty()) {
    const auto it = memory_images_.find(image_id);
    if (it == memory_images_.end()) return std::nullopt;
    return it->second;
  }
  std::ifstream in(config_.image_dir / (image_id + ".png"), std::ios::binary);
  if (!in) return std::nullopt;
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::string AnnotationService::state_digest() const {
  std::lock_guard lock(mutex_);
  json items_json = json::array();
  for (const auto& [id, item] : items_) {
    json answers = json::array();
    for (const auto& [w, l] : item.answers) answers.push_back({w, l});
    items_json.push_back({{"id", id},
                          {"mode", to_string(item.mode)},
                          {"class_count", item.class_count},
                          {"hash", item.hash},
                          {"order", item.order},
                          {"synthetic_position", item.synthetic_position},
                          {"seen_by", item.seen_by},
                          {"outstanding", item.outstanding},
                          {"answers", answers}});
  }
  json pages_json = json::array();
  for (const auto& [id, page] : pages_) {
    pages_json.push_back({{"id", id},
                          {"worker", page.worker},
                          {"mode", to_string(page.mode)},
                          {"items", page.items},
                          {"issued", page.issued},
                          {"open", page.open},
                          {"expired", page.expired},
                          {"labels", page.labels}});
  }
  json records_json = json::array();
  for (const auto& r : records_) {
    records_json.push_back({r.image_id, r.worker_id, r.label, eval::to_string(r.mode), r.timestamp});
  }
  return json{{"items", items_json},
              {"pages", pages_json},
              {"batches", batches_},
              {"records", records_json},
              {"next_order", next_order_},
              {"page_counter", page_counter_}}
      .dump();
}

// -- A/B pairing ------------------------------------------------------------------

AbPairing make_ab_pairs(const std::vector<std::string>& synthetic_ids, const torch::Tensor& synthetic,
                        const torch::Tensor& real, std::uint64_t seed) {
  if (synthetic.dim() != 4 || real.dim() != 4) throw DimensionError("A/B pairing takes (N,C,H,W) batches");
  if (synthetic.size(0) != static_cast<std::int64_t>(synthetic_ids.size())) {
    throw DimensionError("one id per synthetic image expected");
  }
  if (synthetic.sizes().slice(1) != real.sizes().slice(1)) throw DimensionError("synthetic and real shapes differ");
  if (real.size(0) == 0) throw ValidationError("real pool is empty");
  auto gen = make_generator(seed);
  const auto n = synthetic.size(0);
  std::vector<std::int64_t> partners;
  while (static_cast<std::int64_t>(partners.size()) < n) {
    auto perm = torch::randperm(real.size(0), gen, index_options());
    const auto* p = perm.data_ptr<std::int64_t>();
    for (std::int64_t i = 0; i < perm.numel() && static_cast<std::int64_t>(partners.size()) < n; ++i) {
      partners.push_back(p[i]);
    }
  }
  auto positions = torch::randint(2, {n}, gen, index_options());
  AbPairing out;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& sid = synthetic_ids[static_cast<std::size_t>(i)];
    const auto pos = positions[i].item<std::int64_t>();
    const auto real_id = "real-" + std::to_string(partners[static_cast<std::size_t>(i)]);
    auto syn_png = encode_png(synthetic[i]);
    auto real_png = encode_png(real[partners[static_cast<std::size_t>(i)]]);
    AbItemInput item;
    item.pair_id = "ab-" + sid;
    item.synthetic_position = pos;
    item.left_png = pos == 0 ? syn_png : real_png;
    item.right_png = pos == 0 ? real_png : syn_png;
    out.items.push_back(std::move(item));
    out.key.push_back({"ab-" + sid, sid, real_id, pos});
  }
  return out;
}

// -- simulated workers -------------------------------------------------------------

WorkerPolicy ground_truth_worker(std::map<std::string, std::int64_t> truth) {
  return [truth = std::move(truth)](const PageItem& item) {
    const auto it = truth.find(item.id);
    return it == truth.end() ? eval::kNA : it->second;
  };
}

WorkerPolicy noisy_worker(std::map<std::string, std::int64_t> truth, double flip_probability,
                          std::int64_t class_count, std::uint64_t seed) {
  if (!(flip_probability >= 0 && flip_probability <= 1)) throw ValidationError("flip probability must lie in [0,1]");
  if (class_count < 2) throw ValidationError("class_count must be at least 2");
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [truth = std::move(truth), flip_probability, class_count, rng](const PageItem& item) {
    const auto it = truth.find(item.id);
    const auto label = it == truth.end() ? eval::kNA : it->second;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(*rng) >= flip_probability || label < 0) return label;
    std::uniform_int_distribution<std::int64_t> other(0, class_count - 2);
    const auto pick = other(*rng);
    return pick >= label ? pick + 1 : pick;
  };
}

WorkerPolicy classifier_worker(clf::ClassifierPtr f, std::map<std::string, torch::Tensor> images) {
  if (!f) throw ValidationError("classifier worker needs a classifier");
  return [f = std::move(f), images = std::move(images)](const PageItem& item) {
    const auto it = images.find(item.id);
    if (it == images.end()) return eval::kNA;
    torch::NoGradGuard no_grad;
    return f->predict(it->second.unsqueeze(0))[0].item<std::int64_t>();
  };
}

WorkerPolicy random_picker(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng](const PageItem&) { return static_cast<std::int64_t>((*rng)() >> 63); };
}

std::int64_t run_simulated_workers(AnnotationService& service,
                                   const std::vector<std::pair<std::string, WorkerPolicy>>& workers, TaskMode mode) {
  std::int64_t submitted = 0;
  bool progress = true;
  while (progress) {
    progress = false;
    for (const auto& [name, policy] : workers) {
      auto page = service.next_page(name, mode);
      if (!page) continue;
      std::vector<std::int64_t> labels;
      for (const auto& item : page->items) labels.push_back(policy(item));
      service.submit_page(name, page->page_id, labels);
      ++submitted;
      progress = true;
    }
  }
  return submitted;
}

}  // namespace advgen::annotate
