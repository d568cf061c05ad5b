#include "annoforge/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "annoforge/error.hpp"

using nlohmann::json;

namespace annoforge {

namespace {

// Quantized so that decimal-symmetric confidences (0.45, 0.55) tie exactly.
double uncertainty(double confidence) {
  return std::round(std::abs(confidence - 0.5) * 1e12) / 1e12;
}

}  // namespace

std::string_view to_string(ConfidenceBand b) noexcept {
  switch (b) {
    case ConfidenceBand::AutoAccept: return "AutoAccept";
    case ConfidenceBand::Uncertain: return "Uncertain";
    case ConfidenceBand::Normal: return "Normal";
  }
  return "?";
}

std::string_view to_string(IngestKind k) noexcept {
  switch (k) {
    case IngestKind::AutoAccepted: return "AutoAccepted";
    case IngestKind::Queued: return "Queued";
    case IngestKind::Replaced: return "Replaced";
    case IngestKind::Superseded: return "Superseded";
    case IngestKind::Redundant: return "Redundant";
  }
  return "?";
}

void Thresholds::validate() const {
  if (!(0.0 <= uncertain_low && uncertain_low < uncertain_high && uncertain_high < auto_accept && auto_accept <= 1.0)) {
    fail(ErrorCode::ConfigError, "thresholds must satisfy 0 <= uncertain_low < uncertain_high < auto_accept <= 1");
  }
  if (!(unpredicted_score >= 0.0)) fail(ErrorCode::ConfigError, "unpredicted_score must be non-negative");
}

ConfidenceBand band(double confidence, const Thresholds& t) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    fail(ErrorCode::OutOfRange, "confidence " + json(confidence).dump() + " outside [0,1]");
  }
  if (confidence >= t.auto_accept) return ConfidenceBand::AutoAccept;
  if (confidence >= t.uncertain_low && confidence <= t.uncertain_high) return ConfidenceBand::Uncertain;
  return ConfidenceBand::Normal;
}

double score_image(std::span<const double> confidences, const Thresholds& t) {
  double best = std::numeric_limits<double>::infinity();
  for (double c : confidences) {
    if (band(c, t) == ConfidenceBand::AutoAccept) continue;
    best = std::min(best, uncertainty(c));
  }
  return std::isinf(best) ? t.unpredicted_score : best;
}

json to_json(const ModelPrediction& p) {
  json j{{"prediction_id", p.prediction_id},
         {"image_id", p.image_id},
         {"model_id", p.model_id},
         {"label_id", p.label_id},
         {"polygon", polygon_to_json(p.polygon)},
         {"confidence", p.confidence},
         {"training_instance", p.training_instance},
         {"produced_at", to_millis(p.produced_at)}};
  if (p.job_id) j["job_id"] = *p.job_id;
  return j;
}

ModelPrediction prediction_from_json(const json& j) {
  try {
    ModelPrediction p{PredictionId(j.at("prediction_id").get<std::string>()),
                      ImageId(j.at("image_id").get<std::string>()),
                      ModelId(j.at("model_id").get<std::string>()),
                      LabelId(j.at("label_id").get<std::string>()),
                      polygon_from_json(j.at("polygon")),
                      j.at("confidence").get<double>(),
                      j.at("training_instance").get<int>(),
                      from_millis(j.at("produced_at").get<std::int64_t>()),
                      std::nullopt};
    if (j.contains("job_id")) p.job_id = JobId(j.at("job_id").get<std::string>());
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("prediction: ") + e.what());
  }
}

json to_json(const IngestAction& a) {
  json j{{"action", to_string(a.kind)}, {"prediction_id", a.prediction_id}};
  if (a.annotation_id) j["annotation_id"] = *a.annotation_id;
  if (a.band) j["band"] = to_string(*a.band);
  return j;
}

json to_json(const QueueEntry& e) {
  return json{{"image_id", e.image_id},
              {"score", e.score},
              {"band", e.band ? json(to_string(*e.band)) : json(nullptr)},
              {"basis", e.basis}};
}

Scheduler::Scheduler(const Catalog& catalog, AnnotationStore& store, const Clock& clock, SchedulerOptions options)
    : catalog_(catalog), store_(store), clock_(clock), options_(std::move(options)) {
  options_.thresholds.validate();
  if (options_.journal_path) journal_ = std::make_unique<Journal>(*options_.journal_path);
}

void Scheduler::load() {
  if (!options_.journal_path) return;
  std::lock_guard lock(mu_);
  history_.clear();
  slots_.clear();
  for (const json& r : Journal::read_all(*options_.journal_path)) {
    try {
      ModelPrediction p = prediction_from_json(r.at("prediction"));
      const std::string action = r.at("action").get<std::string>();
      IngestKind kind = IngestKind::Queued;
      if (action == "AutoAccepted") kind = IngestKind::AutoAccepted;
      else if (action == "Replaced") kind = IngestKind::Replaced;
      else if (action == "Superseded") kind = IngestKind::Superseded;
      else if (action == "Redundant") kind = IngestKind::Redundant;
      const std::string& id = p.prediction_id.str();
      if (id.size() > 5 && id.compare(0, 5, "pred-") == 0) {
        next_seq_ = std::max<std::uint64_t>(next_seq_, std::stoull(id.substr(5)) + 1);
      }
      apply_locked(p, kind);
    } catch (const std::exception& e) {
      fail(ErrorCode::DataRootCorrupt, options_.journal_path->string() + ": " + e.what());
    }
  }
}

bool Scheduler::advance_slot_locked(const ModelPrediction& p) {
  Slot& slot = slots_[{p.image_id, p.model_id}];
  if (p.training_instance <= slot.training_instance) return false;
  const bool dropped = !slot.queued.empty();
  slot.training_instance = p.training_instance;
  slot.queued.clear();
  return dropped;
}

void Scheduler::apply_locked(const ModelPrediction& p, IngestKind kind) {
  history_.push_back(p);
  if (kind == IngestKind::Redundant || kind == IngestKind::Superseded) return;
  advance_slot_locked(p);
  Slot& slot = slots_[{p.image_id, p.model_id}];
  if (kind != IngestKind::AutoAccepted && p.training_instance == slot.training_instance) {
    slot.queued.push_back(history_.size() - 1);
  }
}

bool Scheduler::is_redundant(const ModelPrediction& p) const {
  const ImageRecord& image = catalog_.image(p.image_id);
  const geometry::GridSpec grid{image.width, image.height, geometry::kDefaultSupersample};
  for (const Annotation& a : store_.for_image(p.image_id)) {
    if (a.author.kind != AuthorKind::Human || a.status != AnnotationStatus::Accepted || a.label_id != p.label_id) {
      continue;
    }
    if (geometry::iou(a.polygon, p.polygon, grid) >= options_.redundancy_iou) return true;
  }
  return false;
}

IngestAction Scheduler::ingest_prediction(ModelPrediction pred) {
  catalog_.image(pred.image_id);
  catalog_.hierarchy().label(pred.label_id);
  const ConfidenceBand b = band(pred.confidence, options_.thresholds);

  std::lock_guard lock(mu_);
  if (pred.prediction_id.empty()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "pred-%08llu", static_cast<unsigned long long>(next_seq_++));
    pred.prediction_id = PredictionId(buf);
  }
  if (pred.produced_at == Timestamp{}) pred.produced_at = clock_.now();

  IngestAction action{IngestKind::Queued, pred.prediction_id, std::nullopt, b};
  const auto slot_it = slots_.find({pred.image_id, pred.model_id});
  const bool newer = slot_it == slots_.end() || pred.training_instance > slot_it->second.training_instance;
  const bool replaces = newer && slot_it != slots_.end() && !slot_it->second.queued.empty();
  const bool older = slot_it != slots_.end() && pred.training_instance < slot_it->second.training_instance;

  if (is_redundant(pred)) {
    action.kind = IngestKind::Redundant;
  } else if (b == ConfidenceBand::AutoAccept) {
    const Annotation a = store_.create(pred.image_id, pred.polygon, pred.label_id, Author::model(pred.model_id),
                                       pred.confidence);
    action.kind = IngestKind::AutoAccepted;
    action.annotation_id = a.annotation_id;
  } else if (older) {
    action.kind = IngestKind::Superseded;
  } else if (replaces) {
    action.kind = IngestKind::Replaced;
  }
  if (journal_) {
    json rec{{"action", to_string(action.kind)}, {"prediction", to_json(pred)}};
    if (action.annotation_id) rec["annotation_id"] = *action.annotation_id;
    journal_->append(rec);
  }
  apply_locked(pred, action.kind);
  return action;
}

QueueEntry Scheduler::entry_locked(const ImageId& image) const {
  QueueEntry e{image, options_.thresholds.unpredicted_score, std::nullopt, 0};
  double best = std::numeric_limits<double>::infinity();
  for (auto it = slots_.lower_bound({image, ModelId()}); it != slots_.end() && it->first.first == image; ++it) {
    for (std::size_t idx : it->second.queued) {
      const ModelPrediction& p = history_[idx];
      const ConfidenceBand b = band(p.confidence, options_.thresholds);
      if (b == ConfidenceBand::AutoAccept) continue;
      ++e.basis;
      const double d = uncertainty(p.confidence);
      if (d < best) {
        best = d;
        e.band = b;
      }
    }
  }
  if (e.basis > 0) e.score = best;
  return e;
}

QueueEntry Scheduler::queue_entry(const ImageId& image) const {
  catalog_.image(image);
  std::lock_guard lock(mu_);
  return entry_locked(image);
}

std::vector<QueueEntry> Scheduler::rank_folder(const FolderId& folder) const {
  const std::vector<ImageRecord> images = catalog_.images_in(folder);
  std::vector<QueueEntry> entries;
  {
    std::lock_guard lock(mu_);
    for (const ImageRecord& img : images) entries.push_back(entry_locked(img.image_id));
  }
  // An image needs a human unless a live human annotation exists, or every
  // known object on it is already covered by a live model annotation.
  std::erase_if(entries, [&](const QueueEntry& e) {
    bool any_live = false;
    for (const Annotation& a : store_.for_image(e.image_id)) {
      if (!is_live(a.status)) continue;
      if (a.author.kind == AuthorKind::Human) return true;
      any_live = true;
    }
    return any_live && e.basis == 0;
  });
  std::sort(entries.begin(), entries.end(), [](const QueueEntry& a, const QueueEntry& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.image_id < b.image_id;
  });
  return entries;
}

std::vector<ImageId> Scheduler::priority_order(const FolderId& folder) const {
  std::vector<ImageId> out;
  for (const QueueEntry& e : rank_folder(folder)) out.push_back(e.image_id);
  return out;
}

std::vector<ModelPrediction> Scheduler::predictions(const std::optional<ModelId>& model,
                                                    const std::optional<JobId>& job) const {
  std::lock_guard lock(mu_);
  std::vector<ModelPrediction> out;
  for (const ModelPrediction& p : history_) {
    if (model && p.model_id != *model) continue;
    if (job && p.job_id != job) continue;
    out.push_back(p);
  }
  return out;
}

std::vector<ModelPrediction> Scheduler::pending_for(const ImageId& image) const {
  std::lock_guard lock(mu_);
  std::vector<ModelPrediction> out;
  for (auto it = slots_.lower_bound({image, ModelId()}); it != slots_.end() && it->first.first == image; ++it) {
    for (std::size_t idx : it->second.queued) out.push_back(history_[idx]);
  }
  return out;
}

}  // namespace annoforge
