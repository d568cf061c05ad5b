#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "annoforge/annotation.hpp"
#include "annoforge/catalog.hpp"
#include "annoforge/clock.hpp"
#include "annoforge/geometry.hpp"
#include "annoforge/ids.hpp"
#include "annoforge/journal.hpp"
#include "json.hpp"

namespace annoforge {

enum class ConfidenceBand { AutoAccept, Uncertain, Normal };

std::string_view to_string(ConfidenceBand b) noexcept;

struct Thresholds {
  double auto_accept = 0.80;
  double uncertain_low = 0.40;
  double uncertain_high = 0.60;
  double unpredicted_score = 0.15;

  /// Throws Error(ConfigError) unless 0 <= low < high < auto_accept <= 1.
  void validate() const;
};

/// Throws Error(OutOfRange) outside [0, 1].
ConfidenceBand band(double confidence, const Thresholds& t = {});

struct ModelPrediction {
  PredictionId prediction_id;
  ImageId image_id;
  ModelId model_id;
  LabelId label_id;
  geometry::Polygon polygon;
  double confidence = 0.0;
  int training_instance = 0;
  Timestamp produced_at{};
  std::optional<JobId> job_id;
};

nlohmann::json to_json(const ModelPrediction& p);
ModelPrediction prediction_from_json(const nlohmann::json& j);

enum class IngestKind { AutoAccepted, Queued, Replaced, Superseded, Redundant };

std::string_view to_string(IngestKind k) noexcept;

struct IngestAction {
  IngestKind kind = IngestKind::Queued;
  PredictionId prediction_id;
  std::optional<AnnotationId> annotation_id;  // AutoAccepted only
  std::optional<ConfidenceBand> band;
};

nlohmann::json to_json(const IngestAction& a);

struct QueueEntry {
  ImageId image_id;
  double score = 0.0;
  std::optional<ConfidenceBand> band;  // most uncertain object; none when unpredicted
  std::size_t basis = 0;
};

nlohmann::json to_json(const QueueEntry& e);

/// Min over non-AutoAccept predictions of |confidence - 0.5| (rounded to
/// 1e-12), or t.unpredicted_score when none remain.
double score_image(std::span<const double> confidences, const Thresholds& t = {});

struct SchedulerOptions {
  Thresholds thresholds;
  /// An accepted same-label human annotation at or above this IoU makes a
  /// prediction redundant.
  double redundancy_iou = 0.9;
  std::optional<std::filesystem::path> journal_path;
};

/// Uncertainty-sampling queue over model predictions.
///
/// Each (model, image) pair queues only the predictions of the newest
/// training instance seen for it. A prediction from an older instance is
/// Superseded: kept in the history but not queued. The full history feeds
/// evaluation.
class Scheduler {
 public:
  Scheduler(const Catalog& catalog, AnnotationStore& store, const Clock& clock, SchedulerOptions options = {});

  /// Replays the prediction journal. Does not re-create annotations.
  void load();

  /// Throws UnknownImage, UnknownLabel or OutOfRange.
  IngestAction ingest_prediction(ModelPrediction pred);

  /// Throws Error(UnknownFolder).
  std::vector<QueueEntry> rank_folder(const FolderId& folder) const;
  std::vector<ImageId> priority_order(const FolderId& folder) const;

  QueueEntry queue_entry(const ImageId& image) const;

  /// All ingested predictions in ingest order, optionally filtered.
  std::vector<ModelPrediction> predictions(const std::optional<ModelId>& model = {},
                                           const std::optional<JobId>& job = {}) const;
  std::vector<ModelPrediction> pending_for(const ImageId& image) const;

  const Thresholds& thresholds() const noexcept { return options_.thresholds; }

 private:
  struct Slot {
    int training_instance = 0;
    std::vector<std::size_t> queued;  // indices into history_
  };

  /// Returns true when the slot moved to a newer instance and dropped entries.
  bool advance_slot_locked(const ModelPrediction& p);
  QueueEntry entry_locked(const ImageId& image) const;
  bool is_redundant(const ModelPrediction& p) const;
  void apply_locked(const ModelPrediction& p, IngestKind kind);

  const Catalog& catalog_;
  AnnotationStore& store_;
  const Clock& clock_;
  SchedulerOptions options_;
  std::unique_ptr<Journal> journal_;

  mutable std::mutex mu_;
  std::vector<ModelPrediction> history_;
  std::map<std::pair<ImageId, ModelId>, Slot> slots_;
  std::uint64_t next_seq_ = 1;
};

}  // namespace annoforge
