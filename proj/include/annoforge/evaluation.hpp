#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "annoforge/active_learning.hpp"
#include "annoforge/annotation.hpp"
#include "annoforge/catalog.hpp"
#include "annoforge/clock.hpp"
#include "annoforge/dataset.hpp"
#include "annoforge/geometry.hpp"
#include "annoforge/ids.hpp"
#include "annoforge/journal.hpp"
#include "json.hpp"

namespace annoforge {

struct MatchPair {
  AnnotationId annotation_id;
  PredictionId prediction_id;
  double iou = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<AnnotationId> unmatched_ground_truth;
  std::vector<PredictionId> unmatched_predictions;
};

/// Greedy label-gated matching: every same-label pair with IoU > min_iou,
/// taken in order of IoU descending, then lower annotation id, then lower
/// prediction id, while both sides are unclaimed.
/// Throws Error(MixedImages) unless all items share one image.
MatchResult match_predictions(std::span<const Annotation> ground_truth, std::span<const ModelPrediction> predictions,
                              const geometry::GridSpec& grid, double min_iou = 0.0);

/// Mean over matched IoUs plus a zero for each missed ground truth. Summed
/// in sorted order so the result does not depend on input order.
double mean_with_misses(std::vector<double> matched_ious, std::size_t missed);

struct ClassReport {
  ModelId model_id;
  LabelId label_id;
  double mean_iou = 0.0;
  std::size_t matched = 0;
  std::size_t missed_ground_truth = 0;
  std::size_t spurious_predictions = 0;
  int training_instance = 0;
};

nlohmann::json to_json(const ClassReport& r);

/// Per-class report over `images`. Ground truth is each image's Accepted
/// human annotations; predictions are those of (model, instance) in
/// `predictions`. Classes with neither ground truth nor predictions are
/// omitted. Throws Error(NoPredictions) when no prediction falls in scope.
std::vector<ClassReport> per_class_report(const ModelId& model, int training_instance,
                                          std::span<const ImageId> images, const Catalog& catalog,
                                          const AnnotationStore& store,
                                          std::span<const ModelPrediction> predictions, double min_iou = 0.0);

/// Report over every image of the selected folders, restricted to the
/// selection's label filter. Throws EmptySelection, UnknownFolder,
/// UnknownLabel or NoPredictions.
std::vector<ClassReport> per_class_report(const ModelId& model, int training_instance, const DatasetSelection& scope,
                                          const Catalog& catalog, const AnnotationStore& store,
                                          std::span<const ModelPrediction> predictions, double min_iou = 0.0);

struct MetricsRecord {
  JobId job_id;
  ModelId model_id;
  std::optional<LabelId> label_id;  // nullopt is the ALL aggregate
  int training_instance = 0;
  double mean_iou = 0.0;
  std::size_t sample_count = 0;
  Timestamp recorded_at{};
};

nlohmann::json to_json(const MetricsRecord& r);
/// Throws Error(ValidationError).
MetricsRecord metrics_from_json(const nlohmann::json& j);

struct TimelinePoint {
  int training_instance = 0;
  double mean_iou = 0.0;
  std::size_t sample_count = 0;
};

struct Timeline {
  std::vector<TimelinePoint> points;
  bool plateaued = false;
};

nlohmann::json to_json(const Timeline& t);

/// True when there are at least three points and both of the last two
/// deltas are below `epsilon` in magnitude.
bool is_plateau(std::span<const TimelinePoint> points, double epsilon = 0.01);

/// One point per training instance, ascending. Within an instance the latest
/// record per class wins; the overall value is the sample-weighted mean of
/// the per-class values (an unweighted mean when all counts are zero). An
/// instance with only ALL records uses the latest of those.
/// Throws Error(NoData).
Timeline model_timeline(const ModelId& model, std::span<const MetricsRecord> records);
Timeline class_timeline(const ModelId& model, const LabelId& label, std::span<const MetricsRecord> records);

/// Append-only metrics store.
class MetricsLog {
 public:
  explicit MetricsLog(std::optional<std::filesystem::path> journal_path = {});

  void load();
  void append(std::span<const MetricsRecord> records);
  std::vector<MetricsRecord> records(const std::optional<ModelId>& model = {}) const;

 private:
  std::optional<std::filesystem::path> journal_path_;
  std::unique_ptr<Journal> journal_;
  mutable std::mutex mu_;
  std::vector<MetricsRecord> records_;
};

}  // namespace annoforge
