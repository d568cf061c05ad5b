#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "annoforge/active_learning.hpp"
#include "annoforge/annotation.hpp"
#include "annoforge/catalog.hpp"
#include "annoforge/clock.hpp"
#include "annoforge/dataset.hpp"
#include "annoforge/error.hpp"
#include "annoforge/evaluation.hpp"
#include "annoforge/ids.hpp"
#include "annoforge/journal.hpp"
#include "json.hpp"

namespace annoforge {

struct ModelEntry {
  ModelId model_id;
  std::string display_name;
  ExportFormat adapter_format = ExportFormat::Coco;
  /// Opaque apart from the required `learning_rate` and `epochs` keys.
  nlohmann::json config = nlohmann::json::object();
};

nlohmann::json to_json(const ModelEntry& m);
/// Throws ValidationError, UnsupportedFormat.
ModelEntry model_entry_from_json(const nlohmann::json& j);

/// Lowercase ASCII letters and digits, other runs collapsed to '_'.
std::string slugify(std::string_view name);

/// The four pre-trained detectors shipped as registry seed data.
std::vector<ModelEntry> default_models();

enum class JobState { Pending, Claimed, Running, Completed, Failed };

std::string_view to_string(JobState s) noexcept;
JobState parse_job_state(std::string_view s);

struct TrainingJob {
  JobId job_id;
  ModelId model_id;
  DatasetSelection selection;
  SplitResult split;
  nlohmann::json config = nlohmann::json::object();
  JobState state = JobState::Pending;
  int training_instance = 0;
  std::optional<WorkerId> worker_id;
  std::string failure_reason;
  std::optional<std::string> bundle_path;
  Timestamp created_at{};
  Timestamp updated_at{};
  Timestamp last_progress_at{};
};

nlohmann::json to_json(const TrainingJob& j);
TrainingJob job_from_json(const nlohmann::json& j);

struct JobOutcome {
  bool success = true;
  std::string reason;

  static JobOutcome completed() { return {true, {}}; }
  static JobOutcome failed(std::string reason) { return {false, std::move(reason)}; }
};

/// One prediction as a worker sends it.
struct PredictionInput {
  ImageId image_id;
  LabelId label_id;
  geometry::Polygon polygon;
  double confidence = 0.0;
};

nlohmann::json to_json(const PredictionInput& p);

/// Parses `{image_id, label, polygon | mask_rle: {size: [h, w], counts}, confidence}`.
/// Masks become the outline of their largest component. Throws
/// ValidationError, DegeneratePolygon.
PredictionInput prediction_input_from_json(const nlohmann::json& j);

struct MetricsInput {
  std::optional<LabelId> label_id;  // nullopt is ALL
  double mean_iou = 0.0;
  std::size_t sample_count = 0;
};

nlohmann::json to_json(const MetricsInput& m);
/// `{label, mean_iou, sample_count}`; label "ALL" or absent is the aggregate.
/// Throws ValidationError.
MetricsInput metrics_input_from_json(const nlohmann::json& j);

/// Per-item result of a prediction batch: an action or an error.
struct PredictionOutcome {
  std::optional<IngestAction> action;
  std::optional<ErrorCode> error;
  std::string message;
};

nlohmann::json to_json(const PredictionOutcome& o);

inline constexpr Millis kDefaultAbandonAfter = std::chrono::minutes(60);

struct GatewayOptions {
  Millis abandon_after = kDefaultAbandonAfter;
  /// Registry and job journal. Nothing is persisted when unset.
  std::optional<std::filesystem::path> journal_path;
  /// Job bundles go to `<jobs_dir>/<job_id>`. Skipped when unset.
  std::optional<std::filesystem::path> jobs_dir;
};

/// Model registry and pull-based job queue for external workers.
///
/// Jobs move Pending -> Claimed -> Running -> Completed | Failed. A Claimed
/// or Running job without progress for `abandon_after` returns to Pending.
/// Calls within one job must be issued in order by its worker.
class Gateway {
 public:
  Gateway(const Catalog& catalog, AnnotationStore& store, Scheduler& scheduler, MetricsLog& metrics,
          const Clock& clock, GatewayOptions options = {});

  /// Replays the journal.
  void load();

  /// Registers every entry whose display name is not taken yet.
  void seed(std::span<const ModelEntry> entries);

  /// The id is the slug of the display name. Throws DuplicateModel,
  /// MissingConfigKey, ValidationError.
  ModelId register_model(ModelEntry entry);
  std::vector<ModelEntry> models() const;
  /// Throws Error(UnknownModel).
  ModelEntry model(const ModelId& id) const;

  /// Throws UnknownModel, EmptySelection, UnknownFolder, UnknownLabel,
  /// InsufficientData, OutOfRange.
  TrainingJob create_training_job(const ModelId& model, const DatasetSelection& selection, double ratio,
                                  std::uint64_t seed);

  /// Oldest Pending job, now Claimed by `worker`. nullopt when none.
  std::optional<TrainingJob> claim_next_job(const WorkerId& worker);

  /// Returns abandoned jobs to Pending; the count moved.
  std::size_t requeue_abandoned();

  /// All-or-nothing. Throws UnknownJob, IllegalState, UnknownClass,
  /// ValidationError.
  std::size_t post_metrics(const JobId& job, std::span<const MetricsInput> records);

  /// Throws UnknownJob or IllegalState for the batch; item failures are
  /// reported in place.
  std::vector<PredictionOutcome> post_predictions(const JobId& job, std::span<const PredictionInput> items);
  std::vector<PredictionOutcome> post_predictions(const JobId& job, std::span<const nlohmann::json> items);

  /// Throws UnknownJob, IllegalState.
  TrainingJob complete_job(const JobId& job, const JobOutcome& outcome);

  /// Throws Error(UnknownJob).
  TrainingJob job(const JobId& id) const;
  std::vector<TrainingJob> jobs(const std::optional<ModelId>& model = {}) const;

 private:
  TrainingJob& find_locked(const JobId& id);
  /// Requeues `job` when abandoned; true if it moved.
  bool requeue_if_abandoned_locked(TrainingJob& job, Timestamp now);
  /// Moves a live job to Running and stamps progress. Throws IllegalState.
  TrainingJob& begin_post_locked(const JobId& id, Timestamp now);
  void record_job_locked(const TrainingJob& job);

  const Catalog& catalog_;
  AnnotationStore& store_;
  Scheduler& scheduler_;
  MetricsLog& metrics_;
  const Clock& clock_;
  GatewayOptions options_;
  std::unique_ptr<Journal> journal_;

  mutable std::mutex mu_;
  std::map<ModelId, ModelEntry> models_;
  std::map<JobId, TrainingJob> jobs_;
  std::map<ModelId, int> last_instance_;
  std::uint64_t next_job_ = 1;
};

// Mock worker

struct GroundTruthImage {
  ImageId image_id;
  int width = 0;
  int height = 0;
  std::vector<Annotation> annotations;
};

struct MockWorkerOutput {
  std::vector<PredictionInput> predictions;
  std::vector<MetricsInput> metrics;  // one per class, ascending label id
};

/// One prediction per ground-truth annotation: every vertex moved by a
/// uniform draw in [-noise_scale, noise_scale] on each axis and clamped to
/// the image; confidence clamp(1 - noise_scale/20) jittered by up to 0.05.
/// Metrics carry each class's mean IoU of its own predictions. Pure and
/// deterministic in (images, noise_scale, seed).
MockWorkerOutput mock_worker_generate(std::span<const GroundTruthImage> images, double noise_scale,
                                      std::uint64_t seed);

/// Ground truth a worker trains on: the job's eval images with the
/// annotations its selection admits.
std::vector<GroundTruthImage> eval_ground_truth(const TrainingJob& job, const Catalog& catalog,
                                                const AnnotationStore& store);

struct MockRunResult {
  TrainingJob job;
  std::size_t metrics_posted = 0;
  std::vector<PredictionOutcome> outcomes;
};

/// Claims the next job, posts generated predictions and metrics, completes
/// the job. nullopt when no job is pending.
std::optional<MockRunResult> run_mock_worker(Gateway& gateway, const Catalog& catalog, const AnnotationStore& store,
                                             const WorkerId& worker, double noise_scale, std::uint64_t seed);

}  // namespace annoforge
