#include "annoforge/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "annoforge/random.hpp"

using nlohmann::json;

namespace annoforge {

namespace {

const json& require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorCode::ValidationError, std::string("missing field '") + key + "'");
  return j.at(key);
}

template <typename T>
T field_as(const json& j, const char* key) {
  try {
    return require(j, key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::ValidationError, std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

json to_json(const ModelEntry& m) {
  return json{{"model_id", m.model_id},
              {"display_name", m.display_name},
              {"adapter_format", std::string(to_string(m.adapter_format))},
              {"config", m.config}};
}

ModelEntry model_entry_from_json(const json& j) {
  ModelEntry m;
  m.display_name = field_as<std::string>(j, "display_name");
  if (j.contains("model_id")) m.model_id = ModelId(field_as<std::string>(j, "model_id"));
  if (j.contains("adapter_format")) m.adapter_format = parse_export_format(field_as<std::string>(j, "adapter_format"));
  if (j.contains("config")) {
    if (!j.at("config").is_object()) fail(ErrorCode::ValidationError, "config must be an object");
    m.config = j.at("config");
  }
  return m;
}

std::string slugify(std::string_view name) {
  std::string out;
  bool gap = false;
  for (unsigned char c : name) {
    if (std::isalnum(c)) {
      if (gap && !out.empty()) out += '_';
      out += static_cast<char>(std::tolower(c));
      gap = false;
    } else {
      gap = true;
    }
  }
  return out;
}

std::vector<ModelEntry> default_models() {
  const char* names[] = {"SSD MobileNet V1 COCO Tensorflow", "SSD MobileNet V2 COCO Tensorflow",
                         "Mask RCNN Inception V2 COCO Tensorflow", "Mask RCNN Resnet50 Atrous COCO Tensorflow"};
  std::vector<ModelEntry> out;
  for (const char* name : names) {
    out.push_back({ModelId(slugify(name)), name, ExportFormat::Coco, json{{"learning_rate", 0.004}, {"epochs", 50}}});
  }
  return out;
}

std::string_view to_string(JobState s) noexcept {
  switch (s) {
    case JobState::Pending: return "Pending";
    case JobState::Claimed: return "Claimed";
    case JobState::Running: return "Running";
    case JobState::Completed: return "Completed";
    case JobState::Failed: return "Failed";
  }
  return "?";
}

JobState parse_job_state(std::string_view s) {
  for (JobState st : {JobState::Pending, JobState::Claimed, JobState::Running, JobState::Completed, JobState::Failed}) {
    if (to_string(st) == s) return st;
  }
  fail(ErrorCode::ValidationError, "unknown job state '" + std::string(s) + "'");
}

json to_json(const TrainingJob& j) {
  json out{{"job_id", j.job_id},
           {"model_id", j.model_id},
           {"selection", to_json(j.selection)},
           {"split", to_json(j.split)},
           {"config", j.config},
           {"state", std::string(to_string(j.state))},
           {"training_instance", j.training_instance},
           {"worker_id", j.worker_id ? json(j.worker_id->str()) : json(nullptr)},
           {"failure_reason", j.failure_reason},
           {"bundle_path", j.bundle_path ? json(*j.bundle_path) : json(nullptr)},
           {"created_at", to_millis(j.created_at)},
           {"updated_at", to_millis(j.updated_at)},
           {"last_progress_at", to_millis(j.last_progress_at)}};
  return out;
}

TrainingJob job_from_json(const json& j) {
  TrainingJob t;
  t.job_id = JobId(field_as<std::string>(j, "job_id"));
  t.model_id = ModelId(field_as<std::string>(j, "model_id"));
  t.selection = selection_from_json(require(j, "selection"));
  t.split = split_from_json(require(j, "split"));
  t.config = require(j, "config");
  t.state = parse_job_state(field_as<std::string>(j, "state"));
  t.training_instance = field_as<int>(j, "training_instance");
  if (j.contains("worker_id") && !j.at("worker_id").is_null()) t.worker_id = WorkerId(field_as<std::string>(j, "worker_id"));
  t.failure_reason = j.value("failure_reason", std::string{});
  if (j.contains("bundle_path") && !j.at("bundle_path").is_null()) t.bundle_path = field_as<std::string>(j, "bundle_path");
  t.created_at = from_millis(field_as<std::int64_t>(j, "created_at"));
  t.updated_at = from_millis(field_as<std::int64_t>(j, "updated_at"));
  t.last_progress_at = from_millis(field_as<std::int64_t>(j, "last_progress_at"));
  return t;
}

json to_json(const PredictionInput& p) {
  return json{{"image_id", p.image_id},
              {"label", p.label_id},
              {"polygon", polygon_to_json(p.polygon)},
              {"confidence", p.confidence}};
}

PredictionInput prediction_input_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::ValidationError, "prediction must be an object");
  const ImageId image(field_as<std::string>(j, "image_id"));
  const LabelId label(field_as<std::string>(j, "label"));
  const double confidence = field_as<double>(j, "confidence");
  const bool has_poly = j.contains("polygon"), has_mask = j.contains("mask_rle");
  if (has_poly == has_mask) fail(ErrorCode::ValidationError, "exactly one of 'polygon' and 'mask_rle' is required");
  if (has_poly) return {image, label, polygon_from_json(j.at("polygon")), confidence};

  const json& mask = j.at("mask_rle");
  std::vector<int> size;
  std::vector<std::uint64_t> counts;
  try {
    size = mask.at("size").get<std::vector<int>>();
    counts = mask.at("counts").get<std::vector<std::uint64_t>>();
  } catch (const json::exception&) {
    fail(ErrorCode::ValidationError, "mask_rle needs size [h, w] and integer counts");
  }
  if (size.size() != 2) fail(ErrorCode::ValidationError, "mask_rle size must be [h, w]");
  const auto poly = geometry::mask_to_polygon(geometry::rle_decode(size[1], size[0], counts));
  if (!poly) fail(ErrorCode::DegeneratePolygon, "mask_rle is empty");
  return {image, label, *poly, confidence};
}

json to_json(const MetricsInput& m) {
  return json{{"label", m.label_id ? m.label_id->str() : std::string("ALL")},
              {"mean_iou", m.mean_iou},
              {"sample_count", m.sample_count}};
}

MetricsInput metrics_input_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::ValidationError, "metrics record must be an object");
  MetricsInput m;
  const std::string label = j.contains("label") ? field_as<std::string>(j, "label") : std::string("ALL");
  if (label != "ALL") m.label_id = LabelId(label);
  m.mean_iou = field_as<double>(j, "mean_iou");
  const json& count = require(j, "sample_count");
  if (!count.is_number_integer() || count.get<std::int64_t>() < 0) {
    fail(ErrorCode::ValidationError, "sample_count must be a non-negative integer");
  }
  m.sample_count = count.get<std::size_t>();
  return m;
}

json to_json(const PredictionOutcome& o) {
  if (o.action) return to_json(*o.action);
  return json{{"error", std::string(to_string(*o.error))}, {"message", o.message}};
}

Gateway::Gateway(const Catalog& catalog, AnnotationStore& store, Scheduler& scheduler, MetricsLog& metrics,
                 const Clock& clock, GatewayOptions options)
    : catalog_(catalog),
      store_(store),
      scheduler_(scheduler),
      metrics_(metrics),
      clock_(clock),
      options_(std::move(options)) {
  if (options_.journal_path) journal_ = std::make_unique<Journal>(*options_.journal_path);
}

void Gateway::load() {
  if (!options_.journal_path) return;
  std::map<ModelId, ModelEntry> models;
  std::map<JobId, TrainingJob> jobs;
  try {
    for (const json& r : Journal::read_all(*options_.journal_path)) {
      const std::string kind = field_as<std::string>(r, "kind");
      if (kind == "model") {
        ModelEntry m = model_entry_from_json(require(r, "model"));
        models.insert_or_assign(m.model_id, std::move(m));
      } else if (kind == "job") {
        TrainingJob t = job_from_json(require(r, "job"));
        jobs.insert_or_assign(t.job_id, std::move(t));
      } else {
        fail(ErrorCode::ValidationError, "unknown record kind '" + kind + "'");
      }
    }
  } catch (const Error& e) {
    fail(ErrorCode::DataRootCorrupt, options_.journal_path->string() + ": " + e.what());
  }

  std::lock_guard lock(mu_);
  models_ = std::move(models);
  jobs_ = std::move(jobs);
  last_instance_.clear();
  next_job_ = 1;
  for (const auto& [id, job] : jobs_) {
    int& last = last_instance_[job.model_id];
    last = std::max(last, job.training_instance);
    unsigned long long seq = 0;
    if (std::sscanf(id.str().c_str(), "job-%llu", &seq) == 1) next_job_ = std::max<std::uint64_t>(next_job_, seq + 1);
  }
}

void Gateway::seed(std::span<const ModelEntry> entries) {
  for (const ModelEntry& e : entries) {
    {
      std::lock_guard lock(mu_);
      const bool taken = std::any_of(models_.begin(), models_.end(),
                                     [&](const auto& kv) { return kv.second.display_name == e.display_name; });
      if (taken) continue;
    }
    register_model(e);
  }
}

ModelId Gateway::register_model(ModelEntry entry) {
  if (entry.display_name.empty()) fail(ErrorCode::ValidationError, "display_name must not be empty");
  if (!entry.config.is_object()) fail(ErrorCode::ValidationError, "config must be an object");
  for (const char* key : {"learning_rate", "epochs"}) {
    if (!entry.config.contains(key)) fail(ErrorCode::MissingConfigKey, std::string("config is missing '") + key + "'");
  }
  if (!entry.config.at("learning_rate").is_number() || entry.config.at("learning_rate").get<double>() <= 0) {
    fail(ErrorCode::ValidationError, "learning_rate must be a positive number");
  }
  if (!entry.config.at("epochs").is_number_integer() || entry.config.at("epochs").get<std::int64_t>() < 1) {
    fail(ErrorCode::ValidationError, "epochs must be a positive integer");
  }
  for (const auto& [key, value] : entry.config.items()) {
    if (key.empty()) fail(ErrorCode::ValidationError, "config keys must not be empty");
  }
  entry.model_id = ModelId(slugify(entry.display_name));
  if (entry.model_id.empty()) fail(ErrorCode::ValidationError, "display_name needs a letter or digit");

  std::lock_guard lock(mu_);
  for (const auto& [id, m] : models_) {
    if (m.display_name == entry.display_name || id == entry.model_id) {
      fail(ErrorCode::DuplicateModel, "model '" + entry.display_name + "' is already registered");
    }
  }
  if (journal_) journal_->append(json{{"kind", "model"}, {"model", to_json(entry)}});
  models_.emplace(entry.model_id, entry);
  return entry.model_id;
}

std::vector<ModelEntry> Gateway::models() const {
  std::lock_guard lock(mu_);
  std::vector<ModelEntry> out;
  for (const auto& [id, m] : models_) out.push_back(m);
  return out;
}

ModelEntry Gateway::model(const ModelId& id) const {
  std::lock_guard lock(mu_);
  auto it = models_.find(id);
  if (it == models_.end()) fail(ErrorCode::UnknownModel, "unknown model '" + id.str() + "'");
  return it->second;
}

TrainingJob Gateway::create_training_job(const ModelId& model_id, const DatasetSelection& selection, double ratio,
                                         std::uint64_t seed) {
  const ModelEntry entry = model(model_id);
  validate_selection(selection, catalog_);
  SplitResult result = split(selection, ratio, seed, catalog_, store_);

  TrainingJob job;
  {
    std::lock_guard lock(mu_);
    char id[32];
    std::snprintf(id, sizeof id, "job-%06llu", static_cast<unsigned long long>(next_job_++));
    job.job_id = JobId(id);
    job.training_instance = ++last_instance_[model_id];
  }
  job.model_id = model_id;
  job.selection = selection;
  job.split = std::move(result);
  job.config = entry.config;
  job.created_at = job.updated_at = job.last_progress_at = clock_.now();
  if (options_.jobs_dir) {
    const auto dir = *options_.jobs_dir / job.job_id.str();
    export_dataset(catalog_, store_, selection, job.split, entry.adapter_format, dir);
    job.bundle_path = dir.string();
  }

  std::lock_guard lock(mu_);
  record_job_locked(job);
  jobs_.emplace(job.job_id, job);
  return job;
}

std::optional<TrainingJob> Gateway::claim_next_job(const WorkerId& worker) {
  const Timestamp now = clock_.now();
  std::lock_guard lock(mu_);
  TrainingJob* oldest = nullptr;
  for (auto& [id, job] : jobs_) {
    requeue_if_abandoned_locked(job, now);
    if (job.state != JobState::Pending) continue;
    if (!oldest || job.created_at < oldest->created_at) oldest = &job;
  }
  if (!oldest) return std::nullopt;
  oldest->state = JobState::Claimed;
  oldest->worker_id = worker;
  oldest->updated_at = oldest->last_progress_at = now;
  record_job_locked(*oldest);
  return *oldest;
}

std::size_t Gateway::requeue_abandoned() {
  const Timestamp now = clock_.now();
  std::lock_guard lock(mu_);
  std::size_t moved = 0;
  for (auto& [id, job] : jobs_) moved += requeue_if_abandoned_locked(job, now) ? 1 : 0;
  return moved;
}

bool Gateway::requeue_if_abandoned_locked(TrainingJob& job, Timestamp now) {
  if (job.state != JobState::Claimed && job.state != JobState::Running) return false;
  if (now - job.last_progress_at <= options_.abandon_after) return false;
  job.state = JobState::Pending;
  job.worker_id.reset();
  job.updated_at = now;
  record_job_locked(job);
  return true;
}

TrainingJob& Gateway::find_locked(const JobId& id) {
  auto it = jobs_.find(id);
  if (it == jobs_.end()) fail(ErrorCode::UnknownJob, "unknown job '" + id.str() + "'");
  return it->second;
}

TrainingJob& Gateway::begin_post_locked(const JobId& id, Timestamp now) {
  TrainingJob& job = find_locked(id);
  requeue_if_abandoned_locked(job, now);
  if (job.state != JobState::Claimed && job.state != JobState::Running) {
    fail(ErrorCode::IllegalState, "job '" + id.str() + "' is " + std::string(to_string(job.state)));
  }
  return job;
}

void Gateway::record_job_locked(const TrainingJob& job) {
  if (journal_) journal_->append(json{{"kind", "job"}, {"job", to_json(job)}});
}

std::size_t Gateway::post_metrics(const JobId& id, std::span<const MetricsInput> records) {
  const Timestamp now = clock_.now();
  std::vector<MetricsRecord> out;
  {
    std::lock_guard lock(mu_);
    TrainingJob& job = begin_post_locked(id, now);
    for (const MetricsInput& r : records) {
      if (r.label_id && !catalog_.hierarchy().has_label(*r.label_id)) {
        fail(ErrorCode::UnknownClass, "unknown class '" + r.label_id->str() + "'");
      }
      if (!(r.mean_iou >= 0.0 && r.mean_iou <= 1.0)) {
        fail(ErrorCode::ValidationError, "mean_iou must be within [0, 1]");
      }
      out.push_back({job.job_id, job.model_id, r.label_id, job.training_instance, r.mean_iou, r.sample_count, now});
    }
    job.state = JobState::Running;
    job.updated_at = job.last_progress_at = now;
    record_job_locked(job);
  }
  metrics_.append(out);
  return out.size();
}

namespace {

PredictionOutcome ingest_one(Scheduler& scheduler, const TrainingJob& job, const PredictionInput& in) {
  try {
    ModelPrediction p{{}, in.image_id, job.model_id, in.label_id, in.polygon, in.confidence, job.training_instance,
                      {}, job.job_id};
    return {scheduler.ingest_prediction(std::move(p)), std::nullopt, {}};
  } catch (const Error& e) {
    return {std::nullopt, e.code(), e.detail()};
  }
}

}  // namespace

std::vector<PredictionOutcome> Gateway::post_predictions(const JobId& id, std::span<const PredictionInput> items) {
  TrainingJob job;
  {
    std::lock_guard lock(mu_);
    TrainingJob& live = begin_post_locked(id, clock_.now());
    live.state = JobState::Running;
    live.updated_at = live.last_progress_at = clock_.now();
    record_job_locked(live);
    job = live;
  }
  std::vector<PredictionOutcome> out;
  out.reserve(items.size());
  for (const PredictionInput& in : items) out.push_back(ingest_one(scheduler_, job, in));
  return out;
}

std::vector<PredictionOutcome> Gateway::post_predictions(const JobId& id, std::span<const json> items) {
  TrainingJob job;
  {
    std::lock_guard lock(mu_);
    TrainingJob& live = begin_post_locked(id, clock_.now());
    live.state = JobState::Running;
    live.updated_at = live.last_progress_at = clock_.now();
    record_job_locked(live);
    job = live;
  }
  std::vector<PredictionOutcome> out;
  out.reserve(items.size());
  for (const json& item : items) {
    try {
      out.push_back(ingest_one(scheduler_, job, prediction_input_from_json(item)));
    } catch (const Error& e) {
      out.push_back({std::nullopt, e.code(), e.detail()});
    }
  }
  return out;
}

TrainingJob Gateway::complete_job(const JobId& id, const JobOutcome& outcome) {
  const Timestamp now = clock_.now();
  std::lock_guard lock(mu_);
  TrainingJob& job = begin_post_locked(id, now);
  job.state = outcome.success ? JobState::Completed : JobState::Failed;
  job.failure_reason = outcome.success ? std::string{} : outcome.reason;
  job.updated_at = now;
  record_job_locked(job);
  return job;
}

TrainingJob Gateway::job(const JobId& id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) fail(ErrorCode::UnknownJob, "unknown job '" + id.str() + "'");
  return it->second;
}

std::vector<TrainingJob> Gateway::jobs(const std::optional<ModelId>& model) const {
  std::lock_guard lock(mu_);
  std::vector<TrainingJob> out;
  for (const auto& [id, job] : jobs_) {
    if (!model || job.model_id == *model) out.push_back(job);
  }
  return out;
}

MockWorkerOutput mock_worker_generate(std::span<const GroundTruthImage> images, double noise_scale,
                                      std::uint64_t seed) {
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    fail(ErrorCode::ValidationError, "noise_scale must be a non-negative number");
  }
  std::vector<const GroundTruthImage*> ordered;
  for (const GroundTruthImage& g : images) ordered.push_back(&g);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });

  const double base_confidence = std::clamp(1.0 - noise_scale / 20.0, 0.0, 1.0);
  MockWorkerOutput out;
  std::map<LabelId, std::vector<double>> ious;
  for (const GroundTruthImage* g : ordered) {
    std::vector<const Annotation*> anns;
    for (const Annotation& a : g->annotations) anns.push_back(&a);
    std::sort(anns.begin(), anns.end(), [](auto* a, auto* b) { return a->annotation_id < b->annotation_id; });
    const double w = g->width, h = g->height;

    for (const Annotation* a : anns) {
      Rng rng(derive_seed(seed, g->image_id.str() + "/" + a->annotation_id.str()));
      std::optional<geometry::Polygon> poly;
      for (int attempt = 0; attempt < 16 && !poly; ++attempt) {
        std::vector<geometry::Point> pts;
        for (const auto& v : a->polygon.vertices()) {
          const double dx = rng.uniform(-noise_scale, noise_scale);
          const double dy = rng.uniform(-noise_scale, noise_scale);
          pts.push_back({std::clamp(v.x + dx, 0.0, w), std::clamp(v.y + dy, 0.0, h)});
        }
        poly = geometry::Polygon::try_make(std::move(pts));
      }
      if (!poly) poly = a->polygon;
      const double confidence = std::clamp(base_confidence + rng.uniform(-0.05, 0.05), 0.0, 1.0);
      ious[a->label_id].push_back(geometry::iou(a->polygon, *poly, {g->width, g->height, geometry::kDefaultSupersample}));
      out.predictions.push_back({g->image_id, a->label_id, *poly, confidence});
    }
  }
  for (auto& [label, values] : ious) {
    const std::size_t n = values.size();
    out.metrics.push_back({label, mean_with_misses(std::move(values), 0), n});
  }
  return out;
}

std::vector<GroundTruthImage> eval_ground_truth(const TrainingJob& job, const Catalog& catalog,
                                                const AnnotationStore& store) {
  std::vector<GroundTruthImage> out;
  for (const ImageId& id : job.split.eval) {
    const ImageRecord& rec = catalog.image(id);
    out.push_back({id, rec.width, rec.height, selected_annotations(job.selection, store, id)});
  }
  return out;
}

std::optional<MockRunResult> run_mock_worker(Gateway& gateway, const Catalog& catalog, const AnnotationStore& store,
                                             const WorkerId& worker, double noise_scale, std::uint64_t seed) {
  std::optional<TrainingJob> job = gateway.claim_next_job(worker);
  if (!job) return std::nullopt;
  const MockWorkerOutput out = mock_worker_generate(eval_ground_truth(*job, catalog, store), noise_scale, seed);
  MockRunResult result;
  result.outcomes = gateway.post_predictions(job->job_id, std::span<const PredictionInput>(out.predictions));
  result.metrics_posted = gateway.post_metrics(job->job_id, out.metrics);
  result.job = gateway.complete_job(job->job_id, JobOutcome::completed());
  return result;
}

}  // namespace annoforge
