#include "annoforge/platform.hpp"

#include <set>

#include "annoforge/error.hpp"

namespace annoforge {

Platform::Platform(ServerConfig config, const Clock& clock, bool read_only)
    : config_(std::move(config)), clock_(clock) {
  config_.validate();
  const StatePaths state(config_.data_root);
  std::error_code ec;
  std::filesystem::create_directories(state.dir, ec);
  if (ec) fail(ErrorCode::DataRootCorrupt, "cannot create " + state.dir.string() + ": " + ec.message());

  catalog_ = Catalog::load(config_.data_root);
  store_ = std::make_unique<AnnotationStore>(catalog_, clock_,
                                             StoreOptions{config_.auto_accept_threshold, config_.data_root});
  store_->load();

  locks_ = std::make_unique<LockManager>(std::chrono::minutes(config_.lock_ttl_minutes),
                                         read_only ? std::nullopt : std::optional(state.leases()));
  if (!read_only) locks_->recover(clock_.now());

  const Thresholds thresholds{config_.auto_accept_threshold, config_.uncertain_low, config_.uncertain_high,
                              config_.unpredicted_score};
  scheduler_ = std::make_unique<Scheduler>(catalog_, *store_, clock_,
                                           SchedulerOptions{thresholds, 0.9, state.predictions()});
  scheduler_->load();

  metrics_ = std::make_unique<MetricsLog>(state.metrics());
  metrics_->load();

  gateway_ = std::make_unique<Gateway>(
      catalog_, *store_, *scheduler_, *metrics_, clock_,
      GatewayOptions{std::chrono::minutes(config_.job_abandon_minutes), state.gateway(), state.jobs()});
  gateway_->load();
  if (!read_only) gateway_->seed(default_models());
}

std::vector<FolderSummary> Platform::folders() const {
  const Timestamp now = clock_.now();
  std::set<ImageId> leased;
  for (const ImageLease& l : locks_->live_leases(now)) leased.insert(l.image_id);
  std::vector<FolderSummary> out;
  for (const FolderId& folder : catalog_.folders()) {
    FolderSummary s{folder};
    for (const ImageRecord& rec : catalog_.images_in(folder)) {
      ++s.images;
      if (store_->annotation_state(rec.image_id) == AnnotationState::Annotated) ++s.annotated;
      else if (leased.contains(rec.image_id)) ++s.in_progress;
      else ++s.unannotated;
    }
    out.push_back(s);
  }
  return out;
}

std::optional<NextImage> Platform::next_image(const FolderId& folder, const UserId& user) {
  const std::vector<QueueEntry> ranked = scheduler_->rank_folder(folder);
  std::vector<ImageId> order;
  order.reserve(ranked.size());
  for (const QueueEntry& e : ranked) order.push_back(e.image_id);
  const auto lease = locks_->acquire_next(folder, user, clock_.now(), order);
  if (!lease) return std::nullopt;
  return NextImage{catalog_.image(lease->image_id), *lease, scheduler_->queue_entry(lease->image_id)};
}

Annotation Platform::submit_annotation(const ImageId& image, const LeaseToken& token, const geometry::Polygon& polygon,
                                       const LabelId& label, const UserId& user) {
  const Timestamp now = clock_.now();
  const auto lease = locks_->lease_for_image(image, now);
  if (locks_->validate_token(token, image, now) != TokenCheck::Ok || !lease || lease->holder != user) {
    fail(ErrorCode::LockExpired, "lease on '" + image.str() + "' is not held by '" + user.str() + "'");
  }
  Annotation a = store_->create(image, polygon, label, Author::human(user));
  locks_->release(token, now);
  return a;
}

std::vector<ClassReport> Platform::report(const ModelId& model, std::optional<int> training_instance) {
  gateway_->model(model);
  const std::vector<ModelPrediction> preds = scheduler_->predictions(model);
  if (!training_instance) {
    for (const ModelPrediction& p : preds) training_instance = std::max(training_instance.value_or(0), p.training_instance);
    if (!training_instance) fail(ErrorCode::NoPredictions, "model '" + model.str() + "' has no predictions");
  }
  std::set<ImageId> scope;
  for (const TrainingJob& job : gateway_->jobs(model)) {
    if (job.training_instance == *training_instance) scope.insert(job.split.eval.begin(), job.split.eval.end());
  }
  if (scope.empty()) {
    for (const ModelPrediction& p : preds) {
      if (p.training_instance == *training_instance) scope.insert(p.image_id);
    }
  }
  const std::vector<ImageId> images(scope.begin(), scope.end());
  return per_class_report(model, *training_instance, images, catalog_, *store_, preds, config_.match_min_iou);
}

Timeline Platform::model_timeline(const ModelId& model) const {
  gateway_->model(model);
  return annoforge::model_timeline(model, metrics_->records(model));
}

Timeline Platform::class_timeline(const ModelId& model, const LabelId& label) const {
  gateway_->model(model);
  return annoforge::class_timeline(model, label, metrics_->records(model));
}

ExportSummary Platform::export_dataset(const DatasetSelection& selection, ExportFormat format,
                                       const std::filesystem::path& out_dir, std::optional<double> ratio,
                                       std::optional<std::uint64_t> seed, bool copy_images) {
  validate_selection(selection, catalog_);
  const SplitResult s =
      split(selection, ratio.value_or(config_.split_ratio), seed.value_or(config_.rng_seed), catalog_, *store_);
  return annoforge::export_dataset(catalog_, *store_, selection, s, format, out_dir, copy_images);
}

}  // namespace annoforge
