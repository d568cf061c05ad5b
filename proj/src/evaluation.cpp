#include "annoforge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "annoforge/error.hpp"

using nlohmann::json;

namespace annoforge {

MatchResult match_predictions(std::span<const Annotation> ground_truth, std::span<const ModelPrediction> predictions,
                              const geometry::GridSpec& grid, double min_iou) {
  std::optional<ImageId> image;
  auto check = [&](const ImageId& id) {
    if (!image) image = id;
    else if (*image != id) fail(ErrorCode::MixedImages, image->str() + " and " + id.str());
  };
  for (const Annotation& a : ground_truth) check(a.image_id);
  for (const ModelPrediction& p : predictions) check(p.image_id);

  struct Candidate {
    double iou;
    std::size_t gt;
    std::size_t pred;
  };
  std::vector<Candidate> candidates;
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    for (std::size_t p = 0; p < predictions.size(); ++p) {
      if (ground_truth[g].label_id != predictions[p].label_id) continue;
      const double v = geometry::iou(ground_truth[g].polygon, predictions[p].polygon, grid);
      if (v > min_iou) candidates.push_back({v, g, p});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    const auto& ga = ground_truth[a.gt].annotation_id;
    const auto& gb = ground_truth[b.gt].annotation_id;
    if (ga != gb) return ga < gb;
    return predictions[a.pred].prediction_id < predictions[b.pred].prediction_id;
  });

  std::vector<bool> gt_used(ground_truth.size()), pred_used(predictions.size());
  MatchResult out;
  for (const Candidate& c : candidates) {
    if (gt_used[c.gt] || pred_used[c.pred]) continue;
    gt_used[c.gt] = pred_used[c.pred] = true;
    out.pairs.push_back({ground_truth[c.gt].annotation_id, predictions[c.pred].prediction_id, c.iou});
  }
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    if (!gt_used[g]) out.unmatched_ground_truth.push_back(ground_truth[g].annotation_id);
  }
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    if (!pred_used[p]) out.unmatched_predictions.push_back(predictions[p].prediction_id);
  }
  return out;
}

double mean_with_misses(std::vector<double> matched_ious, std::size_t missed) {
  const std::size_t n = matched_ious.size() + missed;
  if (n == 0) return 0.0;
  std::sort(matched_ious.begin(), matched_ious.end());
  double sum = 0.0;
  for (double v : matched_ious) sum += v;
  return sum / static_cast<double>(n);
}

json to_json(const ClassReport& r) {
  return json{{"model_id", r.model_id},
              {"label_id", r.label_id},
              {"mean_iou", r.mean_iou},
              {"matched", r.matched},
              {"missed_ground_truth", r.missed_ground_truth},
              {"spurious_predictions", r.spurious_predictions},
              {"training_instance", r.training_instance}};
}

std::vector<ClassReport> per_class_report(const ModelId& model, int training_instance,
                                          std::span<const ImageId> images, const Catalog& catalog,
                                          const AnnotationStore& store,
                                          std::span<const ModelPrediction> predictions, double min_iou) {
  const std::set<ImageId> scope(images.begin(), images.end());
  std::map<ImageId, std::vector<ModelPrediction>> preds_by_image;
  std::size_t in_scope = 0;
  for (const ModelPrediction& p : predictions) {
    if (p.model_id != model || p.training_instance != training_instance || !scope.contains(p.image_id)) continue;
    preds_by_image[p.image_id].push_back(p);
    ++in_scope;
  }
  if (in_scope == 0) {
    fail(ErrorCode::NoPredictions, "no predictions for model " + model.str() + " instance " +
                                       std::to_string(training_instance) + " in scope");
  }

  struct Acc {
    std::vector<double> ious;
    std::size_t missed = 0;
    std::size_t spurious = 0;
  };
  std::map<LabelId, Acc> acc;
  for (const ImageId& image : scope) {
    std::vector<Annotation> gt;
    for (Annotation& a : store.for_image(image)) {
      if (a.status == AnnotationStatus::Accepted && a.author.kind == AuthorKind::Human) gt.push_back(std::move(a));
    }
    const auto& preds = preds_by_image[image];
    const ImageRecord& rec = catalog.image(image);
    const MatchResult m =
        match_predictions(gt, preds, geometry::GridSpec{rec.width, rec.height, geometry::kDefaultSupersample}, min_iou);

    std::map<AnnotationId, LabelId> gt_label;
    for (const Annotation& a : gt) gt_label.emplace(a.annotation_id, a.label_id);
    std::map<PredictionId, LabelId> pred_label;
    for (const ModelPrediction& p : preds) pred_label.emplace(p.prediction_id, p.label_id);
    for (const MatchPair& pair : m.pairs) acc[gt_label.at(pair.annotation_id)].ious.push_back(pair.iou);
    for (const AnnotationId& id : m.unmatched_ground_truth) ++acc[gt_label.at(id)].missed;
    for (const PredictionId& id : m.unmatched_predictions) ++acc[pred_label.at(id)].spurious;
  }

  std::vector<ClassReport> out;
  for (auto& [label, a] : acc) {
    ClassReport r{model, label, 0.0, a.ious.size(), a.missed, a.spurious, training_instance};
    r.mean_iou = mean_with_misses(std::move(a.ious), a.missed);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ClassReport> per_class_report(const ModelId& model, int training_instance, const DatasetSelection& scope,
                                          const Catalog& catalog, const AnnotationStore& store,
                                          std::span<const ModelPrediction> predictions, double min_iou) {
  validate_selection(scope, catalog);
  std::vector<ImageId> images;
  for (const FolderId& folder : scope.folder_ids) {
    for (const ImageRecord& rec : catalog.images_in(folder)) images.push_back(rec.image_id);
  }
  std::vector<ModelPrediction> filtered;
  for (const ModelPrediction& p : predictions) {
    if (!scope.label_filter || scope.label_filter->contains(p.label_id)) filtered.push_back(p);
  }
  auto reports = per_class_report(model, training_instance, images, catalog, store, filtered, min_iou);
  if (scope.label_filter) {
    std::erase_if(reports, [&](const ClassReport& r) { return !scope.label_filter->contains(r.label_id); });
  }
  return reports;
}

json to_json(const MetricsRecord& r) {
  return json{{"job_id", r.job_id},
              {"model_id", r.model_id},
              {"label", r.label_id ? r.label_id->str() : std::string("ALL")},
              {"training_instance", r.training_instance},
              {"mean_iou", r.mean_iou},
              {"sample_count", r.sample_count},
              {"recorded_at", to_millis(r.recorded_at)}};
}

MetricsRecord metrics_from_json(const json& j) {
  try {
    MetricsRecord r;
    r.job_id = JobId(j.value("job_id", std::string{}));
    r.model_id = ModelId(j.value("model_id", std::string{}));
    const std::string label = j.at("label").get<std::string>();
    if (label != "ALL") r.label_id = LabelId(label);
    r.training_instance = j.value("training_instance", 0);
    r.mean_iou = j.at("mean_iou").get<double>();
    const json& count = j.at("sample_count");
    if (!count.is_number_integer() || count.get<std::int64_t>() < 0) {
      fail(ErrorCode::ValidationError, "sample_count must be a non-negative integer");
    }
    r.sample_count = count.get<std::size_t>();
    r.recorded_at = from_millis(j.value("recorded_at", std::int64_t{0}));
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("metrics record: ") + e.what());
  }
}

json to_json(const Timeline& t) {
  json points = json::array();
  for (const TimelinePoint& p : t.points) {
    points.push_back(
        {{"training_instance", p.training_instance}, {"mean_iou", p.mean_iou}, {"sample_count", p.sample_count}});
  }
  return json{{"points", points}, {"plateaued", t.plateaued}};
}

bool is_plateau(std::span<const TimelinePoint> points, double epsilon) {
  if (points.size() < 3) return false;
  const std::size_t n = points.size();
  return std::abs(points[n - 1].mean_iou - points[n - 2].mean_iou) < epsilon &&
         std::abs(points[n - 2].mean_iou - points[n - 3].mean_iou) < epsilon;
}

namespace {

// Latest record per (instance, class); later entries win ties on time.
std::map<int, std::map<std::optional<LabelId>, MetricsRecord>> latest(const ModelId& model,
                                                                       std::span<const MetricsRecord> records) {
  std::map<int, std::map<std::optional<LabelId>, MetricsRecord>> out;
  for (const MetricsRecord& r : records) {
    if (r.model_id != model) continue;
    auto& slot = out[r.training_instance];
    auto it = slot.find(r.label_id);
    if (it == slot.end() || r.recorded_at >= it->second.recorded_at) slot.insert_or_assign(r.label_id, r);
  }
  return out;
}

}  // namespace

Timeline model_timeline(const ModelId& model, std::span<const MetricsRecord> records) {
  Timeline t;
  for (const auto& [instance, by_class] : latest(model, records)) {
    double weighted = 0.0, plain = 0.0;
    std::size_t samples = 0, classes = 0;
    for (const auto& [label, r] : by_class) {
      if (!label) continue;
      weighted += r.mean_iou * static_cast<double>(r.sample_count);
      plain += r.mean_iou;
      samples += r.sample_count;
      ++classes;
    }
    TimelinePoint p{instance, 0.0, samples};
    if (classes > 0) {
      p.mean_iou = samples > 0 ? weighted / static_cast<double>(samples) : plain / static_cast<double>(classes);
    } else {
      const MetricsRecord& all = by_class.at(std::nullopt);
      p.mean_iou = all.mean_iou;
      p.sample_count = all.sample_count;
    }
    t.points.push_back(p);
  }
  if (t.points.empty()) fail(ErrorCode::NoData, "no metrics for model " + model.str());
  t.plateaued = is_plateau(t.points);
  return t;
}

Timeline class_timeline(const ModelId& model, const LabelId& label, std::span<const MetricsRecord> records) {
  Timeline t;
  for (const auto& [instance, by_class] : latest(model, records)) {
    auto it = by_class.find(label);
    if (it == by_class.end()) continue;
    t.points.push_back({instance, it->second.mean_iou, it->second.sample_count});
  }
  if (t.points.empty()) fail(ErrorCode::NoData, "no metrics for model " + model.str() + " class " + label.str());
  t.plateaued = is_plateau(t.points);
  return t;
}

MetricsLog::MetricsLog(std::optional<std::filesystem::path> journal_path) : journal_path_(std::move(journal_path)) {
  if (journal_path_) journal_ = std::make_unique<Journal>(*journal_path_);
}

void MetricsLog::load() {
  if (!journal_path_) return;
  std::vector<MetricsRecord> loaded;
  try {
    for (const json& r : Journal::read_all(*journal_path_)) loaded.push_back(metrics_from_json(r));
  } catch (const Error& e) {
    fail(ErrorCode::DataRootCorrupt, journal_path_->string() + ": " + e.what());
  }
  std::lock_guard lock(mu_);
  records_ = std::move(loaded);
}

void MetricsLog::append(std::span<const MetricsRecord> records) {
  std::lock_guard lock(mu_);
  for (const MetricsRecord& r : records) {
    if (journal_) journal_->append(to_json(r));
    records_.push_back(r);
  }
}

std::vector<MetricsRecord> MetricsLog::records(const std::optional<ModelId>& model) const {
  std::lock_guard lock(mu_);
  std::vector<MetricsRecord> out;
  for (const MetricsRecord& r : records_) {
    if (!model || r.model_id == *model) out.push_back(r);
  }
  return out;
}

}  // namespace annoforge
