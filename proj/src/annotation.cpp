#include "annoforge/annotation.hpp"

#include <algorithm>
#include <cstdio>

#include "annoforge/error.hpp"
#include "annoforge/fsutil.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace annoforge {
namespace {

const json& require(const json& j, const char* field) {
  if (!j.is_object() || !j.contains(field)) fail(ErrorCode::ValidationError, std::string("missing field '") + field + "'");
  return j.at(field);
}

template <typename T>
T field_as(const json& j, const char* field) {
  try {
    return require(j, field).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("field '") + field + "': " + e.what());
  }
}

json history_to_json(const HistoryEntry& h) {
  json j{{"revision", h.revision},
         {"action", h.action},
         {"actor", h.actor},
         {"at", to_millis(h.at)},
         {"polygon", polygon_to_json(h.polygon)},
         {"label_id", h.label_id},
         {"status", to_string(h.status)}};
  if (!h.reason.empty()) j["reason"] = h.reason;
  return j;
}

HistoryEntry history_from_json(const json& j) {
  return HistoryEntry{field_as<int>(j, "revision"),
                      field_as<std::string>(j, "action"),
                      field_as<std::string>(j, "actor"),
                      from_millis(field_as<std::int64_t>(j, "at")),
                      polygon_from_json(require(j, "polygon")),
                      LabelId(field_as<std::string>(j, "label_id")),
                      parse_status(field_as<std::string>(j, "status")),
                      j.value("reason", std::string{})};
}

std::optional<std::uint64_t> sequence_of(const AnnotationId& id) {
  const std::string& s = id.str();
  if (s.size() <= 4 || s.compare(0, 4, "ann-") != 0) return std::nullopt;
  std::uint64_t n = 0;
  for (std::size_t i = 4; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
    n = n * 10 + static_cast<std::uint64_t>(s[i] - '0');
  }
  return n;
}

geometry::Polygon clip_to_image(const geometry::Polygon& poly, const ImageRecord& image) {
  auto clipped = geometry::clip_polygon_to_rect(
      poly, {0.0, 0.0, static_cast<double>(image.width), static_cast<double>(image.height)});
  if (!clipped) fail(ErrorCode::OutOfBounds, "polygon lies outside image '" + image.image_id.str() + "'");
  return *clipped;
}

}  // namespace

std::string_view to_string(AnnotationStatus s) noexcept {
  switch (s) {
    case AnnotationStatus::Submitted: return "Submitted";
    case AnnotationStatus::AutoAccepted: return "AutoAccepted";
    case AnnotationStatus::Accepted: return "Accepted";
    case AnnotationStatus::Rejected: return "Rejected";
  }
  return "?";
}

std::string_view to_string(AuthorKind k) noexcept {
  return k == AuthorKind::Human ? "Human" : "Model";
}

std::string_view to_string(AnnotationState s) noexcept {
  switch (s) {
    case AnnotationState::Unannotated: return "Unannotated";
    case AnnotationState::InProgress: return "InProgress";
    case AnnotationState::Annotated: return "Annotated";
  }
  return "?";
}

AnnotationStatus parse_status(std::string_view s) {
  if (s == "Submitted") return AnnotationStatus::Submitted;
  if (s == "AutoAccepted") return AnnotationStatus::AutoAccepted;
  if (s == "Accepted") return AnnotationStatus::Accepted;
  if (s == "Rejected") return AnnotationStatus::Rejected;
  fail(ErrorCode::ValidationError, "unknown status '" + std::string(s) + "'");
}

AuthorKind parse_author_kind(std::string_view s) {
  if (s == "Human") return AuthorKind::Human;
  if (s == "Model") return AuthorKind::Model;
  fail(ErrorCode::ValidationError, "unknown author kind '" + std::string(s) + "'");
}

bool is_live(AnnotationStatus s) noexcept {
  return s != AnnotationStatus::Rejected;
}

bool is_export_eligible(const Annotation& a, bool trust_auto_accept) noexcept {
  return a.status == AnnotationStatus::Accepted ||
         (trust_auto_accept && a.status == AnnotationStatus::AutoAccepted);
}

json polygon_to_json(const geometry::Polygon& poly) {
  json out = json::array();
  for (const auto& p : poly.vertices()) out.push_back(json::array({p.x, p.y}));
  return out;
}

geometry::Polygon polygon_from_json(const json& j) {
  if (!j.is_array()) fail(ErrorCode::ValidationError, "polygon must be a list of [x,y] pairs");
  std::vector<geometry::Point> pts;
  pts.reserve(j.size());
  for (const auto& pair : j) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number()) {
      fail(ErrorCode::ValidationError, "polygon must be a list of [x,y] pairs");
    }
    pts.push_back({pair[0].get<double>(), pair[1].get<double>()});
  }
  return geometry::Polygon(std::move(pts));
}

json to_json(const Annotation& a, bool with_history) {
  json j{{"annotation_id", a.annotation_id},
         {"image_id", a.image_id},
         {"polygon", polygon_to_json(a.polygon)},
         {"label_id", a.label_id},
         {"author", {{"kind", to_string(a.author.kind)}, {"id", a.author.id}}},
         {"confidence", a.confidence},
         {"status", to_string(a.status)},
         {"created_at", to_millis(a.created_at)},
         {"updated_at", to_millis(a.updated_at)},
         {"revision", a.revision}};
  if (with_history) {
    json h = json::array();
    for (const auto& e : a.history) h.push_back(history_to_json(e));
    j["history"] = std::move(h);
  }
  return j;
}

Annotation annotation_from_json(const json& j) {
  const json& author = require(j, "author");
  Annotation a{AnnotationId(field_as<std::string>(j, "annotation_id")),
               ImageId(field_as<std::string>(j, "image_id")),
               polygon_from_json(require(j, "polygon")),
               LabelId(field_as<std::string>(j, "label_id")),
               Author{parse_author_kind(field_as<std::string>(author, "kind")), field_as<std::string>(author, "id")},
               field_as<double>(j, "confidence"),
               parse_status(field_as<std::string>(j, "status")),
               from_millis(j.value("created_at", std::int64_t{0})),
               from_millis(j.value("updated_at", std::int64_t{0})),
               j.value("revision", 1),
               {}};
  if (a.confidence < 0.0 || a.confidence > 1.0) fail(ErrorCode::ValidationError, "confidence outside [0,1]");
  if (j.contains("history")) {
    for (const auto& h : j["history"]) a.history.push_back(history_from_json(h));
  }
  return a;
}

AnnotationStore::AnnotationStore(const Catalog& catalog, const Clock& clock, StoreOptions options)
    : catalog_(catalog), clock_(clock), options_(std::move(options)) {}

void AnnotationStore::load() {
  if (!options_.data_root) return;
  std::lock_guard lock(mu_);
  for (const auto& folder : catalog_.folders()) {
    const fs::path dir = *options_.data_root / "folders" / folder.str() / "annotations";
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.size() > 9 && name.ends_with(".ann.json")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      try {
        const json doc = json::parse(read_file(file));
        for (const auto& item : require(doc, "annotations")) {
          Annotation a = annotation_from_json(item);
          if (!catalog_.has_image(a.image_id)) fail(ErrorCode::UnknownImage, a.image_id.str());
          if (auto seq = sequence_of(a.annotation_id)) next_seq_ = std::max(next_seq_, *seq + 1);
          by_image_[a.image_id].push_back(a.annotation_id);
          by_id_.insert_or_assign(a.annotation_id, std::move(a));
        }
      } catch (const Error& e) {
        fail(ErrorCode::DataRootCorrupt, file.string() + ": " + e.what());
      } catch (const json::exception& e) {
        fail(ErrorCode::DataRootCorrupt, file.string() + ": " + e.what());
      }
    }
  }
}

AnnotationId AnnotationStore::next_id_locked() {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ann-%08llu", static_cast<unsigned long long>(next_seq_++));
  return AnnotationId(buf);
}

Annotation AnnotationStore::create(const ImageId& image_id, const geometry::Polygon& polygon, const LabelId& label,
                                   const Author& author, double confidence) {
  const ImageRecord& image = catalog_.image(image_id);
  catalog_.hierarchy().label(label);
  if (author.kind == AuthorKind::Human) {
    confidence = 1.0;
  } else {
    if (!(confidence >= 0.0 && confidence <= 1.0)) fail(ErrorCode::ValidationError, "confidence outside [0,1]");
    if (confidence < options_.auto_accept_threshold) {
      fail(ErrorCode::ValidationError, "model annotations require confidence >= auto-accept threshold");
    }
  }
  geometry::Polygon clipped = clip_to_image(polygon, image);

  std::lock_guard lock(mu_);
  const Timestamp now = clock_.now();
  const AnnotationStatus status =
      author.kind == AuthorKind::Human ? AnnotationStatus::Submitted : AnnotationStatus::AutoAccepted;
  Annotation a{next_id_locked(), image_id, clipped, label, author, confidence, status, now, now, 1, {}};
  a.history.push_back(HistoryEntry{1, "create", author.id, now, clipped, label, status, {}});
  by_image_[image_id].push_back(a.annotation_id);
  by_id_.emplace(a.annotation_id, a);
  persist_locked(image_id);
  return a;
}

void AnnotationStore::restore(Annotation a) {
  catalog_.image(a.image_id);
  catalog_.hierarchy().label(a.label_id);
  std::lock_guard lock(mu_);
  if (auto seq = sequence_of(a.annotation_id)) next_seq_ = std::max(next_seq_, *seq + 1);
  auto& ids = by_image_[a.image_id];
  if (std::find(ids.begin(), ids.end(), a.annotation_id) == ids.end()) ids.push_back(a.annotation_id);
  const ImageId image = a.image_id;
  by_id_.insert_or_assign(a.annotation_id, std::move(a));
  persist_locked(image);
}

std::vector<Annotation> AnnotationStore::qc_list(const QcFilter& filter) const {
  std::lock_guard lock(mu_);
  std::vector<Annotation> out;
  for (const auto& [_, a] : by_id_) {
    if (a.status != AnnotationStatus::Submitted && a.status != AnnotationStatus::AutoAccepted) continue;
    if (filter.status && a.status != *filter.status) continue;
    if (filter.author_kind && a.author.kind != *filter.author_kind) continue;
    if (filter.folder && catalog_.image(a.image_id).folder_id != *filter.folder) continue;
    out.push_back(a);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Annotation& x, const Annotation& y) { return x.created_at < y.created_at; });
  return out;
}

Annotation& AnnotationStore::find_locked(const AnnotationId& id) {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) fail(ErrorCode::UnknownAnnotation, id.str());
  return it->second;
}

Annotation AnnotationStore::decide_locked(const AnnotationId& id, AnnotationStatus to, const UserId& reviewer,
                                          const std::string& reason) {
  Annotation& a = find_locked(id);
  if (a.status != AnnotationStatus::Submitted && a.status != AnnotationStatus::AutoAccepted) {
    fail(ErrorCode::IllegalTransition,
         std::string(to_string(a.status)) + " -> " + std::string(to_string(to)) + " for " + id.str());
  }
  const Timestamp now = clock_.now();
  a.status = to;
  a.updated_at = now;
  a.history.push_back(HistoryEntry{a.revision, to == AnnotationStatus::Accepted ? "accept" : "reject",
                                   reviewer.str(), now, a.polygon, a.label_id, to, reason});
  persist_locked(a.image_id);
  return a;
}

Annotation AnnotationStore::qc_accept(const AnnotationId& id, const UserId& reviewer) {
  std::lock_guard lock(mu_);
  return decide_locked(id, AnnotationStatus::Accepted, reviewer, {});
}

Annotation AnnotationStore::qc_reject(const AnnotationId& id, const UserId& reviewer, const std::string& reason) {
  std::lock_guard lock(mu_);
  return decide_locked(id, AnnotationStatus::Rejected, reviewer, reason);
}

Annotation AnnotationStore::qc_edit(const AnnotationId& id, const std::optional<geometry::Polygon>& polygon,
                                    const std::optional<LabelId>& label, const UserId& reviewer) {
  if (!polygon && !label) fail(ErrorCode::ValidationError, "edit needs a new polygon or a new label");
  if (label) catalog_.hierarchy().label(*label);

  std::lock_guard lock(mu_);
  Annotation& a = find_locked(id);
  if (a.status == AnnotationStatus::Rejected) {
    fail(ErrorCode::IllegalTransition, "rejected annotation " + id.str() + " cannot be edited");
  }
  if (polygon) a.polygon = clip_to_image(*polygon, catalog_.image(a.image_id));
  if (label) a.label_id = *label;
  const Timestamp now = clock_.now();
  a.revision += 1;
  a.status = AnnotationStatus::Submitted;
  a.updated_at = now;
  a.history.push_back(HistoryEntry{a.revision, "edit", reviewer.str(), now, a.polygon, a.label_id, a.status, {}});
  persist_locked(a.image_id);
  return a;
}

Annotation AnnotationStore::get(const AnnotationId& id) const {
  std::lock_guard lock(mu_);
  auto it = by_id_.find(id);
  if (it == by_id_.end()) fail(ErrorCode::UnknownAnnotation, id.str());
  return it->second;
}

std::vector<Annotation> AnnotationStore::for_image(const ImageId& image) const {
  std::lock_guard lock(mu_);
  std::vector<Annotation> out;
  if (auto it = by_image_.find(image); it != by_image_.end()) {
    for (const auto& id : it->second) out.push_back(by_id_.at(id));
  }
  std::sort(out.begin(), out.end(),
            [](const Annotation& x, const Annotation& y) { return x.annotation_id < y.annotation_id; });
  return out;
}

std::vector<Annotation> AnnotationStore::all() const {
  std::lock_guard lock(mu_);
  std::vector<Annotation> out;
  out.reserve(by_id_.size());
  for (const auto& [_, a] : by_id_) out.push_back(a);
  return out;
}

AnnotationState AnnotationStore::annotation_state(const ImageId& image) const {
  std::lock_guard lock(mu_);
  if (auto it = by_image_.find(image); it != by_image_.end()) {
    for (const auto& id : it->second) {
      if (is_live(by_id_.at(id).status)) return AnnotationState::Annotated;
    }
  }
  return AnnotationState::Unannotated;
}

void AnnotationStore::persist_locked(const ImageId& image) {
  if (!options_.data_root) return;
  const ImageRecord& rec = catalog_.image(image);
  json list = json::array();
  if (auto it = by_image_.find(image); it != by_image_.end()) {
    std::vector<AnnotationId> ids = it->second;
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) list.push_back(to_json(by_id_.at(id)));
  }
  const json doc{{"image_id", image}, {"annotations", std::move(list)}};
  write_file_atomic(*options_.data_root / "folders" / rec.folder_id.str() / "annotations" / (image.str() + ".ann.json"),
                    doc.dump(2) + "\n");
}

}  // namespace annoforge
