#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "annoforge/catalog.hpp"
#include "annoforge/clock.hpp"
#include "annoforge/geometry.hpp"
#include "annoforge/ids.hpp"
#include "json.hpp"

namespace annoforge {

enum class AnnotationState { Unannotated, InProgress, Annotated };

enum class AnnotationStatus { Submitted, AutoAccepted, Accepted, Rejected };

enum class AuthorKind { Human, Model };

struct Author {
  AuthorKind kind = AuthorKind::Human;
  std::string id;

  static Author human(const UserId& user) { return {AuthorKind::Human, user.str()}; }
  static Author model(const ModelId& model) { return {AuthorKind::Model, model.str()}; }

  friend bool operator==(const Author&, const Author&) = default;
};

/// One entry of an annotation's append-only audit trail.
struct HistoryEntry {
  int revision = 0;
  std::string action;  // create, accept, reject, edit, import
  std::string actor;
  Timestamp at{};
  geometry::Polygon polygon;
  LabelId label_id;
  AnnotationStatus status = AnnotationStatus::Submitted;
  std::string reason;
};

struct Annotation {
  AnnotationId annotation_id;
  ImageId image_id;
  geometry::Polygon polygon;
  LabelId label_id;
  Author author;
  double confidence = 1.0;
  AnnotationStatus status = AnnotationStatus::Submitted;
  Timestamp created_at{};
  Timestamp updated_at{};
  int revision = 1;
  std::vector<HistoryEntry> history;
};

std::string_view to_string(AnnotationStatus s) noexcept;
std::string_view to_string(AuthorKind k) noexcept;
std::string_view to_string(AnnotationState s) noexcept;
/// Throws Error(ValidationError).
AnnotationStatus parse_status(std::string_view s);
AuthorKind parse_author_kind(std::string_view s);

/// Submitted, AutoAccepted and Accepted annotations keep an image annotated.
bool is_live(AnnotationStatus s) noexcept;

/// Training/export eligibility: Accepted, plus AutoAccepted when trusted.
bool is_export_eligible(const Annotation& a, bool trust_auto_accept) noexcept;

nlohmann::json polygon_to_json(const geometry::Polygon& poly);
/// Accepts `[[x,y],...]`. Throws Error(ValidationError) for malformed JSON
/// and Error(DegeneratePolygon) for invalid geometry.
geometry::Polygon polygon_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Annotation& a, bool with_history = true);
/// Throws Error(ValidationError) naming the bad field.
Annotation annotation_from_json(const nlohmann::json& j);

struct QcFilter {
  std::optional<FolderId> folder;
  std::optional<AnnotationStatus> status;
  std::optional<AuthorKind> author_kind;
};

struct StoreOptions {
  double auto_accept_threshold = 0.80;
  /// When set, each image's annotations are mirrored to
  /// `folders/<folder>/annotations/<image_id>.ann.json`.
  std::optional<std::filesystem::path> data_root;
};

/// Annotations and the quality-check state machine:
///   Submitted    -> Accepted | Rejected
///   AutoAccepted -> Accepted | Rejected
///   any edit     -> Submitted (revision + 1)
/// All operations are linearizable; the first of two racing QC decisions
/// wins and the second gets IllegalTransition.
class AnnotationStore {
 public:
  AnnotationStore(const Catalog& catalog, const Clock& clock, StoreOptions options = {});

  /// Loads all annotation documents under the data root.
  /// Throws Error(DataRootCorrupt) naming the file.
  void load();

  /// Clips `polygon` to the image, then stores it as Submitted (human) or
  /// AutoAccepted (model). Human confidence is always 1.0.
  /// Throws UnknownImage, UnknownLabel, OutOfBounds or ValidationError.
  Annotation create(const ImageId& image, const geometry::Polygon& polygon, const LabelId& label,
                    const Author& author, double confidence = 1.0);

  /// Inserts a record with its id preserved (imports).
  void restore(Annotation a);

  /// Submitted and AutoAccepted annotations, oldest first.
  std::vector<Annotation> qc_list(const QcFilter& filter = {}) const;

  Annotation qc_accept(const AnnotationId& id, const UserId& reviewer);
  Annotation qc_reject(const AnnotationId& id, const UserId& reviewer, const std::string& reason);
  /// Throws ValidationError when neither field is given.
  Annotation qc_edit(const AnnotationId& id, const std::optional<geometry::Polygon>& polygon,
                     const std::optional<LabelId>& label, const UserId& reviewer);

  /// Throws Error(UnknownAnnotation).
  Annotation get(const AnnotationId& id) const;
  std::vector<Annotation> for_image(const ImageId& image) const;
  /// Sorted by annotation id.
  std::vector<Annotation> all() const;

  /// Annotated iff any live annotation exists (leases are tracked elsewhere).
  AnnotationState annotation_state(const ImageId& image) const;

  double auto_accept_threshold() const noexcept { return options_.auto_accept_threshold; }

 private:
  Annotation& find_locked(const AnnotationId& id);
  Annotation decide_locked(const AnnotationId& id, AnnotationStatus to, const UserId& reviewer,
                           const std::string& reason);
  void persist_locked(const ImageId& image);
  AnnotationId next_id_locked();

  const Catalog& catalog_;
  const Clock& clock_;
  StoreOptions options_;

  mutable std::mutex mu_;
  std::map<AnnotationId, Annotation> by_id_;
  std::unordered_map<ImageId, std::vector<AnnotationId>> by_image_;
  std::uint64_t next_seq_ = 1;
};

}  // namespace annoforge
