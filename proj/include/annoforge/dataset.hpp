#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "annoforge/annotation.hpp"
#include "annoforge/catalog.hpp"
#include "annoforge/geometry.hpp"
#include "annoforge/ids.hpp"
#include "json.hpp"

namespace annoforge {

struct DatasetSelection {
  std::vector<FolderId> folder_ids;
  std::optional<std::set<LabelId>> label_filter;
  bool include_auto_accepted = false;

  bool admits(const Annotation& a) const noexcept;
};

nlohmann::json to_json(const DatasetSelection& s);
/// Throws Error(ValidationError).
DatasetSelection selection_from_json(const nlohmann::json& j);

/// Throws EmptySelection (no folders), UnknownFolder or UnknownLabel.
void validate_selection(const DatasetSelection& s, const Catalog& catalog);

/// Sorted ids of selected images with at least one admitted annotation.
std::vector<ImageId> selected_images(const DatasetSelection& s, const Catalog& catalog,
                                     const AnnotationStore& store);

/// Admitted annotations of one image, sorted by id.
std::vector<Annotation> selected_annotations(const DatasetSelection& s, const AnnotationStore& store,
                                             const ImageId& image);

struct SplitResult {
  std::vector<ImageId> train;
  std::vector<ImageId> eval;
  std::uint64_t seed = 0;
  double ratio = 0.8;
};

nlohmann::json to_json(const SplitResult& s);
SplitResult split_from_json(const nlohmann::json& j);

/// Sorts `ids`, shuffles with a seeded Fisher-Yates and puts the first
/// floor(ratio * N) into train. Throws OutOfRange for a ratio outside (0,1)
/// and InsufficientData for N < 2.
SplitResult split_ids(std::vector<ImageId> ids, double ratio, std::uint64_t seed);

SplitResult split(const DatasetSelection& selection, double ratio, std::uint64_t seed, const Catalog& catalog,
                  const AnnotationStore& store);

// Augmentation

struct HorizontalFlip {
  double p = 0.5;
};
struct VerticalFlip {
  double p = 0.5;
};
/// Crops a window whose sides are independently drawn in
/// [min_fraction, 1] of the current size.
struct RandomCrop {
  double min_fraction = 0.5;
};
struct Resize {
  int width = 0;
  int height = 0;
};

using AugmentOp = std::variant<HorizontalFlip, VerticalFlip, RandomCrop, Resize>;

struct AugmentationSpec {
  std::vector<AugmentOp> ops;
  int variants_per_image = 1;
  std::uint64_t seed = 0;
  double min_kept_area_fraction = 0.25;

  /// Throws Error(ValidationError).
  void validate() const;
};

nlohmann::json to_json(const AugmentationSpec& s);
AugmentationSpec augmentation_from_json(const nlohmann::json& j);

struct AugmentedSample {
  ImageId image_id;
  int variant = 0;
  int width = 0;
  int height = 0;
  /// Pixel operations in application order, enough to regenerate the image:
  /// {"op":"hflip"}, {"op":"vflip"}, {"op":"crop","x","y","width","height"},
  /// {"op":"resize","width","height"}.
  std::vector<nlohmann::json> steps;
  std::vector<Annotation> annotations;
};

nlohmann::json to_json(const AugmentedSample& s);

/// Clips `poly` to `window` and moves it to window-local coordinates.
/// nullopt when the clipped area is below min_fraction * reference_area.
std::optional<geometry::Polygon> crop_polygon(const geometry::Polygon& poly, const geometry::PixelRect& window,
                                              double reference_area, double min_fraction);

/// Pure augmentation of one image's annotations. The stream for each image is
/// derived from (spec.seed, image id), so results do not depend on which
/// other images are processed.
std::vector<AugmentedSample> augment(const ImageRecord& image, std::span<const Annotation> annotations,
                                     const AugmentationSpec& spec);

/// Throws UnknownImage or NoAcceptedAnnotations.
std::vector<AugmentedSample> augment(const ImageId& image, const AugmentationSpec& spec, const Catalog& catalog,
                                     const AnnotationStore& store, bool include_auto_accepted = false);

// Export / import

enum class ExportFormat { Canonical, Coco, Voc };

std::string_view to_string(ExportFormat f) noexcept;
/// Case-insensitive. Throws Error(UnsupportedFormat).
ExportFormat parse_export_format(std::string_view s);

struct ExportSummary {
  std::filesystem::path out_dir;
  std::size_t train_images = 0;
  std::size_t eval_images = 0;
  std::size_t train_annotations = 0;
  std::size_t eval_annotations = 0;
};

/// Writes manifest.json plus train/ and eval/ in the chosen format. Output is
/// byte-identical for identical inputs. Throws ValidationError when the
/// split names images outside the selection, IoFailure on write errors.
ExportSummary export_dataset(const Catalog& catalog, const AnnotationStore& store, const DatasetSelection& selection,
                             const SplitResult& split, ExportFormat format, const std::filesystem::path& out_dir,
                             bool copy_images = false);

/// Reads a canonical bundle. Annotations come back Accepted with their ids.
/// Throws Error(SchemaViolation) naming the file and line or field.
std::vector<Annotation> read_canonical(const std::filesystem::path& bundle, const Catalog& catalog);

/// read_canonical, then restores every annotation into `store`.
std::size_t import_canonical(const std::filesystem::path& bundle, const Catalog& catalog, AnnotationStore& store,
                             Timestamp now);

}  // namespace annoforge
