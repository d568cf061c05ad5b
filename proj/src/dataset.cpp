#include "annoforge/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "annoforge/error.hpp"
#include "annoforge/fsutil.hpp"
#include "annoforge/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace annoforge {

bool DatasetSelection::admits(const Annotation& a) const noexcept {
  if (!is_export_eligible(a, include_auto_accepted)) return false;
  return !label_filter || label_filter->contains(a.label_id);
}

json to_json(const DatasetSelection& s) {
  json j{{"folder_ids", s.folder_ids}, {"include_auto_accepted", s.include_auto_accepted}};
  j["label_filter"] = s.label_filter ? json(*s.label_filter) : json(nullptr);
  return j;
}

DatasetSelection selection_from_json(const json& j) {
  try {
    DatasetSelection s;
    for (const auto& f : j.at("folder_ids")) s.folder_ids.emplace_back(f.get<std::string>());
    if (j.contains("label_filter") && !j.at("label_filter").is_null()) {
      std::set<LabelId> labels;
      for (const auto& l : j.at("label_filter")) labels.emplace(l.get<std::string>());
      s.label_filter = std::move(labels);
    }
    s.include_auto_accepted = j.value("include_auto_accepted", false);
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("selection: ") + e.what());
  }
}

void validate_selection(const DatasetSelection& s, const Catalog& catalog) {
  if (s.folder_ids.empty()) fail(ErrorCode::EmptySelection, "selection names no folders");
  for (const FolderId& f : s.folder_ids) {
    if (!catalog.has_folder(f)) fail(ErrorCode::UnknownFolder, f.str());
  }
  if (s.label_filter) {
    for (const LabelId& l : *s.label_filter) catalog.hierarchy().label(l);
  }
}

std::vector<Annotation> selected_annotations(const DatasetSelection& s, const AnnotationStore& store,
                                             const ImageId& image) {
  std::vector<Annotation> out;
  for (Annotation& a : store.for_image(image)) {
    if (s.admits(a)) out.push_back(std::move(a));
  }
  std::sort(out.begin(), out.end(),
            [](const Annotation& a, const Annotation& b) { return a.annotation_id < b.annotation_id; });
  return out;
}

std::vector<ImageId> selected_images(const DatasetSelection& s, const Catalog& catalog,
                                     const AnnotationStore& store) {
  validate_selection(s, catalog);
  std::set<ImageId> ids;
  for (const FolderId& f : s.folder_ids) {
    for (const ImageRecord& img : catalog.images_in(f)) {
      if (!selected_annotations(s, store, img.image_id).empty()) ids.insert(img.image_id);
    }
  }
  return {ids.begin(), ids.end()};
}

json to_json(const SplitResult& s) {
  return json{{"train", s.train}, {"eval", s.eval}, {"seed", s.seed}, {"ratio", s.ratio}};
}

SplitResult split_from_json(const json& j) {
  try {
    SplitResult s;
    for (const auto& id : j.at("train")) s.train.emplace_back(id.get<std::string>());
    for (const auto& id : j.at("eval")) s.eval.emplace_back(id.get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    s.ratio = j.at("ratio").get<double>();
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("split: ") + e.what());
  }
}

SplitResult split_ids(std::vector<ImageId> ids, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) fail(ErrorCode::OutOfRange, "split ratio must lie in (0, 1)");
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const std::size_t n = ids.size();
  if (n < 2) fail(ErrorCode::InsufficientData, "need at least 2 images, have " + std::to_string(n));

  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(ids[i], ids[rng.below(i + 1)]);
  }
  // The epsilon keeps e.g. 0.29 * 100 from flooring to 28.
  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  SplitResult out;
  out.seed = seed;
  out.ratio = ratio;
  out.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.eval.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.eval.begin(), out.eval.end());
  return out;
}

SplitResult split(const DatasetSelection& selection, double ratio, std::uint64_t seed, const Catalog& catalog,
                  const AnnotationStore& store) {
  return split_ids(selected_images(selection, catalog, store), ratio, seed);
}

// Augmentation

void AugmentationSpec::validate() const {
  if (variants_per_image < 0) fail(ErrorCode::ValidationError, "variants_per_image must be >= 0");
  if (!(min_kept_area_fraction >= 0.0 && min_kept_area_fraction <= 1.0)) {
    fail(ErrorCode::ValidationError, "min_kept_area_fraction must lie in [0, 1]");
  }
  for (const AugmentOp& op : ops) {
    std::visit(
        [](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, HorizontalFlip> || std::is_same_v<T, VerticalFlip>) {
            if (!(o.p >= 0.0 && o.p <= 1.0)) fail(ErrorCode::ValidationError, "flip probability must lie in [0, 1]");
          } else if constexpr (std::is_same_v<T, RandomCrop>) {
            if (!(o.min_fraction > 0.0 && o.min_fraction <= 1.0)) {
              fail(ErrorCode::ValidationError, "crop min_fraction must lie in (0, 1]");
            }
          } else {
            if (o.width < 1 || o.height < 1) fail(ErrorCode::ValidationError, "resize target must be positive");
          }
        },
        op);
  }
}

json to_json(const AugmentationSpec& s) {
  json ops = json::array();
  for (const AugmentOp& op : s.ops) {
    std::visit(
        [&](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, HorizontalFlip>) ops.push_back({{"op", "hflip"}, {"p", o.p}});
          else if constexpr (std::is_same_v<T, VerticalFlip>) ops.push_back({{"op", "vflip"}, {"p", o.p}});
          else if constexpr (std::is_same_v<T, RandomCrop>) ops.push_back({{"op", "crop"}, {"min_fraction", o.min_fraction}});
          else ops.push_back({{"op", "resize"}, {"width", o.width}, {"height", o.height}});
        },
        op);
  }
  return json{{"ops", ops},
              {"variants_per_image", s.variants_per_image},
              {"seed", s.seed},
              {"min_kept_area_fraction", s.min_kept_area_fraction}};
}

AugmentationSpec augmentation_from_json(const json& j) {
  AugmentationSpec s;
  try {
    for (const json& op : j.value("ops", json::array())) {
      const std::string kind = op.at("op").get<std::string>();
      if (kind == "hflip") s.ops.emplace_back(HorizontalFlip{op.value("p", 0.5)});
      else if (kind == "vflip") s.ops.emplace_back(VerticalFlip{op.value("p", 0.5)});
      else if (kind == "crop") s.ops.emplace_back(RandomCrop{op.value("min_fraction", 0.5)});
      else if (kind == "resize") s.ops.emplace_back(Resize{op.at("width").get<int>(), op.at("height").get<int>()});
      else fail(ErrorCode::ValidationError, "unknown augmentation op '" + kind + "'");
    }
    s.variants_per_image = j.value("variants_per_image", 1);
    s.seed = j.value("seed", std::uint64_t{0});
    s.min_kept_area_fraction = j.value("min_kept_area_fraction", 0.25);
  } catch (const json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("augmentation: ") + e.what());
  }
  s.validate();
  return s;
}

json to_json(const AugmentedSample& s) {
  json anns = json::array();
  for (const Annotation& a : s.annotations) {
    anns.push_back({{"annotation_id", a.annotation_id}, {"label_id", a.label_id}, {"polygon", polygon_to_json(a.polygon)}});
  }
  return json{{"image_id", s.image_id}, {"variant", s.variant}, {"width", s.width},
              {"height", s.height},     {"steps", s.steps},     {"annotations", anns}};
}

namespace {

geometry::Polygon clamp_to(const geometry::Polygon& poly, double w, double h) {
  std::vector<geometry::Point> pts(poly.vertices().begin(), poly.vertices().end());
  for (auto& p : pts) {
    p.x = std::clamp(p.x, 0.0, w);
    p.y = std::clamp(p.y, 0.0, h);
  }
  return geometry::Polygon(std::move(pts));
}

struct Working {
  Annotation annotation;
  double reference_area = 0.0;  // original area times the accumulated scale
};

}  // namespace

std::optional<geometry::Polygon> crop_polygon(const geometry::Polygon& poly, const geometry::PixelRect& window,
                                              double reference_area, double min_fraction) {
  auto clipped = geometry::clip_polygon_to_rect(poly, window);
  if (!clipped) return std::nullopt;
  if (std::abs(geometry::polygon_area(*clipped)) < min_fraction * reference_area) return std::nullopt;
  return geometry::transform_polygon(*clipped, geometry::AffineTransform::translate(-window.x0, -window.y0));
}

std::vector<AugmentedSample> augment(const ImageRecord& image, std::span<const Annotation> annotations,
                                     const AugmentationSpec& spec) {
  spec.validate();
  std::vector<AugmentedSample> out;
  for (int v = 0; v < spec.variants_per_image; ++v) {
    Rng rng(derive_seed(spec.seed, image.image_id.str() + "#" + std::to_string(v)));
    int w = image.width;
    int h = image.height;
    std::vector<Working> items;
    for (const Annotation& a : annotations) {
      Annotation copy = a;
      copy.history.clear();
      const double area = std::abs(geometry::polygon_area(a.polygon));
      items.push_back({std::move(copy), area});
    }
    AugmentedSample sample{image.image_id, v, 0, 0, {}, {}};

    auto map_all = [&](const geometry::AffineTransform& t, double scale) {
      for (Working& it : items) {
        it.annotation.polygon = clamp_to(geometry::transform_polygon(it.annotation.polygon, t), w, h);
        it.reference_area *= scale;
      }
    };

    for (const AugmentOp& op : spec.ops) {
      if (const auto* f = std::get_if<HorizontalFlip>(&op)) {
        if (rng.bernoulli(f->p)) {
          map_all(geometry::AffineTransform::horizontal_flip(w), 1.0);
          sample.steps.push_back({{"op", "hflip"}});
        }
      } else if (const auto* f = std::get_if<VerticalFlip>(&op)) {
        if (rng.bernoulli(f->p)) {
          map_all(geometry::AffineTransform::vertical_flip(h), 1.0);
          sample.steps.push_back({{"op", "vflip"}});
        }
      } else if (const auto* c = std::get_if<RandomCrop>(&op)) {
        const double fw = rng.uniform(c->min_fraction, 1.0);
        const double fh = rng.uniform(c->min_fraction, 1.0);
        const int cw = std::clamp(static_cast<int>(std::lround(fw * w)), 1, w);
        const int ch = std::clamp(static_cast<int>(std::lround(fh * h)), 1, h);
        const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - cw + 1)));
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - ch + 1)));
        const geometry::PixelRect window{double(x), double(y), double(cw), double(ch)};
        std::vector<Working> kept;
        for (Working& it : items) {
          if (auto p = crop_polygon(it.annotation.polygon, window, it.reference_area, spec.min_kept_area_fraction)) {
            it.annotation.polygon = clamp_to(*p, cw, ch);
            kept.push_back(std::move(it));
          }
        }
        items = std::move(kept);
        w = cw;
        h = ch;
        sample.steps.push_back({{"op", "crop"}, {"x", x}, {"y", y}, {"width", cw}, {"height", ch}});
      } else if (const auto* r = std::get_if<Resize>(&op)) {
        const double sx = static_cast<double>(r->width) / w;
        const double sy = static_cast<double>(r->height) / h;
        const int old_w = w, old_h = h;
        w = r->width;
        h = r->height;
        map_all(geometry::AffineTransform::scale(sx, sy), sx * sy);
        sample.steps.push_back({{"op", "resize"}, {"width", w}, {"height", h}, {"from", {old_w, old_h}}});
      }
    }
    sample.width = w;
    sample.height = h;
    for (Working& it : items) sample.annotations.push_back(std::move(it.annotation));
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<AugmentedSample> augment(const ImageId& image, const AugmentationSpec& spec, const Catalog& catalog,
                                     const AnnotationStore& store, bool include_auto_accepted) {
  const ImageRecord& record = catalog.image(image);
  std::vector<Annotation> eligible;
  for (Annotation& a : store.for_image(image)) {
    if (is_export_eligible(a, include_auto_accepted)) eligible.push_back(std::move(a));
  }
  if (eligible.empty()) fail(ErrorCode::NoAcceptedAnnotations, image.str());
  std::sort(eligible.begin(), eligible.end(),
            [](const Annotation& a, const Annotation& b) { return a.annotation_id < b.annotation_id; });
  return augment(record, eligible, spec);
}

// Export / import

std::string_view to_string(ExportFormat f) noexcept {
  switch (f) {
    case ExportFormat::Canonical: return "canonical";
    case ExportFormat::Coco: return "coco";
    case ExportFormat::Voc: return "voc";
  }
  return "?";
}

ExportFormat parse_export_format(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "canonical") return ExportFormat::Canonical;
  if (lower == "coco") return ExportFormat::Coco;
  if (lower == "voc") return ExportFormat::Voc;
  fail(ErrorCode::UnsupportedFormat, std::string(s));
}

namespace {

struct Category {
  int id;
  LabelClass label;
};

std::vector<Category> label_map(const DatasetSelection& selection, const Catalog& catalog) {
  std::vector<LabelClass> labels = catalog.hierarchy().labels();
  std::sort(labels.begin(), labels.end(),
            [](const LabelClass& a, const LabelClass& b) { return a.label_id < b.label_id; });
  std::vector<Category> out;
  for (LabelClass& l : labels) {
    if (selection.label_filter && !selection.label_filter->contains(l.label_id)) continue;
    out.push_back({static_cast<int>(out.size()) + 1, std::move(l)});
  }
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  write_file_atomic(path, doc.dump(2) + "\n");
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Bounds {
  double x0, y0, x1, y1;
};

Bounds exact_bounds(const geometry::Polygon& poly) {
  Bounds b{poly[0].x, poly[0].y, poly[0].x, poly[0].y};
  for (const auto& p : poly.vertices()) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

struct Subset {
  std::string name;
  std::vector<ImageId> images;
};

class Exporter {
 public:
  Exporter(const Catalog& catalog, const AnnotationStore& store, const DatasetSelection& selection,
           const SplitResult& split, const fs::path& out, bool copy_images)
      : catalog_(catalog), store_(store), selection_(selection), split_(split), out_(out), copy_(copy_images) {
    categories_ = label_map(selection, catalog);
    for (const Category& c : categories_) category_of_[c.label.label_id] = c.id;
    subsets_ = {{"train", split.train}, {"eval", split.eval}};
    for (Subset& s : subsets_) std::sort(s.images.begin(), s.images.end());
  }

  ExportSummary run(ExportFormat format) {
    check_split();
    fs::create_directories(out_);
    ExportSummary summary{out_, subsets_[0].images.size(), subsets_[1].images.size(), 0, 0};
    for (std::size_t i = 0; i < subsets_.size(); ++i) {
      const fs::path dir = out_ / subsets_[i].name;
      fs::create_directories(dir);
      std::size_t n = 0;
      switch (format) {
        case ExportFormat::Canonical: n = write_canonical(subsets_[i], dir); break;
        case ExportFormat::Coco: n = write_coco(subsets_[i], dir); break;
        case ExportFormat::Voc: n = write_voc(subsets_[i], dir); break;
      }
      (i == 0 ? summary.train_annotations : summary.eval_annotations) = n;
    }
    write_manifest(format, summary);
    return summary;
  }

 private:
  void check_split() const {
    const std::vector<ImageId> selected = selected_images(selection_, catalog_, store_);
    const std::set<ImageId> allowed(selected.begin(), selected.end());
    std::set<ImageId> seen;
    for (const Subset& s : subsets_) {
      for (const ImageId& id : s.images) {
        if (!allowed.contains(id)) {
          fail(ErrorCode::ValidationError, "split image '" + id.str() + "' is not in the selection");
        }
        if (!seen.insert(id).second) fail(ErrorCode::ValidationError, "image '" + id.str() + "' appears twice");
      }
    }
  }

  std::vector<Annotation> annotations_of(const ImageId& id) const {
    std::vector<Annotation> out;
    for (Annotation& a : selected_annotations(selection_, store_, id)) {
      if (category_of_.contains(a.label_id)) out.push_back(std::move(a));
    }
    return out;
  }

  std::string image_ref(const ImageRecord& img, const fs::path& subset_dir) const {
    if (!copy_) return img.file_path;
    if (!catalog_.data_root()) fail(ErrorCode::IoFailure, "cannot copy images without a data root");
    const fs::path src = *catalog_.data_root() / img.file_path;
    const std::string name = img.image_id.str() + src.extension().string();
    fs::create_directories(subset_dir / "images");
    std::error_code ec;
    fs::copy_file(src, subset_dir / "images" / name, fs::copy_options::overwrite_existing, ec);
    if (ec) fail(ErrorCode::IoFailure, "copy " + src.string() + ": " + ec.message());
    return "images/" + name;
  }

  std::size_t write_canonical(const Subset& subset, const fs::path& dir) {
    json images = json::array();
    std::size_t count = 0;
    for (const ImageId& id : subset.images) {
      const ImageRecord& img = catalog_.image(id);
      json anns = json::array();
      for (const Annotation& a : annotations_of(id)) {
        anns.push_back({{"annotation_id", a.annotation_id},
                        {"label_id", a.label_id},
                        {"label_name", catalog_.hierarchy().label(a.label_id).name},
                        {"polygon", polygon_to_json(a.polygon)},
                        {"status", to_string(a.status)},
                        {"author", {{"kind", to_string(a.author.kind)}, {"id", a.author.id}}},
                        {"confidence", a.confidence}});
        ++count;
      }
      images.push_back({{"image_id", id},
                        {"folder_id", img.folder_id},
                        {"file_path", image_ref(img, dir)},
                        {"width", img.width},
                        {"height", img.height},
                        {"annotations", anns}});
    }
    write_json(dir / "annotations.json", json{{"subset", subset.name}, {"images", images}});
    return count;
  }

  std::size_t write_coco(const Subset& subset, const fs::path& dir) {
    json images = json::array();
    json anns = json::array();
    for (const ImageId& id : subset.images) {
      const ImageRecord& img = catalog_.image(id);
      const int image_num = ++next_image_;
      images.push_back({{"id", image_num},
                        {"file_name", image_ref(img, dir)},
                        {"width", img.width},
                        {"height", img.height}});
      for (const Annotation& a : annotations_of(id)) {
        json seg = json::array();
        for (const auto& p : a.polygon.vertices()) {
          seg.push_back(p.x);
          seg.push_back(p.y);
        }
        const Bounds b = exact_bounds(a.polygon);
        anns.push_back({{"id", ++next_annotation_},
                        {"image_id", image_num},
                        {"category_id", category_of_.at(a.label_id)},
                        {"segmentation", json::array({seg})},
                        {"bbox", {b.x0, b.y0, b.x1 - b.x0, b.y1 - b.y0}},
                        {"area", std::abs(geometry::polygon_area(a.polygon))},
                        {"iscrowd", 0}});
      }
    }
    json cats = json::array();
    for (const Category& c : categories_) {
      const auto& path = c.label.hierarchy_path;
      const std::string super = path.size() >= 2 ? catalog_.hierarchy().node(path[path.size() - 2]).name : "";
      cats.push_back({{"id", c.id}, {"name", c.label.label_id}, {"supercategory", super}});
    }
    const std::size_t count = anns.size();
    write_json(dir / ("instances_" + subset.name + ".json"),
               json{{"info", {{"description", "annoforge export"}, {"version", "1.0"}}},
                    {"images", images},
                    {"annotations", anns},
                    {"categories", cats}});
    return count;
  }

  std::size_t write_voc(const Subset& subset, const fs::path& dir) {
    fs::create_directories(dir / "Annotations");
    std::string list;
    std::size_t count = 0;
    for (const ImageId& id : subset.images) {
      const ImageRecord& img = catalog_.image(id);
      std::string xml = "<annotation>\n";
      xml += "  <folder>" + xml_escape(img.folder_id.str()) + "</folder>\n";
      xml += "  <filename>" + xml_escape(image_ref(img, dir)) + "</filename>\n";
      xml += "  <size>\n    <width>" + std::to_string(img.width) + "</width>\n    <height>" +
             std::to_string(img.height) + "</height>\n    <depth>3</depth>\n  </size>\n";
      xml += "  <segmented>0</segmented>\n";
      for (const Annotation& a : annotations_of(id)) {
        // 1-based inclusive pixel indices of the covered pixel range.
        const Bounds b = exact_bounds(a.polygon);
        const long xmin = static_cast<long>(std::floor(b.x0)) + 1;
        const long ymin = static_cast<long>(std::floor(b.y0)) + 1;
        const long xmax = std::max(xmin, static_cast<long>(std::ceil(b.x1)));
        const long ymax = std::max(ymin, static_cast<long>(std::ceil(b.y1)));
        xml += "  <object>\n    <name>" + xml_escape(a.label_id.str()) +
               "</name>\n    <pose>Unspecified</pose>\n    <truncated>0</truncated>\n    <difficult>0</difficult>\n";
        xml += "    <bndbox>\n      <xmin>" + std::to_string(xmin) + "</xmin>\n      <ymin>" + std::to_string(ymin) +
               "</ymin>\n      <xmax>" + std::to_string(xmax) + "</xmax>\n      <ymax>" + std::to_string(ymax) +
               "</ymax>\n    </bndbox>\n  </object>\n";
        ++count;
      }
      xml += "</annotation>\n";
      write_file_atomic(dir / "Annotations" / (id.str() + ".xml"), xml);
      list += id.str() + "\n";
    }
    write_file_atomic(dir / (subset.name + ".txt"), list);
    return count;
  }

  void write_manifest(ExportFormat format, const ExportSummary& s) const {
    json labels = json::array();
    for (const Category& c : categories_) {
      labels.push_back({{"category_id", c.id}, {"label_id", c.label.label_id}, {"name", c.label.name}});
    }
    write_json(out_ / "manifest.json",
               json{{"format", to_string(format)},
                    {"version", 1},
                    {"seed", split_.seed},
                    {"ratio", split_.ratio},
                    {"selection", to_json(selection_)},
                    {"images_copied", copy_},
                    {"counts",
                     {{"train_images", s.train_images},
                      {"eval_images", s.eval_images},
                      {"train_annotations", s.train_annotations},
                      {"eval_annotations", s.eval_annotations}}},
                    {"label_map", labels}});
  }

  const Catalog& catalog_;
  const AnnotationStore& store_;
  const DatasetSelection& selection_;
  const SplitResult& split_;
  fs::path out_;
  bool copy_;
  std::vector<Category> categories_;
  std::map<LabelId, int> category_of_;
  std::vector<Subset> subsets_;
  int next_image_ = 0;
  int next_annotation_ = 0;
};

[[noreturn]] void schema_error(const fs::path& file, const std::string& what) {
  fail(ErrorCode::SchemaViolation, file.string() + ": " + what);
}

json parse_bundle_file(const fs::path& file) {
  if (!fs::exists(file)) schema_error(file, "missing");
  const std::string text = read_file(file);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    schema_error(file, "line " + std::to_string(line) + ": " + e.what());
  }
}

const json& field(const json& obj, const char* name, const fs::path& file, const std::string& where) {
  if (!obj.is_object() || !obj.contains(name)) schema_error(file, where + ": missing field '" + name + "'");
  return obj.at(name);
}

std::string string_field(const json& obj, const char* name, const fs::path& file, const std::string& where) {
  const json& v = field(obj, name, file, where);
  if (!v.is_string()) schema_error(file, where + "." + name + ": expected a string");
  return v.get<std::string>();
}

}  // namespace

ExportSummary export_dataset(const Catalog& catalog, const AnnotationStore& store, const DatasetSelection& selection,
                             const SplitResult& split, ExportFormat format, const fs::path& out_dir,
                             bool copy_images) {
  Exporter exporter(catalog, store, selection, split, out_dir, copy_images);
  return exporter.run(format);
}

std::vector<Annotation> read_canonical(const fs::path& bundle, const Catalog& catalog) {
  const fs::path manifest_path = bundle / "manifest.json";
  const json manifest = parse_bundle_file(manifest_path);
  if (string_field(manifest, "format", manifest_path, "manifest") != "canonical") {
    schema_error(manifest_path, "format is not 'canonical'");
  }
  std::vector<Annotation> out;
  std::set<AnnotationId> seen;
  for (const char* subset : {"train", "eval"}) {
    const fs::path file = bundle / subset / "annotations.json";
    const json doc = parse_bundle_file(file);
    const json& images = field(doc, "images", file, "document");
    if (!images.is_array()) schema_error(file, "images: expected an array");
    for (std::size_t i = 0; i < images.size(); ++i) {
      const std::string at = "images[" + std::to_string(i) + "]";
      const ImageId image(string_field(images[i], "image_id", file, at));
      if (!catalog.has_image(image)) schema_error(file, at + ".image_id: unknown image '" + image.str() + "'");
      const json& anns = field(images[i], "annotations", file, at);
      if (!anns.is_array()) schema_error(file, at + ".annotations: expected an array");
      for (std::size_t k = 0; k < anns.size(); ++k) {
        const std::string where = at + ".annotations[" + std::to_string(k) + "]";
        const json& a = anns[k];
        const AnnotationId ann_id(string_field(a, "annotation_id", file, where));
        if (!seen.insert(ann_id).second) {
          schema_error(file, where + ": duplicate annotation id '" + ann_id.str() + "'");
        }
        const LabelId label(string_field(a, "label_id", file, where));
        if (!catalog.hierarchy().has_label(label)) {
          schema_error(file, where + ".label_id: unknown label '" + label.str() + "'");
        }
        std::optional<geometry::Polygon> polygon;
        try {
          polygon = polygon_from_json(field(a, "polygon", file, where));
        } catch (const Error& e) {
          if (e.code() == ErrorCode::SchemaViolation) throw;
          schema_error(file, where + ".polygon: " + e.detail());
        }
        Author author;
        if (a.contains("author")) {
          try {
            author = Author{parse_author_kind(a.at("author").at("kind").get<std::string>()),
                            a.at("author").at("id").get<std::string>()};
          } catch (const std::exception& e) {
            schema_error(file, where + ".author: " + e.what());
          }
        }
        const json& conf = a.contains("confidence") ? a.at("confidence") : json(1.0);
        if (!conf.is_number() || conf.get<double>() < 0.0 || conf.get<double>() > 1.0) {
          schema_error(file, where + ".confidence: expected a number in [0,1]");
        }
        Annotation ann{ann_id, image, std::move(*polygon), label, author, conf.get<double>(),
                       AnnotationStatus::Accepted, {}, {}, 1, {}};
        out.push_back(std::move(ann));
      }
    }
  }
  return out;
}

std::size_t import_canonical(const fs::path& bundle, const Catalog& catalog, AnnotationStore& store, Timestamp now) {
  std::vector<Annotation> anns = read_canonical(bundle, catalog);
  for (Annotation& a : anns) {
    a.created_at = now;
    a.updated_at = now;
    a.revision = 1;
    a.history = {HistoryEntry{1, "import", "import", now, a.polygon, a.label_id, AnnotationStatus::Accepted, {}}};
    store.restore(a);
  }
  return anns.size();
}

}  // namespace annoforge
