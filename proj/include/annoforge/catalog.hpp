#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "annoforge/ids.hpp"
#include "json.hpp"

namespace annoforge {

struct ImageRecord {
  ImageId image_id;
  FolderId folder_id;
  std::string file_path;  // relative to the data root
  int width = 0;
  int height = 0;
};

struct HierarchyNode {
  NodeId node_id;
  std::string name;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  std::optional<LabelId> label;  // set on leaves only
};

struct LabelClass {
  LabelId label_id;
  std::string name;
  std::vector<NodeId> hierarchy_path;  // root first, leaf last
};

struct ReferenceImage {
  LabelId label_id;
  std::string file_path;  // relative to the data root
  std::optional<std::string> caption;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// Reads width/height from a PNG or JPEG header. Returns nullopt for any other
/// or truncated content.
std::optional<ImageSize> probe_image_size(const std::filesystem::path& path);

/// Label tree behind the cascading class dropdowns. Leaves carry labels.
class Hierarchy {
 public:
  Hierarchy() = default;

  /// Parses the nested `{id, name, label?, children: [...]}` document.
  /// Throws Error(DataRootCorrupt) on duplicate ids or labels on inner nodes.
  static Hierarchy from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  bool empty() const noexcept { return nodes_.empty(); }
  const NodeId& root() const { return root_; }

  /// Immediate children in configured order; the root's when `node` is empty.
  /// Throws Error(UnknownNode).
  std::vector<HierarchyNode> children(const std::optional<NodeId>& node) const;
  const HierarchyNode& node(const NodeId& id) const;

  bool has_label(const LabelId& id) const { return labels_.contains(id); }
  /// Throws Error(UnknownLabel).
  const LabelClass& label(const LabelId& id) const;
  /// Sorted by label id.
  std::vector<LabelClass> labels() const;

 private:
  NodeId root_;
  std::map<NodeId, HierarchyNode> nodes_;
  std::map<LabelId, LabelClass> labels_;
};

/// Folders, images, hierarchy and reference images. Immutable once loaded,
/// so concurrent readers need no locking.
class Catalog {
 public:
  Catalog() = default;

  /// Scans `folders/<id>/images/*`, `hierarchy.json` and `references/<label>/*`.
  /// Throws Error(DataRootCorrupt) naming the offending file.
  static Catalog load(const std::filesystem::path& data_root);

  void add_image(ImageRecord image);
  void add_folder(const FolderId& folder);
  void set_hierarchy(Hierarchy hierarchy) { hierarchy_ = std::move(hierarchy); }
  void add_reference(ReferenceImage ref);

  const std::optional<std::filesystem::path>& data_root() const noexcept { return data_root_; }

  std::vector<FolderId> folders() const;
  bool has_folder(const FolderId& id) const { return folders_.contains(id); }

  /// Images in natural file order. Throws Error(UnknownFolder).
  std::vector<ImageRecord> images_in(const FolderId& folder) const;

  bool has_image(const ImageId& id) const { return images_.contains(id); }
  /// Throws Error(UnknownImage).
  const ImageRecord& image(const ImageId& id) const;

  const Hierarchy& hierarchy() const noexcept { return hierarchy_; }

  /// Throws Error(UnknownLabel).
  std::vector<ReferenceImage> references_for(const LabelId& label) const;

 private:
  std::optional<std::filesystem::path> data_root_;
  std::map<FolderId, std::vector<ImageId>> folders_;
  std::map<ImageId, ImageRecord> images_;
  Hierarchy hierarchy_;
  std::map<LabelId, std::vector<ReferenceImage>> references_;
};

}  // namespace annoforge
