#include "annoforge/catalog.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>

#include "annoforge/error.hpp"

namespace fs = std::filesystem;

namespace annoforge {
namespace {

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

std::uint16_t be16(const unsigned char* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::optional<ImageSize> probe_png(std::istream& in) {
  std::array<unsigned char, 24> head{};
  if (!in.read(reinterpret_cast<char*>(head.data()), head.size())) return std::nullopt;
  static constexpr unsigned char sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (!std::equal(std::begin(sig), std::end(sig), head.begin())) return std::nullopt;
  if (std::string(reinterpret_cast<char*>(head.data() + 12), 4) != "IHDR") return std::nullopt;
  const auto w = be32(head.data() + 16);
  const auto h = be32(head.data() + 20);
  if (w == 0 || h == 0 || w > 1u << 30 || h > 1u << 30) return std::nullopt;
  return ImageSize{static_cast<int>(w), static_cast<int>(h)};
}

bool is_sof(unsigned char marker) {
  return marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8 && marker != 0xCC;
}

std::optional<ImageSize> probe_jpeg(std::istream& in) {
  unsigned char soi[2];
  if (!in.read(reinterpret_cast<char*>(soi), 2) || soi[0] != 0xFF || soi[1] != 0xD8) return std::nullopt;
  for (;;) {
    int c = in.get();
    if (c == EOF) return std::nullopt;
    if (c != 0xFF) return std::nullopt;
    while (c == 0xFF) c = in.get();
    if (c == EOF) return std::nullopt;
    const auto marker = static_cast<unsigned char>(c);
    if (marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) continue;
    if (marker == 0xD9 || marker == 0xDA) return std::nullopt;
    unsigned char len_bytes[2];
    if (!in.read(reinterpret_cast<char*>(len_bytes), 2)) return std::nullopt;
    const std::uint16_t len = be16(len_bytes);
    if (len < 2) return std::nullopt;
    if (is_sof(marker)) {
      unsigned char sof[5];
      if (!in.read(reinterpret_cast<char*>(sof), 5)) return std::nullopt;
      const int h = be16(sof + 1);
      const int w = be16(sof + 3);
      if (w == 0 || h == 0) return std::nullopt;
      return ImageSize{w, h};
    }
    in.seekg(len - 2, std::ios::cur);
    if (!in) return std::nullopt;
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool has_image_extension(const fs::path& p) {
  const std::string ext = lower(p.extension().string());
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> dirs;
  if (!fs::is_directory(dir)) return dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::DataRootCorrupt, path.string() + ": cannot open");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::DataRootCorrupt, path.string() + ": " + e.what());
  }
}

void parse_node(const nlohmann::json& j, const std::optional<NodeId>& parent, std::vector<NodeId> path,
                std::map<NodeId, HierarchyNode>& nodes, std::map<LabelId, LabelClass>& labels) {
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
    fail(ErrorCode::DataRootCorrupt, "hierarchy node without string id");
  }
  HierarchyNode node;
  node.node_id = NodeId(j["id"].get<std::string>());
  node.name = j.value("name", node.node_id.str());
  node.parent = parent;
  if (nodes.contains(node.node_id)) {
    fail(ErrorCode::DataRootCorrupt, "hierarchy node '" + node.node_id.str() + "' appears twice");
  }
  path.push_back(node.node_id);

  const auto children = j.value("children", nlohmann::json::array());
  if (!children.is_array()) fail(ErrorCode::DataRootCorrupt, "children of '" + node.node_id.str() + "' not a list");
  if (children.empty() && parent.has_value()) {
    node.label = LabelId(j.contains("label") ? j["label"].get<std::string>() : node.node_id.str());
    if (labels.contains(*node.label)) {
      fail(ErrorCode::DataRootCorrupt, "label '" + node.label->str() + "' assigned to two leaves");
    }
    labels[*node.label] = LabelClass{*node.label, node.name, path};
  } else if (j.contains("label")) {
    fail(ErrorCode::DataRootCorrupt, "label on inner node '" + node.node_id.str() + "'");
  }

  for (const auto& child : children) node.children.push_back(NodeId(child.value("id", std::string{})));
  const NodeId id = node.node_id;
  nodes[id] = std::move(node);
  for (const auto& child : children) parse_node(child, id, path, nodes, labels);
}

nlohmann::json node_to_json(const std::map<NodeId, HierarchyNode>& nodes, const NodeId& id) {
  const auto& node = nodes.at(id);
  nlohmann::json j{{"id", node.node_id}, {"name", node.name}};
  if (node.label) j["label"] = *node.label;
  nlohmann::json children = nlohmann::json::array();
  for (const auto& c : node.children) children.push_back(node_to_json(nodes, c));
  j["children"] = std::move(children);
  return j;
}

}  // namespace

std::optional<ImageSize> probe_image_size(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  if (auto png = probe_png(in)) return png;
  in.clear();
  in.seekg(0);
  return probe_jpeg(in);
}

Hierarchy Hierarchy::from_json(const nlohmann::json& doc) {
  Hierarchy h;
  parse_node(doc, std::nullopt, {}, h.nodes_, h.labels_);
  h.root_ = NodeId(doc["id"].get<std::string>());
  return h;
}

nlohmann::json Hierarchy::to_json() const {
  if (nodes_.empty()) return nlohmann::json::object();
  return node_to_json(nodes_, root_);
}

std::vector<HierarchyNode> Hierarchy::children(const std::optional<NodeId>& id) const {
  std::vector<HierarchyNode> out;
  if (nodes_.empty()) {
    if (id) fail(ErrorCode::UnknownNode, id->str());
    return out;
  }
  const HierarchyNode& parent = node(id.value_or(root_));
  for (const auto& c : parent.children) out.push_back(nodes_.at(c));
  return out;
}

const HierarchyNode& Hierarchy::node(const NodeId& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) fail(ErrorCode::UnknownNode, id.str());
  return it->second;
}

const LabelClass& Hierarchy::label(const LabelId& id) const {
  auto it = labels_.find(id);
  if (it == labels_.end()) fail(ErrorCode::UnknownLabel, id.str());
  return it->second;
}

std::vector<LabelClass> Hierarchy::labels() const {
  std::vector<LabelClass> out;
  for (const auto& [_, l] : labels_) out.push_back(l);
  return out;
}

Catalog Catalog::load(const fs::path& data_root) {
  if (!fs::is_directory(data_root)) {
    fail(ErrorCode::DataRootCorrupt, data_root.string() + ": not a directory");
  }
  Catalog cat;
  cat.data_root_ = data_root;

  const fs::path hierarchy_file = data_root / "hierarchy.json";
  if (fs::exists(hierarchy_file)) {
    try {
      cat.hierarchy_ = Hierarchy::from_json(read_json_file(hierarchy_file));
    } catch (const Error& e) {
      fail(ErrorCode::DataRootCorrupt, hierarchy_file.string() + ": " + e.detail());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::DataRootCorrupt, hierarchy_file.string() + ": " + e.what());
    }
  }

  std::map<ImageId, fs::path> seen;
  for (const auto& folder_dir : sorted_dirs(data_root / "folders")) {
    const FolderId folder(folder_dir.filename().string());
    cat.add_folder(folder);
    for (const auto& file : sorted_files(folder_dir / "images")) {
      const ImageId id(file.stem().string());
      if (auto it = seen.find(id); it != seen.end()) {
        fail(ErrorCode::DataRootCorrupt,
             "image id '" + id.str() + "' used by " + it->second.string() + " and " + file.string());
      }
      seen[id] = file;
      const auto size = probe_image_size(file);
      if (!size) fail(ErrorCode::DataRootCorrupt, file.string() + ": unreadable PNG/JPEG header");
      cat.add_image(ImageRecord{id, folder, fs::relative(file, data_root).generic_string(), size->width,
                                size->height});
    }
  }

  for (const auto& ref_dir : sorted_dirs(data_root / "references")) {
    const LabelId label(ref_dir.filename().string());
    if (!cat.hierarchy_.has_label(label)) {
      fail(ErrorCode::DataRootCorrupt, ref_dir.string() + ": no such label in hierarchy");
    }
    nlohmann::json captions = nlohmann::json::object();
    if (fs::exists(ref_dir / "captions.json")) captions = read_json_file(ref_dir / "captions.json");
    for (const auto& file : sorted_files(ref_dir)) {
      ReferenceImage ref{label, fs::relative(file, data_root).generic_string(), std::nullopt};
      const std::string name = file.filename().string();
      if (captions.contains(name)) ref.caption = captions[name].get<std::string>();
      cat.add_reference(std::move(ref));
    }
  }
  return cat;
}

void Catalog::add_folder(const FolderId& folder) {
  folders_.try_emplace(folder);
}

void Catalog::add_image(ImageRecord image) {
  if (image.width <= 0 || image.height <= 0) {
    fail(ErrorCode::ValidationError, "image '" + image.image_id.str() + "' has non-positive size");
  }
  if (images_.contains(image.image_id)) {
    fail(ErrorCode::ValidationError, "duplicate image id '" + image.image_id.str() + "'");
  }
  auto& list = folders_[image.folder_id];
  list.push_back(image.image_id);
  images_.emplace(image.image_id, std::move(image));
}

void Catalog::add_reference(ReferenceImage ref) {
  if (!hierarchy_.has_label(ref.label_id)) fail(ErrorCode::UnknownLabel, ref.label_id.str());
  references_[ref.label_id].push_back(std::move(ref));
}

std::vector<FolderId> Catalog::folders() const {
  std::vector<FolderId> out;
  for (const auto& [id, _] : folders_) out.push_back(id);
  return out;
}

std::vector<ImageRecord> Catalog::images_in(const FolderId& folder) const {
  auto it = folders_.find(folder);
  if (it == folders_.end()) fail(ErrorCode::UnknownFolder, folder.str());
  std::vector<ImageRecord> out;
  for (const auto& id : it->second) out.push_back(images_.at(id));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.file_path < b.file_path; });
  return out;
}

const ImageRecord& Catalog::image(const ImageId& id) const {
  auto it = images_.find(id);
  if (it == images_.end()) fail(ErrorCode::UnknownImage, id.str());
  return it->second;
}

std::vector<ReferenceImage> Catalog::references_for(const LabelId& label) const {
  if (!hierarchy_.has_label(label)) fail(ErrorCode::UnknownLabel, label.str());
  auto it = references_.find(label);
  if (it == references_.end()) return {};
  return it->second;
}

}  // namespace annoforge
