#pragma once

#include <compare>
#include <functional>
#include <ostream>
#include <string>
#include <utility>

#include "json.hpp"

namespace annoforge {

// Opaque string identifier tagged by the entity it names, so an ImageId can
// never be passed where a LabelId is expected.
template <typename Tag>
class Id {
 public:
  Id() = default;
  explicit Id(std::string value) : value_(std::move(value)) {}
  explicit Id(const char* value) : value_(value) {}

  const std::string& str() const noexcept { return value_; }
  bool empty() const noexcept { return value_.empty(); }

  friend auto operator<=>(const Id&, const Id&) = default;
  friend bool operator==(const Id&, const Id&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Id& id) {
    return os << id.value_;
  }

 private:
  std::string value_;
};

struct FolderTag;
struct ImageTag;
struct LabelTag;
struct NodeTag;
struct AnnotationTag;
struct UserTag;
struct ModelTag;
struct JobTag;
struct PredictionTag;
struct WorkerTag;
struct LeaseTag;

using FolderId = Id<FolderTag>;
using ImageId = Id<ImageTag>;
using LabelId = Id<LabelTag>;
using NodeId = Id<NodeTag>;
using AnnotationId = Id<AnnotationTag>;
using UserId = Id<UserTag>;
using ModelId = Id<ModelTag>;
using JobId = Id<JobTag>;
using PredictionId = Id<PredictionTag>;
using WorkerId = Id<WorkerTag>;
using LeaseToken = Id<LeaseTag>;

template <typename Tag>
void to_json(nlohmann::json& j, const Id<Tag>& id) {
  j = id.str();
}

template <typename Tag>
void from_json(const nlohmann::json& j, Id<Tag>& id) {
  id = Id<Tag>(j.get<std::string>());
}

}  // namespace annoforge

template <typename Tag>
struct std::hash<annoforge::Id<Tag>> {
  std::size_t operator()(const annoforge::Id<Tag>& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
