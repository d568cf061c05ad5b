#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "annoforge/active_learning.hpp"
#include "annoforge/annotation.hpp"
#include "annoforge/catalog.hpp"
#include "annoforge/clock.hpp"
#include "annoforge/config.hpp"
#include "annoforge/dataset.hpp"
#include "annoforge/evaluation.hpp"
#include "annoforge/gateway.hpp"
#include "annoforge/lease.hpp"

namespace annoforge {

/// Where the platform keeps its own state inside a data root.
struct StatePaths {
  std::filesystem::path dir;

  explicit StatePaths(const std::filesystem::path& data_root) : dir(data_root / ".annoforge") {}
  std::filesystem::path leases() const { return dir / "leases.jsonl"; }
  std::filesystem::path predictions() const { return dir / "predictions.jsonl"; }
  std::filesystem::path gateway() const { return dir / "gateway.jsonl"; }
  std::filesystem::path metrics() const { return dir / "metrics.jsonl"; }
  std::filesystem::path jobs() const { return dir / "jobs"; }
  std::filesystem::path exports() const { return dir / "exports"; }
};

struct FolderSummary {
  FolderId folder_id;
  std::size_t images = 0;
  std::size_t unannotated = 0;
  std::size_t in_progress = 0;
  std::size_t annotated = 0;
};

struct NextImage {
  ImageRecord image;
  ImageLease lease;
  QueueEntry queue;
};

/// All primary modules wired over one data root.
class Platform {
 public:
  /// Scans the data root, loads annotations, replays the journals and seeds
  /// the model registry. `read_only` skips lease recovery and seeding, for
  /// offline tools running next to a live server.
  /// Throws ConfigError, DataRootCorrupt.
  Platform(ServerConfig config, const Clock& clock, bool read_only = false);
  Platform(const Platform&) = delete;
  Platform& operator=(const Platform&) = delete;

  const ServerConfig& config() const noexcept { return config_; }
  const Clock& clock() const noexcept { return clock_; }
  const Catalog& catalog() const noexcept { return catalog_; }
  AnnotationStore& store() noexcept { return *store_; }
  LockManager& locks() noexcept { return *locks_; }
  Scheduler& scheduler() noexcept { return *scheduler_; }
  MetricsLog& metrics() noexcept { return *metrics_; }
  Gateway& gateway() noexcept { return *gateway_; }

  std::vector<FolderSummary> folders() const;

  /// Highest-priority image of the folder nobody holds. Throws UnknownFolder.
  std::optional<NextImage> next_image(const FolderId& folder, const UserId& user);

  /// Stores the annotation and releases the lease. Throws LockExpired when
  /// the token is not a live lease of `user` on `image`.
  Annotation submit_annotation(const ImageId& image, const LeaseToken& token, const geometry::Polygon& polygon,
                               const LabelId& label, const UserId& user);

  /// Report for one training instance (the newest with predictions when
  /// omitted). Scope is the eval split of that instance's jobs, or every
  /// image with a prediction when no job recorded it.
  /// Throws UnknownModel, NoPredictions.
  std::vector<ClassReport> report(const ModelId& model, std::optional<int> training_instance = {});

  /// Throws UnknownModel, NoData.
  Timeline model_timeline(const ModelId& model) const;
  Timeline class_timeline(const ModelId& model, const LabelId& label) const;

  /// Splits with the configured ratio and seed unless given, then exports.
  ExportSummary export_dataset(const DatasetSelection& selection, ExportFormat format,
                               const std::filesystem::path& out_dir, std::optional<double> ratio = {},
                               std::optional<std::uint64_t> seed = {}, bool copy_images = false);

 private:
  ServerConfig config_;
  const Clock& clock_;
  Catalog catalog_;
  std::unique_ptr<AnnotationStore> store_;
  std::unique_ptr<LockManager> locks_;
  std::unique_ptr<Scheduler> scheduler_;
  std::unique_ptr<MetricsLog> metrics_;
  std::unique_ptr<Gateway> gateway_;
};

}  // namespace annoforge
