#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "annoforge/clock.hpp"
#include "annoforge/ids.hpp"
#include "annoforge/journal.hpp"

namespace annoforge {

inline constexpr Millis kDefaultLeaseTtl = std::chrono::minutes(30);

struct ImageLease {
  LeaseToken token;
  ImageId image_id;
  FolderId folder_id;
  UserId holder;
  Timestamp acquired_at{};
  Timestamp last_activity{};
  Millis ttl = kDefaultLeaseTtl;

  /// Expired once idle for strictly longer than the ttl.
  bool expired_at(Timestamp now) const noexcept { return now - last_activity > ttl; }
  Timestamp expires_at() const noexcept { return last_activity + ttl; }
};

enum class TokenCheck { Ok, Stale };

/// Exclusive, expiring image claims. One mutex covers the whole table, so
/// every operation is atomic with respect to the others. Expiry is checked
/// lazily by each operation and eagerly by expire_stale(); both use
/// ImageLease::expired_at.
///
/// A holder keeps at most one lease per folder.
class LockManager {
 public:
  explicit LockManager(Millis ttl = kDefaultLeaseTtl, std::optional<std::filesystem::path> journal_path = {});

  /// Rebuilds the table from the journal, drops leases expired at `now` and
  /// compacts the file.
  void recover(Timestamp now);

  /// First image of `priority_order` without a live lease. The caller passes
  /// only images that still need annotation. A holder that already owns a
  /// live lease in the folder gets it back unchanged.
  std::optional<ImageLease> acquire_next(const FolderId& folder, const UserId& user, Timestamp now,
                                         std::span<const ImageId> priority_order);

  /// Throws Error(UnknownToken) or Error(LeaseExpired).
  ImageLease heartbeat(const LeaseToken& token, Timestamp now);

  /// True iff a live lease was removed. Idempotent.
  bool release(const LeaseToken& token, Timestamp now);

  std::size_t expire_stale(Timestamp now);

  TokenCheck validate_token(const LeaseToken& token, const ImageId& image, Timestamp now) const;

  std::optional<ImageLease> lease_for_image(const ImageId& image, Timestamp now) const;
  std::vector<ImageLease> live_leases(Timestamp now) const;

  Millis ttl() const noexcept { return ttl_; }

 private:
  struct HolderKey {
    UserId user;
    FolderId folder;
    friend auto operator<=>(const HolderKey&, const HolderKey&) = default;
  };

  void insert_locked(ImageLease lease);
  void erase_locked(const LeaseToken& token, bool journal);
  std::size_t sweep_locked(Timestamp now);
  LeaseToken new_token() const;

  Millis ttl_;
  std::unique_ptr<Journal> journal_;
  std::optional<std::filesystem::path> journal_path_;

  mutable std::mutex mu_;
  std::map<LeaseToken, ImageLease> by_token_;
  std::map<ImageId, LeaseToken> by_image_;
  std::map<HolderKey, LeaseToken> by_holder_;
};

}  // namespace annoforge
