#include "annoforge/lease.hpp"

#include <cstdio>
#include <random>

#include "annoforge/error.hpp"

using nlohmann::json;

namespace annoforge {
namespace {

json acquire_record(const ImageLease& l) {
  return json{{"op", "acquire"},
              {"token", l.token},
              {"image_id", l.image_id},
              {"folder_id", l.folder_id},
              {"holder", l.holder},
              {"acquired_at", to_millis(l.acquired_at)},
              {"last_activity", to_millis(l.last_activity)},
              {"ttl_ms", l.ttl.count()}};
}

}  // namespace

LockManager::LockManager(Millis ttl, std::optional<std::filesystem::path> journal_path)
    : ttl_(ttl), journal_path_(std::move(journal_path)) {
  if (ttl_ <= Millis::zero()) fail(ErrorCode::ConfigError, "lease ttl must be positive");
  if (journal_path_) journal_ = std::make_unique<Journal>(*journal_path_);
}

void LockManager::recover(Timestamp now) {
  if (!journal_path_) return;
  std::lock_guard lock(mu_);
  by_token_.clear();
  by_image_.clear();
  by_holder_.clear();
  for (const json& r : Journal::read_all(*journal_path_)) {
    const std::string op = r.value("op", "");
    const LeaseToken token(r.value("token", ""));
    if (op == "acquire") {
      ImageLease l{token,
                   ImageId(r.at("image_id").get<std::string>()),
                   FolderId(r.at("folder_id").get<std::string>()),
                   UserId(r.at("holder").get<std::string>()),
                   from_millis(r.at("acquired_at").get<std::int64_t>()),
                   from_millis(r.at("last_activity").get<std::int64_t>()),
                   Millis(r.value("ttl_ms", ttl_.count()))};
      insert_locked(std::move(l));
    } else if (op == "heartbeat") {
      if (auto it = by_token_.find(token); it != by_token_.end()) {
        it->second.last_activity = from_millis(r.at("at").get<std::int64_t>());
      }
    } else if (op == "release") {
      erase_locked(token, false);
    }
  }
  std::vector<LeaseToken> stale;
  for (const auto& [token, l] : by_token_) {
    if (l.expired_at(now)) stale.push_back(token);
  }
  for (const auto& t : stale) erase_locked(t, false);

  std::vector<json> live;
  for (const auto& [_, l] : by_token_) live.push_back(acquire_record(l));
  journal_->rewrite(live);
}

LeaseToken LockManager::new_token() const {
  std::random_device rd;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%08x%08x%08x%08x", rd(), rd(), rd(), rd());
  return LeaseToken(buf);
}

void LockManager::insert_locked(ImageLease lease) {
  by_image_[lease.image_id] = lease.token;
  by_holder_[HolderKey{lease.holder, lease.folder_id}] = lease.token;
  const LeaseToken token = lease.token;
  by_token_.insert_or_assign(token, std::move(lease));
}

void LockManager::erase_locked(const LeaseToken& token, bool journal) {
  auto it = by_token_.find(token);
  if (it == by_token_.end()) return;
  const ImageLease& l = it->second;
  if (auto im = by_image_.find(l.image_id); im != by_image_.end() && im->second == token) by_image_.erase(im);
  if (auto h = by_holder_.find(HolderKey{l.holder, l.folder_id}); h != by_holder_.end() && h->second == token) {
    by_holder_.erase(h);
  }
  by_token_.erase(it);
  if (journal && journal_) journal_->append(json{{"op", "release"}, {"token", token}});
}

std::size_t LockManager::sweep_locked(Timestamp now) {
  std::vector<LeaseToken> stale;
  for (const auto& [token, l] : by_token_) {
    if (l.expired_at(now)) stale.push_back(token);
  }
  for (const auto& t : stale) erase_locked(t, true);
  return stale.size();
}

std::optional<ImageLease> LockManager::acquire_next(const FolderId& folder, const UserId& user, Timestamp now,
                                                    std::span<const ImageId> priority_order) {
  std::lock_guard lock(mu_);
  sweep_locked(now);
  if (auto h = by_holder_.find(HolderKey{user, folder}); h != by_holder_.end()) {
    return by_token_.at(h->second);
  }
  for (const ImageId& image : priority_order) {
    if (by_image_.contains(image)) continue;
    ImageLease l{new_token(), image, folder, user, now, now, ttl_};
    if (journal_) journal_->append(acquire_record(l));
    insert_locked(l);
    return l;
  }
  return std::nullopt;
}

ImageLease LockManager::heartbeat(const LeaseToken& token, Timestamp now) {
  std::lock_guard lock(mu_);
  auto it = by_token_.find(token);
  if (it == by_token_.end()) fail(ErrorCode::UnknownToken, token.str());
  if (it->second.expired_at(now)) {
    erase_locked(token, true);
    fail(ErrorCode::LeaseExpired, "lease " + token.str() + " expired");
  }
  it->second.last_activity = now;
  if (journal_) journal_->append(json{{"op", "heartbeat"}, {"token", token}, {"at", to_millis(now)}});
  return it->second;
}

bool LockManager::release(const LeaseToken& token, Timestamp now) {
  std::lock_guard lock(mu_);
  auto it = by_token_.find(token);
  if (it == by_token_.end()) return false;
  const bool live = !it->second.expired_at(now);
  erase_locked(token, true);
  return live;
}

std::size_t LockManager::expire_stale(Timestamp now) {
  std::lock_guard lock(mu_);
  return sweep_locked(now);
}

TokenCheck LockManager::validate_token(const LeaseToken& token, const ImageId& image, Timestamp now) const {
  std::lock_guard lock(mu_);
  auto it = by_token_.find(token);
  if (it == by_token_.end() || it->second.image_id != image || it->second.expired_at(now)) return TokenCheck::Stale;
  return TokenCheck::Ok;
}

std::optional<ImageLease> LockManager::lease_for_image(const ImageId& image, Timestamp now) const {
  std::lock_guard lock(mu_);
  auto it = by_image_.find(image);
  if (it == by_image_.end()) return std::nullopt;
  const ImageLease& l = by_token_.at(it->second);
  if (l.expired_at(now)) return std::nullopt;
  return l;
}

std::vector<ImageLease> LockManager::live_leases(Timestamp now) const {
  std::lock_guard lock(mu_);
  std::vector<ImageLease> out;
  for (const auto& [_, l] : by_token_) {
    if (!l.expired_at(now)) out.push_back(l);
  }
  return out;
}

}  // namespace annoforge
