#pragma once

#include <memory>
#include <string>

#include "annoforge/error.hpp"
#include "annoforge/platform.hpp"

namespace annoforge {

/// HTTP status for a library error.
int http_status(ErrorCode code) noexcept;

/// REST front end over a Platform. Handlers only translate between HTTP and
/// module calls.
class ApiServer {
 public:
  explicit ApiServer(Platform& platform);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Returns the bound port (port 0 picks a free one). Throws IoFailure.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires bind().
  void serve();
  /// Blocks until a concurrent serve() accepts connections.
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace annoforge
