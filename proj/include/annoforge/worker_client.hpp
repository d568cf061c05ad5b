#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "annoforge/gateway.hpp"
#include "annoforge/ids.hpp"

namespace annoforge {

struct WorkerRunSummary {
  JobId job_id;
  std::size_t predictions_posted = 0;
  std::size_t metrics_posted = 0;
  std::size_t prediction_errors = 0;
};

/// The mock worker speaking the HTTP protocol: claims the next job, reads
/// the ground truth of its eval images through the annotation routes, posts
/// generated predictions and metrics and completes the job. nullopt when no
/// job is pending. Throws Error(IoFailure) on transport or server errors.
std::optional<WorkerRunSummary> run_http_mock_worker(const std::string& host, int port, const WorkerId& worker,
                                                     double noise_scale, std::uint64_t seed);

}  // namespace annoforge
