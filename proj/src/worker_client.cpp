#include "annoforge/worker_client.hpp"

#include "annoforge/error.hpp"
#include "httplib.h"
#include "json.hpp"

using nlohmann::json;

namespace annoforge {

namespace {

json expect_json(const httplib::Result& res, const std::string& what) {
  if (!res) fail(ErrorCode::IoFailure, what + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    fail(ErrorCode::IoFailure, what + ": HTTP " + std::to_string(res->status) + " " + res->body);
  }
  json j = json::parse(res->body, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::IoFailure, what + ": response is not JSON");
  return j;
}

}  // namespace

std::optional<WorkerRunSummary> run_http_mock_worker(const std::string& host, int port, const WorkerId& worker,
                                                     double noise_scale, std::uint64_t seed) {
  httplib::Client cli(host, port);
  cli.set_read_timeout(60, 0);

  auto next = cli.Get("/api/worker/jobs/next", httplib::Params{{"worker_id", worker.str()}}, httplib::Headers{});
  if (next && next->status == 204) return std::nullopt;
  const TrainingJob job = job_from_json(expect_json(next, "claim"));

  std::vector<GroundTruthImage> truth;
  for (const ImageId& id : job.split.eval) {
    const json doc = expect_json(cli.Get("/api/images/" + id.str() + "/annotations"), "annotations of " + id.str());
    GroundTruthImage g{id, doc.at("image").at("width").get<int>(), doc.at("image").at("height").get<int>(), {}};
    for (const json& a : doc.at("annotations")) {
      Annotation ann = annotation_from_json(a);
      if (job.selection.admits(ann)) g.annotations.push_back(std::move(ann));
    }
    truth.push_back(std::move(g));
  }
  const MockWorkerOutput out = mock_worker_generate(truth, noise_scale, seed);

  const std::string base = "/api/worker/jobs/" + job.job_id.str();
  json preds = json::array();
  for (const PredictionInput& p : out.predictions) preds.push_back(to_json(p));
  const json results =
      expect_json(cli.Post(base + "/predictions", json{{"predictions", preds}}.dump(), "application/json"), "predictions");
  WorkerRunSummary summary{job.job_id, out.predictions.size(), 0, 0};
  for (const json& r : results.at("results")) summary.prediction_errors += r.contains("error") ? 1 : 0;

  json metrics = json::array();
  for (const MetricsInput& m : out.metrics) metrics.push_back(to_json(m));
  summary.metrics_posted =
      expect_json(cli.Post(base + "/metrics", json{{"records", metrics}}.dump(), "application/json"), "metrics")
          .at("accepted")
          .get<std::size_t>();
  expect_json(cli.Post(base + "/complete", json{{"outcome", "Completed"}}.dump(), "application/json"), "complete");
  return summary;
}

}  // namespace annoforge
