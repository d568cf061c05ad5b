#include <pthread.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "annoforge/error.hpp"
#include "annoforge/server.hpp"
#include "annoforge/worker_client.hpp"
#include "httplib.h"

using namespace annoforge;
using nlohmann::json;

namespace {

// Flag values for every ServerConfig field. A flag only overrides the file
// and environment when it was given.
struct ConfigFlags {
  std::optional<std::string> config_file;
  std::optional<std::string> data_root;
  std::optional<std::string> host;
  std::optional<int> port;
  std::optional<int> lock_ttl_minutes;
  std::optional<double> auto_accept_threshold;
  std::optional<double> uncertain_low;
  std::optional<double> uncertain_high;
  std::optional<double> unpredicted_score;
  std::optional<double> split_ratio;
  std::optional<std::uint64_t> rng_seed;
  std::optional<bool> trust_auto_accept;
  std::optional<int> job_abandon_minutes;
  std::optional<double> match_min_iou;
  std::optional<std::string> static_dir;

  void attach(CLI::App& app, bool server_fields) {
    app.add_option("--config", config_file, "JSON config file");
    app.add_option("--data-root", data_root, "Data root (overrides ANNOFORGE_DATA_ROOT)");
    app.add_option("--lock-ttl-minutes", lock_ttl_minutes);
    app.add_option("--auto-accept-threshold", auto_accept_threshold);
    app.add_option("--uncertain-low", uncertain_low);
    app.add_option("--uncertain-high", uncertain_high);
    app.add_option("--unpredicted-score", unpredicted_score);
    app.add_option("--split-ratio", split_ratio);
    app.add_option("--rng-seed", rng_seed);
    app.add_option("--trust-auto-accept", trust_auto_accept);
    app.add_option("--job-abandon-minutes", job_abandon_minutes);
    app.add_option("--match-min-iou", match_min_iou);
    if (server_fields) {
      app.add_option("--host", host);
      app.add_option("--port", port);
      app.add_option("--static-dir", static_dir, "Built UI served at /");
    }
  }

  ServerConfig resolve() const {
    ServerConfig c;
    if (config_file) c = load_config(*config_file);
    if (const char* env = std::getenv("ANNOFORGE_DATA_ROOT"); env && *env) c.data_root = env;
    if (data_root) c.data_root = *data_root;
    if (host) c.host = *host;
    if (port) c.port = *port;
    if (lock_ttl_minutes) c.lock_ttl_minutes = *lock_ttl_minutes;
    if (auto_accept_threshold) c.auto_accept_threshold = *auto_accept_threshold;
    if (uncertain_low) c.uncertain_low = *uncertain_low;
    if (uncertain_high) c.uncertain_high = *uncertain_high;
    if (unpredicted_score) c.unpredicted_score = *unpredicted_score;
    if (split_ratio) c.split_ratio = *split_ratio;
    if (rng_seed) c.rng_seed = *rng_seed;
    if (trust_auto_accept) c.trust_auto_accept = *trust_auto_accept;
    if (job_abandon_minutes) c.job_abandon_minutes = *job_abandon_minutes;
    if (match_min_iou) c.match_min_iou = *match_min_iou;
    if (static_dir) c.static_dir = *static_dir;
    c.validate();
    return c;
  }
};

int run_serve(const ConfigFlags& flags) {
  const ServerConfig config = flags.resolve();

  // Handle SIGINT/SIGTERM on a dedicated thread so stop() runs outside a
  // signal handler. The mask is inherited by the server threads.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  SystemClock clock;
  Platform platform(config, clock);
  ApiServer server(platform);
  const int port = server.bind(config.host, config.port);
  std::cerr << "listening on http://" << config.host << ":" << port << "\n";

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.serve();
  // serve() can also return on its own; wake the waiter in that case.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

DatasetSelection read_selection(const std::string& file, const std::vector<std::string>& folders,
                                const std::vector<std::string>& labels, bool include_auto) {
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::IoFailure, "cannot read " + file);
    try {
      return selection_from_json(json::parse(in));
    } catch (const json::exception& e) {
      fail(ErrorCode::ValidationError, file + ": " + e.what());
    }
  }
  DatasetSelection s;
  for (const auto& f : folders) s.folder_ids.emplace_back(f);
  if (!labels.empty()) {
    s.label_filter.emplace();
    for (const auto& l : labels) s.label_filter->insert(LabelId(l));
  }
  s.include_auto_accepted = include_auto;
  return s;
}

std::string csv_report(const json& rows) {
  std::string out = "model_id,label_id,training_instance,mean_iou,matched,missed_ground_truth,spurious_predictions\n";
  for (const json& r : rows) {
    out += r["model_id"].get<std::string>() + "," + r["label_id"].get<std::string>() + "," +
           r["training_instance"].dump() + "," + r["mean_iou"].dump() + "," + r["matched"].dump() + "," +
           r["missed_ground_truth"].dump() + "," + r["spurious_predictions"].dump() + "\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image annotation platform with active learning"};
  app.require_subcommand(1);

  ConfigFlags serve_flags;
  CLI::App* serve = app.add_subcommand("serve", "Run the REST server");
  serve_flags.attach(*serve, true);

  ConfigFlags export_flags;
  std::string selection_file, format = "coco", out_dir;
  std::vector<std::string> folders, labels;
  bool include_auto = false, copy_images = false;
  std::optional<double> ratio;
  std::optional<std::uint64_t> seed;
  CLI::App* exp = app.add_subcommand("export", "Write a train/eval dataset bundle");
  export_flags.attach(*exp, false);
  exp->add_option("--selection", selection_file, "Selection JSON file");
  exp->add_option("--folder", folders, "Folder id (repeatable)");
  exp->add_option("--label", labels, "Label filter (repeatable)");
  exp->add_flag("--include-auto-accepted", include_auto);
  exp->add_option("--format", format, "canonical, coco or pascal_voc");
  exp->add_option("--ratio", ratio, "Train fraction");
  exp->add_option("--seed", seed, "Split seed");
  exp->add_option("--out", out_dir, "Output directory")->required();
  exp->add_flag("--copy-images", copy_images);

  std::string host = "127.0.0.1", worker_id = "mock-worker";
  int port = 8080;
  double noise = 0.0;
  std::uint64_t worker_seed = 0;
  bool drain = false;
  CLI::App* worker = app.add_subcommand("mock-worker", "Serve pending training jobs with synthetic predictions");
  worker->add_option("--host", host);
  worker->add_option("--port", port);
  worker->add_option("--noise", noise, "Vertex noise in pixels")->check(CLI::NonNegativeNumber);
  worker->add_option("--seed", worker_seed);
  worker->add_option("--worker-id", worker_id);
  worker->add_flag("--drain", drain, "Keep claiming until no job is pending");

  ConfigFlags report_flags;
  std::string model, report_format = "json", server_addr;
  std::optional<int> instance;
  CLI::App* report = app.add_subcommand("report", "Per-class evaluation report for a model");
  report_flags.attach(*report, false);
  report->add_option("--model", model)->required();
  report->add_option("--instance", instance, "Training instance (default newest)");
  report->add_option("--format", report_format)->check(CLI::IsMember({"json", "csv"}));
  report->add_option("--server", server_addr, "host:port of a running server instead of reading the data root");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return run_serve(serve_flags);

    if (*exp) {
      SystemClock clock;
      Platform platform(export_flags.resolve(), clock, true);
      const auto sel = read_selection(selection_file, folders, labels, include_auto);
      const ExportSummary s =
          platform.export_dataset(sel, parse_export_format(format), out_dir, ratio, seed, copy_images);
      std::cout << json{{"path", s.out_dir.string()},
                        {"train_images", s.train_images},
                        {"eval_images", s.eval_images},
                        {"train_annotations", s.train_annotations},
                        {"eval_annotations", s.eval_annotations}}
                       .dump(2)
                << "\n";
      return 0;
    }

    if (*worker) {
      std::size_t jobs = 0;
      do {
        const auto run = run_http_mock_worker(host, port, WorkerId(worker_id), noise, worker_seed + jobs);
        if (!run) break;
        ++jobs;
        std::cout << run->job_id.str() << ": " << run->predictions_posted << " predictions, "
                  << run->metrics_posted << " metrics, " << run->prediction_errors << " rejected\n";
      } while (drain);
      if (jobs == 0) std::cout << "no pending job\n";
      return 0;
    }

    if (*report) {
      json rows;
      if (!server_addr.empty()) {
        const auto colon = server_addr.rfind(':');
        if (colon == std::string::npos) fail(ErrorCode::ValidationError, "--server expects host:port");
        httplib::Client client(server_addr.substr(0, colon), std::stoi(server_addr.substr(colon + 1)));
        std::string path = "/api/reports/models/" + model;
        if (instance) path += "?instance=" + std::to_string(*instance);
        const auto res = client.Get(path);
        if (!res) fail(ErrorCode::IoFailure, "cannot reach " + server_addr);
        rows = json::parse(res->body);
        if (res->status != 200) {
          std::cerr << rows.value("error", "") << ": " << rows.value("message", "") << "\n";
          return 1;
        }
      } else {
        SystemClock clock;
        Platform platform(report_flags.resolve(), clock, true);
        rows = json::array();
        for (const ClassReport& r : platform.report(ModelId(model), instance)) rows.push_back(to_json(r));
      }
      std::cout << (report_format == "csv" ? csv_report(rows) : rows.dump(2) + "\n");
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.detail() << "\n";
    return 1;
  }
  return 0;
}
