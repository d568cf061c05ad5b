#include "annoforge/server.hpp"

#include <cstdio>
#include <functional>

#include "annoforge/random.hpp"
#include "httplib.h"
#include "json.hpp"

using nlohmann::json;

namespace annoforge {

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownFolder:
    case ErrorCode::UnknownImage:
    case ErrorCode::UnknownNode:
    case ErrorCode::UnknownAnnotation:
    case ErrorCode::UnknownToken:
    case ErrorCode::UnknownModel:
    case ErrorCode::UnknownJob:
    case ErrorCode::NoPredictions:
    case ErrorCode::NoData:
      return 404;
    case ErrorCode::LeaseExpired:
    case ErrorCode::LockExpired:
    case ErrorCode::IllegalTransition:
    case ErrorCode::IllegalState:
    case ErrorCode::DuplicateModel:
      return 409;
    case ErrorCode::IoFailure:
    case ErrorCode::DataRootCorrupt:
    case ErrorCode::ConfigError:
      return 500;
    default:
      return 422;
  }
}

namespace {

using Request = httplib::Request;
using Response = httplib::Response;

void send(Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(Response& res, ErrorCode code, const std::string& message) {
  send(res, json{{"error", std::string(to_string(code))}, {"message", message}}, http_status(code));
}

json body_of(const Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::ValidationError, "request body is not valid JSON");
  return j;
}

UserId user_of(const Request& req) {
  const std::string user = req.get_header_value("X-User-Id");
  if (user.empty()) fail(ErrorCode::ValidationError, "X-User-Id header is required");
  return UserId(user);
}

std::string param(const Request& req, std::size_t i) { return req.matches[static_cast<int>(i)].str(); }

std::string string_field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_string()) {
    fail(ErrorCode::ValidationError, std::string("field '") + key + "' must be a string");
  }
  return j.at(key).get<std::string>();
}

// Accepts a bare array or an object wrapping it under `key`.
const json& items_of(const json& body, const char* key) {
  if (body.is_array()) return body;
  if (body.is_object() && body.contains(key) && body.at(key).is_array()) return body.at(key);
  fail(ErrorCode::ValidationError, std::string("expected an array or {\"") + key + "\": [...]}");
}

json image_json(const ImageRecord& r) {
  return json{{"image_id", r.image_id},
              {"folder_id", r.folder_id},
              {"width", r.width},
              {"height", r.height},
              {"url", "/files/" + r.file_path}};
}

json lease_json(const ImageLease& l) {
  return json{{"token", l.token},
              {"image_id", l.image_id},
              {"folder_id", l.folder_id},
              {"holder", l.holder},
              {"acquired_at", to_millis(l.acquired_at)},
              {"expires_at", to_millis(l.expires_at())},
              {"ttl_ms", l.ttl.count()}};
}

json references_json(const Catalog& catalog, const LabelId& label) {
  json out = json::array();
  for (const ReferenceImage& r : catalog.references_for(label)) {
    out.push_back({{"label_id", r.label_id},
                   {"url", "/files/" + r.file_path},
                   {"caption", r.caption ? json(*r.caption) : json(nullptr)}});
  }
  return out;
}

}  // namespace

struct ApiServer::Impl {
  Platform& p;
  httplib::Server svr;

  explicit Impl(Platform& platform) : p(platform) { routes(); }

  using Handler = std::function<void(const Request&, Response&)>;

  static httplib::Server::Handler guarded(Handler h) {
    return [h = std::move(h)](const Request& req, Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.detail());
      } catch (const std::exception& e) {
        send(res, json{{"error", "Internal"}, {"message", e.what()}}, 500);
      }
    };
  }

  DatasetSelection selection_of(const json& body) const {
    if (!body.contains("selection")) fail(ErrorCode::ValidationError, "field 'selection' is required");
    json sel = body.at("selection");
    if (sel.is_object() && !sel.contains("include_auto_accepted")) {
      sel["include_auto_accepted"] = p.config().trust_auto_accept;
    }
    return selection_from_json(sel);
  }

  void routes() {
    svr.Get("/api/health", guarded([](const Request&, Response& res) { send(res, json{{"status", "ok"}}); }));

    svr.Get("/api/folders", guarded([this](const Request&, Response& res) {
      json out = json::array();
      for (const FolderSummary& f : p.folders()) {
        out.push_back({{"folder_id", f.folder_id},
                       {"images", f.images},
                       {"unannotated", f.unannotated},
                       {"in_progress", f.in_progress},
                       {"annotated", f.annotated}});
      }
      send(res, out);
    }));

    svr.Post(R"(/api/folders/([^/]+)/next-image)", guarded([this](const Request& req, Response& res) {
      const auto next = p.next_image(FolderId(param(req, 1)), user_of(req));
      if (!next) {
        res.status = 204;
        return;
      }
      json refs = json::object();
      for (const LabelClass& l : p.catalog().hierarchy().labels()) {
        refs[l.label_id.str()] = references_json(p.catalog(), l.label_id);
      }
      send(res, json{{"image", image_json(next->image)},
                     {"lease", lease_json(next->lease)},
                     {"queue", to_json(next->queue)},
                     {"hierarchy", p.catalog().hierarchy().to_json()},
                     {"references", refs}});
    }));

    svr.Get(R"(/api/folders/([^/]+)/queue)", guarded([this](const Request& req, Response& res) {
      json out = json::array();
      for (const QueueEntry& e : p.scheduler().rank_folder(FolderId(param(req, 1)))) out.push_back(to_json(e));
      send(res, out);
    }));

    svr.Post(R"(/api/leases/([^/]+)/heartbeat)", guarded([this](const Request& req, Response& res) {
      send(res, lease_json(p.locks().heartbeat(LeaseToken(param(req, 1)), p.clock().now())));
    }));

    svr.Delete(R"(/api/leases/([^/]+))", guarded([this](const Request& req, Response& res) {
      send(res, json{{"released", p.locks().release(LeaseToken(param(req, 1)), p.clock().now())}});
    }));

    svr.Post(R"(/api/images/([^/]+)/annotations)", guarded([this](const Request& req, Response& res) {
      const UserId user = user_of(req);
      const json body = body_of(req);
      const LeaseToken token(string_field(body, "lease_token"));
      if (!body.contains("polygon")) fail(ErrorCode::ValidationError, "field 'polygon' is required");
      const geometry::Polygon polygon = polygon_from_json(body.at("polygon"));
      const LabelId label(string_field(body, "label_id"));
      send(res, to_json(p.submit_annotation(ImageId(param(req, 1)), token, polygon, label, user)), 201);
    }));

    svr.Get(R"(/api/images/([^/]+)/annotations)", guarded([this](const Request& req, Response& res) {
      const ImageId id(param(req, 1));
      const ImageRecord& rec = p.catalog().image(id);
      json anns = json::array();
      for (const Annotation& a : p.store().for_image(id)) anns.push_back(to_json(a));
      send(res, json{{"image", image_json(rec)}, {"annotations", anns}});
    }));

    svr.Get(R"(/api/images/([^/]+)/predictions)", guarded([this](const Request& req, Response& res) {
      const ImageId id(param(req, 1));
      p.catalog().image(id);
      json out = json::array();
      for (const ModelPrediction& m : p.scheduler().pending_for(id)) out.push_back(to_json(m));
      send(res, out);
    }));

    svr.Get("/api/hierarchy",
            guarded([this](const Request&, Response& res) { send(res, p.catalog().hierarchy().to_json()); }));

    svr.Get(R"(/api/labels/([^/]+)/references)", guarded([this](const Request& req, Response& res) {
      send(res, references_json(p.catalog(), LabelId(param(req, 1))));
    }));

    svr.Get("/api/qc", guarded([this](const Request& req, Response& res) {
      QcFilter filter;
      if (req.has_param("folder")) filter.folder = FolderId(req.get_param_value("folder"));
      if (req.has_param("status")) filter.status = parse_status(req.get_param_value("status"));
      if (req.has_param("author_kind")) filter.author_kind = parse_author_kind(req.get_param_value("author_kind"));
      if (filter.folder && !p.catalog().has_folder(*filter.folder)) {
        fail(ErrorCode::UnknownFolder, "unknown folder '" + filter.folder->str() + "'");
      }
      json out = json::array();
      for (const Annotation& a : p.store().qc_list(filter)) out.push_back(to_json(a, false));
      send(res, out);
    }));

    svr.Post(R"(/api/qc/([^/]+)/accept)", guarded([this](const Request& req, Response& res) {
      send(res, to_json(p.store().qc_accept(AnnotationId(param(req, 1)), user_of(req))));
    }));

    svr.Post(R"(/api/qc/([^/]+)/reject)", guarded([this](const Request& req, Response& res) {
      const UserId user = user_of(req);
      const json body = body_of(req);
      const std::string reason = body.is_object() ? body.value("reason", std::string{}) : std::string{};
      send(res, to_json(p.store().qc_reject(AnnotationId(param(req, 1)), user, reason)));
    }));

    svr.Patch(R"(/api/qc/([^/]+))", guarded([this](const Request& req, Response& res) {
      const UserId user = user_of(req);
      const json body = body_of(req);
      std::optional<geometry::Polygon> polygon;
      std::optional<LabelId> label;
      if (body.contains("polygon")) polygon = polygon_from_json(body.at("polygon"));
      if (body.contains("label_id")) label = LabelId(string_field(body, "label_id"));
      send(res, to_json(p.store().qc_edit(AnnotationId(param(req, 1)), polygon, label, user)));
    }));

    svr.Get("/api/models", guarded([this](const Request&, Response& res) {
      json out = json::array();
      for (const ModelEntry& m : p.gateway().models()) out.push_back(to_json(m));
      send(res, out);
    }));

    svr.Post("/api/models", guarded([this](const Request& req, Response& res) {
      const ModelId id = p.gateway().register_model(model_entry_from_json(body_of(req)));
      send(res, to_json(p.gateway().model(id)), 201);
    }));

    svr.Post("/api/training/jobs", guarded([this](const Request& req, Response& res) {
      const json body = body_of(req);
      const ModelId model(string_field(body, "model_id"));
      const DatasetSelection sel = selection_of(body);
      double ratio = p.config().split_ratio;
      std::uint64_t seed = p.config().rng_seed;
      try {
        ratio = body.value("ratio", ratio);
        seed = body.value("seed", seed);
      } catch (const json::exception&) {
        fail(ErrorCode::ValidationError, "ratio must be a number and seed an unsigned integer");
      }
      send(res, to_json(p.gateway().create_training_job(model, sel, ratio, seed)), 201);
    }));

    svr.Get("/api/training/jobs", guarded([this](const Request& req, Response& res) {
      std::optional<ModelId> model;
      if (req.has_param("model_id")) model = ModelId(req.get_param_value("model_id"));
      json out = json::array();
      for (const TrainingJob& j : p.gateway().jobs(model)) out.push_back(to_json(j));
      send(res, out);
    }));

    svr.Get(R"(/api/training/jobs/([^/]+))", guarded([this](const Request& req, Response& res) {
      send(res, to_json(p.gateway().job(JobId(param(req, 1)))));
    }));

    svr.Get("/api/worker/jobs/next", guarded([this](const Request& req, Response& res) {
      const std::string worker = req.get_param_value("worker_id");
      if (worker.empty()) fail(ErrorCode::ValidationError, "query parameter 'worker_id' is required");
      const auto job = p.gateway().claim_next_job(WorkerId(worker));
      if (!job) {
        res.status = 204;
        return;
      }
      send(res, to_json(*job));
    }));

    svr.Post(R"(/api/worker/jobs/([^/]+)/metrics)", guarded([this](const Request& req, Response& res) {
      const json body = body_of(req);
      std::vector<MetricsInput> records;
      for (const json& r : items_of(body, "records")) records.push_back(metrics_input_from_json(r));
      send(res, json{{"accepted", p.gateway().post_metrics(JobId(param(req, 1)), records)}});
    }));

    svr.Post(R"(/api/worker/jobs/([^/]+)/predictions)", guarded([this](const Request& req, Response& res) {
      const json body = body_of(req);
      const json& items = items_of(body, "predictions");
      const std::vector<json> list(items.begin(), items.end());
      json out = json::array();
      for (const PredictionOutcome& o : p.gateway().post_predictions(JobId(param(req, 1)), std::span<const json>(list))) {
        out.push_back(to_json(o));
      }
      send(res, json{{"results", out}});
    }));

    svr.Post(R"(/api/worker/jobs/([^/]+)/complete)", guarded([this](const Request& req, Response& res) {
      const json body = body_of(req);
      const std::string outcome = body.is_object() ? body.value("outcome", std::string("Completed")) : "Completed";
      JobOutcome o;
      if (outcome == "Completed") o = JobOutcome::completed();
      else if (outcome == "Failed") o = JobOutcome::failed(body.value("reason", std::string{}));
      else fail(ErrorCode::ValidationError, "outcome must be Completed or Failed");
      send(res, to_json(p.gateway().complete_job(JobId(param(req, 1)), o)));
    }));

    svr.Get(R"(/api/metrics/models/([^/]+))", guarded([this](const Request& req, Response& res) {
      const ModelId model(param(req, 1));
      json out = to_json(p.model_timeline(model));
      out["model_id"] = model;
      send(res, out);
    }));

    svr.Get(R"(/api/metrics/models/([^/]+)/classes/([^/]+))", guarded([this](const Request& req, Response& res) {
      const ModelId model(param(req, 1));
      const LabelId label(param(req, 2));
      json out = to_json(p.class_timeline(model, label));
      out["model_id"] = model;
      out["label_id"] = label;
      send(res, out);
    }));

    svr.Get(R"(/api/reports/models/([^/]+))", guarded([this](const Request& req, Response& res) {
      std::optional<int> instance;
      if (req.has_param("instance")) {
        try {
          instance = std::stoi(req.get_param_value("instance"));
        } catch (const std::exception&) {
          fail(ErrorCode::ValidationError, "instance must be an integer");
        }
      }
      json out = json::array();
      for (const ClassReport& r : p.report(ModelId(param(req, 1)), instance)) out.push_back(to_json(r));
      send(res, out);
    }));

    svr.Post("/api/exports", guarded([this](const Request& req, Response& res) {
      const json body = body_of(req);
      const ExportFormat format = parse_export_format(string_field(body, "format"));
      const DatasetSelection sel = selection_of(body);
      double ratio = p.config().split_ratio;
      std::uint64_t seed = p.config().rng_seed;
      bool copy = false;
      try {
        ratio = body.value("ratio", ratio);
        seed = body.value("seed", seed);
        copy = body.value("copy_images", false);
      } catch (const json::exception&) {
        fail(ErrorCode::ValidationError, "ratio, seed or copy_images has the wrong type");
      }
      // Same request, same directory: exports are deterministic.
      const std::string key = to_json(sel).dump() + "|" + json(ratio).dump() + "|" + std::to_string(copy);
      char name[96];
      std::snprintf(name, sizeof name, "%s-%llu-%016llx", std::string(to_string(format)).c_str(),
                    static_cast<unsigned long long>(seed), static_cast<unsigned long long>(stable_hash(key)));
      const auto dir = StatePaths(p.config().data_root).exports() / name;
      const ExportSummary s = p.export_dataset(sel, format, dir, ratio, seed, copy);
      send(res,
           json{{"export_id", name},
                {"path", s.out_dir.string()},
                {"train_images", s.train_images},
                {"eval_images", s.eval_images},
                {"train_annotations", s.train_annotations},
                {"eval_annotations", s.eval_annotations}},
           201);
    }));

    const auto root = p.config().data_root;
    svr.set_mount_point("/files/folders", (root / "folders").string());
    svr.set_mount_point("/files/references", (root / "references").string());
    if (p.config().static_dir) svr.set_mount_point("/", p.config().static_dir->string());
  }
};

ApiServer::ApiServer(Platform& platform) : impl_(std::make_unique<Impl>(platform)) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->svr.bind_to_any_port(host);
    if (bound < 0) fail(ErrorCode::IoFailure, "cannot bind " + host);
    return bound;
  }
  if (!impl_->svr.bind_to_port(host, port)) fail(ErrorCode::IoFailure, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ApiServer::serve() { impl_->svr.listen_after_bind(); }

void ApiServer::wait_until_ready() const { impl_->svr.wait_until_ready(); }

void ApiServer::stop() {
  if (impl_ && impl_->svr.is_running()) impl_->svr.stop();
}

}  // namespace annoforge
