#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <thread>

#include "annoforge/error.hpp"
#include "annoforge/server.hpp"
#include "annoforge/worker_client.hpp"
#include "httplib.h"
#include "test_support.hpp"

using namespace annoforge;
using namespace annoforge::fixtures;
using nlohmann::json;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::ValidationError;
}

// A platform and server over a temp data root, on an ephemeral port.
class Harness {
 public:
  explicit Harness(const std::filesystem::path& root, ManualClock& clock) {
    ServerConfig config;
    config.data_root = root;
    platform = std::make_unique<Platform>(config, clock);
    server = std::make_unique<ApiServer>(*platform);
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->serve(); });
    server->wait_until_ready();
  }
  ~Harness() {
    server->stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }

  std::unique_ptr<Platform> platform;
  std::unique_ptr<ApiServer> server;
  int port = 0;
  std::thread thread;
};

httplib::Headers as(const std::string& user) { return {{"X-User-Id", user}}; }

json parse(const httplib::Result& r) {
  EXPECT_TRUE(r) << "no response";
  return json::parse(r->body);
}

const char* kSquare = R"({"lease_token":"%s","label_id":"ground_vehicle","polygon":[[10,10],[40,10],[40,40],[10,40]]})";

std::string submit_body(const std::string& token, const char* tmpl = kSquare) {
  char buf[512];
  std::snprintf(buf, sizeof buf, tmpl, token.c_str());
  return buf;
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    build_data_root(dir.path(), 2, 5);
    h = std::make_unique<Harness>(dir.path(), clock);
  }

  json next_image(const std::string& folder, const std::string& user, int expect = 200) {
    auto c = h->client();
    auto r = c.Post("/api/folders/" + folder + "/next-image", as(user), "", "application/json");
    EXPECT_TRUE(r);
    EXPECT_EQ(r->status, expect) << r->body;
    return r->status == 200 ? json::parse(r->body) : json();
  }

  TempDir dir;
  ManualClock clock;
  std::unique_ptr<Harness> h;
};

}  // namespace

TEST(Config, OverlappingThresholdsNameTheFields) {
  TempDir dir;
  ServerConfig c;
  c.data_root = dir.path();
  c.validate();
  c.uncertain_high = 0.85;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(e.detail().find("uncertain_high"), std::string::npos);
    EXPECT_NE(e.detail().find("auto_accept_threshold"), std::string::npos);
  }
}

TEST(Config, JsonParsingAndErrors) {
  TempDir dir;
  const ServerConfig c =
      config_from_json(json{{"data_root", dir.path().string()}, {"port", 9001}, {"lock_ttl_minutes", 5}});
  EXPECT_EQ(c.port, 9001);
  EXPECT_EQ(c.lock_ttl_minutes, 5);
  EXPECT_EQ(c.split_ratio, 0.8);
  EXPECT_EQ(config_from_json(to_json(c)).port, 9001);
  EXPECT_EQ(code_of([] { config_from_json(json{{"prot", 1}}); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { config_from_json(json{{"port", "x"}}); }), ErrorCode::ConfigError);
  ServerConfig missing;
  missing.data_root = dir.path() / "nope";
  EXPECT_EQ(code_of([&] { missing.validate(); }), ErrorCode::ConfigError);
  write_text(dir.path() / "bad.json", "{");
  EXPECT_EQ(code_of([&] { load_config(dir.path() / "bad.json"); }), ErrorCode::ConfigError);
}

TEST(Server, EmptyDataRootServesNoFolders) {
  TempDir dir;
  ManualClock clock;
  Harness h(dir.path(), clock);
  auto c = h.client();
  auto r = c.Get("/api/folders");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body), json::array());
}

TEST_F(ServerTest, FolderListingCountsUnannotated) {
  const json first = next_image("f1", "alice");
  auto c = h->client();
  auto r = c.Post("/api/images/" + first["image"]["image_id"].get<std::string>() + "/annotations", as("alice"),
                  submit_body(first["lease"]["token"]), "application/json");
  ASSERT_EQ(r->status, 201) << r->body;
  next_image("f1", "bob");
  const json folders = parse(c.Get("/api/folders"));
  ASSERT_EQ(folders.size(), 2u);
  EXPECT_EQ(folders[0]["folder_id"], "f1");
  EXPECT_EQ(folders[0]["images"], 5);
  EXPECT_EQ(folders[0]["annotated"], 1);
  EXPECT_EQ(folders[0]["in_progress"], 1);
  EXPECT_EQ(folders[0]["unannotated"], 3);
  EXPECT_EQ(folders[1]["unannotated"], 5);
}

TEST_F(ServerTest, NextImageCarriesLeaseAndBundle) {
  const json n = next_image("f1", "alice");
  EXPECT_EQ(n["image"]["image_id"], "f1_img00");
  EXPECT_EQ(n["image"]["url"], "/files/folders/f1/images/f1_img00.png");
  EXPECT_EQ(n["lease"]["token"].get<std::string>().size(), 32u);
  EXPECT_EQ(n["lease"]["ttl_ms"], 30 * 60 * 1000);
  EXPECT_EQ(n["hierarchy"]["id"], "root");
  EXPECT_TRUE(n["references"].contains("rotorcraft"));
  auto c = h->client();
  auto file = c.Get("/files/folders/f1/images/f1_img00.png");
  ASSERT_TRUE(file);
  EXPECT_EQ(file->status, 200);
  EXPECT_EQ(file->body.substr(1, 3), "PNG");
  EXPECT_EQ(c.Get("/files/../hierarchy.json")->status, 404);
}

TEST_F(ServerTest, ConcurrentUsersGetDistinctImages) {
  std::vector<std::string> got(5);
  std::vector<std::thread> threads;
  for (int t = 0; t < 5; ++t) {
    threads.emplace_back([&, t] {
      auto c = h->client();
      auto r = c.Post("/api/folders/f2/next-image", as("user" + std::to_string(t)), "", "application/json");
      if (r && r->status == 200) got[t] = json::parse(r->body)["image"]["image_id"];
    });
  }
  for (auto& th : threads) th.join();
  const std::set<std::string> distinct(got.begin(), got.end());
  EXPECT_EQ(distinct.size(), 5u);
  EXPECT_FALSE(distinct.contains(""));
  next_image("f2", "late", 204);
}

TEST_F(ServerTest, SubmitFlowAndErrors) {
  const json n = next_image("f1", "alice");
  const std::string image = n["image"]["image_id"];
  const std::string token = n["lease"]["token"];
  auto c = h->client();

  auto r = c.Post("/api/images/" + image + "/annotations", "{}", "application/json");
  EXPECT_EQ(r->status, 422);
  EXPECT_EQ(json::parse(r->body)["error"], "ValidationError");

  const char* degenerate = R"({"lease_token":"%s","label_id":"ground_vehicle","polygon":[[0,0],[5,5],[10,10]]})";
  r = c.Post("/api/images/" + image + "/annotations", as("alice"), submit_body(token, degenerate), "application/json");
  EXPECT_EQ(r->status, 422);
  EXPECT_EQ(json::parse(r->body)["error"], "DegeneratePolygon");

  r = c.Post("/api/images/" + image + "/annotations", as("mallory"), submit_body(token), "application/json");
  EXPECT_EQ(r->status, 409);

  r = c.Post("/api/images/" + image + "/annotations", as("alice"), submit_body(token), "application/json");
  ASSERT_EQ(r->status, 201) << r->body;
  const json ann = json::parse(r->body);
  EXPECT_EQ(ann["status"], "Submitted");
  EXPECT_EQ(ann["author"]["id"], "alice");
  // The lease is gone after submission.
  EXPECT_EQ(c.Post("/api/leases/" + token + "/heartbeat", "", "application/json")->status, 404);

  const json list = parse(c.Get("/api/images/" + image + "/annotations"));
  EXPECT_EQ(list["annotations"].size(), 1u);
  EXPECT_EQ(list["image"]["width"], 100);
  EXPECT_EQ(c.Get("/api/images/nope/annotations")->status, 404);
  EXPECT_EQ(c.Post("/api/folders/nope/next-image", as("alice"), "", "application/json")->status, 404);
}

TEST_F(ServerTest, ExpiredTokenIsConflict) {
  const json n = next_image("f1", "alice");
  auto c = h->client();
  auto hb = c.Post("/api/leases/" + n["lease"]["token"].get<std::string>() + "/heartbeat", "", "application/json");
  ASSERT_EQ(hb->status, 200);
  clock.advance(std::chrono::minutes(31));
  auto r = c.Post("/api/images/" + n["image"]["image_id"].get<std::string>() + "/annotations", as("alice"),
                  submit_body(n["lease"]["token"]), "application/json");
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(json::parse(r->body)["error"], "LockExpired");
  // The image is free again.
  EXPECT_EQ(next_image("f1", "bob")["image"]["image_id"], n["image"]["image_id"]);
}

TEST_F(ServerTest, ReleaseFreesTheImage) {
  const json n = next_image("f1", "alice");
  auto c = h->client();
  auto r = c.Delete("/api/leases/" + n["lease"]["token"].get<std::string>());
  EXPECT_EQ(json::parse(r->body)["released"], true);
  r = c.Delete("/api/leases/" + n["lease"]["token"].get<std::string>());
  EXPECT_EQ(json::parse(r->body)["released"], false);
  EXPECT_EQ(next_image("f1", "bob")["image"]["image_id"], n["image"]["image_id"]);
}

TEST_F(ServerTest, QcRoutesMatchTheStore) {
  auto c = h->client();
  std::vector<std::string> ids;
  for (const char* user : {"alice", "bob"}) {
    const json n = next_image("f1", user);
    auto r = c.Post("/api/images/" + n["image"]["image_id"].get<std::string>() + "/annotations", as(user),
                    submit_body(n["lease"]["token"]), "application/json");
    ids.push_back(json::parse(r->body)["annotation_id"]);
  }
  const json queue = parse(c.Get("/api/qc"));
  const auto direct = h->platform->store().qc_list();
  ASSERT_EQ(queue.size(), direct.size());
  for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_EQ(queue[i], to_json(direct[i], false));

  auto r = c.Post("/api/qc/" + ids[0] + "/accept", as("rev"), "", "application/json");
  EXPECT_EQ(json::parse(r->body)["status"], "Accepted");
  EXPECT_EQ(c.Post("/api/qc/" + ids[0] + "/reject", as("rev"), "{}", "application/json")->status, 409);
  r = c.Patch("/api/qc/" + ids[1], as("rev"), R"({"label_id":"rotorcraft"})", "application/json");
  EXPECT_EQ(json::parse(r->body)["label_id"], "rotorcraft");
  r = c.Post("/api/qc/" + ids[1] + "/reject", as("rev"), R"({"reason":"blurry"})", "application/json");
  EXPECT_EQ(json::parse(r->body)["status"], "Rejected");
  EXPECT_EQ(parse(c.Get("/api/qc")).size(), 0u);
  EXPECT_EQ(c.Post("/api/qc/ann-999/accept", as("rev"), "", "application/json")->status, 404);
  EXPECT_EQ(c.Get("/api/qc?folder=nope")->status, 404);
  EXPECT_EQ(parse(c.Get("/api/hierarchy"))["id"], "root");
  EXPECT_EQ(c.Get("/api/labels/rotorcraft/references")->status, 200);
  EXPECT_EQ(c.Get("/api/labels/nope/references")->status, 422);
}

TEST_F(ServerTest, ModelRegistryRoutes) {
  auto c = h->client();
  EXPECT_EQ(parse(c.Get("/api/models")).size(), 4u);
  const char* body = R"({"display_name":"ssd_mobilenet_v2","config":{"learning_rate":0.004,"epochs":50}})";
  auto r = c.Post("/api/models", body, "application/json");
  EXPECT_EQ(r->status, 201);
  EXPECT_EQ(json::parse(r->body)["model_id"], "ssd_mobilenet_v2");
  EXPECT_EQ(c.Post("/api/models", body, "application/json")->status, 409);
  r = c.Post("/api/models", R"({"display_name":"x","config":{"learning_rate":0.1}})", "application/json");
  EXPECT_EQ(r->status, 422);
  EXPECT_EQ(json::parse(r->body)["error"], "MissingConfigKey");
  EXPECT_EQ(c.Post("/api/models", "{not json", "application/json")->status, 422);
}

TEST_F(ServerTest, WorkerProtocolEndToEnd) {
  auto c = h->client();
  // Accepted annotations on every image of f1.
  for (int i = 0; i < 5; ++i) {
    const json n = next_image("f1", "alice");
    auto r = c.Post("/api/images/" + n["image"]["image_id"].get<std::string>() + "/annotations", as("alice"),
                    submit_body(n["lease"]["token"]), "application/json");
    c.Post("/api/qc/" + json::parse(r->body)["annotation_id"].get<std::string>() + "/accept", as("rev"), "",
           "application/json");
  }
  auto r = c.Post("/api/training/jobs",
                  R"({"model_id":"ssd_mobilenet_v1_coco_tensorflow","selection":{"folder_ids":["f1"]},"seed":3})",
                  "application/json");
  ASSERT_EQ(r->status, 201) << r->body;
  const json job = json::parse(r->body);
  EXPECT_EQ(job["state"], "Pending");
  EXPECT_EQ(job["split"]["train"].size(), 4u);
  EXPECT_EQ(c.Post("/api/training/jobs", R"({"model_id":"nope","selection":{"folder_ids":["f1"]}})",
                   "application/json")
                ->status,
            404);
  EXPECT_EQ(c.Post("/api/training/jobs", R"({"model_id":"ssd_mobilenet_v1_coco_tensorflow","selection":{"folder_ids":[]}})",
                   "application/json")
                ->status,
            422);
  EXPECT_EQ(c.Get("/api/worker/jobs/next")->status, 422);

  const auto run = run_http_mock_worker("127.0.0.1", h->port, WorkerId("w1"), 0.0, 5);
  ASSERT_TRUE(run.has_value());
  EXPECT_EQ(run->job_id.str(), job["job_id"]);
  EXPECT_EQ(run->predictions_posted, 1u);
  EXPECT_EQ(run->prediction_errors, 0u);
  EXPECT_EQ(run->metrics_posted, 1u);
  EXPECT_FALSE(run_http_mock_worker("127.0.0.1", h->port, WorkerId("w1"), 0.0, 5).has_value());

  EXPECT_EQ(parse(c.Get("/api/training/jobs/" + job["job_id"].get<std::string>()))["state"], "Completed");
  EXPECT_EQ(c.Get("/api/training/jobs/job-404")->status, 404);
  const json timeline = parse(c.Get("/api/metrics/models/ssd_mobilenet_v1_coco_tensorflow"));
  ASSERT_EQ(timeline["points"].size(), 1u);
  EXPECT_EQ(timeline["points"][0]["mean_iou"], 1.0);
  EXPECT_EQ(timeline["plateaued"], false);
  EXPECT_EQ(parse(c.Get("/api/metrics/models/ssd_mobilenet_v1_coco_tensorflow/classes/ground_vehicle"))["points"].size(),
            1u);
  EXPECT_EQ(c.Get("/api/metrics/models/ssd_mobilenet_v1_coco_tensorflow/classes/rotorcraft")->status, 404);
  EXPECT_EQ(c.Get("/api/metrics/models/nope")->status, 404);
  const json report = parse(c.Get("/api/reports/models/ssd_mobilenet_v1_coco_tensorflow"));
  ASSERT_EQ(report.size(), 1u);
  EXPECT_EQ(report[0]["mean_iou"], 1.0);

  // Posting to the finished job is a state conflict.
  r = c.Post("/api/worker/jobs/" + job["job_id"].get<std::string>() + "/metrics", R"([])", "application/json");
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(c.Post("/api/worker/jobs/job-404/complete", "{}", "application/json")->status, 404);
}

TEST_F(ServerTest, WorkerPredictionsAreReportedPerItem) {
  auto c = h->client();
  for (int i = 0; i < 2; ++i) {
    const json n = next_image("f1", "alice");
    auto r = c.Post("/api/images/" + n["image"]["image_id"].get<std::string>() + "/annotations", as("alice"),
                    submit_body(n["lease"]["token"]), "application/json");
    c.Post("/api/qc/" + json::parse(r->body)["annotation_id"].get<std::string>() + "/accept", as("rev"), "",
           "application/json");
  }
  c.Post("/api/training/jobs", R"({"model_id":"ssd_mobilenet_v1_coco_tensorflow","selection":{"folder_ids":["f1"]}})",
         "application/json");
  const json job = parse(c.Get("/api/worker/jobs/next?worker_id=w"));
  const std::string base = "/api/worker/jobs/" + job["job_id"].get<std::string>();
  const char* batch = R"({"predictions":[
    {"image_id":"f1_img04","label":"rotorcraft","polygon":[[5,5],[30,5],[30,30]],"confidence":0.5},
    {"image_id":"ghost","label":"rotorcraft","polygon":[[5,5],[30,5],[30,30]],"confidence":0.5},
    {"image_id":"f1_img03","label":"rotorcraft","polygon":[[5,5],[30,5],[30,30]],"confidence":0.92}]})";
  const json out = parse(c.Post(base + "/predictions", batch, "application/json"));
  ASSERT_EQ(out["results"].size(), 3u);
  EXPECT_EQ(out["results"][0]["action"], "Queued");
  EXPECT_EQ(out["results"][1]["error"], "UnknownImage");
  EXPECT_EQ(out["results"][2]["action"], "AutoAccepted");
  // The uncertain image now leads the queue.
  EXPECT_EQ(next_image("f1", "carol")["image"]["image_id"], "f1_img04");
  const json bad = parse(c.Post(base + "/metrics", R"([{"label":"rotorcraft","mean_iou":1.2,"sample_count":1}])",
                                "application/json"));
  EXPECT_EQ(bad["error"], "ValidationError");
  EXPECT_EQ(c.Post(base + "/metrics", R"([{"label":"submarine","mean_iou":0.2,"sample_count":1}])",
                   "application/json")
                ->status,
            422);
  auto done = c.Post(base + "/complete", R"({"outcome":"Failed","reason":"diverged"})", "application/json");
  EXPECT_EQ(json::parse(done->body)["failure_reason"], "diverged");
}

TEST_F(ServerTest, ExportsAreDeterministic) {
  auto c = h->client();
  for (int i = 0; i < 3; ++i) {
    const json n = next_image("f2", "alice");
    auto r = c.Post("/api/images/" + n["image"]["image_id"].get<std::string>() + "/annotations", as("alice"),
                    submit_body(n["lease"]["token"]), "application/json");
    c.Post("/api/qc/" + json::parse(r->body)["annotation_id"].get<std::string>() + "/accept", as("rev"), "",
           "application/json");
  }
  const char* body = R"({"format":"coco","selection":{"folder_ids":["f2"]},"ratio":0.7,"seed":11})";
  auto r = c.Post("/api/exports", body, "application/json");
  ASSERT_EQ(r->status, 201) << r->body;
  const json first = json::parse(r->body);
  EXPECT_EQ(first["train_images"], 2);
  const auto before = read_tree(first["path"].get<std::string>());
  const json second = parse(c.Post("/api/exports", body, "application/json"));
  EXPECT_EQ(second["export_id"], first["export_id"]);
  EXPECT_EQ(read_tree(second["path"].get<std::string>()), before);
  r = c.Post("/api/exports", R"({"format":"yolo","selection":{"folder_ids":["f2"]}})", "application/json");
  EXPECT_EQ(json::parse(r->body)["error"], "UnsupportedFormat");
}

TEST(Server, RestartKeepsLeasesAndAnnotations) {
  TempDir dir;
  build_data_root(dir.path(), 1, 4);
  ManualClock clock;
  std::string held, accepted;
  {
    ServerConfig config;
    config.data_root = dir.path();
    Platform p(config, clock);
    auto a = p.next_image(FolderId("f1"), UserId("alice"));
    const Annotation ann = p.submit_annotation(a->image.image_id, a->lease.token, rect_polygon(1, 1, 20, 20),
                                               LabelId("rotorcraft"), UserId("alice"));
    accepted = p.store().qc_accept(ann.annotation_id, UserId("rev")).annotation_id.str();
    held = p.next_image(FolderId("f1"), UserId("bob"))->image.image_id.str();
  }
  ServerConfig config;
  config.data_root = dir.path();
  Platform p(config, clock);
  EXPECT_EQ(p.store().get(AnnotationId(accepted)).status, AnnotationStatus::Accepted);
  EXPECT_EQ(p.next_image(FolderId("f1"), UserId("bob"))->image.image_id.str(), held);
  EXPECT_NE(p.next_image(FolderId("f1"), UserId("carol"))->image.image_id.str(), held);
}
