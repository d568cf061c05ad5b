#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "annoforge/active_learning.hpp"
#include "annoforge/error.hpp"
#include "test_support.hpp"

using namespace annoforge;
using namespace annoforge::fixtures;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::ConfigError;
}

class SchedulerTest : public ::testing::Test {
 protected:
  void SetUp() override { build(6); }

  void build(int images) {
    build_data_root(dir.path(), 1, images);
    catalog = Catalog::load(dir.path());
    store = std::make_unique<AnnotationStore>(catalog, clock, StoreOptions{0.80, dir.path()});
    scheduler = std::make_unique<Scheduler>(catalog, *store, clock,
                                            SchedulerOptions{{}, 0.9, dir.path() / "predictions.jsonl"});
  }

  static std::string img(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "f1_img%02d", i);
    return buf;
  }

  ModelPrediction pred(int image, double conf, int instance = 1, const std::string& model = "m1",
                       const std::string& label = "ground_vehicle") {
    return ModelPrediction{{}, ImageId(img(image)), ModelId(model), LabelId(label), rect_polygon(10, 10, 30, 30),
                           conf, instance, {}, std::nullopt};
  }

  TempDir dir;
  ManualClock clock;
  Catalog catalog;
  std::unique_ptr<AnnotationStore> store;
  std::unique_ptr<Scheduler> scheduler;
};

}  // namespace

TEST(Band, Examples) {
  EXPECT_EQ(band(0.85), ConfidenceBand::AutoAccept);
  EXPECT_EQ(band(0.50), ConfidenceBand::Uncertain);
  EXPECT_EQ(band(0.70), ConfidenceBand::Normal);
}

TEST(Band, BoundariesAreInclusive) {
  const double conf[] = {0.0, 0.39, 0.40, 0.50, 0.60, 0.61, 0.79, 0.80, 1.0};
  const ConfidenceBand N = ConfidenceBand::Normal, U = ConfidenceBand::Uncertain, A = ConfidenceBand::AutoAccept;
  const ConfidenceBand expected[] = {N, N, U, U, U, N, N, A, A};
  for (std::size_t i = 0; i < std::size(conf); ++i) EXPECT_EQ(band(conf[i]), expected[i]) << conf[i];
}

TEST(Band, OutOfRangeRejected) {
  EXPECT_EQ(code_of([] { band(-0.01); }), ErrorCode::OutOfRange);
  EXPECT_EQ(code_of([] { band(1.01); }), ErrorCode::OutOfRange);
  EXPECT_EQ(code_of([] { band(std::nan("")); }), ErrorCode::OutOfRange);
}

TEST(Band, ThresholdOrderingValidated) {
  EXPECT_EQ(code_of([] { Thresholds{0.8, 0.6, 0.4, 0.15}.validate(); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { Thresholds{0.5, 0.4, 0.6, 0.15}.validate(); }), ErrorCode::ConfigError);
  Thresholds{}.validate();
}

TEST(ScoreImage, Examples) {
  const std::vector<double> mixed{0.55, 0.9};
  EXPECT_DOUBLE_EQ(score_image(mixed), 0.05);
  EXPECT_DOUBLE_EQ(score_image({}), 0.15);
  const std::vector<double> confident{0.9, 0.95};
  EXPECT_DOUBLE_EQ(score_image(confident), 0.15);
}

TEST(ScoreImage, MatchesHandComputedMinimum) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> c(1 + rng() % 6);
    for (double& x : c) x = uniform(rng, 0.0, 1.0);
    double expect = 0.15;
    bool any = false;
    for (double x : c) {
      if (x >= 0.8) continue;
      const double d = x > 0.5 ? x - 0.5 : 0.5 - x;
      expect = any ? std::min(expect, d) : d;
      any = true;
    }
    EXPECT_NEAR(score_image(c), expect, 1e-12);
  }
}

TEST_F(SchedulerTest, HighConfidenceIsAutoAccepted) {
  auto action = scheduler->ingest_prediction(pred(0, 0.92));
  ASSERT_EQ(action.kind, IngestKind::AutoAccepted);
  ASSERT_TRUE(action.annotation_id);
  auto listed = store->qc_list();
  ASSERT_EQ(listed.size(), 1u);
  EXPECT_EQ(listed[0].annotation_id, *action.annotation_id);
  EXPECT_EQ(listed[0].status, AnnotationStatus::AutoAccepted);
  EXPECT_EQ(listed[0].author.kind, AuthorKind::Model);
  EXPECT_DOUBLE_EQ(listed[0].confidence, 0.92);
}

TEST_F(SchedulerTest, UncertainIsQueued) {
  auto action = scheduler->ingest_prediction(pred(0, 0.55));
  EXPECT_EQ(action.kind, IngestKind::Queued);
  EXPECT_EQ(action.band, ConfidenceBand::Uncertain);
  EXPECT_FALSE(action.annotation_id);
  auto entry = scheduler->queue_entry(ImageId(img(0)));
  EXPECT_DOUBLE_EQ(entry.score, 0.05);
  EXPECT_EQ(entry.band, ConfidenceBand::Uncertain);
  EXPECT_EQ(entry.basis, 1u);
}

TEST_F(SchedulerTest, NewerInstanceReplacesOlderPredictions) {
  scheduler->ingest_prediction(pred(0, 0.55, 1));
  EXPECT_EQ(scheduler->ingest_prediction(pred(0, 0.45, 1)).kind, IngestKind::Queued);
  EXPECT_EQ(scheduler->queue_entry(ImageId(img(0))).basis, 2u);

  auto action = scheduler->ingest_prediction(pred(0, 0.75, 2));
  EXPECT_EQ(action.kind, IngestKind::Replaced);
  auto entry = scheduler->queue_entry(ImageId(img(0)));
  EXPECT_EQ(entry.basis, 1u);
  EXPECT_NEAR(entry.score, 0.25, 1e-12);
  EXPECT_EQ(entry.band, ConfidenceBand::Normal);

  EXPECT_EQ(scheduler->ingest_prediction(pred(0, 0.5, 1)).kind, IngestKind::Superseded);
  EXPECT_EQ(scheduler->queue_entry(ImageId(img(0))).basis, 1u);
  EXPECT_EQ(scheduler->predictions().size(), 4u);
}

TEST_F(SchedulerTest, ModelsQueueIndependently) {
  scheduler->ingest_prediction(pred(0, 0.70, 1, "m1"));
  scheduler->ingest_prediction(pred(0, 0.52, 5, "m2"));
  EXPECT_EQ(scheduler->ingest_prediction(pred(0, 0.65, 2, "m1")).kind, IngestKind::Replaced);
  auto entry = scheduler->queue_entry(ImageId(img(0)));
  EXPECT_EQ(entry.basis, 2u);
  EXPECT_NEAR(entry.score, 0.02, 1e-12);
  EXPECT_EQ(scheduler->predictions(ModelId("m2")).size(), 1u);
}

TEST_F(SchedulerTest, RedundantWhenAcceptedHumanAnnotationMatches) {
  auto human = store->create(ImageId(img(0)), rect_polygon(10, 10, 30, 30), LabelId("ground_vehicle"),
                             Author::human(UserId("alice")));
  auto same = pred(0, 0.95);
  EXPECT_EQ(scheduler->ingest_prediction(same).kind, IngestKind::AutoAccepted);  // not yet accepted
  store->qc_accept(human.annotation_id, UserId("rev"));
  EXPECT_EQ(scheduler->ingest_prediction(same).kind, IngestKind::Redundant);
  EXPECT_EQ(scheduler->ingest_prediction(pred(0, 0.95, 1, "m1", "airborne_vehicle")).kind,
            IngestKind::AutoAccepted);
  auto shifted = pred(0, 0.5);
  shifted.polygon = rect_polygon(20, 20, 30, 30);
  EXPECT_EQ(scheduler->ingest_prediction(shifted).kind, IngestKind::Queued);
}

TEST_F(SchedulerTest, RejectsUnknownReferences) {
  auto p = pred(0, 0.5);
  p.image_id = ImageId("nope");
  EXPECT_EQ(code_of([&] { scheduler->ingest_prediction(p); }), ErrorCode::UnknownImage);
  EXPECT_EQ(code_of([&] { scheduler->ingest_prediction(pred(0, 0.5, 1, "m1", "boat")); }), ErrorCode::UnknownLabel);
  EXPECT_EQ(code_of([&] { scheduler->ingest_prediction(pred(0, 1.5)); }), ErrorCode::OutOfRange);
  EXPECT_TRUE(scheduler->predictions().empty());
  EXPECT_EQ(code_of([&] { scheduler->rank_folder(FolderId("f9")); }), ErrorCode::UnknownFolder);
}

TEST_F(SchedulerTest, RankFolderOrdersByScoreThenId) {
  // img00: 0.05, img01: unpredicted 0.15, img02: 0.20, img03: 0.05 (ties with img00)
  scheduler->ingest_prediction(pred(2, 0.70));
  scheduler->ingest_prediction(pred(0, 0.55));
  scheduler->ingest_prediction(pred(3, 0.45));
  auto ranked = scheduler->priority_order(FolderId("f1"));
  ASSERT_GE(ranked.size(), 4u);
  EXPECT_EQ(ranked[0].str(), img(0));
  EXPECT_EQ(ranked[1].str(), img(3));
  EXPECT_EQ(ranked[2].str(), img(1));
  EXPECT_EQ(ranked.back().str(), img(2));
}

TEST_F(SchedulerTest, RankFolderSkipsImagesThatNeedNoHuman) {
  store->create(ImageId(img(0)), rect_polygon(0, 0, 10, 10), LabelId("rotorcraft"), Author::human(UserId("a")));
  auto auto_only = scheduler->ingest_prediction(pred(1, 0.9));
  scheduler->ingest_prediction(pred(2, 0.9));
  scheduler->ingest_prediction(pred(2, 0.5, 1, "m2"));

  auto ranked = scheduler->priority_order(FolderId("f1"));
  auto has = [&](int i) { return std::find(ranked.begin(), ranked.end(), ImageId(img(i))) != ranked.end(); };
  EXPECT_FALSE(has(0));
  EXPECT_FALSE(has(1));
  EXPECT_TRUE(has(2));
  EXPECT_EQ(ranked.front().str(), img(2));

  store->qc_reject(*auto_only.annotation_id, UserId("rev"), "wrong");
  ranked = scheduler->priority_order(FolderId("f1"));
  EXPECT_TRUE(has(1));
}

TEST_F(SchedulerTest, AllAnnotatedGivesEmptyRanking) {
  for (int i = 0; i < 6; ++i) {
    store->create(ImageId(img(i)), rect_polygon(0, 0, 10, 10), LabelId("rotorcraft"), Author::human(UserId("a")));
  }
  EXPECT_TRUE(scheduler->rank_folder(FolderId("f1")).empty());
}

TEST_F(SchedulerTest, UncertainImagesRankBeforeConfidentNormalOnes) {
  std::mt19937_64 rng(99);
  for (int set = 0; set < 100; ++set) {
    TempDir fresh;
    build_data_root(fresh.path(), 1, 30);
    Catalog cat = Catalog::load(fresh.path());
    AnnotationStore st(cat, clock);
    Scheduler sch(cat, st, clock);
    std::vector<int> uncertain, confident;
    for (int i = 0; i < 30; ++i) {
      const int kind = static_cast<int>(rng() % 3);
      const int objects = 1 + static_cast<int>(rng() % 3);
      for (int k = 0; k < objects; ++k) {
        double c;
        if (kind == 0) c = k == 0 ? uniform(rng, 0.40, 0.60) : uniform(rng, 0.0, 1.0);
        else if (kind == 1) c = uniform(rng, 0.70, 0.7999);
        else continue;
        sch.ingest_prediction(ModelPrediction{{}, ImageId(img(i)), ModelId("m"), LabelId("rotorcraft"),
                                              rect_polygon(1, 1, 5, 5), c, 1, {}, std::nullopt});
      }
      if (kind == 0) uncertain.push_back(i);
      if (kind == 1) confident.push_back(i);
    }
    const auto order = sch.priority_order(FolderId("f1"));
    auto pos = [&](int i) { return std::find(order.begin(), order.end(), ImageId(img(i))) - order.begin(); };
    for (int u : uncertain) {
      for (int c : confident) {
        ASSERT_LT(pos(u), pos(c)) << "set " << set;
      }
    }
  }
}

TEST_F(SchedulerTest, AutoAcceptNeverCountsTowardUrgency) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 6; ++i) {
    for (int k = 0; k < 4; ++k) scheduler->ingest_prediction(pred(i, uniform(rng, 0.0, 1.0), 1, "m" + std::to_string(k)));
  }
  for (const QueueEntry& e : scheduler->rank_folder(FolderId("f1"))) {
    std::vector<double> conf;
    for (const auto& p : scheduler->pending_for(e.image_id)) {
      EXPECT_LT(p.confidence, 0.8);
      conf.push_back(p.confidence);
    }
    EXPECT_EQ(e.basis, conf.size());
    EXPECT_DOUBLE_EQ(e.score, score_image(conf));
  }
}

TEST_F(SchedulerTest, IngestIsDeterministic) {
  TempDir other;
  build_data_root(other.path(), 1, 6);
  Catalog cat2 = Catalog::load(other.path());
  AnnotationStore store2(cat2, clock);
  Scheduler sch2(cat2, store2, clock);
  const double confs[] = {0.9, 0.5, 0.3, 0.55, 0.81, 0.62};
  for (int i = 0; i < 6; ++i) {
    auto a = scheduler->ingest_prediction(pred(i % 3, confs[i], 1 + i / 3));
    auto b = sch2.ingest_prediction(pred(i % 3, confs[i], 1 + i / 3));
    EXPECT_EQ(to_json(a), to_json(b));
  }
}

TEST_F(SchedulerTest, JournalReplayRestoresQueue) {
  scheduler->ingest_prediction(pred(0, 0.55, 1));
  scheduler->ingest_prediction(pred(0, 0.65, 2));
  scheduler->ingest_prediction(pred(1, 0.95, 1));
  scheduler->ingest_prediction(pred(2, 0.42, 1));
  const auto before = scheduler->rank_folder(FolderId("f1"));

  AnnotationStore store2(catalog, clock, StoreOptions{0.80, dir.path()});
  store2.load();
  Scheduler restarted(catalog, store2, clock, SchedulerOptions{{}, 0.9, dir.path() / "predictions.jsonl"});
  restarted.load();
  const auto after = restarted.rank_folder(FolderId("f1"));
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(to_json(before[i]), to_json(after[i]));
  EXPECT_EQ(restarted.predictions().size(), 4u);
  EXPECT_EQ(store2.all().size(), 1u);
  EXPECT_EQ(restarted.ingest_prediction(pred(3, 0.5)).prediction_id.str(), "pred-00000005");
}

TEST(Prediction, JsonRoundTrip) {
  ModelPrediction p{PredictionId("pred-1"), ImageId("i"), ModelId("m"), LabelId("l"), rect_polygon(1, 2, 3, 4),
                    0.25, 3, from_millis(1234), JobId("job-1")};
  const auto back = prediction_from_json(to_json(p));
  EXPECT_EQ(to_json(back), to_json(p));
  EXPECT_EQ(code_of([] { prediction_from_json(nlohmann::json{{"image_id", "x"}}); }), ErrorCode::ValidationError);
}
