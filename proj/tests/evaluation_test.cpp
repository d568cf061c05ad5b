#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "annoforge/error.hpp"
#include "annoforge/evaluation.hpp"
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

const geometry::GridSpec kGrid{100, 100, 3};

Annotation gt(const std::string& id, const geometry::Polygon& poly, const std::string& label = "ground_vehicle",
              const std::string& image = "img") {
  return Annotation{AnnotationId(id), ImageId(image), poly, LabelId(label), Author::human(UserId("u")), 1.0,
                    AnnotationStatus::Accepted, {}, {}, 1, {}};
}

ModelPrediction pr(const std::string& id, const geometry::Polygon& poly, const std::string& label = "ground_vehicle",
                   const std::string& image = "img", int instance = 1) {
  return ModelPrediction{PredictionId(id), ImageId(image), ModelId("m"), LabelId(label), poly, 0.5, instance, {},
                         std::nullopt};
}

double total(const MatchResult& m) {
  double s = 0.0;
  for (const MatchPair& p : m.pairs) s += p.iou;
  return s;
}

// Maximum total IoU over every one-to-one same-label assignment.
double brute_force_best(const std::vector<Annotation>& gts, const std::vector<ModelPrediction>& preds,
                        const geometry::GridSpec& grid) {
  std::vector<bool> used(preds.size());
  std::function<double(std::size_t)> go = [&](std::size_t g) -> double {
    if (g == gts.size()) return 0.0;
    double best = go(g + 1);
    for (std::size_t p = 0; p < preds.size(); ++p) {
      if (used[p] || preds[p].label_id != gts[g].label_id) continue;
      const double v = geometry::iou(gts[g].polygon, preds[p].polygon, grid);
      if (v <= 0.0) continue;
      used[p] = true;
      best = std::max(best, v + go(g + 1));
      used[p] = false;
    }
    return best;
  };
  return go(0);
}

geometry::Polygon jitter(std::mt19937_64& rng, const geometry::Polygon& poly, double amount, double limit) {
  for (;;) {
    std::vector<geometry::Point> pts;
    for (const auto& v : poly.vertices()) {
      pts.push_back({std::clamp(v.x + uniform(rng, -amount, amount), 0.0, limit),
                     std::clamp(v.y + uniform(rng, -amount, amount), 0.0, limit)});
    }
    if (auto p = geometry::Polygon::try_make(pts); p && geometry::polygon_area(*p) > 1.0) return *p;
  }
}

}  // namespace

TEST(Matching, IdenticalPolygonsPairAtOne) {
  const auto sq = rect_polygon(10, 10, 20, 20);
  const std::vector<Annotation> g{gt("a1", sq)};
  const std::vector<ModelPrediction> p{pr("p1", sq)};
  const MatchResult m = match_predictions(g, p, kGrid);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0].iou, 1.0);
  EXPECT_TRUE(m.unmatched_ground_truth.empty());
  EXPECT_TRUE(m.unmatched_predictions.empty());
}

TEST(Matching, DifferentLabelsNeverPair) {
  const auto sq = rect_polygon(10, 10, 20, 20);
  const std::vector<Annotation> g{gt("a1", sq, "ground_vehicle")};
  const std::vector<ModelPrediction> p{pr("p1", sq, "rotorcraft")};
  const MatchResult m = match_predictions(g, p, kGrid);
  EXPECT_TRUE(m.pairs.empty());
  EXPECT_EQ(m.unmatched_ground_truth.size(), 1u);
  EXPECT_EQ(m.unmatched_predictions.size(), 1u);
}

TEST(Matching, PredictionTakesHigherIouGroundTruth) {
  const std::vector<Annotation> g{gt("a1", rect_polygon(0, 0, 10, 10)), gt("a2", rect_polygon(10, 0, 10, 10))};
  const std::vector<ModelPrediction> p{pr("p1", rect_polygon(3, 0, 10, 10))};
  const MatchResult m = match_predictions(g, p, kGrid);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0].annotation_id, AnnotationId("a1"));
  EXPECT_NEAR(m.pairs[0].iou, 70.0 / 130.0, 1e-12);
  EXPECT_EQ(m.unmatched_ground_truth, std::vector<AnnotationId>{AnnotationId("a2")});
  EXPECT_DOUBLE_EQ(total(m), brute_force_best(g, std::vector<ModelPrediction>(p), kGrid));
}

TEST(Matching, TiesPreferLowerIds) {
  const auto sq = rect_polygon(10, 10, 20, 20);
  {
    const std::vector<Annotation> g{gt("a2", sq), gt("a1", sq)};
    const std::vector<ModelPrediction> p{pr("p1", sq)};
    EXPECT_EQ(match_predictions(g, p, kGrid).pairs.at(0).annotation_id, AnnotationId("a1"));
  }
  {
    const std::vector<Annotation> g{gt("a1", sq)};
    const std::vector<ModelPrediction> p{pr("p9", sq), pr("p3", sq)};
    EXPECT_EQ(match_predictions(g, p, kGrid).pairs.at(0).prediction_id, PredictionId("p3"));
  }
}

TEST(Matching, DisjointPairsStayUnmatched) {
  const std::vector<Annotation> g{gt("a1", rect_polygon(0, 0, 10, 10))};
  const std::vector<ModelPrediction> p{pr("p1", rect_polygon(50, 50, 10, 10))};
  const MatchResult m = match_predictions(g, p, kGrid);
  EXPECT_TRUE(m.pairs.empty());
}

TEST(Matching, MinimumIouIsStrict) {
  const std::vector<Annotation> g{gt("a1", rect_polygon(0, 0, 10, 10))};
  const std::vector<ModelPrediction> p{pr("p1", rect_polygon(0, 0, 5, 10))};
  EXPECT_EQ(match_predictions(g, p, kGrid, 0.5).pairs.size(), 0u);
  EXPECT_EQ(match_predictions(g, p, kGrid, 0.49).pairs.size(), 1u);
}

TEST(Matching, MixedImagesRejected) {
  const auto sq = rect_polygon(10, 10, 20, 20);
  const std::vector<Annotation> g{gt("a1", sq, "ground_vehicle", "x")};
  const std::vector<ModelPrediction> p{pr("p1", sq, "ground_vehicle", "y")};
  EXPECT_EQ(code_of([&] { match_predictions(g, p, kGrid); }), ErrorCode::MixedImages);
}

TEST(Matching, EveryIdAppearsExactlyOnceAndPairsAreSameLabel) {
  std::mt19937_64 rng(5);
  const char* labels[] = {"ground_vehicle", "rotorcraft"};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Annotation> g;
    std::vector<ModelPrediction> p;
    const int ng = static_cast<int>(rng() % 5), np = static_cast<int>(rng() % 5);
    for (int i = 0; i < ng; ++i) {
      g.push_back(gt("a" + std::to_string(i), random_convex_polygon(rng, 0, 0, 60, 60), labels[rng() % 2]));
    }
    for (int i = 0; i < np; ++i) {
      p.push_back(pr("p" + std::to_string(i), random_convex_polygon(rng, 0, 0, 60, 60), labels[rng() % 2]));
    }
    const MatchResult m = match_predictions(g, p, kGrid);
    std::vector<AnnotationId> a_seen = m.unmatched_ground_truth;
    std::vector<PredictionId> p_seen = m.unmatched_predictions;
    for (const MatchPair& pair : m.pairs) {
      EXPECT_GT(pair.iou, 0.0);
      a_seen.push_back(pair.annotation_id);
      p_seen.push_back(pair.prediction_id);
      const auto ga = std::find_if(g.begin(), g.end(), [&](auto& x) { return x.annotation_id == pair.annotation_id; });
      const auto pb = std::find_if(p.begin(), p.end(), [&](auto& x) { return x.prediction_id == pair.prediction_id; });
      EXPECT_EQ(ga->label_id, pb->label_id);
    }
    std::sort(a_seen.begin(), a_seen.end());
    std::sort(p_seen.begin(), p_seen.end());
    EXPECT_EQ(a_seen.size(), g.size());
    EXPECT_EQ(p_seen.size(), p.size());
    EXPECT_EQ(std::adjacent_find(a_seen.begin(), a_seen.end()), a_seen.end());
    EXPECT_EQ(std::adjacent_find(p_seen.begin(), p_seen.end()), p_seen.end());
  }
}

// Ground truth objects in separate columns, predictions that are noisy
// detections of them plus strays in the free band below. Strays that overlap
// several objects can break optimality, see the next test.
TEST(Matching, GreedyEqualsBruteForceOnSmallDetectionFixtures) {
  std::mt19937_64 rng(11);
  const geometry::GridSpec grid{256, 256, 3};
  const char* labels[] = {"ground_vehicle", "rotorcraft"};
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Annotation> g;
    std::vector<ModelPrediction> p;
    const int ng = static_cast<int>(rng() % 4), np = static_cast<int>(rng() % 4);
    for (int i = 0; i < ng; ++i) {
      const double x0 = 10.0 + 80.0 * i;
      g.push_back(gt("a" + std::to_string(i), random_convex_polygon(rng, x0, 20, x0 + 60, 200), labels[rng() % 2]));
    }
    for (int i = 0; i < np; ++i) {
      geometry::Polygon poly = (ng > 0 && rng() % 4 != 0)
                                   ? jitter(rng, g[rng() % ng].polygon, 12.0, 256.0)
                                   : random_convex_polygon(rng, 0, 215, 256, 256);
      p.push_back(pr("p" + std::to_string(i), poly, labels[rng() % 2]));
    }
    EXPECT_NEAR(total(match_predictions(g, p, grid)), brute_force_best(g, p, grid), 1e-12) << "trial " << trial;
    ++compared;
  }
  EXPECT_EQ(compared, 300);
}

// Greedy is the contract, not an optimal assignment: with adversarial overlap
// a 2x2 instance already differs.
TEST(Matching, GreedyCanBeSuboptimalUnderHeavyOverlap) {
  const std::vector<Annotation> g{gt("a1", rect_polygon(0, 0, 10, 10)), gt("a2", rect_polygon(10, 0, 10, 10))};
  const std::vector<ModelPrediction> p{pr("p1", rect_polygon(4, 0, 10, 10)), pr("p2", rect_polygon(0, 0, 4, 10))};
  const MatchResult m = match_predictions(g, p, kGrid);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0].prediction_id, PredictionId("p1"));
  EXPECT_NEAR(total(m), 60.0 / 140.0, 1e-12);
  EXPECT_NEAR(brute_force_best(g, p, kGrid), 0.25 + 0.4, 1e-12);
}

TEST(Mean, MissedGroundTruthCountsAsZero) {
  EXPECT_DOUBLE_EQ(mean_with_misses({0.8}, 1), 0.40);
  EXPECT_EQ(mean_with_misses({}, 3), 0.0);
  EXPECT_EQ(mean_with_misses({}, 0), 0.0);
}

TEST(Mean, TableValueIsExact) {
  EXPECT_EQ(mean_with_misses({0.8, 0.7, 0.7, 0.76}, 0), 0.74);
  EXPECT_EQ(mean_with_misses({0.76, 0.7, 0.8, 0.7}, 0), 0.74);
}

namespace {

class ReportTest : public ::testing::Test {
 protected:
  void SetUp() override {
    build_data_root(dir.path(), 1, 6);
    catalog = Catalog::load(dir.path());
    store = std::make_unique<AnnotationStore>(catalog, clock);
  }

  static ImageId img(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "f1_img%02d", i);
    return ImageId(buf);
  }

  Annotation accepted(int image, const geometry::Polygon& poly, const std::string& label = "ground_vehicle") {
    const Annotation a = store->create(img(image), poly, LabelId(label), Author::human(UserId("ann")));
    return store->qc_accept(a.annotation_id, UserId("rev"));
  }

  ModelPrediction pred(int image, const geometry::Polygon& poly, const std::string& label = "ground_vehicle") {
    char id[32];
    std::snprintf(id, sizeof id, "pred-%04d", next_pred_++);
    return ModelPrediction{PredictionId(id), img(image), ModelId("m"), LabelId(label), poly, 0.7, 1, {},
                           std::nullopt};
  }

  std::vector<ImageId> images(int n) {
    std::vector<ImageId> out;
    for (int i = 0; i < n; ++i) out.push_back(img(i));
    return out;
  }

  TempDir dir;
  ManualClock clock;
  Catalog catalog;
  std::unique_ptr<AnnotationStore> store;
  int next_pred_ = 0;
};

}  // namespace

// Each prediction sits inside its ground truth on the pixel grid, so the
// IoUs are the exact area ratios 80/100, 70/100, 70/100 and 76/100.
TEST_F(ReportTest, TableOneGroundVehicleCell) {
  accepted(0, rect_polygon(10, 10, 10, 10));
  accepted(1, rect_polygon(10, 10, 10, 10));
  accepted(2, rect_polygon(10, 10, 10, 10));
  accepted(3, rect_polygon(10, 10, 20, 5));
  const std::vector<ModelPrediction> preds{pred(0, rect_polygon(10, 10, 10, 8)), pred(1, rect_polygon(10, 10, 7, 10)),
                                           pred(2, rect_polygon(13, 10, 7, 10)), pred(3, rect_polygon(11, 10, 19, 4))};
  const auto reports = per_class_report(ModelId("m"), 1, images(4), catalog, *store, preds);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].mean_iou, 0.74);
  EXPECT_EQ(reports[0].matched, 4u);
  EXPECT_EQ(reports[0].missed_ground_truth, 0u);
}

TEST_F(ReportTest, MissedGroundTruthHalvesTheMean) {
  accepted(0, rect_polygon(10, 10, 10, 10));
  accepted(1, rect_polygon(10, 10, 10, 10));
  const std::vector<ModelPrediction> preds{pred(0, rect_polygon(10, 10, 10, 8))};
  const auto reports = per_class_report(ModelId("m"), 1, images(2), catalog, *store, preds);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_DOUBLE_EQ(reports[0].mean_iou, 0.40);
  EXPECT_EQ(reports[0].missed_ground_truth, 1u);
}

TEST_F(ReportTest, AllMissedIsZeroAndWrongLabelIsSpurious) {
  accepted(0, rect_polygon(10, 10, 10, 10), "ground_vehicle");
  const std::vector<ModelPrediction> preds{pred(0, rect_polygon(10, 10, 10, 10), "rotorcraft")};
  const auto reports = per_class_report(ModelId("m"), 1, images(1), catalog, *store, preds);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].label_id, LabelId("ground_vehicle"));
  EXPECT_EQ(reports[0].mean_iou, 0.0);
  EXPECT_EQ(reports[1].label_id, LabelId("rotorcraft"));
  EXPECT_EQ(reports[1].spurious_predictions, 1u);
}

TEST_F(ReportTest, OnlyAcceptedHumanAnnotationsAreGroundTruth) {
  store->create(img(0), rect_polygon(10, 10, 10, 10), LabelId("ground_vehicle"), Author::human(UserId("ann")));
  store->create(img(0), rect_polygon(40, 40, 10, 10), LabelId("ground_vehicle"), Author::model(ModelId("m")), 0.9);
  const std::vector<ModelPrediction> preds{pred(0, rect_polygon(10, 10, 10, 10))};
  const auto reports = per_class_report(ModelId("m"), 1, images(1), catalog, *store, preds);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].matched, 0u);
  EXPECT_EQ(reports[0].missed_ground_truth, 0u);
  EXPECT_EQ(reports[0].spurious_predictions, 1u);
}

TEST_F(ReportTest, NoPredictionsInScope) {
  accepted(0, rect_polygon(10, 10, 10, 10));
  std::vector<ModelPrediction> preds{pred(5, rect_polygon(10, 10, 10, 10))};
  EXPECT_EQ(code_of([&] { per_class_report(ModelId("m"), 1, images(2), catalog, *store, preds); }),
            ErrorCode::NoPredictions);
  EXPECT_EQ(code_of([&] { per_class_report(ModelId("m"), 2, images(6), catalog, *store, preds); }),
            ErrorCode::NoPredictions);
  EXPECT_EQ(code_of([&] { per_class_report(ModelId("other"), 1, images(6), catalog, *store, preds); }),
            ErrorCode::NoPredictions);
}

TEST_F(ReportTest, SelectionScopeAppliesLabelFilter) {
  accepted(0, rect_polygon(10, 10, 10, 10), "ground_vehicle");
  accepted(1, rect_polygon(10, 10, 10, 10), "rotorcraft");
  const std::vector<ModelPrediction> preds{pred(0, rect_polygon(10, 10, 10, 10), "ground_vehicle"),
                                           pred(1, rect_polygon(10, 10, 10, 5), "rotorcraft")};
  DatasetSelection sel{{FolderId("f1")}, std::set<LabelId>{LabelId("rotorcraft")}, false};
  const auto reports = per_class_report(ModelId("m"), 1, sel, catalog, *store, preds);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].label_id, LabelId("rotorcraft"));
  EXPECT_DOUBLE_EQ(reports[0].mean_iou, 0.5);
  EXPECT_EQ(code_of([&] { per_class_report(ModelId("m"), 1, DatasetSelection{}, catalog, *store, preds); }),
            ErrorCode::EmptySelection);
}

TEST_F(ReportTest, MeanIsPermutationInvariantAndIgnoresSpurious) {
  std::mt19937_64 rng(23);
  std::vector<ModelPrediction> preds;
  for (int i = 0; i < 6; ++i) {
    for (int k = 0; k < 3; ++k) {
      const auto poly = random_convex_polygon(rng, 5 + 30 * k, 5, 30 + 30 * k, 90);
      accepted(i, poly);
      if (rng() % 3 != 0) preds.push_back(pred(i, jitter(rng, poly, 5.0, 100.0)));
    }
  }
  const auto base = per_class_report(ModelId("m"), 1, images(6), catalog, *store, preds);
  ASSERT_EQ(base.size(), 1u);
  for (int trial = 0; trial < 20; ++trial) {
    auto shuffled = preds;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto imgs = images(6);
    std::shuffle(imgs.begin(), imgs.end(), rng);
    const auto r = per_class_report(ModelId("m"), 1, imgs, catalog, *store, shuffled);
    EXPECT_EQ(r[0].mean_iou, base[0].mean_iou);
    EXPECT_EQ(r[0].matched, base[0].matched);
  }
  // Strays outside every ground truth only raise the spurious count.
  auto with_strays = preds;
  for (int i = 0; i < 6; ++i) with_strays.push_back(pred(i, rect_polygon(95, 95, 4, 4)));
  const auto r = per_class_report(ModelId("m"), 1, images(6), catalog, *store, with_strays);
  EXPECT_EQ(r[0].mean_iou, base[0].mean_iou);
  EXPECT_EQ(r[0].spurious_predictions, base[0].spurious_predictions + 6);
}

namespace {

MetricsRecord rec(int instance, std::optional<std::string> label, double iou, std::size_t n, std::int64_t at = 0,
                  const std::string& model = "m") {
  return MetricsRecord{JobId("job"), ModelId(model),
                       label ? std::optional<LabelId>(LabelId(*label)) : std::nullopt,
                       instance, iou, n, from_millis(at)};
}

}  // namespace

TEST(Timeline, AscendingPointsPerInstance) {
  const std::vector<MetricsRecord> records{rec(2, "ground_vehicle", 0.6, 4), rec(1, "ground_vehicle", 0.5, 4)};
  const Timeline t = model_timeline(ModelId("m"), records);
  ASSERT_EQ(t.points.size(), 2u);
  EXPECT_EQ(t.points[0].training_instance, 1);
  EXPECT_DOUBLE_EQ(t.points[0].mean_iou, 0.5);
  EXPECT_DOUBLE_EQ(t.points[1].mean_iou, 0.6);
  EXPECT_FALSE(t.plateaued);
}

TEST(Timeline, SingleInstance) {
  const std::vector<MetricsRecord> records{rec(1, "rotorcraft", 0.3, 2)};
  EXPECT_EQ(model_timeline(ModelId("m"), records).points.size(), 1u);
}

TEST(Timeline, OverallWeightsClassesBySampleCount) {
  const std::vector<MetricsRecord> records{rec(1, "ground_vehicle", 0.8, 3), rec(1, "rotorcraft", 0.4, 1)};
  EXPECT_DOUBLE_EQ(model_timeline(ModelId("m"), records).points[0].mean_iou, (0.8 * 3 + 0.4) / 4);
  EXPECT_EQ(model_timeline(ModelId("m"), records).points[0].sample_count, 4u);
}

TEST(Timeline, LatestRecordPerClassWins) {
  const std::vector<MetricsRecord> records{rec(1, "ground_vehicle", 0.2, 3, 10), rec(1, "ground_vehicle", 0.9, 3, 20),
                                           rec(1, "ground_vehicle", 0.1, 3, 5)};
  EXPECT_DOUBLE_EQ(model_timeline(ModelId("m"), records).points[0].mean_iou, 0.9);
}

TEST(Timeline, AllRecordIsFallback) {
  const std::vector<MetricsRecord> records{rec(1, std::nullopt, 0.55, 9), rec(2, std::nullopt, 0.1, 9),
                                           rec(2, "rotorcraft", 0.7, 1)};
  const Timeline t = model_timeline(ModelId("m"), records);
  EXPECT_DOUBLE_EQ(t.points[0].mean_iou, 0.55);
  EXPECT_DOUBLE_EQ(t.points[1].mean_iou, 0.7);
}

TEST(Timeline, PlateauNeedsThreeFlatPoints) {
  std::vector<MetricsRecord> records{rec(1, "rotorcraft", 0.50, 1), rec(2, "rotorcraft", 0.70, 1),
                                     rec(3, "rotorcraft", 0.705, 1)};
  EXPECT_FALSE(model_timeline(ModelId("m"), records).plateaued);
  records.push_back(rec(4, "rotorcraft", 0.712, 1));
  EXPECT_TRUE(model_timeline(ModelId("m"), records).plateaued);
  records.push_back(rec(5, "rotorcraft", 0.75, 1));
  EXPECT_FALSE(model_timeline(ModelId("m"), records).plateaued);
  const std::vector<MetricsRecord> two{rec(1, "rotorcraft", 0.5, 1), rec(2, "rotorcraft", 0.5, 1)};
  EXPECT_FALSE(model_timeline(ModelId("m"), two).plateaued);
}

TEST(Timeline, ClassSeries) {
  const std::vector<MetricsRecord> records{rec(1, "rotorcraft", 0.3, 1), rec(2, "rotorcraft", 0.4, 1),
                                           rec(3, "rotorcraft", 0.45, 1), rec(3, "ground_vehicle", 0.9, 1),
                                           rec(1, "rotorcraft", 0.99, 1, 0, "other")};
  const Timeline t = class_timeline(ModelId("m"), LabelId("rotorcraft"), records);
  ASSERT_EQ(t.points.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(t.points[i].training_instance, static_cast<int>(i + 1));
  EXPECT_DOUBLE_EQ(t.points[0].mean_iou, 0.3);
  EXPECT_EQ(code_of([&] { class_timeline(ModelId("m"), LabelId("airborne_vehicle"), records); }), ErrorCode::NoData);
  EXPECT_EQ(code_of([&] { model_timeline(ModelId("nobody"), records); }), ErrorCode::NoData);
}

TEST(MetricsLogTest, JournalRoundTrip) {
  TempDir dir;
  const auto path = dir.path() / "metrics.jsonl";
  {
    MetricsLog log(path);
    const std::vector<MetricsRecord> batch{rec(1, "rotorcraft", 0.25, 3, 7), rec(1, std::nullopt, 0.5, 5, 8, "n")};
    log.append(batch);
  }
  MetricsLog log(path);
  log.load();
  const auto all = log.records();
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].label_id, LabelId("rotorcraft"));
  EXPECT_EQ(all[0].mean_iou, 0.25);
  EXPECT_EQ(all[0].sample_count, 3u);
  EXPECT_EQ(to_millis(all[0].recorded_at), 7);
  EXPECT_FALSE(all[1].label_id.has_value());
  EXPECT_EQ(log.records(ModelId("n")).size(), 1u);
}

TEST(MetricsLogTest, RejectsMalformedRecords) {
  EXPECT_EQ(code_of([] { metrics_from_json(nlohmann::json{{"label", "ALL"}, {"mean_iou", 0.5}}); }),
            ErrorCode::ValidationError);
  EXPECT_EQ(code_of([] {
              metrics_from_json(nlohmann::json{{"label", "ALL"}, {"mean_iou", 0.5}, {"sample_count", -1}});
            }),
            ErrorCode::ValidationError);
}
