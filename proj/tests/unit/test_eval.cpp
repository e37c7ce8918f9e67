#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "support/oracles.hpp"
#include "support/tempdir.hpp"
#include "vesselseg/errors.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/eval.hpp"

using namespace vesselseg;

namespace {

struct Maps {
  std::vector<Grid<float>> probs;
  std::vector<Grid<std::uint8_t>> masks;
};

// Probabilities quantised to a few levels so ties are common.
Maps random_maps(Rng& rng, int n, int w, int h, int levels = 0) {
  Maps m;
  for (int k = 0; k < n; ++k) {
    Grid<float> p(w, h);
    Grid<std::uint8_t> g(w, h);
    for (std::size_t i = 0; i < p.size(); ++i) {
      g.values()[i] = rng.bernoulli(0.25);
      double v = std::clamp(rng.uniform() * 0.6 + (g.values()[i] ? 0.3 : 0.0), 0.0, 1.0);
      if (levels > 0) v = std::round(v * levels) / levels;
      p.values()[i] = static_cast<float>(v);
    }
    m.probs.push_back(std::move(p));
    m.masks.push_back(std::move(g));
  }
  return m;
}

Grid<float> as_probs(const Grid<std::uint8_t>& g) {
  Grid<float> p(g.width(), g.height());
  for (std::size_t i = 0; i < g.size(); ++i) p.values()[i] = g.values()[i];
  return p;
}

}  // namespace

TEST(Confusion, HandCountedTwoByTwo) {
  Grid<float> p(2, 2);
  p.values() = {0.9f, 0.1f, 0.6f, 0.2f};
  Grid<std::uint8_t> g(2, 2);
  g.values() = {1, 0, 1, 0};
  const auto c = confusion(std::span(&p, 1), std::span(&g, 1), 0.45);
  EXPECT_EQ(c, (ConfusionCounts{2, 0, 2, 0}));
}

TEST(Confusion, BoundaryThresholds) {
  Rng rng(1);
  const auto m = random_maps(rng, 2, 8, 8);
  const auto all = confusion(m.probs, m.masks, 0.0);
  EXPECT_EQ(all.fn, 0u);
  EXPECT_EQ(all.tn, 0u);
  float mx = 0;
  for (const auto& p : m.probs)
    for (float v : p.values()) mx = std::max(mx, v);
  const auto none = confusion(m.probs, m.masks, std::nextafter(static_cast<double>(mx), 2.0));
  EXPECT_EQ(none.tp, 0u);
  EXPECT_EQ(none.fp, 0u);
  EXPECT_EQ(none.total(), 128u);
}

TEST(Confusion, ThresholdIsInclusive) {
  Grid<float> p(1, 1, 0.5f);
  Grid<std::uint8_t> g(1, 1, 1);
  EXPECT_EQ(confusion(std::span(&p, 1), std::span(&g, 1), 0.5).tp, 1u);
}

TEST(Confusion, MismatchNamesPair) {
  std::vector<Grid<float>> p = {Grid<float>(2, 2), Grid<float>(3, 2)};
  std::vector<Grid<std::uint8_t>> g = {Grid<std::uint8_t>(2, 2), Grid<std::uint8_t>(2, 2)};
  try {
    confusion(p, g, 0.5);
    FAIL();
  } catch (const PairingError& e) {
    EXPECT_NE(std::string(e.what()).find("pair 1"), std::string::npos) << e.what();
  }
}

TEST(Curves, AucMatchesPairwiseRankingOracle) {
  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    const auto m = random_maps(rng, 1 + t % 3, 32, 32, t % 2 ? 10 : 0);
    const auto [roc, auc] = roc_with_auc(m.probs, m.masks);
    EXPECT_NEAR(auc, testkit::pairwise_auc(m.probs, m.masks), 1e-9);
  }
}

TEST(Curves, RocShapeInvariants) {
  Rng rng(3);
  const auto m = random_maps(rng, 2, 16, 16, 7);
  const auto [roc, auc] = roc_with_auc(m.probs, m.masks);
  ASSERT_GE(roc.points.size(), 2u);
  EXPECT_EQ(roc.points.front().x, 0.0);
  EXPECT_EQ(roc.points.front().y, 0.0);
  EXPECT_EQ(roc.points.back().x, 1.0);
  EXPECT_EQ(roc.points.back().y, 1.0);
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    EXPECT_GE(roc.points[i].x, roc.points[i - 1].x);
    EXPECT_GE(roc.points[i].y, roc.points[i - 1].y);
    EXPECT_LE(roc.points[i].threshold, roc.points[i - 1].threshold);
  }
  const auto [pr, auprc] = pr_with_auprc(m.probs, m.masks);
  EXPECT_EQ(pr.points.back().x, 1.0);
  for (const auto& pt : pr.points) {
    EXPECT_GE(pt.y, 0.0);
    EXPECT_LE(pt.y, 1.0);
  }
  EXPECT_GT(auprc, 0.0);
  EXPECT_LE(auprc, 1.0);
}

TEST(Curves, PerfectAndConstantPredictors) {
  Rng rng(4);
  auto m = random_maps(rng, 1, 10, 10);
  m.probs[0] = as_probs(m.masks[0]);
  EXPECT_DOUBLE_EQ(roc_with_auc(m.probs, m.masks).second, 1.0);
  EXPECT_NEAR(pr_with_auprc(m.probs, m.masks).second, 1.0, 1e-12);
  m.probs[0] = Grid<float>(10, 10, 0.5f);
  EXPECT_DOUBLE_EQ(roc_with_auc(m.probs, m.masks).second, 0.5);
}

TEST(Curves, PrAreaMatchesDirectTrapezoid) {
  Rng rng(5);
  const auto m = random_maps(rng, 1, 12, 12, 6);
  const auto [pr, auprc] = pr_with_auprc(m.probs, m.masks);
  // Recompute the curve by brute force over distinct values, high to low.
  std::vector<float> values(m.probs[0].values().begin(), m.probs[0].values().end());
  std::sort(values.begin(), values.end(), std::greater<>());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  double positives = 0;
  for (auto g : m.masks[0].values()) positives += g;
  double area = 0, prev_r = 0, prev_p = 1;
  for (float t : values) {
    const auto c = confusion(m.probs, m.masks, t);
    const double r = c.tp / positives;
    const double p = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 1.0;
    area += (r - prev_r) * (p + prev_p) / 2;
    prev_r = r;
    prev_p = p;
  }
  EXPECT_NEAR(auprc, area, 1e-12);
}

TEST(Curves, SingleClassIsUndefined) {
  std::vector<Grid<float>> p = {Grid<float>(4, 4, 0.3f)};
  std::vector<Grid<std::uint8_t>> g = {Grid<std::uint8_t>(4, 4, 0)};
  EXPECT_THROW(roc_with_auc(p, g), UndefinedMetricError);
  EXPECT_THROW(pr_with_auprc(p, g), UndefinedMetricError);
  const std::vector<double> grid = {0.5};
  EXPECT_THROW(best_f1_threshold(p, g, grid), UndefinedMetricError);
}

TEST(BestF1, MatchesExhaustiveGridOracle) {
  Rng rng(6);
  for (int t = 0; t < 30; ++t) {
    const auto m = random_maps(rng, 2, 32, 32, t % 2 ? 20 : 0);
    const auto grid = default_threshold_grid(m.probs);
    const auto [thr, f1] = best_f1_threshold(m.probs, m.masks, grid);
    const auto [othr, of1] = testkit::exhaustive_best_f1(m.probs, m.masks, grid);
    EXPECT_EQ(thr, othr);
    EXPECT_EQ(f1, of1);
    for (double g : grid) EXPECT_GE(f1, confusion(m.probs, m.masks, g).f1() - 1e-15);
  }
}

TEST(BestF1, PerfectPredictorTiesGoLow) {
  Rng rng(7);
  auto m = random_maps(rng, 1, 8, 8);
  m.probs[0] = as_probs(m.masks[0]);
  const std::vector<double> grid = {0.75, 0.25, 0.5};
  const auto [t, f1] = best_f1_threshold(m.probs, m.masks, grid);
  EXPECT_EQ(t, 0.25);
  EXPECT_EQ(f1, 1.0);
}

TEST(ThresholdGrid, HundredStepsPlusDistinctValues) {
  std::vector<Grid<float>> p = {Grid<float>(2, 1)};
  p[0].values() = {0.123f, 0.5f};
  const auto grid = default_threshold_grid(p);
  EXPECT_TRUE(std::is_sorted(grid.begin(), grid.end()));
  EXPECT_EQ(grid.front(), 0.0);
  EXPECT_EQ(grid.back(), 1.0);
  EXPECT_NE(std::find(grid.begin(), grid.end(), static_cast<double>(0.123f)), grid.end());
  EXPECT_EQ(grid.size(), 102u);  // 101 steps + 0.123 (0.5 already present)
}

TEST(Report, IdentitiesAndExplicitThreshold) {
  Rng rng(8);
  const auto m = random_maps(rng, 3, 16, 16, 0);
  const auto r = evaluate_maps(m.probs, m.masks, 0.45);
  const auto c = confusion(m.probs, m.masks, 0.45);
  EXPECT_EQ(r.counts, c);
  EXPECT_EQ(r.threshold, 0.45);
  EXPECT_NEAR(r.sensitivity * (c.tp + c.fn), c.tp, 1e-12);
  EXPECT_NEAR(r.accuracy * c.total(), c.tp + c.tn, 1e-12);
  EXPECT_NEAR(r.specificity * (c.tn + c.fp), c.tn, 1e-12);
  EXPECT_NEAR(r.f1, 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn), 1e-15);
  for (double v : {r.auc, r.auprc, r.sensitivity, r.specificity, r.f1, r.accuracy}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto selected = evaluate_maps(m.probs, m.masks);
  EXPECT_EQ(selected.threshold, best_f1_threshold(m.probs, m.masks, default_threshold_grid(m.probs)).first);
}

TEST(Report, PerfectAndAntiPredictors) {
  Rng rng(9);
  auto m = random_maps(rng, 2, 8, 8);
  for (std::size_t k = 0; k < 2; ++k) m.probs[k] = as_probs(m.masks[k]);
  const auto perfect = evaluate_maps(m.probs, m.masks);
  for (double v : {perfect.auc, perfect.auprc, perfect.sensitivity, perfect.specificity, perfect.f1, perfect.accuracy})
    EXPECT_DOUBLE_EQ(v, 1.0);
  for (std::size_t k = 0; k < 2; ++k)
    for (auto& v : m.probs[k].values()) v = 1.0f - v;
  const auto anti = evaluate_maps(m.probs, m.masks, 0.45);
  EXPECT_EQ(anti.sensitivity, 0.0);
  EXPECT_EQ(anti.specificity, 0.0);
}

TEST(Report, FilesHaveDocumentedHeaders) {
  testkit::TempDir dir;
  Rng rng(10);
  const auto m = random_maps(rng, 1, 8, 8);
  const auto r = evaluate_maps(m.probs, m.masks);
  write_report_csv(dir / "r.csv", r);
  write_curve_csv(dir / "roc.csv", r.roc, "fpr,tpr");
  write_report_text(dir / "r.txt", r);
  std::string line;
  std::ifstream a(dir / "r.csv");
  std::getline(a, line);
  EXPECT_EQ(line, "auc,auprc,sensitivity,specificity,f1,accuracy,threshold,tp,fp,tn,fn");
  std::ifstream b(dir / "roc.csv");
  std::getline(b, line);
  EXPECT_EQ(line, "fpr,tpr");
  int rows = 0;
  while (std::getline(b, line)) ++rows;
  EXPECT_EQ(static_cast<std::size_t>(rows), r.roc.points.size());
}
