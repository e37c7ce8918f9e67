#include "vesselseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "vesselseg/errors.hpp"

namespace vesselseg {

namespace {

double ratio(std::uint64_t num, std::uint64_t den, double if_empty) {
  return den == 0 ? if_empty : static_cast<double>(num) / static_cast<double>(den);
}

void check_pairs(ProbGrids probs, MaskGrids masks) {
  if (probs.size() != masks.size()) {
    throw PairingError(std::to_string(probs.size()) + " probability maps paired with " +
                       std::to_string(masks.size()) + " masks");
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!probs[i].same_shape(masks[i])) {
      throw PairingError("pair " + std::to_string(i) + ": probability map " + std::to_string(probs[i].width()) +
                         "x" + std::to_string(probs[i].height()) + " vs mask " + std::to_string(masks[i].width()) +
                         "x" + std::to_string(masks[i].height()));
    }
  }
}

// Pooled pixels sorted by descending probability, grouped by distinct value.
struct Sweep {
  struct Level {
    float value;
    std::uint64_t vessel;      // pixels at exactly this value
    std::uint64_t background;
  };
  std::vector<Level> levels;  // descending value
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
};

Sweep build_sweep(ProbGrids probs, MaskGrids masks) {
  check_pairs(probs, masks);
  std::vector<std::pair<float, std::uint8_t>> pixels;
  std::size_t total = 0;
  for (const auto& p : probs) total += p.size();
  pixels.reserve(total);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i].values();
    const auto& m = masks[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) pixels.emplace_back(p[k], m[k] != 0);
  }
  std::sort(pixels.begin(), pixels.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  Sweep sweep;
  for (const auto& [value, vessel] : pixels) {
    if (sweep.levels.empty() || sweep.levels.back().value != value) sweep.levels.push_back({value, 0, 0});
    if (vessel) {
      ++sweep.levels.back().vessel;
      ++sweep.positives;
    } else {
      ++sweep.levels.back().background;
      ++sweep.negatives;
    }
  }
  if (sweep.positives == 0 || sweep.negatives == 0) {
    throw UndefinedMetricError("metric undefined: pooled ground truth contains only " +
                               std::string(sweep.positives == 0 ? "background" : "vessel") + " pixels");
  }
  return sweep;
}

// Threshold that predicts nothing: 1, or just above 1 if some p equals 1.
double upper_sentinel(const Sweep& sweep) {
  return sweep.levels.front().value >= 1.0f ? std::nextafter(1.0, 2.0) : 1.0;
}

double trapezoid(const Curve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.x - a.x) * (a.y + b.y) / 2.0;
  }
  return area;
}

}  // namespace

double ConfusionCounts::sensitivity() const { return ratio(tp, tp + fn, 0.0); }
double ConfusionCounts::specificity() const { return ratio(tn, tn + fp, 0.0); }
double ConfusionCounts::precision() const { return ratio(tp, tp + fp, 1.0); }
double ConfusionCounts::accuracy() const { return ratio(tp + tn, total(), 0.0); }
double ConfusionCounts::f1() const { return ratio(2 * tp, 2 * tp + fp + fn, 0.0); }

ConfusionCounts confusion(ProbGrids probs, MaskGrids masks, double threshold) {
  check_pairs(probs, masks);
  ConfusionCounts counts;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i].values();
    const auto& m = masks[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const bool predicted = p[k] >= threshold;
      const bool vessel = m[k] != 0;
      if (predicted) {
        ++(vessel ? counts.tp : counts.fp);
      } else {
        ++(vessel ? counts.fn : counts.tn);
      }
    }
  }
  return counts;
}

std::pair<Curve, double> roc_with_auc(ProbGrids probs, MaskGrids masks) {
  const Sweep sweep = build_sweep(probs, masks);
  Curve curve;
  curve.points.reserve(sweep.levels.size() + 2);
  curve.points.push_back({0.0, 0.0, upper_sentinel(sweep)});
  std::uint64_t tp = 0, fp = 0;
  const double pos = static_cast<double>(sweep.positives);
  const double neg = static_cast<double>(sweep.negatives);
  for (const auto& level : sweep.levels) {
    tp += level.vessel;
    fp += level.background;
    curve.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, level.value});
  }
  if (sweep.levels.back().value > 0.0f) curve.points.push_back({1.0, 1.0, 0.0});
  return {curve, trapezoid(curve)};
}

std::pair<Curve, double> pr_with_auprc(ProbGrids probs, MaskGrids masks) {
  const Sweep sweep = build_sweep(probs, masks);
  Curve curve;
  curve.points.reserve(sweep.levels.size() + 2);
  curve.points.push_back({0.0, 1.0, upper_sentinel(sweep)});
  std::uint64_t tp = 0, fp = 0;
  const double pos = static_cast<double>(sweep.positives);
  for (const auto& level : sweep.levels) {
    tp += level.vessel;
    fp += level.background;
    curve.points.push_back({static_cast<double>(tp) / pos, static_cast<double>(tp) / static_cast<double>(tp + fp),
                            level.value});
  }
  if (sweep.levels.back().value > 0.0f) {
    curve.points.push_back({1.0, pos / static_cast<double>(sweep.positives + sweep.negatives), 0.0});
  }
  return {curve, trapezoid(curve)};
}

std::pair<double, double> best_f1_threshold(ProbGrids probs, MaskGrids masks, std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("threshold grid is empty");
  for (double t : grid) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("threshold grid values must lie in [0, 1]");
  }
  check_pairs(probs, masks);
  // Ascending probabilities with a running count of vessel pixels.
  std::vector<std::pair<float, std::uint8_t>> pixels;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i].values();
    const auto& m = masks[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) pixels.emplace_back(p[k], m[k] != 0);
  }
  std::sort(pixels.begin(), pixels.end());
  std::vector<std::uint64_t> vessels_below(pixels.size() + 1, 0);
  for (std::size_t k = 0; k < pixels.size(); ++k) vessels_below[k + 1] = vessels_below[k] + pixels[k].second;
  const std::uint64_t positives = vessels_below.back();
  const std::uint64_t total = pixels.size();
  if (positives == 0 || positives == total) {
    throw UndefinedMetricError("F1 threshold selection needs both vessel and background pixels");
  }

  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  double best_t = sorted.front();
  double best_f1 = -1.0;
  for (double t : sorted) {
    const auto first = std::lower_bound(pixels.begin(), pixels.end(), t,
                                        [](const auto& px, double v) { return static_cast<double>(px.first) < v; });
    const auto idx = static_cast<std::size_t>(first - pixels.begin());
    ConfusionCounts c;
    c.tp = positives - vessels_below[idx];
    c.fp = (total - idx) - c.tp;
    c.fn = vessels_below[idx];
    c.tn = idx - c.fn;
    const double f1 = c.f1();
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return {best_t, best_f1};
}

std::vector<double> default_threshold_grid(ProbGrids probs) {
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
  for (const auto& p : probs) grid.insert(grid.end(), p.values().begin(), p.values().end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

EvalReport evaluate_maps(ProbGrids probs, MaskGrids masks, std::optional<double> threshold) {
  if (probs.empty()) throw ConfigError("evaluation set is empty");
  EvalReport report;
  std::tie(report.roc, report.auc) = roc_with_auc(probs, masks);
  std::tie(report.pr, report.auprc) = pr_with_auprc(probs, masks);
  if (threshold) {
    if (!(*threshold >= 0.0 && *threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    report.threshold = *threshold;
  } else {
    const auto grid = default_threshold_grid(probs);
    report.threshold = best_f1_threshold(probs, masks, grid).first;
  }
  report.counts = confusion(probs, masks, report.threshold);
  report.sensitivity = report.counts.sensitivity();
  report.specificity = report.counts.specificity();
  report.accuracy = report.counts.accuracy();
  report.f1 = report.counts.f1();
  return report;
}

namespace {

std::pair<std::vector<Grid<float>>, std::vector<Grid<std::uint8_t>>> predict(const Model& model,
                                                                               const std::vector<LabeledImage>& data,
                                                                               const TilingPolicy* tiling) {
  std::vector<Grid<float>> probs;
  std::vector<Grid<std::uint8_t>> masks;
  for (const auto& item : data) {
    check_pair(item.image, item.mask);
    probs.push_back(tiling != nullptr ? segment_tiled(model, item.image, *tiling).values
                                      : segment(model, item.image, false, TilingPolicy{}).values);
    masks.push_back(item.mask.labels);
  }
  return {std::move(probs), std::move(masks)};
}

}  // namespace

EvalReport evaluate(const Model& model, const std::vector<LabeledImage>& dataset, std::optional<double> threshold,
                    const TilingPolicy* tiling) {
  if (dataset.empty()) throw ConfigError("evaluation set is empty");
  const auto [probs, masks] = predict(model, dataset, tiling);
  return evaluate_maps(probs, masks, threshold);
}

EvalReport evaluate_with_selection(const Model& model, const std::vector<LabeledImage>& dataset,
                                   const std::vector<LabeledImage>& selection, const TilingPolicy* tiling) {
  if (selection.empty()) throw ConfigError("threshold-selection set is empty");
  const auto [sel_probs, sel_masks] = predict(model, selection, tiling);
  const auto grid = default_threshold_grid(sel_probs);
  const double threshold = best_f1_threshold(sel_probs, sel_masks, grid).first;
  return evaluate(model, dataset, threshold, tiling);
}

void write_report_text(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::fixed << std::setprecision(6);
  out << "AUC          " << report.auc << "\n"
      << "AUPRC        " << report.auprc << "\n"
      << "Sensitivity  " << report.sensitivity << "\n"
      << "Specificity  " << report.specificity << "\n"
      << "F1 Score     " << report.f1 << "\n"
      << "Accuracy     " << report.accuracy << "\n"
      << "Threshold    " << report.threshold << "\n"
      << "TP FP TN FN  " << report.counts.tp << " " << report.counts.fp << " " << report.counts.tn << " "
      << report.counts.fn << "\n";
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::setprecision(17);
  out << "auc,auprc,sensitivity,specificity,f1,accuracy,threshold,tp,fp,tn,fn\n"
      << report.auc << "," << report.auprc << "," << report.sensitivity << "," << report.specificity << ","
      << report.f1 << "," << report.accuracy << "," << report.threshold << "," << report.counts.tp << ","
      << report.counts.fp << "," << report.counts.tn << "," << report.counts.fn << "\n";
}

void write_curve_csv(const std::filesystem::path& path, const Curve& curve, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::setprecision(10) << header << "\n";
  for (const auto& p : curve.points) out << p.x << "," << p.y << "\n";
}

}  // namespace vesselseg
