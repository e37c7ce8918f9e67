#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vesselseg/dataio.hpp"
#include "vesselseg/grid.hpp"
#include "vesselseg/inference.hpp"
#include "vesselseg/unet.hpp"

namespace vesselseg {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  double sensitivity() const;  // tp / (tp + fn)
  double specificity() const;  // tn / (tn + fp)
  double precision() const;    // tp / (tp + fp), 1 when nothing is predicted
  double accuracy() const;     // (tp + tn) / total
  double f1() const;           // 2tp / (2tp + fp + fn)

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  double threshold = 0.0;
};

/// ROC: x = false-positive rate, y = true-positive rate.
/// PR:  x = recall, y = precision.
struct Curve {
  std::vector<CurvePoint> points;
};

struct EvalReport {
  double auc = 0.0;
  double auprc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double threshold = 0.0;
  Curve roc;
  Curve pr;
  ConfusionCounts counts;
};

using ProbGrids = std::span<const Grid<float>>;
using MaskGrids = std::span<const Grid<std::uint8_t>>;

/// Pooled counts over all pairs; a pixel is predicted vessel iff p >= threshold.
/// Throws PairingError naming the first pair whose sizes differ.
ConfusionCounts confusion(ProbGrids probs, MaskGrids masks, double threshold);

/// Sweeps every distinct probability (plus sentinels) from high to low.
/// Areas use the trapezoidal rule. Throws UndefinedMetricError unless both
/// classes are present.
std::pair<Curve, double> roc_with_auc(ProbGrids probs, MaskGrids masks);
std::pair<Curve, double> pr_with_auprc(ProbGrids probs, MaskGrids masks);

/// Grid threshold maximising F1; ties go to the lowest threshold.
std::pair<double, double> best_f1_threshold(ProbGrids probs, MaskGrids masks, std::span<const double> grid);

/// 0, 0.01, ..., 1 merged with every distinct predicted value, ascending.
std::vector<double> default_threshold_grid(ProbGrids probs);

/// Full report from precomputed maps. Without a threshold, the F1-optimal
/// one over default_threshold_grid is chosen on the same maps.
EvalReport evaluate_maps(ProbGrids probs, MaskGrids masks, std::optional<double> threshold = std::nullopt);

/// Segments every image with the model and reports pooled metrics.
EvalReport evaluate(const Model& model, const std::vector<LabeledImage>& dataset,
                    std::optional<double> threshold = std::nullopt, const TilingPolicy* tiling = nullptr);

/// Segments both sets; the threshold is selected on `selection` and the
/// metrics are reported on `dataset`.
EvalReport evaluate_with_selection(const Model& model, const std::vector<LabeledImage>& dataset,
                                   const std::vector<LabeledImage>& selection, const TilingPolicy* tiling = nullptr);

void write_report_text(const std::filesystem::path& path, const EvalReport& report);
/// Header `auc,auprc,sensitivity,specificity,f1,accuracy,threshold,tp,fp,tn,fn`.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
/// Two-column CSV of a curve with the given header (e.g. "fpr,tpr").
void write_curve_csv(const std::filesystem::path& path, const Curve& curve, const std::string& header);

}  // namespace vesselseg
