#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "refmatch/geometry.hpp"
#include "refmatch/io.hpp"

namespace refmatch {

struct Detection {
    BBox box;
    double confidence = 0.0;
    std::string label;
};

struct GroundTruthBox {
    BBox box;
    std::string label;
};

/// Mean AP over the given IoU thresholds. Per threshold, predictions are
/// greedily matched in descending confidence (input order on ties) to the
/// unmatched same-label ground truth of highest IoU, then the all-point
/// interpolated area under the precision-recall curve is taken.
/// Thresholds must be non-empty, strictly increasing and inside (0,1).
double average_precision(std::span<const Detection> preds,
                         std::span<const GroundTruthBox> gts,
                         std::span<const double> iou_thresholds);

/// One evaluated sample (one queried region / one mask). Fields not
/// meaningful for a mode stay at zero.
struct SampleResult {
    std::string label;
    bool label_correct = false;
    double dice = 0.0;
    double giou = 0.0;
    double iou = 0.0;
    double ap = 0.0;
    // Binarized pixel counts backing the pooled gIoU interpretation.
    double mask_intersection = 0.0;
    double mask_union = 0.0;
};

struct LabelMetrics {
    double dice = 0.0;
    double giou = 0.0;
    double iou = 0.0;
    double ap = 0.0;
};

struct MetricReport {
    std::map<std::string, LabelMetrics> per_label;
    double mean_dice = 0.0;
    double mean_giou = 0.0;
    double accuracy = 0.0;
};

/// How the mask gIoU aggregate is formed: mean of per-sample IoU (default)
/// or intersection/union pooled over the whole dataset.
enum class GiouAggregation { PerSampleMean, DatasetPooled };

MetricReport aggregate_report(std::span<const SampleResult> samples,
                              GiouAggregation giou_mode = GiouAggregation::PerSampleMean);

json report_to_json(const MetricReport& report);
MetricReport report_from_json(const json& value);

}  // namespace refmatch
