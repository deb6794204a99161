#include "refmatch/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "refmatch/error.hpp"

namespace refmatch {

namespace {

double ap_at_threshold(std::span<const Detection> preds,
                       std::span<const GroundTruthBox> gts, double threshold,
                       std::span<const std::size_t> order) {
    if (gts.empty()) {
        return 0.0;
    }
    std::vector<bool> gt_used(gts.size(), false);
    std::vector<bool> is_tp;
    is_tp.reserve(order.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const Detection& det = preds[order[rank]];
        int best_gt = -1;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g] || gts[g].label != det.label) continue;
            double iou = box_iou(det.box, gts[g].box);
            if (iou >= threshold && iou > best_iou) {
                best_iou = iou;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0) {
            gt_used[static_cast<std::size_t>(best_gt)] = true;
            is_tp.push_back(true);
        } else {
            is_tp.push_back(false);
        }
    }

    // All-point interpolation: walk ranks, record (recall, precision), then
    // integrate recall increments against the running max precision from the
    // right.
    std::vector<double> precision(is_tp.size()), recall(is_tp.size());
    double tp = 0.0;
    for (std::size_t k = 0; k < is_tp.size(); ++k) {
        if (is_tp[k]) tp += 1.0;
        precision[k] = tp / static_cast<double>(k + 1);
        recall[k] = tp / static_cast<double>(gts.size());
    }
    double ap = 0.0;
    double best_precision = 0.0;
    for (std::size_t k = is_tp.size(); k-- > 0;) {
        best_precision = std::max(best_precision, precision[k]);
        double prev_recall = k == 0 ? 0.0 : recall[k - 1];
        ap += (recall[k] - prev_recall) * best_precision;
    }
    return ap;
}

}  // namespace

double average_precision(std::span<const Detection> preds,
                         std::span<const GroundTruthBox> gts,
                         std::span<const double> iou_thresholds) {
    if (iou_thresholds.empty()) {
        throw_validation("average_precision requires at least one IoU threshold");
    }
    for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
        double t = iou_thresholds[i];
        if (!(t > 0.0 && t < 1.0)) {
            throw_validation("IoU thresholds must lie in (0,1)");
        }
        if (i > 0 && !(t > iou_thresholds[i - 1])) {
            throw_validation("IoU thresholds must be strictly increasing");
        }
    }

    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return preds[a].confidence > preds[b].confidence;
    });

    double total = 0.0;
    for (double threshold : iou_thresholds) {
        total += ap_at_threshold(preds, gts, threshold, order);
    }
    return total / static_cast<double>(iou_thresholds.size());
}

MetricReport aggregate_report(std::span<const SampleResult> samples,
                              GiouAggregation giou_mode) {
    if (samples.empty()) {
        throw_validation("aggregate_report requires at least one sample");
    }
    MetricReport report;
    struct Tally {
        double dice = 0, giou = 0, iou = 0, ap = 0, inter = 0, uni = 0;
        int n = 0;
    };
    std::map<std::string, Tally> per_label;
    Tally all;
    int correct = 0;
    for (const SampleResult& s : samples) {
        Tally& t = per_label[s.label];
        for (Tally* target : {&t, &all}) {
            target->dice += s.dice;
            target->giou += s.giou;
            target->iou += s.iou;
            target->ap += s.ap;
            target->inter += s.mask_intersection;
            target->uni += s.mask_union;
            target->n += 1;
        }
        if (s.label_correct) ++correct;
    }
    auto finish = [giou_mode](const Tally& t) {
        LabelMetrics m;
        m.dice = t.dice / t.n;
        m.iou = t.iou / t.n;
        m.ap = t.ap / t.n;
        if (giou_mode == GiouAggregation::DatasetPooled) {
            m.giou = t.uni > 0.0 ? t.inter / t.uni : 0.0;
        } else {
            m.giou = t.giou / t.n;
        }
        return m;
    };
    for (const auto& [label, tally] : per_label) {
        report.per_label[label] = finish(tally);
    }
    LabelMetrics aggregate = finish(all);
    report.mean_dice = aggregate.dice;
    report.mean_giou = aggregate.giou;
    report.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    return report;
}

json report_to_json(const MetricReport& report) {
    json per_label = json::object();
    for (const auto& [label, m] : report.per_label) {
        per_label[label] = json{{"dice", m.dice}, {"giou", m.giou}, {"iou", m.iou}, {"ap", m.ap}};
    }
    return json{{"per_label", per_label},
                {"mean_dice", report.mean_dice},
                {"mean_giou", report.mean_giou},
                {"accuracy", report.accuracy}};
}

MetricReport report_from_json(const json& value) {
    MetricReport report;
    for (const auto& [label, m] : value.at("per_label").items()) {
        LabelMetrics lm;
        lm.dice = m.at("dice").get<double>();
        lm.giou = m.at("giou").get<double>();
        lm.iou = m.at("iou").get<double>();
        lm.ap = m.at("ap").get<double>();
        report.per_label[label] = lm;
    }
    report.mean_dice = value.at("mean_dice").get<double>();
    report.mean_giou = value.at("mean_giou").get<double>();
    report.accuracy = value.at("accuracy").get<double>();
    return report;
}

}  // namespace refmatch
