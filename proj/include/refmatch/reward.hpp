#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refmatch/geometry.hpp"
#include "refmatch/metrics.hpp"

namespace refmatch {

struct CurriculumConfig {
    double start_threshold = 0.50;
    double step_increment = 0.05;
    double final_threshold = 0.95;
    int steps_per_stage = 100;
};

struct RewardConfig {
    double lambda_acc = 0.9;
    double lambda_fmt = 0.1;
    double lambda_det = 0.9;
    double w_bce = 0.7;
    double w_dice = 0.3;
    CurriculumConfig curriculum;

    void validate() const;
};

/// Component values are the raw (unweighted) terms; total is exactly the
/// lambda-weighted sum of them.
struct RewardResult {
    double total = 0.0;
    std::map<std::string, double> components;
    bool valid_format = false;
};

struct ParsedAnswer {
    bool valid = false;
    std::optional<std::string> label;
};

/// Valid iff the text contains exactly one <answer>LABEL</answer> block and
/// LABEL is in the known label set. Surrounding text (e.g. reasoning before
/// the answer) is permitted.
ParsedAnswer parse_format(std::string_view raw, std::span<const std::string> label_set);

RewardResult vqa_reward(const std::optional<std::string>& predicted, const std::string& gold,
                        bool valid_format, const RewardConfig& config);

/// IoU thresholds active at a training step: {0.50, 0.55, ...} growing one
/// increment per completed stage, capped at the final threshold.
std::vector<double> curriculum_thresholds(long step, const RewardConfig& config);

RewardResult detection_reward(std::span<const Detection> preds,
                              std::span<const GroundTruthBox> gts, bool valid_format,
                              long step, const RewardConfig& config);

/// w_bce * exp(-BCE) + w_dice * Dice, in (0, 1]. exp(-BCE) maps the
/// unbounded loss onto a score so that both terms reward quality.
RewardResult segmentation_reward(const Mask& pred, const Mask& gt, const RewardConfig& config);

/// Group-relative advantages: (r - mean) / max(std, 1e-8) with population
/// std. Zero-variance and single-element groups yield all zeros.
std::vector<double> group_advantages(std::span<const double> rewards);

}  // namespace refmatch
