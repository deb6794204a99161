#include "refmatch/reward.hpp"

#include <algorithm>
#include <cmath>

#include "refmatch/error.hpp"

namespace refmatch {

void RewardConfig::validate() const {
    if (lambda_acc < 0 || lambda_fmt < 0 || lambda_det < 0) {
        throw_validation("reward lambdas must be nonnegative");
    }
    if (lambda_acc + lambda_fmt <= 0.0) {
        throw_validation("lambda_acc + lambda_fmt must be positive");
    }
    const CurriculumConfig& c = curriculum;
    if (!(c.start_threshold > 0 && c.start_threshold < 1) ||
        !(c.final_threshold > 0 && c.final_threshold < 1)) {
        throw_validation("curriculum thresholds must lie in (0,1)");
    }
    if (c.start_threshold > c.final_threshold) {
        throw_validation("curriculum start threshold exceeds final threshold");
    }
    if (c.step_increment <= 0 || c.steps_per_stage <= 0) {
        throw_validation("curriculum increment and steps_per_stage must be positive");
    }
}

ParsedAnswer parse_format(std::string_view raw, std::span<const std::string> label_set) {
    constexpr std::string_view open = "<answer>";
    constexpr std::string_view close = "</answer>";
    std::size_t first = raw.find(open);
    if (first == std::string_view::npos) return {};
    if (raw.find(open, first + open.size()) != std::string_view::npos) return {};
    std::size_t end = raw.find(close, first + open.size());
    if (end == std::string_view::npos) return {};
    if (raw.find(close, end + close.size()) != std::string_view::npos) return {};
    std::string_view inner = raw.substr(first + open.size(), end - first - open.size());
    for (const std::string& label : label_set) {
        if (inner == label) {
            return {true, std::string(inner)};
        }
    }
    return {};
}

RewardResult vqa_reward(const std::optional<std::string>& predicted, const std::string& gold,
                        bool valid_format, const RewardConfig& config) {
    config.validate();
    RewardResult result;
    result.valid_format = valid_format;
    double accuracy = (predicted.has_value() && *predicted == gold) ? 1.0 : 0.0;
    double format = valid_format ? 1.0 : 0.0;
    result.components["accuracy"] = accuracy;
    result.components["format"] = format;
    result.total = config.lambda_acc * accuracy + config.lambda_fmt * format;
    return result;
}

std::vector<double> curriculum_thresholds(long step, const RewardConfig& config) {
    const CurriculumConfig& c = config.curriculum;
    long stage = step / c.steps_per_stage;
    long max_stage =
        static_cast<long>(std::floor((c.final_threshold - c.start_threshold) / c.step_increment +
                                     1e-9));
    long top = std::min(stage, max_stage);
    std::vector<double> thresholds;
    thresholds.reserve(static_cast<std::size_t>(top) + 1);
    for (long k = 0; k <= top; ++k) {
        thresholds.push_back(c.start_threshold + c.step_increment * static_cast<double>(k));
    }
    return thresholds;
}

RewardResult detection_reward(std::span<const Detection> preds,
                              std::span<const GroundTruthBox> gts, bool valid_format,
                              long step, const RewardConfig& config) {
    config.validate();
    std::vector<double> thresholds = curriculum_thresholds(step, config);
    double ap = average_precision(preds, gts, thresholds);
    RewardResult result;
    result.valid_format = valid_format;
    double format = valid_format ? 1.0 : 0.0;
    result.components["ap"] = ap;
    result.components["format"] = format;
    result.total = config.lambda_det * ap + config.lambda_fmt * format;
    return result;
}

RewardResult segmentation_reward(const Mask& pred, const Mask& gt, const RewardConfig& config) {
    config.validate();
    double bce_score = std::exp(-mask_bce(pred, gt));
    double dice = mask_dice(pred, gt);
    RewardResult result;
    result.valid_format = true;
    result.components["bce_score"] = bce_score;
    result.components["dice"] = dice;
    result.total = config.w_bce * bce_score + config.w_dice * dice;
    return result;
}

std::vector<double> group_advantages(std::span<const double> rewards) {
    if (rewards.empty()) {
        throw_validation("group_advantages requires a non-empty group");
    }
    if (rewards.size() == 1) {
        return {0.0};
    }
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(rewards.size());
    double denom = std::max(std::sqrt(var), 1e-8);
    std::vector<double> out;
    out.reserve(rewards.size());
    for (double r : rewards) out.push_back((r - mean) / denom);
    return out;
}

}  // namespace refmatch
