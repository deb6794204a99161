#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "refmatch/bank.hpp"
#include "refmatch/fusion.hpp"
#include "refmatch/metrics.hpp"
#include "refmatch/ot.hpp"
#include "refmatch/reward.hpp"
#include "refmatch/synth.hpp"

namespace refmatch {

enum class EvalMode { Vqa, Bbox, Seg };
enum class RegionSource { GroundTruthHidden, Detector };
enum class AssignStrategy { OptimalTransport, IndependentNearest };

struct PipelineConfig {
    EvalMode mode = EvalMode::Vqa;
    RegionSource region_source = RegionSource::GroundTruthHidden;
    AssignStrategy assignment = AssignStrategy::OptimalTransport;
    bool try_mirror = true;
    MatchConfig match;
    RewardConfig rewards;
    bool emit_rewards = false;
    long curriculum_step = 0;
    int grid_dim = 32;
    double grid_gain = 4.0;
    int d_vlm = 128;
    double detector_threshold = 0.125;
    std::optional<AdapterParams> adapter;  // required in Seg mode
    /// Resolves a retrieved template to its reference image (Seg mode).
    /// Defaults to the pair's own reference when ids match.
    std::function<Image(const Template&)> image_loader;
    bool debug = false;
};

struct SceneOutcome {
    std::vector<SampleResult> samples;
    std::vector<RewardResult> rewards;  // per sample (Vqa/Seg) or per scene (Bbox)
    json debug;                         // populated only with config.debug
};

/// Retrieval -> relational labeling / box matching / memory-attention
/// segmentation on one scene, scored against the pair's hidden ground
/// truth. Module errors propagate with a stage tag in the message.
SceneOutcome run_pipeline(const ReferenceBank& bank, const ScenePair& pair,
                          const PipelineConfig& config);

/// Scenes -> aggregate MetricReport; fan-out over scenes is handled by the
/// CLI layer so it can honor the thread cap.
MetricReport aggregate_outcomes(std::span<const SceneOutcome> outcomes,
                                GiouAggregation giou_mode = GiouAggregation::PerSampleMean);

}  // namespace refmatch
