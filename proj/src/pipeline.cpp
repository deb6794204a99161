#include "refmatch/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "refmatch/error.hpp"
#include "refmatch/train.hpp"

namespace refmatch {

namespace {

[[noreturn]] void rethrow_with_stage(const char* stage, const Error& e) {
    throw Error(e.kind(), std::string("[") + stage + "] " + e.what());
}

struct RetrievedTemplate {
    const Template* tmpl = nullptr;
    double similarity = 0.0;
};

RetrievedTemplate retrieve_stage(const ReferenceBank& bank, const ScenePair& pair,
                                 int feature_dim) {
    try {
        FeatureVector query = extract_features(pair.target_image, feature_dim);
        std::vector<RetrievalHit> hits = retrieve(bank, query, 1);
        return {&bank.templates[static_cast<std::size_t>(hits[0].index)], hits[0].similarity};
    } catch (const Error& e) {
        rethrow_with_stage("retrieve", e);
    }
}

struct DetectedScene {
    std::vector<DetectedRegion> regions;
    std::vector<std::string> gold;  // hidden labels, scoring only
};

DetectedScene detect_stage(const ScenePair& pair, const PipelineConfig& config) {
    DetectedScene scene;
    try {
        if (config.region_source == RegionSource::GroundTruthHidden) {
            scene.regions = regions_from_ground_truth(pair, &scene.gold);
            return scene;
        }
        scene.regions = detect_regions(pair.target_image, config.detector_threshold);
        // Score detector output against the ground-truth region of highest
        // mask overlap; no overlap leaves the gold label empty (never correct).
        for (const DetectedRegion& det : scene.regions) {
            std::string best_label;
            double best_iou = 0.0;
            for (const GtRegion& gt : pair.target_regions) {
                double iou = mask_iou(det.mask, gt.mask);
                if (iou > best_iou) {
                    best_iou = iou;
                    best_label = gt.label;
                }
            }
            scene.gold.push_back(best_label);
        }
        return scene;
    } catch (const Error& e) {
        rethrow_with_stage("detect", e);
    }
}

const GtRegion* find_gt(const ScenePair& pair, const std::string& label) {
    for (const GtRegion& gt : pair.target_regions) {
        if (gt.label == label) return &gt;
    }
    return nullptr;
}

SceneOutcome run_vqa(const ReferenceBank& bank, const ScenePair& pair,
                     const PipelineConfig& config) {
    SceneOutcome outcome;
    RetrievedTemplate retrieved = retrieve_stage(bank, pair, bank.dim);
    DetectedScene scene = detect_stage(pair, config);

    RelabelResult relabel;
    try {
        RelabelOptions options;
        options.try_mirror = config.try_mirror;
        options.match = config.match;
        relabel = relational_label(*retrieved.tmpl, scene.regions, options);
    } catch (const Error& e) {
        rethrow_with_stage("label", e);
    }

    std::vector<std::string> label_set;
    for (const auto& [label, region] : retrieved.tmpl->regions) label_set.push_back(label);

    for (std::size_t i = 0; i < scene.regions.size(); ++i) {
        auto it = relabel.labels.find(static_cast<int>(i));
        std::optional<std::string> predicted;
        if (it != relabel.labels.end()) predicted = it->second;

        SampleResult sample;
        sample.label = scene.gold[i];
        sample.label_correct = predicted.has_value() && *predicted == scene.gold[i];
        outcome.samples.push_back(sample);

        if (config.emit_rewards) {
            // Run the text answer through the grammar the reward expects.
            std::string raw = predicted ? "<answer>" + *predicted + "</answer>" : "";
            ParsedAnswer parsed = parse_format(raw, label_set);
            outcome.rewards.push_back(
                vqa_reward(parsed.label, scene.gold[i], parsed.valid, config.rewards));
        }
    }

    if (config.debug) {
        json labels = json::object();
        for (const auto& [index, label] : relabel.labels) {
            labels[std::to_string(index)] = label;
        }
        outcome.debug = json{{"stage", "vqa"},
                             {"retrieved", retrieved.tmpl->id},
                             {"similarity", retrieved.similarity},
                             {"used_mirror", relabel.used_mirror},
                             {"distortion", relabel.distortion},
                             {"labels", labels}};
    }
    return outcome;
}

SceneOutcome run_bbox(const ReferenceBank& bank, const ScenePair& pair,
                      const PipelineConfig& config) {
    SceneOutcome outcome;
    RetrievedTemplate retrieved = retrieve_stage(bank, pair, bank.dim);
    DetectedScene scene = detect_stage(pair, config);

    std::vector<Prototype> prototypes;
    for (const auto& [label, region] : retrieved.tmpl->regions) {
        prototypes.push_back({label, region.box, std::nullopt});
    }
    std::vector<PredBox> preds;
    for (const DetectedRegion& det : scene.regions) preds.push_back({det.box, std::nullopt});

    std::vector<std::optional<std::string>> predicted(preds.size());
    std::vector<double> confidence(preds.size(), 1.0);
    try {
        if (config.assignment == AssignStrategy::OptimalTransport) {
            Assignment assignment = match_with_refinement(preds, prototypes, config.match);
            for (std::size_t k = 0; k < assignment.pairs.size(); ++k) {
                auto [i, j] = assignment.pairs[k];
                predicted[static_cast<std::size_t>(i)] =
                    prototypes[static_cast<std::size_t>(j)].label;
                confidence[static_cast<std::size_t>(i)] = assignment.confidences[k];
            }
        } else {
            for (std::size_t i = 0; i < preds.size(); ++i) {
                int best = -1;
                double best_cost = std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < prototypes.size(); ++j) {
                    double c = center_distance(preds[i].box, *prototypes[j].box);
                    if (c < best_cost) {
                        best_cost = c;
                        best = static_cast<int>(j);
                    }
                }
                predicted[i] = prototypes[static_cast<std::size_t>(best)].label;
            }
        }
    } catch (const Error& e) {
        rethrow_with_stage("match", e);
    }

    std::vector<Detection> detections;
    std::vector<GroundTruthBox> gt_boxes;
    for (const GtRegion& gt : pair.target_regions) gt_boxes.push_back({gt.box, gt.label});
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (predicted[i]) detections.push_back({preds[i].box, confidence[i], *predicted[i]});
    }
    std::vector<double> thresholds = curriculum_thresholds(config.curriculum_step, config.rewards);
    double scene_ap = average_precision(detections, gt_boxes, thresholds);

    for (std::size_t i = 0; i < preds.size(); ++i) {
        SampleResult sample;
        sample.label = scene.gold[i];
        sample.label_correct = predicted[i].has_value() && *predicted[i] == scene.gold[i];
        if (const GtRegion* gt = find_gt(pair, scene.gold[i])) {
            sample.iou = box_iou(preds[i].box, gt->box);
            sample.giou = box_giou(preds[i].box, gt->box);
        }
        sample.ap = scene_ap;
        outcome.samples.push_back(sample);
    }
    if (config.emit_rewards) {
        outcome.rewards.push_back(detection_reward(detections, gt_boxes, true,
                                                   config.curriculum_step, config.rewards));
    }
    if (config.debug) {
        json assigned = json::array();
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            assigned.push_back(predicted[i] ? json(*predicted[i]) : json(nullptr));
        }
        outcome.debug = json{{"stage", "bbox"},
                             {"retrieved", retrieved.tmpl->id},
                             {"similarity", retrieved.similarity},
                             {"strategy",
                              config.assignment == AssignStrategy::OptimalTransport
                                  ? "ot"
                                  : "independent"},
                             {"scene_ap", scene_ap},
                             {"assigned", assigned}};
    }
    return outcome;
}

SceneOutcome run_seg(const ReferenceBank& bank, const ScenePair& pair,
                     const PipelineConfig& config) {
    if (!config.adapter.has_value()) {
        throw_validation("[fuse] seg mode requires trained adapter parameters");
    }
    SceneOutcome outcome;
    RetrievedTemplate retrieved = retrieve_stage(bank, pair, bank.dim);

    Image ref_image;
    if (retrieved.tmpl->id == pair.reference.id) {
        ref_image = pair.reference_image;
    } else if (config.image_loader) {
        ref_image = config.image_loader(*retrieved.tmpl);
    } else {
        throw_validation("[fuse] retrieved template '" + retrieved.tmpl->id +
                         "' needs an image loader");
    }

    MemoryBank memory;
    FeatureGrid target_grid;
    try {
        FeatureGrid ref_grid = make_feature_grid(ref_image, config.grid_dim, config.grid_gain);
        memory = build_memory_slots(*retrieved.tmpl, ref_grid);
        target_grid = make_feature_grid(pair.target_image, config.grid_dim, config.grid_gain);
    } catch (const Error& e) {
        rethrow_with_stage("fuse", e);
    }

    json debug_samples = json::array();
    for (const GtRegion& gt : pair.target_regions) {
        try {
            auto ref_it = retrieved.tmpl->regions.find(gt.label);
            std::optional<TemplateRegion> ref_region;
            double ref_intensity = 0.0;
            if (ref_it != retrieved.tmpl->regions.end()) {
                ref_region = ref_it->second;
                ref_intensity = region_mean_intensity(ref_image, ref_it->second.mask);
            }
            SegEmbedding h = make_seg_embedding(gt, ref_region, ref_intensity, config.d_vlm);
            std::vector<double> q = project(h, config.adapter->mlp);
            FusedQuery fused = attend_memory(q, memory);
            Mask pred = decode_mask(fused.z, target_grid, config.adapter->decoder_bias);

            std::size_t best_slot = static_cast<std::size_t>(
                std::max_element(fused.alpha.begin(), fused.alpha.end()) - fused.alpha.begin());

            SampleResult sample;
            sample.label = gt.label;
            sample.label_correct = memory.slots[best_slot].label == gt.label;
            sample.dice = mask_dice(pred, gt.mask);
            sample.iou = mask_iou(pred, gt.mask);
            sample.giou = sample.iou;  // per-sample mask IoU (see report docs)
            double inter = 0.0, uni = 0.0;
            for (std::size_t px = 0; px < pred.values.size(); ++px) {
                bool p = pred.values[px] >= 0.5;
                bool g = gt.mask.values[px] >= 0.5;
                inter += (p && g) ? 1.0 : 0.0;
                uni += (p || g) ? 1.0 : 0.0;
            }
            sample.mask_intersection = inter;
            sample.mask_union = uni;
            outcome.samples.push_back(sample);

            if (config.emit_rewards) {
                outcome.rewards.push_back(segmentation_reward(pred, gt.mask, config.rewards));
            }
            if (config.debug) {
                debug_samples.push_back(json{{"label", gt.label},
                                             {"attended", memory.slots[best_slot].label},
                                             {"dice", sample.dice},
                                             {"iou", sample.iou}});
            }
        } catch (const Error& e) {
            rethrow_with_stage("fuse", e);
        }
    }
    if (config.debug) {
        outcome.debug = json{{"stage", "seg"},
                             {"retrieved", retrieved.tmpl->id},
                             {"similarity", retrieved.similarity},
                             {"samples", debug_samples}};
    }
    return outcome;
}

}  // namespace

SceneOutcome run_pipeline(const ReferenceBank& bank, const ScenePair& pair,
                          const PipelineConfig& config) {
    if (bank.templates.empty()) {
        throw_validation("[retrieve] pipeline requires a non-empty bank");
    }
    switch (config.mode) {
        case EvalMode::Vqa:
            return run_vqa(bank, pair, config);
        case EvalMode::Bbox:
            return run_bbox(bank, pair, config);
        case EvalMode::Seg:
            return run_seg(bank, pair, config);
    }
    throw_internal("unknown pipeline mode");
}

MetricReport aggregate_outcomes(std::span<const SceneOutcome> outcomes,
                                GiouAggregation giou_mode) {
    std::vector<SampleResult> samples;
    for (const SceneOutcome& outcome : outcomes) {
        samples.insert(samples.end(), outcome.samples.begin(), outcome.samples.end());
    }
    return aggregate_report(samples, giou_mode);
}

}  // namespace refmatch
