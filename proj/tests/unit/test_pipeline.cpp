#include <doctest.h>

#include <vector>

#include "refmatch/error.hpp"
#include "refmatch/pipeline.hpp"
#include "refmatch/train.hpp"

using namespace refmatch;

namespace {

SceneConfig scene_config(std::uint64_t seed, int n, double sigma = 0.0) {
    SceneConfig config;
    config.n_regions = n;
    config.labels.clear();
    for (int i = 0; i < n; ++i) config.labels.push_back("r" + std::to_string(i));
    config.position_sigma = sigma;
    config.seed = seed;
    if (n >= 6) config.region_scale = 0.7;
    return config;
}

ReferenceBank bank_of(const std::vector<ScenePair>& pairs) {
    ReferenceBank bank;
    for (const ScenePair& pair : pairs) {
        if (bank.templates.empty()) bank.dim = pair.reference.feature.dim();
        bank.templates.push_back(pair.reference);
    }
    return bank;
}

double accuracy_of(const SceneOutcome& outcome) {
    int correct = 0;
    for (const SampleResult& s : outcome.samples) correct += s.label_correct;
    return outcome.samples.empty()
               ? 0.0
               : static_cast<double>(correct) / static_cast<double>(outcome.samples.size());
}

}  // namespace

TEST_CASE("vqa pipeline is exact on clean scenes and emits rewards") {
    std::vector<ScenePair> pairs;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        pairs.push_back(generate_scene_pair(scene_config(seed, 5)));
    }
    ReferenceBank bank = bank_of(pairs);
    PipelineConfig config;
    config.mode = EvalMode::Vqa;
    config.emit_rewards = true;
    for (const ScenePair& pair : pairs) {
        SceneOutcome outcome = run_pipeline(bank, pair, config);
        CHECK(accuracy_of(outcome) == doctest::Approx(1.0));
        REQUIRE(outcome.rewards.size() == outcome.samples.size());
        for (const RewardResult& r : outcome.rewards) {
            CHECK(r.total == doctest::Approx(1.0));
        }
    }
}

TEST_CASE("bbox pipeline: OT beats independent assignment on a crowded noisy scene") {
    // Paired seeds; the margin is checked in aggregate (the acceptance
    // criterion), here just the directional property on a few seeds.
    int ot_correct = 0, indep_correct = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        SceneConfig config = scene_config(seed, 8, 0.05);
        config.region_scale = 0.55;
        ScenePair pair = generate_scene_pair(config);
        ReferenceBank bank = bank_of({pair});
        PipelineConfig ot;
        ot.mode = EvalMode::Bbox;
        ot.assignment = AssignStrategy::OptimalTransport;
        ot.match.tau_conf = 0.0;
        ot.match.tau_cost_percentile = 100.0;
        PipelineConfig indep = ot;
        indep.assignment = AssignStrategy::IndependentNearest;
        SceneOutcome ot_outcome = run_pipeline(bank, pair, ot);
        SceneOutcome in_outcome = run_pipeline(bank, pair, indep);
        for (const SampleResult& s : ot_outcome.samples) ot_correct += s.label_correct;
        for (const SampleResult& s : in_outcome.samples) indep_correct += s.label_correct;
        total += static_cast<int>(ot_outcome.samples.size());
    }
    CHECK(ot_correct >= indep_correct);
    CHECK(ot_correct > total * 0.85);
}

TEST_CASE("bbox pipeline on clean scenes is perfect and boxes line up") {
    ScenePair pair = generate_scene_pair(scene_config(3, 5));
    ReferenceBank bank = bank_of({pair});
    PipelineConfig config;
    config.mode = EvalMode::Bbox;
    config.match.tau_conf = 0.0;
    config.match.tau_cost_percentile = 100.0;
    config.emit_rewards = true;
    SceneOutcome outcome = run_pipeline(bank, pair, config);
    CHECK(accuracy_of(outcome) == doctest::Approx(1.0));
    for (const SampleResult& s : outcome.samples) {
        CHECK(s.iou == doctest::Approx(1.0));
        CHECK(s.ap == doctest::Approx(1.0));
    }
    REQUIRE(outcome.rewards.size() == 1);
    CHECK(outcome.rewards[0].total == doctest::Approx(1.0));
}

TEST_CASE("seg pipeline with a trained adapter segments held-out clean scenes") {
    // Train on a handful of scenes, evaluate on fresh seeds.
    std::vector<ScenePair> train_pairs;
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        train_pairs.push_back(generate_scene_pair(scene_config(seed, 4)));
    }
    const int grid_dim = 24;
    const double gain = 4.0;
    const int d_vlm = 48;
    std::vector<TrainInstance> dataset;
    for (const ScenePair& pair : train_pairs) {
        FeatureGrid ref_grid = make_feature_grid(pair.reference_image, grid_dim, gain);
        MemoryBank memory = build_memory_slots(pair.reference, ref_grid);
        FeatureGrid tgt_grid = make_feature_grid(pair.target_image, grid_dim, gain);
        for (const GtRegion& gt : pair.target_regions) {
            dataset.push_back(
                {make_seg_embedding(pair, gt.label, d_vlm), memory, tgt_grid, gt.mask});
        }
    }
    TrainConfig config;
    config.learning_rate = 0.02;
    config.epochs = 30;
    config.seed = 9;
    config.hidden_dims = {32};
    TrainResult trained = train_adapter(dataset, config);

    PipelineConfig pipeline;
    pipeline.mode = EvalMode::Seg;
    pipeline.grid_dim = grid_dim;
    pipeline.grid_gain = gain;
    pipeline.d_vlm = d_vlm;
    pipeline.adapter = trained.params;
    pipeline.emit_rewards = true;

    ReferenceBank bank = bank_of(train_pairs);
    double dice_sum = 0.0;
    int count = 0;
    for (std::uint64_t seed = 200; seed < 205; ++seed) {
        ScenePair held_out = generate_scene_pair(scene_config(seed, 4));
        ReferenceBank own = bank_of({held_out});
        SceneOutcome outcome = run_pipeline(own, held_out, pipeline);
        for (const SampleResult& s : outcome.samples) {
            dice_sum += s.dice;
            ++count;
            CHECK(s.giou == doctest::Approx(s.iou));
        }
        REQUIRE(outcome.rewards.size() == outcome.samples.size());
    }
    CHECK(dice_sum / count > 0.8);
}

TEST_CASE("seg mode requires an adapter") {
    ScenePair pair = generate_scene_pair(scene_config(5, 3));
    ReferenceBank bank = bank_of({pair});
    PipelineConfig config;
    config.mode = EvalMode::Seg;
    try {
        run_pipeline(bank, pair, config);
        FAIL("expected a validation error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("[fuse]") != std::string::npos);
    }
}

TEST_CASE("pipeline errors carry stage tags") {
    ScenePair pair = generate_scene_pair(scene_config(6, 3));
    ReferenceBank bank;
    bank.dim = 64;
    CHECK_THROWS_WITH_AS(run_pipeline(bank, pair, PipelineConfig{}),
                         doctest::Contains("[retrieve]"), Error);
}

TEST_CASE("detector region source matches gt-hidden on clean scenes") {
    ScenePair pair = generate_scene_pair(scene_config(8, 4));
    ReferenceBank bank = bank_of({pair});
    PipelineConfig config;
    config.mode = EvalMode::Vqa;
    config.region_source = RegionSource::Detector;
    SceneOutcome outcome = run_pipeline(bank, pair, config);
    CHECK(accuracy_of(outcome) == doctest::Approx(1.0));
}

TEST_CASE("accuracy is non-increasing in noise, averaged over seeds") {
    std::vector<double> sigmas{0.0, 0.02, 0.05, 0.1};
    std::vector<double> accuracies;
    for (double sigma : sigmas) {
        int correct = 0, total = 0;
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            SceneConfig config = scene_config(seed, 6, sigma);
            config.region_scale = 0.6;
            ScenePair pair = generate_scene_pair(config);
            ReferenceBank bank = bank_of({pair});
            PipelineConfig pipeline;  // vqa
            SceneOutcome outcome = run_pipeline(bank, pair, pipeline);
            for (const SampleResult& s : outcome.samples) {
                correct += s.label_correct;
                ++total;
            }
        }
        accuracies.push_back(static_cast<double>(correct) / total);
    }
    for (std::size_t i = 1; i < accuracies.size(); ++i) {
        CHECK(accuracies[i] <= accuracies[i - 1] + 1e-12);
    }
    CHECK(accuracies[0] == doctest::Approx(1.0));
}

TEST_CASE("mirror hypothesis does not hurt and helps on mirrored scenes") {
    int strict_improvements = 0;
    int not_worse = 0;
    const int seeds = 40;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        SceneConfig config = scene_config(seed, 6);
        config.mirror_prob = 1.0;
        config.region_scale = 0.7;
        ScenePair pair = generate_scene_pair(config);
        ReferenceBank bank = bank_of({pair});
        PipelineConfig with;
        with.try_mirror = true;
        PipelineConfig without;
        without.try_mirror = false;
        double acc_with = accuracy_of(run_pipeline(bank, pair, with));
        double acc_without = accuracy_of(run_pipeline(bank, pair, without));
        if (acc_with >= acc_without) ++not_worse;
        if (acc_with > acc_without) ++strict_improvements;
    }
    CHECK(not_worse == seeds);
    CHECK(strict_improvements > seeds / 3);
}
