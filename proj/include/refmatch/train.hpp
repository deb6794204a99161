#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "refmatch/fusion.hpp"
#include "refmatch/geometry.hpp"

namespace refmatch {

struct TrainConfig {
    double w_bce = 0.7;
    double w_dice = 0.3;
    double learning_rate = 2e-4;
    double warmup_fraction = 0.03;
    int epochs = 1;
    int batch_size = 1;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;  // AdamW names the optimizer, not the decay; default off
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::vector<int> hidden_dims = {256};
    double init_scale = 0.1;

    void validate() const;
};

/// One supervised example for the segmentation head: token embedding,
/// reference memory slots, target feature grid and target ground truth.
struct TrainInstance {
    SegEmbedding embedding;
    MemoryBank bank;
    FeatureGrid grid;
    Mask gt;
};

/// w_bce * BCE + w_dice * (1 - Dice).
double seg_loss(const Mask& pred, const Mask& gt, const TrainConfig& config);

struct ForwardResult {
    FusedQuery fused;
    Mask pred;
    double loss = 0.0;
    double dice = 0.0;
};

ForwardResult forward_instance(const TrainInstance& instance, const AdapterParams& params,
                               const TrainConfig& config);

/// Gradient container with the exact shape of AdapterParams.
struct ParamGradients {
    std::vector<DenseLayer> layers;
    double decoder_bias = 0.0;

    static ParamGradients zeros_like(const AdapterParams& params);
    void add_scaled(const ParamGradients& other, double scale);
    std::size_t coordinate_count() const;
};

/// Exact analytic gradient of seg_loss composed through
/// decode_mask(attend_memory(project(h))) for one instance.
ParamGradients loss_gradients(const TrainInstance& instance, const AdapterParams& params,
                              const TrainConfig& config);

/// Mean gradient over a batch.
ParamGradients loss_gradients(std::span<const TrainInstance> batch, const AdapterParams& params,
                              const TrainConfig& config);

struct FiniteDiffReport {
    bool pass = false;
    double max_rel_error = 0.0;
    long worst_coordinate = -1;
    long coordinates_checked = 0;
};

/// Central differences on every parameter coordinate (seeded random
/// subsample above `max_coords`). A coordinate passes on relative error
/// below `tolerance`, with an absolute fallback below 1e-8 where both
/// values vanish. `analytic` overrides the internally computed gradient so
/// fault injection can be tested.
FiniteDiffReport finite_diff_check(const AdapterParams& params, const TrainInstance& instance,
                                   const TrainConfig& config, double step, double tolerance,
                                   const std::optional<ParamGradients>& analytic = std::nullopt,
                                   long max_coords = 10000, std::uint64_t sample_seed = 7);

/// Warmup-then-cosine schedule: linear 0 -> lr over the warmup fraction of
/// total steps, then lr * (1 + cos(pi * progress)) / 2 down to 0.
double lr_at(long step, long total_steps, const TrainConfig& config);

struct TrainStepStat {
    double loss = 0.0;
    double dice = 0.0;
    double lr = 0.0;
};

struct TrainTrace {
    std::vector<TrainStepStat> steps;
    std::uint64_t seed = 0;
};

struct TrainResult {
    AdapterParams params;
    TrainTrace trace;
};

/// Adam loop over the dataset, batch-shuffled per epoch from the config
/// seed; bit-reproducible for a fixed seed. Aborts on a non-finite loss,
/// naming the step.
TrainResult train_adapter(std::span<const TrainInstance> dataset, const TrainConfig& config);
TrainResult train_adapter(std::span<const TrainInstance> dataset, const TrainConfig& config,
                          const AdapterParams& init);

}  // namespace refmatch
