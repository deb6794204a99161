#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "refmatch/bank.hpp"
#include "refmatch/geometry.hpp"
#include "refmatch/io.hpp"
#include "refmatch/rng.hpp"

namespace refmatch {

/// Hidden vector behind one segmentation token emitted by the language side.
struct SegEmbedding {
    std::vector<double> values;

    int dim() const { return static_cast<int>(values.size()); }
};

struct DenseLayer {
    int in_dim = 0;
    int out_dim = 0;
    std::vector<double> weights;  // row-major, out_dim x in_dim
    std::vector<double> bias;     // out_dim

    double weight(int out, int in) const {
        return weights[static_cast<std::size_t>(out) * in_dim + in];
    }
    double& weight(int out, int in) {
        return weights[static_cast<std::size_t>(out) * in_dim + in];
    }
};

/// Shared projection head: ReLU between layers, identity at the output.
struct AdapterMLP {
    std::vector<DenseLayer> layers;

    int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
    int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
    void validate() const;

    static AdapterMLP zeros(std::span<const int> dims);
    /// He-style init scaled by `scale`; fully determined by the rng stream.
    static AdapterMLP random_init(std::span<const int> dims, Rng& rng, double scale = 0.1);
};

std::vector<double> mlp_forward(const AdapterMLP& mlp, std::span<const double> input);

/// Eq.-style projection of a seg-token embedding into memory-slot space.
std::vector<double> project(const SegEmbedding& h, const AdapterMLP& mlp);

/// Box head on the same embedding: 4 raw outputs squashed through the
/// logistic, w/h floored at 1e-3, then the box is shifted/shrunk to stay in
/// the unit square.
BBox regress_box(const SegEmbedding& h, const AdapterMLP& mlp);

/// Dense per-pixel feature field, (y*width + x)*dim indexing.
struct FeatureGrid {
    int width = 0;
    int height = 0;
    int dim = 0;
    std::vector<double> values;

    std::span<const double> at(int x, int y) const {
        return {values.data() + (static_cast<std::size_t>(y) * width + x) * dim,
                static_cast<std::size_t>(dim)};
    }
    std::span<double> at(int x, int y) {
        return {values.data() + (static_cast<std::size_t>(y) * width + x) * dim,
                static_cast<std::size_t>(dim)};
    }
    void validate() const;
};

struct MemorySlot {
    std::vector<double> values;
    std::string template_id;
    std::string label;
};

struct MemoryBank {
    int dim = 0;
    std::vector<MemorySlot> slots;
};

/// One slot per labeled region: the mask-weighted mean of grid features over
/// the region, in label sort order. Errors on an empty-mask region, naming
/// the label.
MemoryBank build_memory_slots(const Template& tmpl, const FeatureGrid& grid);

struct FusedQuery {
    std::vector<double> q;
    std::vector<double> alpha;  // softmax attention over slots, sums to 1
    std::vector<double> z;      // convex combination of slots
};

/// Dot-product attention over the memory slots, max-subtracted softmax.
FusedQuery attend_memory(std::span<const double> q, const MemoryBank& bank);

/// Per-pixel logit <z, F_xy> + bias through the logistic; soft mask out.
Mask decode_mask(std::span<const double> z, const FeatureGrid& grid, double bias);

/// Everything the segmentation head trains: the shared MLP and the decoder
/// bias.
struct AdapterParams {
    AdapterMLP mlp;
    double decoder_bias = 0.0;
};

json adapter_to_json(const AdapterParams& params);
AdapterParams adapter_from_json(const json& value);
void save_adapter(const AdapterParams& params, const std::filesystem::path& path);
AdapterParams load_adapter(const std::filesystem::path& path);

}  // namespace refmatch
