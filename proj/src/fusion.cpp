#include "refmatch/fusion.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

#include "refmatch/error.hpp"

namespace refmatch {

void AdapterMLP::validate() const {
    if (layers.empty()) {
        throw_validation("adapter MLP has no layers");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const DenseLayer& layer = layers[l];
        if (layer.in_dim <= 0 || layer.out_dim <= 0 ||
            layer.weights.size() != static_cast<std::size_t>(layer.in_dim) * layer.out_dim ||
            layer.bias.size() != static_cast<std::size_t>(layer.out_dim)) {
            throw_validation("adapter layer " + std::to_string(l) + " has inconsistent shape");
        }
        if (l > 0 && layers[l - 1].out_dim != layer.in_dim) {
            throw_validation("adapter layer " + std::to_string(l) +
                             " input does not chain from previous layer");
        }
        for (double w : layer.weights) {
            if (!std::isfinite(w)) throw_validation("adapter weight is non-finite");
        }
        for (double b : layer.bias) {
            if (!std::isfinite(b)) throw_validation("adapter bias is non-finite");
        }
    }
}

AdapterMLP AdapterMLP::zeros(std::span<const int> dims) {
    if (dims.size() < 2) {
        throw_validation("adapter needs at least input and output dims");
    }
    AdapterMLP mlp;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        layer.in_dim = dims[l];
        layer.out_dim = dims[l + 1];
        layer.weights.assign(static_cast<std::size_t>(layer.in_dim) * layer.out_dim, 0.0);
        layer.bias.assign(static_cast<std::size_t>(layer.out_dim), 0.0);
        mlp.layers.push_back(std::move(layer));
    }
    return mlp;
}

AdapterMLP AdapterMLP::random_init(std::span<const int> dims, Rng& rng, double scale) {
    AdapterMLP mlp = zeros(dims);
    for (DenseLayer& layer : mlp.layers) {
        double stddev = scale * std::sqrt(2.0 / layer.in_dim);
        for (double& w : layer.weights) w = rng.normal(0.0, stddev);
    }
    return mlp;
}

std::vector<double> mlp_forward(const AdapterMLP& mlp, std::span<const double> input) {
    if (mlp.layers.empty() || static_cast<int>(input.size()) != mlp.input_dim()) {
        throw_validation("mlp_forward input dim " + std::to_string(input.size()) +
                         " does not match adapter input " + std::to_string(mlp.input_dim()));
    }
    std::vector<double> activation(input.begin(), input.end());
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        const DenseLayer& layer = mlp.layers[l];
        std::vector<double> next(static_cast<std::size_t>(layer.out_dim), 0.0);
        for (int o = 0; o < layer.out_dim; ++o) {
            double acc = layer.bias[static_cast<std::size_t>(o)];
            for (int i = 0; i < layer.in_dim; ++i) {
                acc += layer.weight(o, i) * activation[static_cast<std::size_t>(i)];
            }
            next[static_cast<std::size_t>(o)] = acc;
        }
        bool last = l + 1 == mlp.layers.size();
        if (!last) {
            for (double& v : next) v = std::max(v, 0.0);
        }
        activation = std::move(next);
    }
    return activation;
}

std::vector<double> project(const SegEmbedding& h, const AdapterMLP& mlp) {
    return mlp_forward(mlp, h.values);
}

namespace {
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

BBox regress_box(const SegEmbedding& h, const AdapterMLP& mlp) {
    if (mlp.output_dim() != 4) {
        throw_validation("regress_box requires an adapter with output dim 4");
    }
    std::vector<double> raw = mlp_forward(mlp, h.values);
    constexpr double min_extent = 1e-3;
    BBox box;
    box.x = logistic(raw[0]);
    box.y = logistic(raw[1]);
    box.w = std::max(std::min(logistic(raw[2]), 1.0 - box.x), min_extent);
    box.h = std::max(std::min(logistic(raw[3]), 1.0 - box.y), min_extent);
    if (box.x + box.w > 1.0) box.x = 1.0 - box.w;
    if (box.y + box.h > 1.0) box.y = 1.0 - box.h;
    return box;
}

void FeatureGrid::validate() const {
    if (width <= 0 || height <= 0 || dim <= 0 ||
        values.size() != static_cast<std::size_t>(width) * height * dim) {
        throw_validation("feature grid shape mismatch");
    }
}

MemoryBank build_memory_slots(const Template& tmpl, const FeatureGrid& grid) {
    grid.validate();
    MemoryBank bank;
    bank.dim = grid.dim;
    for (const auto& [label, region] : tmpl.regions) {  // std::map: label sort order
        if (region.mask.width != grid.width || region.mask.height != grid.height) {
            throw_validation("region '" + label + "' mask dims do not match the feature grid");
        }
        MemorySlot slot;
        slot.values.assign(static_cast<std::size_t>(grid.dim), 0.0);
        slot.template_id = tmpl.id;
        slot.label = label;
        double weight_sum = 0.0;
        for (int y = 0; y < grid.height; ++y) {
            for (int x = 0; x < grid.width; ++x) {
                double w = region.mask.at(x, y);
                if (w == 0.0) continue;
                std::span<const double> f = grid.at(x, y);
                for (int k = 0; k < grid.dim; ++k) {
                    slot.values[static_cast<std::size_t>(k)] += w * f[static_cast<std::size_t>(k)];
                }
                weight_sum += w;
            }
        }
        if (weight_sum == 0.0) {
            throw_validation("region '" + label + "' has an empty mask; cannot build a slot");
        }
        for (double& v : slot.values) v /= weight_sum;
        bank.slots.push_back(std::move(slot));
    }
    return bank;
}

FusedQuery attend_memory(std::span<const double> q, const MemoryBank& bank) {
    if (bank.slots.empty()) {
        throw_validation("attend_memory on an empty memory bank");
    }
    if (static_cast<int>(q.size()) != bank.dim) {
        throw_validation("query dim " + std::to_string(q.size()) + " != slot dim " +
                         std::to_string(bank.dim));
    }
    FusedQuery fused;
    fused.q.assign(q.begin(), q.end());
    std::vector<double> logits;
    logits.reserve(bank.slots.size());
    for (const MemorySlot& slot : bank.slots) {
        double dot = 0.0;
        for (std::size_t k = 0; k < q.size(); ++k) dot += q[k] * slot.values[k];
        logits.push_back(dot);
    }
    double max_logit = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double& l : logits) {
        l = std::exp(l - max_logit);
        denom += l;
    }
    fused.alpha.reserve(logits.size());
    fused.z.assign(static_cast<std::size_t>(bank.dim), 0.0);
    for (std::size_t j = 0; j < logits.size(); ++j) {
        double a = logits[j] / denom;
        fused.alpha.push_back(a);
        for (int k = 0; k < bank.dim; ++k) {
            fused.z[static_cast<std::size_t>(k)] += a * bank.slots[j].values[static_cast<std::size_t>(k)];
        }
    }
    return fused;
}

Mask decode_mask(std::span<const double> z, const FeatureGrid& grid, double bias) {
    grid.validate();
    if (static_cast<int>(z.size()) != grid.dim) {
        throw_validation("decode_mask z dim does not match grid dim");
    }
    Mask mask = Mask::zeros(grid.width, grid.height);
    for (int y = 0; y < grid.height; ++y) {
        for (int x = 0; x < grid.width; ++x) {
            std::span<const double> f = grid.at(x, y);
            double logit = bias;
            for (std::size_t k = 0; k < z.size(); ++k) logit += z[k] * f[k];
            mask.at(x, y) = logistic(logit);
        }
    }
    return mask;
}

json adapter_to_json(const AdapterParams& params) {
    json dims = json::array();
    dims.push_back(params.mlp.input_dim());
    for (const DenseLayer& layer : params.mlp.layers) dims.push_back(layer.out_dim);
    json layers = json::array();
    for (const DenseLayer& layer : params.mlp.layers) {
        json rows = json::array();
        for (int o = 0; o < layer.out_dim; ++o) {
            json row = json::array();
            for (int i = 0; i < layer.in_dim; ++i) row.push_back(layer.weight(o, i));
            rows.push_back(std::move(row));
        }
        layers.push_back(json{{"w", std::move(rows)}, {"b", layer.bias}});
    }
    return json{{"dims", dims}, {"layers", layers}, {"decoder_bias", params.decoder_bias}};
}

AdapterParams adapter_from_json(const json& value) {
    AdapterParams params;
    std::vector<int> dims = value.at("dims").get<std::vector<int>>();
    if (dims.size() < 2) {
        throw_validation("adapter JSON needs at least two dims");
    }
    const auto& layers = value.at("layers");
    if (layers.size() + 1 != dims.size()) {
        throw_validation("adapter JSON layer count does not match dims");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        DenseLayer layer;
        layer.in_dim = dims[l];
        layer.out_dim = dims[l + 1];
        layer.bias = layers[l].at("b").get<std::vector<double>>();
        const auto& rows = layers[l].at("w");
        if (static_cast<int>(rows.size()) != layer.out_dim) {
            throw_validation("adapter JSON weight row count mismatch in layer " +
                             std::to_string(l));
        }
        layer.weights.reserve(static_cast<std::size_t>(layer.in_dim) * layer.out_dim);
        for (const auto& row : rows) {
            std::vector<double> r = row.get<std::vector<double>>();
            if (static_cast<int>(r.size()) != layer.in_dim) {
                throw_validation("adapter JSON weight column count mismatch in layer " +
                                 std::to_string(l));
            }
            layer.weights.insert(layer.weights.end(), r.begin(), r.end());
        }
        params.mlp.layers.push_back(std::move(layer));
    }
    params.decoder_bias = value.at("decoder_bias").get<double>();
    params.mlp.validate();
    return params;
}

void save_adapter(const AdapterParams& params, const std::filesystem::path& path) {
    params.mlp.validate();
    write_text_file(path, dump_json(adapter_to_json(params)));
}

AdapterParams load_adapter(const std::filesystem::path& path) {
    return adapter_from_json(load_json_file(path));
}

}  // namespace refmatch
