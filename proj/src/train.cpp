#include "refmatch/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "refmatch/error.hpp"
#include "refmatch/rng.hpp"

namespace refmatch {

namespace {
constexpr double kBceClamp = 1e-7;
constexpr double kDiceEps = 1e-8;
}  // namespace

void TrainConfig::validate() const {
    if (std::abs(w_bce + w_dice - 1.0) > 1e-12) {
        throw_validation("loss weights must sum to 1");
    }
    if (w_bce < 0 || w_dice < 0) {
        throw_validation("loss weights must be nonnegative");
    }
    if (learning_rate < 0) {
        throw_validation("learning_rate must be nonnegative");
    }
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 0.5)) {
        throw_validation("warmup_fraction must lie in [0, 0.5)");
    }
    if (epochs <= 0 || batch_size <= 0) {
        throw_validation("epochs and batch_size must be positive");
    }
    for (int d : hidden_dims) {
        if (d <= 0) throw_validation("hidden dims must be positive");
    }
}

double seg_loss(const Mask& pred, const Mask& gt, const TrainConfig& config) {
    return config.w_bce * mask_bce(pred, gt) + config.w_dice * (1.0 - mask_dice(pred, gt));
}

ForwardResult forward_instance(const TrainInstance& instance, const AdapterParams& params,
                               const TrainConfig& config) {
    ForwardResult result;
    std::vector<double> q = project(instance.embedding, params.mlp);
    result.fused = attend_memory(q, instance.bank);
    result.pred = decode_mask(result.fused.z, instance.grid, params.decoder_bias);
    result.loss = seg_loss(result.pred, instance.gt, config);
    result.dice = mask_dice(result.pred, instance.gt);
    return result;
}

ParamGradients ParamGradients::zeros_like(const AdapterParams& params) {
    ParamGradients grads;
    for (const DenseLayer& layer : params.mlp.layers) {
        DenseLayer g;
        g.in_dim = layer.in_dim;
        g.out_dim = layer.out_dim;
        g.weights.assign(layer.weights.size(), 0.0);
        g.bias.assign(layer.bias.size(), 0.0);
        grads.layers.push_back(std::move(g));
    }
    grads.decoder_bias = 0.0;
    return grads;
}

void ParamGradients::add_scaled(const ParamGradients& other, double scale) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t i = 0; i < layers[l].weights.size(); ++i) {
            layers[l].weights[i] += scale * other.layers[l].weights[i];
        }
        for (std::size_t i = 0; i < layers[l].bias.size(); ++i) {
            layers[l].bias[i] += scale * other.layers[l].bias[i];
        }
    }
    decoder_bias += scale * other.decoder_bias;
}

std::size_t ParamGradients::coordinate_count() const {
    std::size_t n = 1;  // decoder bias
    for (const DenseLayer& layer : layers) n += layer.weights.size() + layer.bias.size();
    return n;
}

ParamGradients loss_gradients(const TrainInstance& instance, const AdapterParams& params,
                              const TrainConfig& config) {
    params.mlp.validate();

    // Forward pass, keeping pre-activations for the ReLU gates.
    const std::size_t n_layers = params.mlp.layers.size();
    std::vector<std::vector<double>> activations(n_layers + 1);
    std::vector<std::vector<double>> pre(n_layers);
    activations[0] = instance.embedding.values;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const DenseLayer& layer = params.mlp.layers[l];
        if (static_cast<int>(activations[l].size()) != layer.in_dim) {
            throw_validation("embedding dim does not match adapter input");
        }
        pre[l].assign(static_cast<std::size_t>(layer.out_dim), 0.0);
        for (int o = 0; o < layer.out_dim; ++o) {
            double acc = layer.bias[static_cast<std::size_t>(o)];
            for (int i = 0; i < layer.in_dim; ++i) {
                acc += layer.weight(o, i) * activations[l][static_cast<std::size_t>(i)];
            }
            pre[l][static_cast<std::size_t>(o)] = acc;
        }
        activations[l + 1] = pre[l];
        if (l + 1 != n_layers) {
            for (double& v : activations[l + 1]) v = std::max(v, 0.0);
        }
    }
    const std::vector<double>& q = activations[n_layers];
    FusedQuery fused = attend_memory(q, instance.bank);
    Mask pred = decode_mask(fused.z, instance.grid, params.decoder_bias);

    const Mask& gt = instance.gt;
    if (pred.width != gt.width || pred.height != gt.height) {
        throw_validation("ground truth dims do not match the feature grid");
    }

    const double pixels = static_cast<double>(pred.values.size());
    double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        inter += pred.values[i] * gt.values[i];
        sum_p += pred.values[i];
        sum_g += gt.values[i];
    }
    const double denom = sum_p + sum_g + kDiceEps;

    ParamGradients grads = ParamGradients::zeros_like(params);
    std::vector<double> g_z(static_cast<std::size_t>(instance.grid.dim), 0.0);
    for (int y = 0; y < pred.height; ++y) {
        for (int x = 0; x < pred.width; ++x) {
            double p = pred.at(x, y);
            double g = gt.at(x, y);
            double d_loss_dp = 0.0;
            if (p > kBceClamp && p < 1.0 - kBceClamp) {
                d_loss_dp += config.w_bce * (-g / p + (1.0 - g) / (1.0 - p)) / pixels;
            }
            // d(1 - Dice)/dp = (2*inter - 2*g*denom) / denom^2
            d_loss_dp += config.w_dice * (2.0 * inter - 2.0 * g * denom) / (denom * denom);
            double d_logit = d_loss_dp * p * (1.0 - p);
            grads.decoder_bias += d_logit;
            std::span<const double> f = instance.grid.at(x, y);
            for (std::size_t k = 0; k < g_z.size(); ++k) g_z[k] += d_logit * f[k];
        }
    }

    // Softmax attention backward: with c_j = <m_j, g_z> and cbar their
    // alpha-weighted mean, g_q = sum_j alpha_j (c_j - cbar) m_j.
    std::vector<double> c(instance.bank.slots.size(), 0.0);
    double cbar = 0.0;
    for (std::size_t j = 0; j < instance.bank.slots.size(); ++j) {
        const std::vector<double>& m = instance.bank.slots[j].values;
        for (std::size_t k = 0; k < g_z.size(); ++k) c[j] += m[k] * g_z[k];
        cbar += fused.alpha[j] * c[j];
    }
    std::vector<double> g_q(q.size(), 0.0);
    for (std::size_t j = 0; j < instance.bank.slots.size(); ++j) {
        double w = fused.alpha[j] * (c[j] - cbar);
        const std::vector<double>& m = instance.bank.slots[j].values;
        for (std::size_t k = 0; k < g_q.size(); ++k) g_q[k] += w * m[k];
    }

    // Backprop through the MLP.
    std::vector<double> delta = g_q;
    for (std::size_t l = n_layers; l-- > 0;) {
        const DenseLayer& layer = params.mlp.layers[l];
        DenseLayer& g_layer = grads.layers[l];
        for (int o = 0; o < layer.out_dim; ++o) {
            double d = delta[static_cast<std::size_t>(o)];
            g_layer.bias[static_cast<std::size_t>(o)] += d;
            for (int i = 0; i < layer.in_dim; ++i) {
                g_layer.weight(o, i) += d * activations[l][static_cast<std::size_t>(i)];
            }
        }
        if (l == 0) break;
        std::vector<double> prev(static_cast<std::size_t>(layer.in_dim), 0.0);
        for (int i = 0; i < layer.in_dim; ++i) {
            double acc = 0.0;
            for (int o = 0; o < layer.out_dim; ++o) {
                acc += layer.weight(o, i) * delta[static_cast<std::size_t>(o)];
            }
            // ReLU gate of the previous layer's pre-activation.
            prev[static_cast<std::size_t>(i)] = pre[l - 1][static_cast<std::size_t>(i)] > 0.0 ? acc : 0.0;
        }
        delta = std::move(prev);
    }
    return grads;
}

ParamGradients loss_gradients(std::span<const TrainInstance> batch, const AdapterParams& params,
                              const TrainConfig& config) {
    if (batch.empty()) {
        throw_validation("loss_gradients requires a non-empty batch");
    }
    ParamGradients total = ParamGradients::zeros_like(params);
    for (const TrainInstance& instance : batch) {
        total.add_scaled(loss_gradients(instance, params, config), 1.0 / batch.size());
    }
    return total;
}

namespace {

// Flat view over (layer weights, layer bias)... + decoder bias.
double* coordinate_ptr(AdapterParams& params, std::size_t index) {
    for (DenseLayer& layer : params.mlp.layers) {
        if (index < layer.weights.size()) return &layer.weights[index];
        index -= layer.weights.size();
        if (index < layer.bias.size()) return &layer.bias[index];
        index -= layer.bias.size();
    }
    return &params.decoder_bias;
}

double coordinate_value(const ParamGradients& grads, std::size_t index) {
    for (const DenseLayer& layer : grads.layers) {
        if (index < layer.weights.size()) return layer.weights[index];
        index -= layer.weights.size();
        if (index < layer.bias.size()) return layer.bias[index];
        index -= layer.bias.size();
    }
    return grads.decoder_bias;
}

}  // namespace

FiniteDiffReport finite_diff_check(const AdapterParams& params, const TrainInstance& instance,
                                   const TrainConfig& config, double step, double tolerance,
                                   const std::optional<ParamGradients>& analytic,
                                   long max_coords, std::uint64_t sample_seed) {
    if (step <= 0.0) {
        throw_validation("finite difference step must be positive");
    }
    ParamGradients grads = analytic.value_or(loss_gradients(instance, params, config));
    const std::size_t total = grads.coordinate_count();

    std::vector<std::size_t> coords;
    if (static_cast<long>(total) <= max_coords) {
        coords.resize(total);
        std::iota(coords.begin(), coords.end(), 0u);
    } else {
        Rng rng(sample_seed);
        std::unordered_set<std::size_t> chosen;
        while (static_cast<long>(chosen.size()) < max_coords) {
            chosen.insert(static_cast<std::size_t>(rng.next_u64() % total));
        }
        coords.assign(chosen.begin(), chosen.end());
        std::sort(coords.begin(), coords.end());
    }

    FiniteDiffReport report;
    report.coordinates_checked = static_cast<long>(coords.size());
    report.pass = true;
    AdapterParams probe = params;
    for (std::size_t index : coords) {
        double* slot = coordinate_ptr(probe, index);
        double original = *slot;
        *slot = original + step;
        double loss_plus = forward_instance(instance, probe, config).loss;
        *slot = original - step;
        double loss_minus = forward_instance(instance, probe, config).loss;
        *slot = original;
        double fd = (loss_plus - loss_minus) / (2.0 * step);
        double an = coordinate_value(grads, index);
        double diff = std::abs(an - fd);
        double denom = std::max(std::abs(an), std::abs(fd));
        if (denom < 1e-8) {
            if (diff >= 1e-8) {
                report.pass = false;
                if (report.worst_coordinate < 0) report.worst_coordinate = static_cast<long>(index);
            }
            continue;
        }
        double rel = diff / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_coordinate = static_cast<long>(index);
        }
    }
    if (report.max_rel_error >= tolerance) {
        report.pass = false;
    }
    return report;
}

double lr_at(long step, long total_steps, const TrainConfig& config) {
    if (total_steps <= 0) {
        throw_validation("lr_at requires total_steps > 0");
    }
    if (step < 0 || step > total_steps) {
        throw_validation("lr_at step outside [0, total_steps]");
    }
    const double warmup = config.warmup_fraction * static_cast<double>(total_steps);
    if (static_cast<double>(step) < warmup) {
        return config.learning_rate * static_cast<double>(step) / warmup;
    }
    double progress = (static_cast<double>(step) - warmup) /
                      (static_cast<double>(total_steps) - warmup);
    return config.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

TrainResult train_adapter(std::span<const TrainInstance> dataset, const TrainConfig& config) {
    if (dataset.empty()) {
        throw_validation("train_adapter requires a non-empty dataset");
    }
    config.validate();
    std::vector<int> dims;
    dims.push_back(dataset[0].embedding.dim());
    for (int h : config.hidden_dims) dims.push_back(h);
    dims.push_back(dataset[0].grid.dim);
    Rng init_rng = Rng(config.seed).split(0xADA7);
    AdapterParams init;
    init.mlp = AdapterMLP::random_init(dims, init_rng, config.init_scale);
    init.decoder_bias = 0.0;
    return train_adapter(dataset, config, init);
}

TrainResult train_adapter(std::span<const TrainInstance> dataset, const TrainConfig& config,
                          const AdapterParams& init) {
    if (dataset.empty()) {
        throw_validation("train_adapter requires a non-empty dataset");
    }
    config.validate();

    TrainResult result;
    result.params = init;
    result.trace.seed = config.seed;

    const long n = static_cast<long>(dataset.size());
    const long batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const long total_steps = static_cast<long>(config.epochs) * batches_per_epoch;

    ParamGradients m = ParamGradients::zeros_like(result.params);
    ParamGradients v = ParamGradients::zeros_like(result.params);
    Rng order_rng = Rng(config.seed).split(0x04DE4);
    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), 0u);
        Rng epoch_rng = order_rng.split(static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(order);
        for (long b = 0; b < batches_per_epoch; ++b) {
            std::vector<TrainInstance> batch;
            for (long k = b * config.batch_size;
                 k < std::min<long>((b + 1) * config.batch_size, n); ++k) {
                batch.push_back(dataset[order[static_cast<std::size_t>(k)]]);
            }
            ParamGradients grads = loss_gradients(batch, result.params, config);
            double lr = lr_at(step, total_steps, config);

            double loss_sum = 0.0, dice_sum = 0.0;
            for (const TrainInstance& instance : batch) {
                ForwardResult f = forward_instance(instance, result.params, config);
                loss_sum += f.loss;
                dice_sum += f.dice;
            }
            double loss = loss_sum / static_cast<double>(batch.size());
            double dice = dice_sum / static_cast<double>(batch.size());
            if (!std::isfinite(loss)) {
                throw_internal("non-finite loss at step " + std::to_string(step));
            }
            result.trace.steps.push_back({loss, dice, lr});

            // Adam with bias correction; weight decay applied decoupled.
            double t = static_cast<double>(step + 1);
            double bc1 = 1.0 - std::pow(config.beta1, t);
            double bc2 = 1.0 - std::pow(config.beta2, t);
            auto update = [&](double& param, double& m_c, double& v_c, double g) {
                m_c = config.beta1 * m_c + (1.0 - config.beta1) * g;
                v_c = config.beta2 * v_c + (1.0 - config.beta2) * g * g;
                double mhat = m_c / bc1;
                double vhat = v_c / bc2;
                param -= lr * (mhat / (std::sqrt(vhat) + config.adam_eps) +
                               config.weight_decay * param);
            };
            for (std::size_t l = 0; l < result.params.mlp.layers.size(); ++l) {
                DenseLayer& layer = result.params.mlp.layers[l];
                for (std::size_t i = 0; i < layer.weights.size(); ++i) {
                    update(layer.weights[i], m.layers[l].weights[i], v.layers[l].weights[i],
                           grads.layers[l].weights[i]);
                }
                for (std::size_t i = 0; i < layer.bias.size(); ++i) {
                    update(layer.bias[i], m.layers[l].bias[i], v.layers[l].bias[i],
                           grads.layers[l].bias[i]);
                }
            }
            update(result.params.decoder_bias, m.decoder_bias, v.decoder_bias,
                   grads.decoder_bias);
            ++step;
        }
    }
    return result;
}

}  // namespace refmatch
