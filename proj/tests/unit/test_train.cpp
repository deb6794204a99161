#include <doctest.h>

#include <cmath>

#include "refmatch/error.hpp"
#include "refmatch/rng.hpp"
#include "refmatch/synth.hpp"
#include "refmatch/train.hpp"

using namespace refmatch;

namespace {

TrainInstance random_instance(Rng& rng, int d_vlm, int d, int side, int n_slots) {
    TrainInstance instance;
    for (int i = 0; i < d_vlm; ++i) instance.embedding.values.push_back(rng.normal());
    instance.bank.dim = d;
    for (int j = 0; j < n_slots; ++j) {
        MemorySlot slot;
        for (int k = 0; k < d; ++k) slot.values.push_back(rng.normal(0.0, 0.8));
        slot.label = "slot" + std::to_string(j);
        instance.bank.slots.push_back(std::move(slot));
    }
    instance.grid.width = side;
    instance.grid.height = side;
    instance.grid.dim = d;
    for (int i = 0; i < side * side * d; ++i) {
        instance.grid.values.push_back(rng.normal(0.0, 0.6));
    }
    instance.gt = Mask::zeros(side, side);
    for (double& v : instance.gt.values) v = rng.uniform01() < 0.4 ? 1.0 : 0.0;
    return instance;
}

AdapterParams random_params(Rng& rng, int d_vlm, int hidden, int d) {
    AdapterParams params;
    params.mlp = AdapterMLP::random_init(std::vector<int>{d_vlm, hidden, d}, rng, 0.6);
    for (DenseLayer& layer : params.mlp.layers) {
        for (double& b : layer.bias) b = rng.normal(0.0, 0.05);
    }
    params.decoder_bias = rng.normal(0.0, 0.2);
    return params;
}

}  // namespace

TEST_CASE("seg_loss closed forms") {
    TrainConfig config;
    Mask gt = Mask::zeros(4, 2);
    for (int x = 0; x < 4; ++x) gt.at(x, 0) = 1.0;

    CHECK(seg_loss(gt, gt, config) < 1e-6);

    Mask half = Mask::zeros(4, 2);
    for (double& v : half.values) v = 0.5;
    CHECK(seg_loss(half, gt, config) ==
          doctest::Approx(0.7 * std::log(2.0) + 0.3 * 0.5).epsilon(1e-9));

    Mask inverted = Mask::zeros(4, 2);
    for (std::size_t i = 0; i < gt.values.size(); ++i) inverted.values[i] = 1.0 - gt.values[i];
    // BCE-dominated bound: every pixel is maximally wrong.
    CHECK(seg_loss(inverted, gt, config) >= 0.7 * -std::log(1e-7) * 0.99);
    // Range invariant.
    CHECK(seg_loss(inverted, gt, config) <= 0.7 * -std::log(1e-7) + 0.3);
}

TEST_CASE("gradient is zero at a perfect prediction") {
    // Single slot, so z is constant; a grid that exactly reproduces gt
    // through saturating logits gives a vanishing gradient.
    TrainConfig config;
    TrainInstance instance;
    instance.embedding.values = {0.5, -0.5};
    instance.bank.dim = 1;
    instance.bank.slots.push_back({{1.0}, "t", "only"});
    instance.grid.width = 2;
    instance.grid.height = 1;
    instance.grid.dim = 1;
    instance.grid.values = {40.0, -40.0};  // saturated on both pixels
    instance.gt = Mask::zeros(2, 1);
    instance.gt.at(0, 0) = 1.0;

    AdapterParams params;
    params.mlp = AdapterMLP::zeros(std::vector<int>{2, 1});
    params.decoder_bias = 0.0;

    ParamGradients grads = loss_gradients(instance, params, config);
    double norm = std::abs(grads.decoder_bias);
    for (const DenseLayer& layer : grads.layers) {
        for (double w : layer.weights) norm += std::abs(w);
        for (double b : layer.bias) norm += std::abs(b);
    }
    CHECK(norm < 1e-6);
}

TEST_CASE("single-pixel single-slot gradient matches the hand-derived chain rule") {
    TrainConfig config;  // w_bce 0.7, w_dice 0.3
    TrainInstance instance;
    instance.embedding.values = {0.25};
    instance.bank.dim = 1;
    instance.bank.slots.push_back({{0.5}, "t", "only"});
    instance.grid.width = 1;
    instance.grid.height = 1;
    instance.grid.dim = 1;
    instance.grid.values = {1.0};
    instance.gt = Mask::zeros(1, 1);
    instance.gt.at(0, 0) = 1.0;

    AdapterParams params;
    params.mlp = AdapterMLP::zeros(std::vector<int>{1, 1});
    params.mlp.layers[0].weight(0, 0) = 2.0;  // q = 0.5, irrelevant: alpha = 1 regardless
    params.decoder_bias = 0.3;

    // Forward by hand: logit = z*F + b = 0.5 + 0.3 = 0.8; p = sigma(0.8).
    double p = 1.0 / (1.0 + std::exp(-0.8));
    // dL/dp = 0.7 * (-1/p) + 0.3 * (2A - 2g*D)/D^2 with A = p, D = p + 1 + 1e-8.
    double D = p + 1.0 + 1e-8;
    double d_loss_dp = 0.7 * (-1.0 / p) + 0.3 * (2.0 * p - 2.0 * D) / (D * D);
    double expected_bias_grad = d_loss_dp * p * (1.0 - p);

    ParamGradients grads = loss_gradients(instance, params, config);
    CHECK(grads.decoder_bias == doctest::Approx(expected_bias_grad).epsilon(1e-12));
    // Single slot: attention is constant, so the MLP receives no gradient.
    CHECK(grads.layers[0].weights[0] == 0.0);
    CHECK(grads.layers[0].bias[0] == 0.0);
}

TEST_CASE("analytic gradients agree with central finite differences") {
    for (std::uint64_t seed : {7ull, 8ull, 9ull}) {
        Rng rng(seed);
        TrainInstance instance = random_instance(rng, 5, 4, 4, 3);
        AdapterParams params = random_params(rng, 5, 6, 4);
        TrainConfig config;
        FiniteDiffReport report =
            finite_diff_check(params, instance, config, 1e-5, 1e-4);
        INFO("seed ", seed, " max rel error ", report.max_rel_error, " worst ",
             report.worst_coordinate);
        CHECK(report.pass);
    }
}

TEST_CASE("finite_diff_check flags an injected gradient fault") {
    Rng rng(12);
    TrainInstance instance = random_instance(rng, 4, 3, 3, 2);
    AdapterParams params = random_params(rng, 4, 5, 3);
    TrainConfig config;
    ParamGradients grads = loss_gradients(instance, params, config);
    // Corrupt one weight coordinate by doubling it.
    std::size_t corrupted = 7;
    grads.layers[0].weights[corrupted] *= 2.0;
    FiniteDiffReport report =
        finite_diff_check(params, instance, config, 1e-5, 1e-4, grads);
    CHECK_FALSE(report.pass);
    CHECK(report.worst_coordinate == static_cast<long>(corrupted));
}

TEST_CASE("finite_diff_check passes at a zero-gradient point via the absolute fallback") {
    // Zero weights, single slot, saturated grid: loss is flat in every
    // parameter to machine precision.
    TrainConfig config;
    TrainInstance instance;
    instance.embedding.values = {1.0, 1.0};
    instance.bank.dim = 1;
    instance.bank.slots.push_back({{1.0}, "t", "only"});
    instance.grid.width = 1;
    instance.grid.height = 1;
    instance.grid.dim = 1;
    instance.grid.values = {50.0};
    instance.gt = Mask::zeros(1, 1);
    instance.gt.at(0, 0) = 1.0;
    AdapterParams params;
    params.mlp = AdapterMLP::zeros(std::vector<int>{2, 1});
    params.decoder_bias = 0.0;
    FiniteDiffReport report = finite_diff_check(params, instance, config, 1e-6, 1e-4);
    CHECK(report.pass);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("lr_at warmup and cosine closed forms") {
    TrainConfig config;  // lr 2e-4, warmup 0.03
    const long total = 1000;
    CHECK(lr_at(0, total, config) == 0.0);
    // Warmup covers 30 steps; the boundary step carries the full rate.
    CHECK(lr_at(30, total, config) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(lr_at(total, total, config) == doctest::Approx(0.0).epsilon(1e-12));

    // Continuity at the junction.
    double warmup_steps = config.warmup_fraction * total;
    double left = config.learning_rate * (warmup_steps - 1e-9) / warmup_steps;
    double right = lr_at(30, total, config);
    CHECK(std::abs(left - right) < 1e-12);

    // Midpoint of the cosine segment: half the rate.
    TrainConfig no_warmup;
    no_warmup.warmup_fraction = 0.0;
    CHECK(lr_at(500, 1000, no_warmup) == doctest::Approx(1e-4).epsilon(1e-12));

    CHECK_THROWS_AS(lr_at(0, 0, config), Error);
    CHECK_THROWS_AS(lr_at(-1, 10, config), Error);
    CHECK_THROWS_AS(lr_at(11, 10, config), Error);
}

TEST_CASE("train_adapter learns a separable instance within the frozen budget") {
    // One instance whose grid separates the target region linearly.
    Rng rng(100);
    TrainInstance instance;
    const int d = 4, side = 8;
    instance.embedding.values = {1.0, -0.5, 0.25};
    instance.bank.dim = d;
    MemorySlot on;
    on.values = {3.0, 0.0, 1.0, 0.0};
    MemorySlot off;
    off.values = {0.0, 3.0, -1.0, 0.0};
    instance.bank.slots = {on, off};
    instance.grid.width = side;
    instance.grid.height = side;
    instance.grid.dim = d;
    instance.gt = Mask::zeros(side, side);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            bool inside = x < side / 2;
            instance.gt.at(x, y) = inside ? 1.0 : 0.0;
            std::vector<double> f =
                inside ? std::vector<double>{2.0, 0.1, 0.5, 0.2}
                       : std::vector<double>{0.1, 2.0, -0.5, 0.2};
            std::copy(f.begin(), f.end(), instance.grid.at(x, y).begin());
        }
    }
    TrainConfig config;
    config.learning_rate = 0.05;  // training budget frozen by this test
    config.epochs = 200;
    config.seed = 5;
    config.hidden_dims = {8};
    TrainResult result = train_adapter(std::vector<TrainInstance>{instance}, config);
    REQUIRE(result.trace.steps.size() == 200);
    CHECK(result.trace.steps.back().dice > 0.99);
}

TEST_CASE("train_adapter is bit-deterministic for a fixed seed") {
    Rng rng(44);
    std::vector<TrainInstance> dataset;
    for (int i = 0; i < 3; ++i) dataset.push_back(random_instance(rng, 4, 3, 4, 2));
    TrainConfig config;
    config.epochs = 5;
    config.seed = 77;
    config.hidden_dims = {6};
    TrainResult a = train_adapter(dataset, config);
    TrainResult b = train_adapter(dataset, config);
    REQUIRE(a.trace.steps.size() == b.trace.steps.size());
    for (std::size_t s = 0; s < a.trace.steps.size(); ++s) {
        CHECK(a.trace.steps[s].loss == b.trace.steps[s].loss);
        CHECK(a.trace.steps[s].dice == b.trace.steps[s].dice);
        CHECK(a.trace.steps[s].lr == b.trace.steps[s].lr);
    }
    CHECK(a.params.decoder_bias == b.params.decoder_bias);
    for (std::size_t l = 0; l < a.params.mlp.layers.size(); ++l) {
        CHECK(a.params.mlp.layers[l].weights == b.params.mlp.layers[l].weights);
    }
}

TEST_CASE("train_adapter with zero learning rate leaves parameters unchanged") {
    Rng rng(31);
    std::vector<TrainInstance> dataset{random_instance(rng, 4, 3, 4, 2)};
    TrainConfig config;
    config.learning_rate = 0.0;
    config.epochs = 3;
    config.hidden_dims = {5};
    Rng init_rng(9);
    AdapterParams init = random_params(init_rng, 4, 5, 3);
    TrainResult result = train_adapter(dataset, config, init);
    CHECK(result.params.decoder_bias == init.decoder_bias);
    for (std::size_t l = 0; l < init.mlp.layers.size(); ++l) {
        CHECK(result.params.mlp.layers[l].weights == init.mlp.layers[l].weights);
    }
    // Flat loss trace.
    for (const TrainStepStat& stat : result.trace.steps) {
        CHECK(stat.loss == doctest::Approx(result.trace.steps[0].loss));
    }
}

TEST_CASE("train config validation") {
    TrainConfig config;
    config.w_bce = 0.5;  // weights no longer sum to 1
    CHECK_THROWS_AS(config.validate(), Error);
    config = TrainConfig{};
    config.warmup_fraction = 0.5;
    CHECK_THROWS_AS(config.validate(), Error);
    config = TrainConfig{};
    CHECK_THROWS_AS(train_adapter(std::vector<TrainInstance>{}, config), Error);
}
