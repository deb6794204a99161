#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "refmatch/error.hpp"
#include "refmatch/ot.hpp"
#include "refmatch/rng.hpp"

using namespace refmatch;

namespace {

// All-permutation oracles.
double brute_force_min_cost(const CostMatrix& cost, std::vector<int>* best_perm = nullptr) {
    std::vector<int> perm(static_cast<std::size_t>(cost.rows));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (int i = 0; i < cost.rows; ++i) total += cost.at(i, perm[static_cast<std::size_t>(i)]);
        if (total < best) {
            best = total;
            if (best_perm) *best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

double brute_force_max_mass(const TransportPlan& plan, std::vector<int>* best_perm = nullptr) {
    std::vector<int> perm(static_cast<std::size_t>(plan.n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1.0;
    do {
        double total = 0.0;
        for (int i = 0; i < plan.n; ++i) total += plan.at(i, perm[static_cast<std::size_t>(i)]);
        if (total > best) {
            best = total;
            if (best_perm) *best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

CostMatrix random_cost(Rng& rng, int n) {
    CostMatrix cost = CostMatrix::zeros(n, n);
    for (double& v : cost.data) v = rng.uniform(0.0, 1.0);
    return cost;
}

BBox centered_box(double cx, double cy, double half = 0.04) {
    return BBox{cx - half, cy - half, 2 * half, 2 * half};
}

}  // namespace

TEST_CASE("build_cost spatial and semantic terms") {
    std::vector<PredBox> preds{{centered_box(0.25, 0.25), {}}};
    std::vector<Prototype> protos{{"a", centered_box(0.25, 0.75), {}}};

    CostMatrix spatial = build_cost(preds, protos, {1.0, 0.0});
    CHECK(spatial.at(0, 0) == doctest::Approx(0.5));

    // Identical features: semantic term vanishes, so halving the spatial
    // weight halves the cost.
    std::vector<PredBox> preds_f = preds;
    preds_f[0].feature = FeatureVector{{1.0, 2.0}};
    std::vector<Prototype> protos_f = protos;
    protos_f[0].feature = FeatureVector{{1.0, 2.0}};
    CostMatrix mixed = build_cost(preds_f, protos_f, {0.5, 0.5});
    CHECK(mixed.at(0, 0) == doctest::Approx(0.25));

    // Coincident centers, spatial only: zero diagonal.
    std::vector<PredBox> same{{centered_box(0.5, 0.5), {}}};
    std::vector<Prototype> same_proto{{"a", centered_box(0.5, 0.5), {}}};
    CHECK(build_cost(same, same_proto, {1.0, 0.0}).at(0, 0) == doctest::Approx(0.0));

    CHECK_THROWS_AS(build_cost(preds, protos, {0.0, 0.0}), Error);
    std::vector<Prototype> bare{{"a", {}, {}}};
    CHECK_THROWS_AS(build_cost(preds, bare, {1.0, 0.0}), Error);
}

TEST_CASE("sinkhorn trivial plans") {
    CostMatrix one = CostMatrix::zeros(1, 1);
    one.at(0, 0) = 3.7;
    TransportPlan plan = sinkhorn(one);
    CHECK(plan.at(0, 0) == doctest::Approx(1.0));
    CHECK(plan.converged);

    // Uniform cost: total symmetry forces the uniform plan.
    CostMatrix flat = CostMatrix::zeros(3, 3);
    for (double& v : flat.data) v = 0.4;
    TransportPlan uniform = sinkhorn(flat);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(uniform.at(i, j) == doctest::Approx(1.0 / 9.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("sinkhorn at low reg concentrates on the optimal permutation") {
    CostMatrix cost = CostMatrix::zeros(2, 2);
    cost.at(0, 0) = 0.0;
    cost.at(0, 1) = 1.0;
    cost.at(1, 0) = 1.0;
    cost.at(1, 1) = 0.0;
    SinkhornConfig config;
    config.reg = 0.01;
    TransportPlan plan = sinkhorn(cost, config);
    CHECK(plan.converged);
    CHECK(plan.at(0, 0) == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(plan.at(0, 1) == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(plan.at(1, 0) == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(plan.at(1, 1) == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("sinkhorn marginals satisfied on random instances") {
    Rng rng(31);
    for (int trial = 0; trial < 25; ++trial) {
        int n = rng.uniform_int(2, 6);
        CostMatrix cost = random_cost(rng, n);
        SinkhornConfig config;
        config.reg = trial % 2 == 0 ? 0.05 : 0.005;  // exercise both domains
        config.max_iter = 20000;
        TransportPlan plan = sinkhorn(cost, config);
        CHECK(plan.converged);
        CHECK(plan.marginal_error < 1e-6);
        for (int i = 0; i < n; ++i) {
            double row = 0.0, col = 0.0;
            for (int j = 0; j < n; ++j) {
                row += plan.at(i, j);
                col += plan.at(j, i);
            }
            CHECK(row == doctest::Approx(1.0 / n).epsilon(1e-5));
            CHECK(col == doctest::Approx(1.0 / n).epsilon(1e-5));
        }
    }
}

TEST_CASE("decreasing reg drives plan cost toward the optimal permutation cost") {
    Rng rng(55);
    for (int trial = 0; trial < 4; ++trial) {
        CostMatrix cost = random_cost(rng, 4);
        double optimal = brute_force_min_cost(cost) / 4.0;  // mass 1/n per row
        double previous = std::numeric_limits<double>::infinity();
        for (double reg : {1.0, 0.1, 0.01, 0.001}) {
            SinkhornConfig config;
            config.reg = reg;
            config.max_iter = 50000;
            TransportPlan plan = sinkhorn(cost, config);
            double transport_cost = 0.0;
            for (int i = 0; i < 4; ++i) {
                for (int j = 0; j < 4; ++j) transport_cost += plan.at(i, j) * cost.at(i, j);
            }
            CHECK(transport_cost <= previous + 1e-9);
            CHECK(transport_cost >= optimal - 1e-9);
            previous = transport_cost;
        }
        CHECK(previous == doctest::Approx(optimal).epsilon(1e-3));
    }
}

TEST_CASE("sinkhorn rejects bad inputs") {
    CostMatrix rect = CostMatrix::zeros(2, 3);
    CHECK_THROWS_AS(sinkhorn(rect), Error);
    CostMatrix ok = CostMatrix::zeros(2, 2);
    SinkhornConfig bad;
    bad.reg = 0.0;
    CHECK_THROWS_AS(sinkhorn(ok, bad), Error);
    CostMatrix negative = CostMatrix::zeros(2, 2);
    negative.at(0, 0) = -1.0;
    CHECK_THROWS_AS(sinkhorn(negative), Error);
}

TEST_CASE("extract_assignment recovers dominant permutations") {
    // Identity-dominant plan.
    TransportPlan plan;
    plan.n = 3;
    plan.entries = {0.30, 0.02, 0.01, 0.02, 0.30, 0.01, 0.01, 0.01, 0.32};
    plan.row_marginal.assign(3, 1.0 / 3);
    plan.col_marginal.assign(3, 1.0 / 3);
    Assignment identity = extract_assignment(plan);
    for (int i = 0; i < 3; ++i) {
        CHECK(identity.pairs[static_cast<std::size_t>(i)].second == i);
    }

    // Anti-diagonal 2x2.
    TransportPlan swap;
    swap.n = 2;
    swap.entries = {0.05, 0.45, 0.45, 0.05};
    swap.row_marginal.assign(2, 0.5);
    swap.col_marginal.assign(2, 0.5);
    Assignment swapped = extract_assignment(swap);
    CHECK(swapped.pairs[0].second == 1);
    CHECK(swapped.pairs[1].second == 0);
    CHECK(swapped.confidences[0] == doctest::Approx(0.9));

    TransportPlan zero;
    zero.n = 2;
    zero.entries = {0, 0, 0, 0};
    zero.row_marginal.assign(2, 0.5);
    zero.col_marginal.assign(2, 0.5);
    CHECK_THROWS_AS(extract_assignment(zero), Error);
}

TEST_CASE("extract_assignment matches brute force on random 5x5 plans") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        TransportPlan plan;
        plan.n = 5;
        plan.entries.resize(25);
        for (double& v : plan.entries) v = rng.uniform(0.0, 0.2);
        plan.row_marginal.assign(5, 0.2);
        plan.col_marginal.assign(5, 0.2);
        Assignment assignment = extract_assignment(plan);
        std::vector<int> oracle_perm;
        double oracle_mass = brute_force_max_mass(plan, &oracle_perm);
        double mass = 0.0;
        for (auto [i, j] : assignment.pairs) mass += plan.at(i, j);
        CHECK(mass == doctest::Approx(oracle_mass).epsilon(1e-12));
        for (int i = 0; i < 5; ++i) {
            CHECK(assignment.pairs[static_cast<std::size_t>(i)].second ==
                  oracle_perm[static_cast<std::size_t>(i)]);
        }
    }
}

TEST_CASE("exact permutation plans are recovered for all n <= 7") {
    for (int n = 1; n <= 7; ++n) {
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        do {
            TransportPlan plan;
            plan.n = n;
            plan.entries.assign(static_cast<std::size_t>(n) * n, 0.0);
            for (int i = 0; i < n; ++i) {
                plan.entries[static_cast<std::size_t>(i) * n + perm[static_cast<std::size_t>(i)]] =
                    1.0 / n;
            }
            plan.row_marginal.assign(static_cast<std::size_t>(n), 1.0 / n);
            plan.col_marginal.assign(static_cast<std::size_t>(n), 1.0 / n);
            Assignment assignment = extract_assignment(plan);
            for (int i = 0; i < n; ++i) {
                CHECK(assignment.pairs[static_cast<std::size_t>(i)].second ==
                      perm[static_cast<std::size_t>(i)]);
                CHECK(assignment.confidences[static_cast<std::size_t>(i)] ==
                      doctest::Approx(1.0));
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
}

TEST_CASE("match_with_refinement equals plain extraction when all pairs are confident") {
    std::vector<PredBox> preds{{centered_box(0.2, 0.2), {}},
                               {centered_box(0.5, 0.5), {}},
                               {centered_box(0.8, 0.8), {}}};
    std::vector<Prototype> protos{{"a", centered_box(0.21, 0.2), {}},
                                  {"b", centered_box(0.5, 0.52), {}},
                                  {"c", centered_box(0.79, 0.8), {}}};
    MatchConfig config;
    config.tau_cost_percentile = 100.0;  // disable the cost gate for this diagonal scene
    Assignment matched = match_with_refinement(preds, protos, config);
    REQUIRE(matched.pairs.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(matched.pairs[static_cast<std::size_t>(i)].first == i);
        CHECK(matched.pairs[static_cast<std::size_t>(i)].second == i);
    }
    CHECK(matched.unassigned_labels.empty());
    CHECK(matched.refined.empty());
}

TEST_CASE("match_with_refinement pads non-square problems") {
    std::vector<PredBox> preds{{centered_box(0.2, 0.2), {}},
                               {centered_box(0.5, 0.5), {}},
                               {centered_box(0.8, 0.8), {}}};
    std::vector<Prototype> protos;
    for (int j = 0; j < 5; ++j) {
        protos.push_back({"p" + std::to_string(j), centered_box(0.1 + 0.2 * j, 0.1), {}});
    }
    MatchConfig config;
    config.tau_conf = 0.0;
    config.tau_cost_percentile = 100.0;
    Assignment matched = match_with_refinement(preds, protos, config);
    CHECK(matched.pairs.size() == 3);
    CHECK(matched.unassigned_labels.size() == 2);
}

TEST_CASE("match_with_refinement recovers a voided label through the callback") {
    // Three prototypes; one prediction is a far outlier, so its label gets
    // voided by the cost gate and must come back via regeneration.
    std::vector<Prototype> protos{{"a", centered_box(0.2, 0.2), {}},
                                  {"b", centered_box(0.5, 0.5), {}},
                                  {"c", centered_box(0.8, 0.8), {}}};
    std::vector<PredBox> preds{{centered_box(0.2, 0.2), {}},
                               {centered_box(0.5, 0.5), {}},
                               {centered_box(0.2, 0.9), {}}};  // outlier for "c"
    MatchConfig config;
    config.tau_cost_percentile = 80.0;
    BBox truth = centered_box(0.8, 0.8);
    bool callback_ran = false;
    auto regenerate = [&](const UnassignedRegion& region) {
        callback_ran = true;
        CHECK(region.label_name == "c");
        return std::vector<BBox>{centered_box(0.3, 0.3), truth};
    };
    Assignment matched = match_with_refinement(preds, protos, config, regenerate);
    CHECK(callback_ran);
    REQUIRE(matched.refined.size() == 1);
    CHECK(matched.refined[0].label == 2);
    CHECK(matched.refined[0].box.x == doctest::Approx(truth.x));
    CHECK(matched.unassigned_labels.empty());
    // Confident pairs for "a" and "b" survive, so every label is accounted for.
    CHECK(matched.pairs.size() == 2);
}

TEST_CASE("match_with_refinement never aborts on callback failure") {
    std::vector<Prototype> protos{{"a", centered_box(0.2, 0.2), {}},
                                  {"b", centered_box(0.8, 0.8), {}}};
    std::vector<PredBox> preds{{centered_box(0.2, 0.2), {}},
                               {centered_box(0.2, 0.8), {}}};
    MatchConfig config;
    config.tau_cost_percentile = 50.0;
    auto exploding = [](const UnassignedRegion&) -> std::vector<BBox> {
        throw std::runtime_error("regeneration backend down");
    };
    Assignment matched = match_with_refinement(preds, protos, config, exploding);
    CHECK(!matched.unassigned_labels.empty());
}

TEST_CASE("cost percentile uses nearest-rank semantics") {
    CostMatrix cost = CostMatrix::zeros(1, 10);
    for (int j = 0; j < 10; ++j) cost.at(0, j) = j + 1.0;  // 1..10
    CHECK(cost.percentile(90.0) == doctest::Approx(9.0));
    CHECK(cost.percentile(100.0) == doctest::Approx(10.0));
    CHECK(cost.percentile(1.0) == doctest::Approx(1.0));
}
