#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refmatch/bank.hpp"
#include "refmatch/geometry.hpp"

namespace refmatch {

struct CostMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // row-major

    static CostMatrix zeros(int rows, int cols);
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
    double max_entry() const;
    /// Nearest-rank percentile of all entries, p in [0,100].
    double percentile(double p) const;
    void validate() const;  // all entries finite and >= 0
};

/// Predicted box, optionally with an embedding for the semantic cost term.
struct PredBox {
    BBox box;
    std::optional<FeatureVector> feature;
};

/// Label prototype: expected position and/or embedding derived from the
/// reference template.
struct Prototype {
    std::string label;
    std::optional<BBox> box;
    std::optional<FeatureVector> feature;
};

struct CostWeights {
    double spatial = 1.0;
    double semantic = 0.0;
};

/// C_ij = w_spatial * ||center_i - center_j||_2 + w_semantic * (1 - cos).
/// Each term participates only when both sides carry the needed data; a
/// pair with neither is an error, as is a non-positive weight sum.
CostMatrix build_cost(std::span<const PredBox> preds, std::span<const Prototype> prototypes,
                      const CostWeights& weights);

struct SinkhornConfig {
    double reg = 0.05;
    double tol = 1e-6;
    int max_iter = 1000;
};

struct TransportPlan {
    int n = 0;
    std::vector<double> entries;      // row-major, n*n
    std::vector<double> row_marginal; // mu, uniform 1/n
    std::vector<double> col_marginal; // nu, uniform 1/n
    bool converged = false;
    int iterations = 0;
    double marginal_error = 0.0;      // max of the two L1 deviations at exit

    double at(int i, int j) const { return entries[static_cast<std::size_t>(i) * n + j]; }
};

/// Entropic OT with uniform marginals via alternating scaling. Switches to
/// log-domain updates for reg < 0.01, where the plain kernel exp(-C/reg)
/// underflows. Throws when scaling overflows, advising a larger reg.
TransportPlan sinkhorn(const CostMatrix& cost, const SinkhornConfig& config = {});

struct RefinedMatch {
    int label = -1;
    BBox box;
    double cost = 0.0;
};

struct Assignment {
    std::vector<std::pair<int, int>> pairs;  // (pred index, label index)
    std::vector<double> confidences;         // n * plan mass, clamped to [0,1]
    std::vector<int> unassigned_labels;
    std::vector<RefinedMatch> refined;       // labels recovered via the fallback callback
};

/// Rounds the relaxed plan to the permutation of maximum total mass
/// (Hungarian on -plan). Per-pair confidence is n * plan entry.
Assignment extract_assignment(const TransportPlan& plan);

/// Minimum-cost perfect matching on a square matrix; returns row -> col.
std::vector<int> solve_assignment(const CostMatrix& cost);

struct MatchConfig {
    SinkhornConfig sinkhorn;
    CostWeights weights;
    double tau_conf = 0.5;            // relative plan mass gate
    double tau_cost_percentile = 90;  // cost gate, percentile of C
};

/// Everything a fallback callback gets to see: the label being recovered
/// and the boxes already claimed by confident matches. Candidates should
/// avoid the occupied boxes.
struct UnassignedRegion {
    int label = -1;
    std::string label_name;
    std::vector<BBox> occupied;
};

using RegenerateFn = std::function<std::vector<BBox>(const UnassignedRegion&)>;

/// Full matching pipeline: cost -> sinkhorn -> rounding, then confidence /
/// cost gating and optional candidate regeneration for voided or unmatched
/// labels. Non-square problems are padded with dummy rows/columns at cost
/// max(C)+1; dummy matches surface as unassigned labels or dropped preds.
/// A failing callback never aborts the match.
Assignment match_with_refinement(std::span<const PredBox> preds,
                                 std::span<const Prototype> prototypes,
                                 const MatchConfig& config,
                                 const RegenerateFn& regenerate = nullptr);

/// The gating/padding core of match_with_refinement for callers that build
/// their own cost matrix (rows = predictions, cols = labels).
Assignment match_cost_matrix(const CostMatrix& cost, const MatchConfig& config);

}  // namespace refmatch
