#include "refmatch/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "refmatch/error.hpp"

namespace refmatch {

CostMatrix CostMatrix::zeros(int rows, int cols) {
    CostMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.data.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    return m;
}

double CostMatrix::max_entry() const {
    double best = 0.0;
    for (double v : data) best = std::max(best, v);
    return best;
}

double CostMatrix::percentile(double p) const {
    if (data.empty()) {
        throw_validation("percentile of an empty cost matrix");
    }
    std::vector<double> sorted(data);
    std::sort(sorted.begin(), sorted.end());
    double rank = p / 100.0 * static_cast<double>(sorted.size());
    std::size_t index = rank <= 1.0 ? 0 : static_cast<std::size_t>(std::ceil(rank)) - 1;
    index = std::min(index, sorted.size() - 1);
    return sorted[index];
}

void CostMatrix::validate() const {
    if (rows <= 0 || cols <= 0 || data.size() != static_cast<std::size_t>(rows) * cols) {
        throw_validation("cost matrix shape mismatch");
    }
    for (double v : data) {
        if (!std::isfinite(v) || v < 0.0) {
            throw_validation("cost matrix entries must be finite and nonnegative");
        }
    }
}

CostMatrix build_cost(std::span<const PredBox> preds, std::span<const Prototype> prototypes,
                      const CostWeights& weights) {
    if (preds.empty() || prototypes.empty()) {
        throw_validation("build_cost requires non-empty predictions and prototypes");
    }
    if (weights.spatial + weights.semantic <= 0.0) {
        throw_validation("cost weights must sum to a positive value");
    }
    CostMatrix cost = CostMatrix::zeros(static_cast<int>(preds.size()),
                                        static_cast<int>(prototypes.size()));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (std::size_t j = 0; j < prototypes.size(); ++j) {
            const Prototype& proto = prototypes[j];
            bool has_spatial = proto.box.has_value();
            bool has_semantic = preds[i].feature.has_value() && proto.feature.has_value();
            if (!has_spatial && !has_semantic) {
                throw_validation("prototype " + std::to_string(j) +
                                 " shares no comparable term with prediction " +
                                 std::to_string(i));
            }
            double c = 0.0;
            if (has_spatial) {
                c += weights.spatial * center_distance(preds[i].box, *proto.box);
            }
            if (has_semantic) {
                c += weights.semantic * (1.0 - cosine_similarity(*preds[i].feature, *proto.feature));
            }
            cost.at(static_cast<int>(i), static_cast<int>(j)) = c;
        }
    }
    cost.validate();
    return cost;
}

namespace {

double log_sum_exp(std::span<const double> values) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : values) m = std::max(m, v);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : values) s += std::exp(v - m);
    return m + std::log(s);
}

// L1 deviations of the plan's marginals from (mu, nu).
std::pair<double, double> marginal_errors(const TransportPlan& plan) {
    double row_err = 0.0, col_err = 0.0;
    for (int i = 0; i < plan.n; ++i) {
        double s = 0.0;
        for (int j = 0; j < plan.n; ++j) s += plan.at(i, j);
        row_err += std::abs(s - plan.row_marginal[static_cast<std::size_t>(i)]);
    }
    for (int j = 0; j < plan.n; ++j) {
        double s = 0.0;
        for (int i = 0; i < plan.n; ++i) s += plan.at(i, j);
        col_err += std::abs(s - plan.col_marginal[static_cast<std::size_t>(j)]);
    }
    return {row_err, col_err};
}

TransportPlan sinkhorn_scaling(const CostMatrix& cost, const SinkhornConfig& config) {
    const int n = cost.rows;
    const double mass = 1.0 / n;
    std::vector<double> kernel(static_cast<std::size_t>(n) * n);
    for (std::size_t idx = 0; idx < kernel.size(); ++idx) {
        kernel[idx] = std::exp(-cost.data[idx] / config.reg);
    }
    std::vector<double> u(static_cast<std::size_t>(n), 1.0);
    std::vector<double> v(static_cast<std::size_t>(n), 1.0);

    TransportPlan plan;
    plan.n = n;
    plan.row_marginal.assign(static_cast<std::size_t>(n), mass);
    plan.col_marginal.assign(static_cast<std::size_t>(n), mass);
    plan.entries.assign(kernel.size(), 0.0);

    auto materialize = [&] {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                plan.entries[static_cast<std::size_t>(i) * n + j] =
                    u[static_cast<std::size_t>(i)] * kernel[static_cast<std::size_t>(i) * n + j] *
                    v[static_cast<std::size_t>(j)];
            }
        }
    };

    for (int iter = 1; iter <= config.max_iter; ++iter) {
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) {
                s += kernel[static_cast<std::size_t>(i) * n + j] * v[static_cast<std::size_t>(j)];
            }
            u[static_cast<std::size_t>(i)] = mass / s;
        }
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) {
                s += kernel[static_cast<std::size_t>(i) * n + j] * u[static_cast<std::size_t>(i)];
            }
            v[static_cast<std::size_t>(j)] = mass / s;
        }
        for (double value : u) {
            if (!std::isfinite(value)) {
                throw_validation("sinkhorn scaling overflowed; increase reg");
            }
        }
        for (double value : v) {
            if (!std::isfinite(value)) {
                throw_validation("sinkhorn scaling overflowed; increase reg");
            }
        }
        materialize();
        auto [row_err, col_err] = marginal_errors(plan);
        plan.iterations = iter;
        plan.marginal_error = std::max(row_err, col_err);
        if (row_err < config.tol && col_err < config.tol) {
            plan.converged = true;
            break;
        }
    }
    return plan;
}

TransportPlan sinkhorn_log_domain(const CostMatrix& cost, const SinkhornConfig& config) {
    const int n = cost.rows;
    const double mass = 1.0 / n;
    const double log_mass = std::log(mass);
    std::vector<double> f(static_cast<std::size_t>(n), 0.0);  // row potentials
    std::vector<double> g(static_cast<std::size_t>(n), 0.0);  // col potentials
    std::vector<double> scratch(static_cast<std::size_t>(n), 0.0);

    TransportPlan plan;
    plan.n = n;
    plan.row_marginal.assign(static_cast<std::size_t>(n), mass);
    plan.col_marginal.assign(static_cast<std::size_t>(n), mass);
    plan.entries.assign(static_cast<std::size_t>(n) * n, 0.0);

    auto materialize = [&] {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double e = (f[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(j)] -
                            cost.at(i, j)) /
                           config.reg;
                plan.entries[static_cast<std::size_t>(i) * n + j] = std::exp(e);
            }
        }
    };

    for (int iter = 1; iter <= config.max_iter; ++iter) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                scratch[static_cast<std::size_t>(j)] =
                    (g[static_cast<std::size_t>(j)] - cost.at(i, j)) / config.reg;
            }
            f[static_cast<std::size_t>(i)] = config.reg * (log_mass - log_sum_exp(scratch));
        }
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                scratch[static_cast<std::size_t>(i)] =
                    (f[static_cast<std::size_t>(i)] - cost.at(i, j)) / config.reg;
            }
            g[static_cast<std::size_t>(j)] = config.reg * (log_mass - log_sum_exp(scratch));
        }
        for (double value : f) {
            if (!std::isfinite(value)) {
                throw_validation("sinkhorn potentials diverged; increase reg");
            }
        }
        for (double value : g) {
            if (!std::isfinite(value)) {
                throw_validation("sinkhorn potentials diverged; increase reg");
            }
        }
        materialize();
        auto [row_err, col_err] = marginal_errors(plan);
        plan.iterations = iter;
        plan.marginal_error = std::max(row_err, col_err);
        if (row_err < config.tol && col_err < config.tol) {
            plan.converged = true;
            break;
        }
    }
    return plan;
}

}  // namespace

TransportPlan sinkhorn(const CostMatrix& cost, const SinkhornConfig& config) {
    cost.validate();
    if (cost.rows != cost.cols) {
        throw_validation("sinkhorn requires a square cost matrix (pad first)");
    }
    if (config.reg <= 0.0) {
        throw_validation("sinkhorn reg must be positive");
    }
    if (cost.rows == 1) {
        TransportPlan plan;
        plan.n = 1;
        plan.entries = {1.0};
        plan.row_marginal = {1.0};
        plan.col_marginal = {1.0};
        plan.converged = true;
        plan.iterations = 0;
        return plan;
    }
    // Below this reg the dense kernel exp(-C/reg) underflows for any
    // nontrivial cost spread.
    if (config.reg < 0.01) {
        return sinkhorn_log_domain(cost, config);
    }
    return sinkhorn_scaling(cost, config);
}

std::vector<int> solve_assignment(const CostMatrix& cost) {
    if (cost.rows != cost.cols || cost.rows <= 0) {
        throw_validation("assignment solver requires a square matrix");
    }
    const int n = cost.rows;
    // Shortest augmenting path formulation with potentials; rows are
    // introduced in index order, which also fixes tie behavior.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);  // col -> row (1-based)
    std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);

    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> min_slack(static_cast<std::size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            int i0 = match[static_cast<std::size_t>(j0)];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                double cur = cost.at(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                             v[static_cast<std::size_t>(j)];
                if (cur < min_slack[static_cast<std::size_t>(j)]) {
                    min_slack[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (min_slack[static_cast<std::size_t>(j)] < delta) {
                    delta = min_slack[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    min_slack[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j) {
        if (match[static_cast<std::size_t>(j)] > 0) {
            row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)]) - 1] = j - 1;
        }
    }
    return row_to_col;
}

Assignment extract_assignment(const TransportPlan& plan) {
    if (plan.n <= 0) {
        throw_validation("extract_assignment on an empty plan");
    }
    double total = 0.0;
    for (double e : plan.entries) total += e;
    if (total <= 0.0) {
        throw_validation("extract_assignment on a degenerate all-zero plan");
    }
    CostMatrix neg = CostMatrix::zeros(plan.n, plan.n);
    for (std::size_t idx = 0; idx < plan.entries.size(); ++idx) {
        neg.data[idx] = -plan.entries[idx];
    }
    std::vector<int> row_to_col = solve_assignment(neg);
    Assignment out;
    out.pairs.reserve(static_cast<std::size_t>(plan.n));
    for (int i = 0; i < plan.n; ++i) {
        int j = row_to_col[static_cast<std::size_t>(i)];
        out.pairs.emplace_back(i, j);
        double confidence = plan.n * plan.at(i, j);
        out.confidences.push_back(std::clamp(confidence, 0.0, 1.0));
    }
    return out;
}

namespace {

CostMatrix pad_square(const CostMatrix& cost) {
    int n = std::max(cost.rows, cost.cols);
    if (n == cost.rows && n == cost.cols) return cost;
    double pad_value = cost.max_entry() + 1.0;
    CostMatrix padded = CostMatrix::zeros(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            padded.at(i, j) =
                (i < cost.rows && j < cost.cols) ? cost.at(i, j) : pad_value;
        }
    }
    return padded;
}

}  // namespace

Assignment match_cost_matrix(const CostMatrix& cost, const MatchConfig& config) {
    cost.validate();
    const int n_preds = cost.rows;
    const int n_labels = cost.cols;
    CostMatrix padded = pad_square(cost);
    TransportPlan plan = sinkhorn(padded, config.sinkhorn);
    Assignment raw = extract_assignment(plan);

    double tau_cost = cost.percentile(config.tau_cost_percentile);
    Assignment out;
    for (std::size_t k = 0; k < raw.pairs.size(); ++k) {
        auto [i, j] = raw.pairs[k];
        if (i >= n_preds) {
            if (j < n_labels) out.unassigned_labels.push_back(j);
            continue;  // dummy pred
        }
        if (j >= n_labels) {
            continue;  // dummy label: surplus prediction stays unmatched
        }
        double confidence = raw.confidences[k];
        if (confidence < config.tau_conf || cost.at(i, j) > tau_cost) {
            out.unassigned_labels.push_back(j);
            continue;
        }
        out.pairs.emplace_back(i, j);
        out.confidences.push_back(confidence);
    }
    std::sort(out.unassigned_labels.begin(), out.unassigned_labels.end());
    return out;
}

Assignment match_with_refinement(std::span<const PredBox> preds,
                                 std::span<const Prototype> prototypes,
                                 const MatchConfig& config, const RegenerateFn& regenerate) {
    CostMatrix cost = build_cost(preds, prototypes, config.weights);
    Assignment out = match_cost_matrix(cost, config);

    if (!out.unassigned_labels.empty() && regenerate) {
        std::vector<BBox> occupied;
        for (auto [i, j] : out.pairs) occupied.push_back(preds[static_cast<std::size_t>(i)].box);
        std::vector<int> still_unassigned;
        for (int label : out.unassigned_labels) {
            UnassignedRegion region;
            region.label = label;
            region.label_name = prototypes[static_cast<std::size_t>(label)].label;
            region.occupied = occupied;
            std::vector<BBox> candidates;
            try {
                candidates = regenerate(region);
            } catch (...) {
                candidates.clear();  // callback failure leaves the label unassigned
            }
            int best = -1;
            double best_cost = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < candidates.size(); ++c) {
                PredBox candidate{candidates[c], std::nullopt};
                const Prototype& proto = prototypes[static_cast<std::size_t>(label)];
                if (!proto.box.has_value()) continue;
                double c_cost = config.weights.spatial * center_distance(candidate.box, *proto.box);
                if (c_cost < best_cost) {
                    best_cost = c_cost;
                    best = static_cast<int>(c);
                }
            }
            if (best >= 0) {
                out.refined.push_back({label, candidates[static_cast<std::size_t>(best)], best_cost});
            } else {
                still_unassigned.push_back(label);
            }
        }
        out.unassigned_labels = std::move(still_unassigned);
    }
    return out;
}

}  // namespace refmatch
