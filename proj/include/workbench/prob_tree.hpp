// Exact finite probability spaces: non-recombining scenario trees,
// measurable random variables on their levels, essential infima,
// conditional expectations and dynamic programming by backward induction.
//
// Node i at level k has children i*b + j, j < b, at level k + 1, so a node
// index encodes its full shock history in base b.

#pragma once

#include "workbench/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace workbench {

class ScenarioTree {
public:
    /// Every node uses the same edge probabilities and shocks.
    ScenarioTree(std::size_t depth, double dt, std::vector<double> edge_probabilities, std::vector<double> edge_shocks)
        : depth_(depth), dt_(dt), branching_(edge_probabilities.size()) {
        require(depth >= 1, "tree depth must be at least 1");
        require(dt > 0.0, "tree time step must be positive");
        require(branching_ >= 2, "tree branching must be at least 2");
        require(edge_shocks.size() == branching_, "one shock per edge required");
        double total = 0.0;
        for (double p : edge_probabilities) {
            require(p > 0.0, "edge probabilities must be positive");
            total += p;
        }
        require(std::abs(total - 1.0) <= 1e-15, "edge probabilities must sum to 1");
        probs_ = std::move(edge_probabilities);
        shocks_ = std::move(edge_shocks);
        atom_probs_.resize(depth_ + 1);
        atom_probs_[0] = {1.0};
        for (std::size_t k = 0; k < depth_; ++k) {
            auto& next = atom_probs_[k + 1];
            next.resize(nodes(k + 1));
            for (std::size_t i = 0; i < nodes(k); ++i)
                for (std::size_t j = 0; j < branching_; ++j) next[i * branching_ + j] = atom_probs_[k][i] * probs_[j];
        }
    }

    std::size_t depth() const { return depth_; }
    std::size_t branching() const { return branching_; }
    double dt() const { return dt_; }
    std::size_t nodes(std::size_t level) const {
        std::size_t n = 1;
        for (std::size_t k = 0; k < level; ++k) n *= branching_;
        return n;
    }
    std::size_t child(std::size_t node, std::size_t edge) const { return node * branching_ + edge; }
    std::size_t parent(std::size_t node) const { return node / branching_; }
    double edge_probability(std::size_t edge) const { return probs_[edge]; }
    double edge_shock(std::size_t edge) const { return shocks_[edge]; }
    const std::vector<double>& edge_probabilities() const { return probs_; }
    const std::vector<double>& edge_shocks() const { return shocks_; }
    /// Probability of the atom represented by a node.
    double atom_probability(std::size_t level, std::size_t node) const { return atom_probs_[level][node]; }

    /// Shock path leading to a node, oldest first.
    std::vector<double> shock_history(std::size_t level, std::size_t node) const {
        std::vector<double> out(level);
        for (std::size_t k = level; k-- > 0;) {
            out[k] = shocks_[node % branching_];
            node /= branching_;
        }
        return out;
    }

    /// Ancestor of a level-`level` node at level `target`.
    std::size_t ancestor(std::size_t level, std::size_t node, std::size_t target) const {
        for (std::size_t k = level; k > target; --k) node /= branching_;
        return node;
    }

private:
    std::size_t depth_;
    double dt_;
    std::size_t branching_;
    std::vector<double> probs_;
    std::vector<double> shocks_;
    std::vector<std::vector<double>> atom_probs_;
};

inline ScenarioTree build_binomial_tree(std::size_t depth, double dt, double shock_scale) {
    require(depth >= 1, "tree depth must be at least 1");
    require(dt > 0.0, "tree time step must be positive");
    const double s = shock_scale * std::sqrt(dt);
    return ScenarioTree(depth, dt, {0.5, 0.5}, {s, -s});
}

/// Three branches matching the first four Gaussian moments.
inline ScenarioTree build_trinomial_tree(std::size_t depth, double dt, double shock_scale) {
    require(depth >= 1, "tree depth must be at least 1");
    require(dt > 0.0, "tree time step must be positive");
    const double s = shock_scale * std::sqrt(3.0 * dt);
    return ScenarioTree(depth, dt, {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0}, {s, 0.0, -s});
}

struct TreeRandomVariable {
    std::size_t level = 0;
    std::vector<double> values;
};

inline void check_measurable(const ScenarioTree& tree, const TreeRandomVariable& rv) {
    require(rv.level <= tree.depth(), "random variable level exceeds tree depth");
    require_dims(rv.values.size() == tree.nodes(rv.level), "random variable needs one value per atom at its level");
}

inline TreeRandomVariable essential_infimum(std::span<const TreeRandomVariable> family) {
    require(!family.empty(), "essential infimum of an empty family");
    TreeRandomVariable out = family.front();
    for (const auto& member : family.subspan(1)) {
        require(member.level == out.level, "family members live on different levels");
        require_dims(member.values.size() == out.values.size(), "family members have different sizes");
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = std::min(out.values[i], member.values[i]);
    }
    return out;
}

/// E(rv | F_target), averaging one level at a time so the tower property
/// holds bit for bit.
inline TreeRandomVariable conditional_expectation(const ScenarioTree& tree, const TreeRandomVariable& rv,
                                                  std::size_t target_level) {
    check_measurable(tree, rv);
    require(target_level <= rv.level, "target level exceeds the random variable's level");
    TreeRandomVariable cur = rv;
    const std::size_t b = tree.branching();
    while (cur.level > target_level) {
        TreeRandomVariable up{cur.level - 1, std::vector<double>(tree.nodes(cur.level - 1), 0.0)};
        for (std::size_t i = 0; i < up.values.size(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < b; ++j) acc += tree.edge_probability(j) * cur.values[i * b + j];
            up.values[i] = acc;
        }
        cur = std::move(up);
    }
    return cur;
}

/// All pointwise minima of non-empty subfamilies, duplicates removed.
inline std::vector<TreeRandomVariable> min_closure(std::span<const TreeRandomVariable> family) {
    require(!family.empty(), "min closure of an empty family");
    require(family.size() <= 16, "min closure limited to 16 generators");
    std::vector<TreeRandomVariable> out;
    const std::size_t subsets = (std::size_t{1} << family.size());
    for (std::size_t mask = 1; mask < subsets; ++mask) {
        std::vector<TreeRandomVariable> members;
        for (std::size_t i = 0; i < family.size(); ++i)
            if (mask & (std::size_t{1} << i)) members.push_back(family[i]);
        auto m = essential_infimum(members);
        const bool seen = std::any_of(out.begin(), out.end(), [&](const TreeRandomVariable& o) { return o.values == m.values; });
        if (!seen) out.push_back(std::move(m));
    }
    return out;
}

struct InterchangeReport {
    double max_abs_gap = 0.0;
    std::size_t closed_family_size = 0;
    std::vector<double> lhs;  // E(essinf F | G)
    std::vector<double> rhs;  // essinf E(X | G) over the closure
};

inline InterchangeReport verify_essinf_interchange(const ScenarioTree& tree, std::span<const TreeRandomVariable> family,
                                                   std::size_t target_level) {
    require(!family.empty(), "interchange check needs a non-empty family");
    for (const auto& m : family) check_measurable(tree, m);
    const auto closed = min_closure(family);
    const auto lhs = conditional_expectation(tree, essential_infimum(closed), target_level);
    std::vector<TreeRandomVariable> projected;
    projected.reserve(closed.size());
    for (const auto& m : closed) projected.push_back(conditional_expectation(tree, m, target_level));
    const auto rhs = essential_infimum(projected);
    InterchangeReport rep;
    rep.closed_family_size = closed.size();
    for (std::size_t i = 0; i < lhs.values.size(); ++i)
        rep.max_abs_gap = std::max(rep.max_abs_gap, std::abs(lhs.values[i] - rhs.values[i]));
    rep.lhs = lhs.values;
    rep.rhs = rhs.values;
    return rep;
}

// ---------------------------------------------------------------------------
// Controlled dynamics on trees

/// x' = x + a dt + b shock with stage cost f dt. Node dependence carries
/// random coefficients; every map sees only (level, node, x, u).
struct TreeModel {
    using Drift = std::function<Vector(std::size_t level, std::size_t node, const Vector& x, const Vector& u)>;
    using Stage = std::function<double(std::size_t level, std::size_t node, const Vector& x, const Vector& u)>;
    using Terminal = std::function<double(std::size_t node, const Vector& x)>;

    std::string name;
    std::size_t state_dim = 1;
    Drift drift;
    Drift diffusion;
    Stage running_cost;
    Terminal terminal_cost;
    std::vector<Vector> controls;
    Vector initial_state;
};

/// Control index per (level, node) for levels below the tree depth.
struct TreeControlPolicy {
    std::vector<std::vector<std::size_t>> choice;

    static TreeControlPolicy constant(const ScenarioTree& tree, std::size_t index) {
        TreeControlPolicy p;
        p.choice.resize(tree.depth());
        for (std::size_t k = 0; k < tree.depth(); ++k) p.choice[k].assign(tree.nodes(k), index);
        return p;
    }
    bool operator==(const TreeControlPolicy&) const = default;
};

inline void validate_tree_model(const TreeModel& m) {
    require(m.drift && m.diffusion && m.running_cost && m.terminal_cost, "tree model is missing a coefficient map");
    require(!m.controls.empty(), "tree model needs a non-empty control grid");
    require_dims(static_cast<std::size_t>(m.initial_state.size()) == m.state_dim, "initial state dimension mismatch");
}

inline Vector tree_step(const TreeModel& m, const ScenarioTree& tree, std::size_t level, std::size_t node,
                        const Vector& x, const Vector& u, std::size_t edge) {
    return x + m.drift(level, node, x, u) * tree.dt() + m.diffusion(level, node, x, u) * tree.edge_shock(edge);
}

/// Optimal cost-to-go from (level, node, x) with a per-node minimum over the
/// control grid. Ties resolve to the lowest index.
inline double tree_value(const TreeModel& m, const ScenarioTree& tree, std::size_t level, std::size_t node,
                         const Vector& x, std::size_t* argmin = nullptr) {
    if (level == tree.depth()) return m.terminal_cost(node, x);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    for (std::size_t c = 0; c < m.controls.size(); ++c) {
        const Vector& u = m.controls[c];
        double acc = m.running_cost(level, node, x, u) * tree.dt();
        for (std::size_t j = 0; j < tree.branching(); ++j)
            acc += tree.edge_probability(j) *
                   tree_value(m, tree, level + 1, tree.child(node, j), tree_step(m, tree, level, node, x, u, j));
        if (acc < best) {
            best = acc;
            best_i = c;
        }
    }
    if (argmin) *argmin = best_i;
    return best;
}

/// Cost of following `policy` from (level, node, x) up to `stop`, where the
/// continuation `tail(stop_node, x)` is paid. The arithmetic mirrors
/// tree_value so that optimal choices reproduce it exactly.
inline double tree_policy_cost(const TreeModel& m, const ScenarioTree& tree, const TreeControlPolicy& policy,
                               std::size_t level, std::size_t node, const Vector& x, std::size_t stop,
                               const std::function<double(std::size_t, const Vector&)>& tail) {
    if (level == stop) return tail(node, x);
    const Vector& u = m.controls.at(policy.choice.at(level).at(node));
    double acc = m.running_cost(level, node, x, u) * tree.dt();
    for (std::size_t j = 0; j < tree.branching(); ++j)
        acc += tree.edge_probability(j) * tree_policy_cost(m, tree, policy, level + 1, tree.child(node, j),
                                                           tree_step(m, tree, level, node, x, u, j), stop, tail);
    return acc;
}

/// States reached under `policy` from the model's initial state.
inline std::vector<std::vector<Vector>> tree_rollout(const TreeModel& m, const ScenarioTree& tree,
                                                     const TreeControlPolicy& policy) {
    std::vector<std::vector<Vector>> states(tree.depth() + 1);
    states[0] = {m.initial_state};
    for (std::size_t k = 0; k < tree.depth(); ++k) {
        states[k + 1].resize(tree.nodes(k + 1));
        for (std::size_t i = 0; i < tree.nodes(k); ++i) {
            const Vector& u = m.controls.at(policy.choice.at(k).at(i));
            for (std::size_t j = 0; j < tree.branching(); ++j)
                states[k + 1][tree.child(i, j)] = tree_step(m, tree, k, i, states[k][i], u, j);
        }
    }
    return states;
}

struct TreeDppReport {
    std::vector<std::vector<double>> value_nodes;  // V(level, node, Xbar)
    double dpp_gap = 0.0;
    std::size_t start_level = 0;
    std::size_t split_level = 0;
    std::size_t policies_enumerated = 0;
    TreeControlPolicy optimal_policy;
};

inline constexpr std::size_t kDefaultEnumerationCap = 1'000'000;

/// Number of policies on the subtree between two levels.
inline double tree_policy_count(const ScenarioTree& tree, std::size_t controls, std::size_t from, std::size_t to) {
    double internal = 0.0;
    for (std::size_t k = from; k < to; ++k) internal += static_cast<double>(tree.nodes(k - from));
    return std::pow(static_cast<double>(controls), internal);
}

/// Backward-induction value at every node along the optimal rollout, and
/// the gap between V(t, .) and the exhaustive minimum over policies on
/// [t, r) of the one-step-family cost with continuation V(r, .).
inline TreeDppReport tree_dpp_value(const TreeModel& m, const ScenarioTree& tree, std::size_t start_level,
                                    std::size_t split_level, std::size_t cap = kDefaultEnumerationCap) {
    validate_tree_model(m);
    require(start_level <= split_level && split_level <= tree.depth(), "need 0 <= t <= r <= depth");
    const double count = tree_policy_count(tree, m.controls.size(), start_level, split_level);
    if (count > static_cast<double>(cap))
        throw InstanceTooLarge("instance too large: " + std::to_string(count) + " candidate policies exceed the cap of " +
                               std::to_string(cap));

    TreeDppReport rep;
    rep.start_level = start_level;
    rep.split_level = split_level;
    rep.optimal_policy.choice.resize(tree.depth());
    rep.value_nodes.resize(tree.depth() + 1);

    std::vector<std::vector<Vector>> xbar(tree.depth() + 1);
    xbar[0] = {m.initial_state};
    for (std::size_t k = 0; k <= tree.depth(); ++k) {
        rep.value_nodes[k].resize(tree.nodes(k));
        if (k < tree.depth()) {
            rep.optimal_policy.choice[k].resize(tree.nodes(k));
            xbar[k + 1].resize(tree.nodes(k + 1));
        }
        for (std::size_t i = 0; i < tree.nodes(k); ++i) {
            std::size_t arg = 0;
            rep.value_nodes[k][i] = tree_value(m, tree, k, i, xbar[k][i], &arg);
            if (k < tree.depth()) {
                rep.optimal_policy.choice[k][i] = arg;
                for (std::size_t j = 0; j < tree.branching(); ++j)
                    xbar[k + 1][tree.child(i, j)] = tree_step(m, tree, k, i, xbar[k][i], m.controls[arg], j);
            }
        }
    }

    // Exhaustive minimum per start node. A policy on the subtree is an
    // odometer over its internal nodes.
    const std::size_t t = start_level, r = split_level;
    const auto tail = [&](std::size_t node, const Vector& x) { return tree_value(m, tree, r, node, x); };
    std::vector<std::pair<std::size_t, std::size_t>> internal;  // (relative level, relative node)
    for (std::size_t k = t; k < r; ++k)
        for (std::size_t i = 0; i < tree.nodes(k - t); ++i) internal.emplace_back(k - t, i);
    const std::size_t total = static_cast<std::size_t>(count);
    rep.policies_enumerated = total * tree.nodes(t);

    for (std::size_t root = 0; root < tree.nodes(t); ++root) {
        TreeControlPolicy pol = TreeControlPolicy::constant(tree, 0);
        std::vector<std::size_t> digits(internal.size(), 0);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t trial = 0; trial < total; ++trial) {
            for (std::size_t s = 0; s < internal.size(); ++s) {
                const auto [rl, rn] = internal[s];
                // Relative node rn at relative depth rl sits below `root`.
                std::size_t absolute = root;
                for (std::size_t q = 0; q < rl; ++q) absolute *= tree.branching();
                pol.choice[t + rl][absolute + rn] = digits[s];
            }
            best = std::min(best, tree_policy_cost(m, tree, pol, t, root, xbar[t][root], r, tail));
            for (std::size_t s = 0; s < digits.size(); ++s) {
                if (++digits[s] < m.controls.size()) break;
                digits[s] = 0;
            }
        }
        rep.dpp_gap = std::max(rep.dpp_gap, std::abs(best - rep.value_nodes[t][root]));
    }
    return rep;
}

/// Cost random variable J(level, .; policy) when the level-`level` states
/// come from rolling out `state_policy`.
inline TreeRandomVariable tree_policy_cost_rv(const TreeModel& m, const ScenarioTree& tree,
                                              const TreeControlPolicy& policy, std::size_t level,
                                              const std::vector<std::vector<Vector>>& states) {
    TreeRandomVariable out{level, std::vector<double>(tree.nodes(level))};
    const auto tail = [&](std::size_t node, const Vector& x) { return m.terminal_cost(node, x); };
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = tree_policy_cost(m, tree, policy, level, i, states[level][i], tree.depth(), tail);
    return out;
}

struct PairwiseMinResult {
    TreeControlPolicy policy;
    TreeRandomVariable cost_u1;
    TreeRandomVariable cost_u2;
    TreeRandomVariable cost_switched;
};

/// Follows u1 on atoms at level t where its cost is not larger, u2 elsewhere.
/// States at level t come from the u1 rollout; before t the policy is u1.
inline PairwiseMinResult pairwise_min_control(const TreeModel& m, const ScenarioTree& tree, const TreeControlPolicy& u1,
                                              const TreeControlPolicy& u2, std::size_t level) {
    validate_tree_model(m);
    require(level < tree.depth(), "switching level must lie below the tree depth");
    const auto states = tree_rollout(m, tree, u1);
    PairwiseMinResult res;
    res.cost_u1 = tree_policy_cost_rv(m, tree, u1, level, states);
    res.cost_u2 = tree_policy_cost_rv(m, tree, u2, level, states);
    res.policy = u1;
    for (std::size_t i = 0; i < tree.nodes(level); ++i) {
        if (res.cost_u1.values[i] <= res.cost_u2.values[i]) continue;
        for (std::size_t k = level; k < tree.depth(); ++k) {
            const std::size_t width = tree.nodes(k - level);
            const std::size_t first = i * width;
            for (std::size_t n = first; n < first + width; ++n) res.policy.choice[k][n] = u2.choice[k][n];
        }
    }
    // Levels before t keep u1, so the level-t states are unchanged.
    res.cost_switched = tree_policy_cost_rv(m, tree, res.policy, level, states);
    return res;
}

}  // namespace workbench
