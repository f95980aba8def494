// Built-in problems: scalar and two-mode linear-quadratic problems, the
// Galerkin stochastic heat equation with path-dependent diffusion, a
// simulation-only stochastic wave equation and three scenario trees.

#pragma once

#include "workbench/core.hpp"
#include "workbench/hilbert.hpp"
#include "workbench/model.hpp"
#include "workbench/prob_tree.hpp"
#include "workbench/value_hjb.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace workbench {

/// a = u, b = sigma, f = x^2 + u^2, h = g x^2, A = 0 on [0, T].
inline LQSpec lq_scalar_spec(double sigma = 1.0, double horizon = 1.0, double control_bound = 5.0,
                             std::size_t control_points = 33, double terminal = 0.0) {
    LQSpec s;
    s.eigenvalues = {0.0};
    s.m = Matrix::Zero(1, 1);
    s.n = Matrix::Ones(1, 1);
    s.sigma = Matrix::Constant(1, 1, sigma);
    s.rx = Matrix::Ones(1, 1);
    s.ru = Matrix::Ones(1, 1);
    s.gt = Matrix::Constant(1, 1, terminal);
    s.horizon = horizon;
    s.control_bound = control_bound;
    s.control_points = control_points;
    return s;
}

/// Two stable modes with rotation coupling and correlated noise.
inline LQSpec lq_matrix_spec(double horizon = 1.0, double control_bound = 5.0, std::size_t control_points = 33) {
    LQSpec s;
    s.eigenvalues = {-1.0, -4.0};
    s.m.resize(2, 2);
    s.m << 0.0, 0.5, -0.5, 0.0;
    s.n = Matrix::Identity(2, 2);
    s.sigma.resize(2, 2);
    s.sigma << 0.5, 0.0, 0.2, 0.4;
    s.rx = Matrix::Identity(2, 2);
    s.ru = Matrix::Identity(2, 2);
    s.gt = 0.5 * Matrix::Identity(2, 2);
    s.horizon = horizon;
    s.control_bound = control_bound;
    s.control_points = control_points;
    return s;
}

struct HeatParameters {
    std::size_t modes = 4;
    double reaction = 0.5;       // alpha in a = alpha x + u e_1
    double noise_level = 0.3;    // sigma_0 in b = sigma_0 (1 + tanh(W)/2) x + beta e_1
    double additive = 0.2;       // beta
    double control_bound = 3.0;
    std::size_t control_points = 33;
    double modulus_exponent = 1.0;
};

/// Stochastic heat equation on (0, 1) with Dirichlet data, truncated to the
/// first `modes` sine modes and driven by one scalar Brownian motion:
///   a = alpha x + u e_1,  b = sigma_0 (1 + tanh(W(t)) / 2) x + beta e_1,
///   f = |x|^2 + u^2,      h = |x|^2 / 2.
/// The diffusion reads the Brownian path, so the problem is non-Markovian.
inline ControlModel stochastic_heat_model(const HeatParameters& hp = {}) {
    require(hp.modes >= 1, "heat preset needs at least one mode");
    ControlModel m;
    m.name = "stochastic_heat";
    m.generator = GalerkinOperator::dirichlet_laplacian(hp.modes);
    m.noise_dim = 1;
    m.control_dim = 1;
    m.control_bound = hp.control_bound;
    m.control_points = hp.control_points;
    m.modulus_exponent = hp.modulus_exponent;
    m.path_dependent = true;
    const double alpha = hp.reaction, s0 = hp.noise_level, beta = hp.additive;
    const auto level = [s0](const PathContext& c) { return s0 * (1.0 + 0.5 * std::tanh(c.w_at(0))); };
    m.drift = [alpha](const PathContext&, const VecIn& x, const VecIn& u, VecOut a) {
        a = alpha * x;
        a(0) += u(0);
    };
    m.diffusion = [level, beta](const PathContext& c, const VecIn& x, const VecIn&, MatOut b) {
        b.col(0) = level(c) * x;
        b(0, 0) += beta;
    };
    m.running_cost = [](const PathContext&, const VecIn& x, const VecIn& u) { return x.squaredNorm() + u.squaredNorm(); };
    m.terminal_cost = [](const PathContext&, const VecIn& x) { return 0.5 * x.squaredNorm(); };
    m.drift_x = [alpha](const PathContext&, const VecIn&, const VecIn&, MatOut o) {
        o.setZero();
        o.diagonal().setConstant(alpha);
    };
    m.diffusion_x = [level](const PathContext& c, const VecIn&, const VecIn&, MatOut o) {
        o.setZero();
        o.diagonal().setConstant(level(c));
    };
    m.cost_x = [](const PathContext&, const VecIn& x, const VecIn&, VecOut o) { o = 2.0 * x; };
    m.terminal_x = [](const PathContext&, const VecIn& x, VecOut o) { o = x; };
    m.cost_xx = [](const PathContext&, const VecIn&, const VecIn&, MatOut o) {
        o.setZero();
        o.diagonal().setConstant(2.0);
    };
    m.terminal_xx = [](const PathContext&, const VecIn&, MatOut o) {
        o.setZero();
        o.diagonal().setConstant(1.0);
    };
    m.drift_u = [](const PathContext&, const VecIn&, const VecIn&, MatOut o) {
        o.setZero();
        o(0, 0) = 1.0;
    };
    m.diffusion_u = [](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o.setZero(); };
    m.cost_u = [](const PathContext&, const VecIn&, const VecIn& u, VecOut o) { o = 2.0 * u; };
    m.cost_xu = [](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o.setZero(); };
    m.cost_uu = [](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o.setConstant(2.0); };
    m.lipschitz = std::max({1.0, std::abs(alpha) + 1.0, 1.5 * s0 + std::abs(beta)});
    m.description = "Galerkin stochastic heat equation with path-dependent diffusion";
    return m;
}

struct WaveParameters {
    std::size_t modes = 3;
    double damping_free_noise = 0.2;  // diffusion level on the velocity components
    double control_bound = 2.0;
};

/// Stochastic wave equation y_tt = y_xx + u e_1 + noise on (0, 1), written
/// in energy coordinates (k pi y_k, v_k). Simulation only.
inline ControlModel stochastic_wave_model(const WaveParameters& wp = {}) {
    require(wp.modes >= 1, "wave preset needs at least one mode");
    std::vector<double> freq(wp.modes);
    for (std::size_t k = 0; k < wp.modes; ++k) freq[k] = static_cast<double>(k + 1) * std::numbers::pi;
    ControlModel m;
    m.name = "stochastic_wave";
    m.generator = GalerkinOperator::oscillator(freq, 0.0);
    m.noise_dim = 1;
    m.control_dim = 1;
    m.control_bound = wp.control_bound;
    const double s = wp.damping_free_noise;
    m.drift = [](const PathContext&, const VecIn& x, const VecIn& u, VecOut a) {
        a.setZero();
        a(1) = u(0);
        (void)x;
    };
    m.diffusion = [s](const PathContext&, const VecIn& x, const VecIn&, MatOut b) {
        b.setZero();
        for (Eigen::Index k = 1; k < x.size(); k += 2) b(k, 0) = s * (1.0 + 0.5 * std::tanh(x(k - 1)));
    };
    m.running_cost = [](const PathContext&, const VecIn& x, const VecIn& u) { return x.squaredNorm() + u.squaredNorm(); };
    m.terminal_cost = [](const PathContext&, const VecIn& x) { return 0.5 * x.squaredNorm(); };
    m.description = "Galerkin stochastic wave equation in energy coordinates";
    return m;
}

/// a = 0, b = 0 with the given generator: the flow is the semigroup itself.
inline ControlModel zero_coefficient_model(GalerkinOperator generator, std::size_t noise_dim = 1) {
    ControlModel m;
    m.name = "zero_coefficients";
    m.generator = std::move(generator);
    m.noise_dim = noise_dim;
    m.control_dim = 1;
    m.drift = [](const PathContext&, const VecIn&, const VecIn&, VecOut a) { a.setZero(); };
    m.diffusion = [](const PathContext&, const VecIn&, const VecIn&, MatOut b) { b.setZero(); };
    m.running_cost = [](const PathContext&, const VecIn&, const VecIn&) { return 0.0; };
    m.terminal_cost = [](const PathContext&, const VecIn&) { return 0.0; };
    m.description = "semigroup flow without forcing";
    return m;
}

// ---------------------------------------------------------------------------
// Scenario trees

struct TreePreset {
    std::string name;
    ScenarioTree tree;
    TreeModel model;
    std::size_t split_level;
};

inline std::vector<Vector> scalar_grid(std::initializer_list<double> values) {
    std::vector<Vector> out;
    for (double v : values) out.push_back(Vector::Constant(1, v));
    return out;
}

/// x' = x + u dt + shock, f = x^2 + u^2, h = x^2.
inline TreePreset tree_binomial_preset(std::size_t depth = 6) {
    const double dt = 1.0 / static_cast<double>(depth);
    TreeModel m;
    m.name = "tree_binomial";
    m.state_dim = 1;
    m.drift = [](std::size_t, std::size_t, const Vector&, const Vector& u) -> Vector { return u; };
    m.diffusion = [](std::size_t, std::size_t, const Vector&, const Vector&) -> Vector { return Vector::Ones(1); };
    m.running_cost = [](std::size_t, std::size_t, const Vector& x, const Vector& u) { return x.squaredNorm() + u.squaredNorm(); };
    m.terminal_cost = [](std::size_t, const Vector& x) { return x.squaredNorm(); };
    m.controls = scalar_grid({-1.0, 0.0, 1.0});
    m.initial_state = Vector::Constant(1, 0.5);
    return {"tree_binomial", build_binomial_tree(depth, dt, 1.0), std::move(m), depth};
}

/// Drift and volatility read the shock history carried by the node index.
inline TreePreset tree_nonmarkov_preset(std::size_t depth = 6) {
    const double dt = 1.0 / static_cast<double>(depth);
    auto tree = build_binomial_tree(depth, dt, 1.0);
    TreeModel m;
    m.name = "tree_nonmarkov";
    m.state_dim = 1;
    m.drift = [tree](std::size_t level, std::size_t node, const Vector&, const Vector& u) -> Vector {
        double w = 0.0;
        for (double s : tree.shock_history(level, node)) w += s;
        return Vector::Constant(1, u(0) + 0.5 * std::tanh(w));
    };
    m.diffusion = [](std::size_t level, std::size_t node, const Vector& x, const Vector&) -> Vector {
        const double last = (level == 0) ? 0.0 : ((node % 2 == 0) ? 1.0 : -1.0);
        return Vector::Constant(1, 1.0 + 0.3 * last + 0.1 * std::tanh(x(0)));
    };
    m.running_cost = [](std::size_t, std::size_t node, const Vector& x, const Vector& u) {
        return x.squaredNorm() + (1.0 + 0.25 * static_cast<double>(node % 3)) * u.squaredNorm();
    };
    m.terminal_cost = [](std::size_t node, const Vector& x) { return x.squaredNorm() + 0.1 * static_cast<double>(node % 2); };
    m.controls = scalar_grid({-1.0, 0.0, 1.0});
    m.initial_state = Vector::Constant(1, 0.3);
    return {"tree_nonmarkov", std::move(tree), std::move(m), depth};
}

/// Three-branch moment-matched tree with a quartic terminal cost.
inline TreePreset tree_trinomial_preset(std::size_t depth = 5) {
    const double dt = 1.0 / static_cast<double>(depth);
    TreeModel m;
    m.name = "tree_trinomial";
    m.state_dim = 1;
    m.drift = [](std::size_t, std::size_t, const Vector& x, const Vector& u) -> Vector { return u - 0.5 * x; };
    m.diffusion = [](std::size_t, std::size_t, const Vector& x, const Vector&) -> Vector {
        return Vector::Constant(1, 0.8 + 0.2 * std::cos(x(0)));
    };
    m.running_cost = [](std::size_t, std::size_t, const Vector& x, const Vector& u) { return x.squaredNorm() + 0.5 * u.squaredNorm(); };
    m.terminal_cost = [](std::size_t, const Vector& x) { return x.squaredNorm() + 0.1 * std::pow(x(0), 4); };
    m.controls = scalar_grid({-1.0, 0.0, 1.0});
    m.initial_state = Vector::Constant(1, -0.4);
    return {"tree_trinomial", build_trinomial_tree(depth, dt, 1.0), std::move(m), depth};
}

/// A tree model assembled from numbers, so experiments can define one:
///   x' = x + (u - kappa x + eta tanh(sum of shocks)) dt + vol * shock,
///   f = q x^2 + r u^2,  h = g x^2 + c x^4.
struct TreeParameters {
    std::string name = "tree_custom";
    std::size_t branching = 2;  // 2: binomial, 3: trinomial
    std::size_t depth = 4;
    double shock_scale = 1.0;
    double initial_state = 0.5;
    std::vector<double> controls{-1.0, 0.0, 1.0};
    double reversion = 0.0;
    double history_drift = 0.0;
    double volatility = 1.0;
    double state_weight = 1.0;
    double control_weight = 1.0;
    double terminal_weight = 1.0;
    double terminal_quartic = 0.0;
};

inline TreePreset tree_from_parameters(const TreeParameters& tp) {
    require(tp.branching == 2 || tp.branching == 3, "tree branching must be 2 or 3");
    require(tp.depth >= 1, "tree depth must be positive");
    require(!tp.controls.empty(), "tree control grid is empty");
    const double dt = 1.0 / static_cast<double>(tp.depth);
    auto tree = tp.branching == 2 ? build_binomial_tree(tp.depth, dt, tp.shock_scale)
                                  : build_trinomial_tree(tp.depth, dt, tp.shock_scale);
    TreeModel m;
    m.name = tp.name;
    m.state_dim = 1;
    const double kappa = tp.reversion, eta = tp.history_drift, vol = tp.volatility;
    m.drift = [tree, kappa, eta](std::size_t level, std::size_t node, const Vector& x, const Vector& u) -> Vector {
        double w = 0.0;
        if (eta != 0.0)
            for (double sh : tree.shock_history(level, node)) w += sh;
        return Vector::Constant(1, u(0) - kappa * x(0) + eta * std::tanh(w));
    };
    m.diffusion = [vol](std::size_t, std::size_t, const Vector&, const Vector&) -> Vector { return Vector::Constant(1, vol); };
    const double qx = tp.state_weight, ru = tp.control_weight, g = tp.terminal_weight, c4 = tp.terminal_quartic;
    m.running_cost = [qx, ru](std::size_t, std::size_t, const Vector& x, const Vector& u) {
        return qx * x.squaredNorm() + ru * u.squaredNorm();
    };
    m.terminal_cost = [g, c4](std::size_t, const Vector& x) { return g * x.squaredNorm() + c4 * std::pow(x(0), 4); };
    for (double v : tp.controls) m.controls.push_back(Vector::Constant(1, v));
    m.initial_state = Vector::Constant(1, tp.initial_state);
    return {tp.name, std::move(tree), std::move(m), tp.depth};
}

inline std::vector<TreePreset> tree_presets() {
    return {tree_binomial_preset(), tree_nonmarkov_preset(), tree_trinomial_preset()};
}

inline std::size_t default_tree_depth(const std::string& name) { return name == "tree_trinomial" ? 5 : 6; }

inline TreePreset tree_preset(const std::string& name, std::size_t depth) {
    if (name == "tree_binomial") return tree_binomial_preset(depth);
    if (name == "tree_nonmarkov") return tree_nonmarkov_preset(depth);
    if (name == "tree_trinomial") return tree_trinomial_preset(depth);
    throw InvalidArgument("unknown tree preset: " + name);
}

}  // namespace workbench
