// Monte-Carlo simulation of the controlled SEE in mild form:
//   X_{k+1} = S(dt) (X_k + a(t_k, X_k, u_k) dt + b(t_k, X_k, u_k) dW_k),
// plus moment/continuity diagnostics, the Ito-Kunita residual and the
// Yosida convergence study.

#pragma once

#include "workbench/core.hpp"
#include "workbench/hilbert.hpp"
#include "workbench/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace workbench {

/// Brownian increments and simulated paths, stored path-major so that a
/// path's Brownian history up to step k is contiguous.
class SamplePathBundle {
public:
    SamplePathBundle() = default;
    SamplePathBundle(TimeGrid grid, std::size_t paths, std::size_t noise_dim, std::uint64_t seed)
        : grid_(grid), paths_(paths), d_(noise_dim), seed_(seed) {
        grid_.validate();
        require(paths >= 1, "bundle needs at least one path");
        require(noise_dim >= 1, "noise dimension must be positive");
        dw_.assign(paths_ * grid_.steps * d_, 0.0);
        w_.assign(paths_ * grid_.points() * d_, 0.0);
    }

    const TimeGrid& grid() const { return grid_; }
    std::size_t paths() const { return paths_; }
    std::size_t steps() const { return grid_.steps; }
    std::size_t noise_dim() const { return d_; }
    std::size_t state_dim() const { return n_; }
    std::size_t control_dim() const { return m_; }
    std::uint64_t seed() const { return seed_; }
    bool has_states() const { return !x_.empty(); }

    void allocate_states(std::size_t state_dim, std::size_t control_dim) {
        n_ = state_dim;
        m_ = control_dim;
        x_.assign(paths_ * grid_.points() * n_, 0.0);
        u_.assign(paths_ * grid_.steps * m_, 0.0);
    }

    using ConstMap = Eigen::Map<const Vector>;
    using MutMap = Eigen::Map<Vector>;

    ConstMap x(std::size_t path, std::size_t step) const { return {x_.data() + (path * grid_.points() + step) * n_, idx(n_)}; }
    MutMap x(std::size_t path, std::size_t step) { return {x_.data() + (path * grid_.points() + step) * n_, idx(n_)}; }
    ConstMap u(std::size_t path, std::size_t step) const { return {u_.data() + (path * grid_.steps + step) * m_, idx(m_)}; }
    MutMap u(std::size_t path, std::size_t step) { return {u_.data() + (path * grid_.steps + step) * m_, idx(m_)}; }
    ConstMap dw(std::size_t path, std::size_t step) const { return {dw_.data() + (path * grid_.steps + step) * d_, idx(d_)}; }
    MutMap dw(std::size_t path, std::size_t step) { return {dw_.data() + (path * grid_.steps + step) * d_, idx(d_)}; }
    ConstMap w(std::size_t path, std::size_t step) const { return {w_.data() + (path * grid_.points() + step) * d_, idx(d_)}; }

    std::span<const double> w_span(std::size_t path, std::size_t step) const {
        return {w_.data() + (path * grid_.points() + step) * d_, d_};
    }
    std::span<const double> w_history(std::size_t path, std::size_t step) const {
        return {w_.data() + path * grid_.points() * d_, (step + 1) * d_};
    }

    PathContext context(std::size_t path, std::size_t step) const {
        PathContext ctx;
        ctx.t = grid_.time(step);
        ctx.step = step;
        ctx.path = path;
        ctx.w = w_span(path, step);
        ctx.history = w_history(path, step);
        return ctx;
    }

    /// Rebuilds W from the increments (W_0 = 0).
    void integrate_brownian() {
        for (std::size_t i = 0; i < paths_; ++i) {
            double* wp = w_.data() + i * grid_.points() * d_;
            for (std::size_t c = 0; c < d_; ++c) wp[c] = 0.0;
            for (std::size_t k = 0; k < grid_.steps; ++k)
                for (std::size_t c = 0; c < d_; ++c)
                    wp[(k + 1) * d_ + c] = wp[k * d_ + c] + dw_[(i * grid_.steps + k) * d_ + c];
        }
    }

    const std::vector<double>& raw_states() const { return x_; }
    const std::vector<double>& raw_controls() const { return u_; }
    const std::vector<double>& raw_increments() const { return dw_; }
    std::vector<double>& raw_increments() { return dw_; }

private:
    static Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

    TimeGrid grid_;
    std::size_t paths_ = 0;
    std::size_t d_ = 1;
    std::size_t n_ = 0;
    std::size_t m_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> dw_, w_, x_, u_;
};

/// Seeded increments; path i draws from its own stream, step-major within
/// the path.
inline SamplePathBundle generate_noise(const TimeGrid& grid, std::size_t paths, std::size_t noise_dim,
                                       std::uint64_t seed, const Execution& exec = {}) {
    SamplePathBundle bundle(grid, paths, noise_dim, seed);
    const double sq = std::sqrt(grid.dt());
    auto& dw = bundle.raw_increments();
    parallel_for(paths, exec, [&](std::size_t i) {
        StreamRng rng(seed, StreamTag::brownian, i);
        double* out = dw.data() + i * grid.steps * noise_dim;
        for (std::size_t j = 0; j < grid.steps * noise_dim; ++j) out[j] = sq * rng.normal();
    });
    bundle.integrate_brownian();
    return bundle;
}

/// Linear one-step propagator: diagonal fast path or dense matrix.
struct Propagator {
    Vector diagonal;
    Matrix dense;
    bool is_diagonal = true;

    static Propagator semigroup(const GalerkinOperator& op, double dt) {
        Propagator p;
        p.is_diagonal = op.is_diagonal();
        if (p.is_diagonal) {
            p.diagonal = op.semigroup_matrix(dt).diagonal();
        } else {
            p.dense = op.semigroup_matrix(dt);
        }
        return p;
    }
    static Propagator from_matrix(const Matrix& m) {
        Propagator p;
        p.is_diagonal = m.isDiagonal(0.0);
        if (p.is_diagonal)
            p.diagonal = m.diagonal();
        else
            p.dense = m;
        return p;
    }
    void apply(const VecIn& in, VecOut out) const {
        if (is_diagonal)
            out = diagonal.cwiseProduct(in);
        else
            out.noalias() = dense * in;
    }
    void apply_transpose(const VecIn& in, VecOut out) const {
        if (is_diagonal)
            out = diagonal.cwiseProduct(in);
        else
            out.noalias() = dense.transpose() * in;
    }
    Matrix as_matrix() const { return is_diagonal ? Matrix(diagonal.asDiagonal()) : dense; }
};

/// Fills states and controls of `bundle` from its increments.
inline void simulate_on_noise(const ControlModel& model, const FeedbackControl& control, const VecIn& xi,
                              SamplePathBundle& bundle, const Execution& exec = {},
                              const std::optional<Propagator>& propagator = std::nullopt) {
    model.validate();
    require(static_cast<bool>(control.map), "control map is empty");
    const std::size_t n = model.state_dim();
    require_dims(static_cast<std::size_t>(xi.size()) == n, "initial state dimension mismatch");
    require_dims(bundle.noise_dim() == model.noise_dim, "bundle noise dimension differs from the model");
    const auto& grid = bundle.grid();
    const double dt = grid.dt();
    const Propagator prop = propagator ? *propagator : Propagator::semigroup(model.generator, dt);
    bundle.allocate_states(n, model.control_dim);
    const Vector xi_copy = xi;

    parallel_for(bundle.paths(), exec, [&](std::size_t i) {
        CoefficientScratch s(model);
        Vector pre(static_cast<Eigen::Index>(n));
        bundle.x(i, 0) = xi_copy;
        for (std::size_t k = 0; k < grid.steps; ++k) {
            const PathContext ctx = bundle.context(i, k);
            const auto xk = bundle.x(i, k);
            control.map(ctx, xk, s.u);
            bundle.u(i, k) = s.u;
            model.drift(ctx, xk, s.u, s.a);
            model.diffusion(ctx, xk, s.u, s.b);
            pre = xk + s.a * dt;
            pre.noalias() += s.b * bundle.dw(i, k);
            auto next = bundle.x(i, k + 1);
            prop.apply(pre, next);
            if (!next.allFinite() || !s.u.allFinite())
                throw SimulationError("non-finite state in forward simulation", i, k);
        }
    });
}

inline SamplePathBundle simulate_forward(const ControlModel& model, const FeedbackControl& control, const VecIn& xi,
                                         const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                         const Execution& exec = {}) {
    grid.validate();
    require(paths >= 1, "simulation needs at least one path");
    auto bundle = generate_noise(grid, paths, model.noise_dim, seed, exec);
    simulate_on_noise(model, control, xi, bundle, exec);
    return bundle;
}

struct NoiseStatistics {
    double max_mean_ratio = 0.0;      // |mean| / sqrt(dt / paths), worst coordinate-step
    double max_variance_error = 0.0;  // |var / dt - 1|, worst coordinate-step
};

inline NoiseStatistics noise_statistics(const SamplePathBundle& b) {
    NoiseStatistics st;
    const double dt = b.grid().dt();
    const double np = static_cast<double>(b.paths());
    for (std::size_t k = 0; k < b.steps(); ++k)
        for (std::size_t c = 0; c < b.noise_dim(); ++c) {
            double s = 0.0, ss = 0.0;
            for (std::size_t i = 0; i < b.paths(); ++i) {
                const double v = b.dw(i, k)(static_cast<Eigen::Index>(c));
                s += v;
                ss += v * v;
            }
            const double mean = s / np;
            const double var = (ss - np * mean * mean) / (np - 1.0);
            st.max_mean_ratio = std::max(st.max_mean_ratio, std::abs(mean) / std::sqrt(dt / np));
            st.max_variance_error = std::max(st.max_variance_error, std::abs(var / dt - 1.0));
        }
    return st;
}

// ---------------------------------------------------------------------------
// Moment and continuity estimates

struct MomentReport {
    std::vector<double> fitted_c;            // E sup|X|^p / (1 + |xi|^p) per variant
    double fitted_c_spread = 1.0;            // max / min
    std::vector<double> continuity_ratio;    // against variant 0, per other variant
    double continuity_ratio_max = 0.0;
    double continuity_ratio_spread = 1.0;    // max / min over non-degenerate pairs
};

/// `variants[j]` must be simulated from `initial_states[j]` on common noise.
inline MomentReport moment_estimate_check(std::span<const SamplePathBundle> variants, std::span<const Vector> initial_states,
                                          int p) {
    require(variants.size() >= 2, "moment check needs at least two variants");
    require(variants.size() == initial_states.size(), "one initial state per variant");
    require(p >= 2 && p % 2 == 0, "moment exponent must be an even integer >= 2");
    const auto& base = variants.front();
    for (const auto& v : variants) {
        require(v.has_states(), "variant bundle has no states");
        require(v.paths() == base.paths() && v.steps() == base.steps(), "variants must share the grid and path count");
        require(v.seed() == base.seed(), "variants must share the noise seed");
    }
    const double pd = static_cast<double>(p);
    MomentReport rep;
    for (std::size_t j = 0; j < variants.size(); ++j) {
        const auto& b = variants[j];
        double acc = 0.0;
        for (std::size_t i = 0; i < b.paths(); ++i) {
            double sup = 0.0;
            for (std::size_t k = 0; k <= b.steps(); ++k) sup = std::max(sup, b.x(i, k).norm());
            acc += std::pow(sup, pd);
        }
        acc /= static_cast<double>(b.paths());
        rep.fitted_c.push_back(acc / (1.0 + std::pow(initial_states[j].norm(), pd)));
    }
    const auto [mn, mx] = std::minmax_element(rep.fitted_c.begin(), rep.fitted_c.end());
    rep.fitted_c_spread = *mn > 0.0 ? *mx / *mn : (*mx > 0.0 ? INFINITY : 1.0);

    const double dt = base.grid().dt();
    for (std::size_t j = 1; j < variants.size(); ++j) {
        const auto& b = variants[j];
        double num = 0.0, ctrl = 0.0;
        for (std::size_t i = 0; i < b.paths(); ++i) {
            double sup = 0.0;
            for (std::size_t k = 0; k <= b.steps(); ++k) sup = std::max(sup, (b.x(i, k) - base.x(i, k)).norm());
            num += std::pow(sup, pd);
            for (std::size_t k = 0; k < b.steps(); ++k) ctrl += std::pow((b.u(i, k) - base.u(i, k)).norm(), pd) * dt;
        }
        num /= static_cast<double>(b.paths());
        ctrl /= static_cast<double>(b.paths());
        const double den = std::pow((initial_states[j] - initial_states[0]).norm(), pd) + ctrl;
        rep.continuity_ratio.push_back(den > 0.0 ? num / den : 0.0);
    }
    std::vector<double> nz;
    for (double r : rep.continuity_ratio)
        if (r > 0.0) nz.push_back(r);
    if (!rep.continuity_ratio.empty())
        rep.continuity_ratio_max = *std::max_element(rep.continuity_ratio.begin(), rep.continuity_ratio.end());
    if (!nz.empty()) rep.continuity_ratio_spread = *std::max_element(nz.begin(), nz.end()) / *std::min_element(nz.begin(), nz.end());
    return rep;
}

// ---------------------------------------------------------------------------
// Ito-Kunita formula

/// A field F(t, omega, x) with semimartingale decomposition
/// dF(t, x) = Gamma dt + Phi dW for frozen x.
struct TestField {
    std::string name;
    std::function<double(const PathContext&, const VecIn&)> value;
    std::function<void(const PathContext&, const VecIn&, VecOut)> gradient;
    std::function<void(const PathContext&, const VecIn&, MatOut)> hessian;
    std::function<double(const PathContext&, const VecIn&)> gamma;
    std::function<void(const PathContext&, const VecIn&, VecOut)> phi;    // d
    std::function<void(const PathContext&, const VecIn&, MatOut)> phi_x;  // n x d, column j = grad Phi_j
    /// Optional override for A* F_x; computed from the generator otherwise.
    std::function<void(const PathContext&, const VecIn&, VecOut)> adjoint_gradient;

    void validate() const {
        require(static_cast<bool>(value) && static_cast<bool>(gradient) && static_cast<bool>(hessian) &&
                    static_cast<bool>(gamma),
                "test field " + name + " lacks a required derivative");
        require(static_cast<bool>(phi) == static_cast<bool>(phi_x), "test field " + name + " needs both Phi and Phi_x");
    }
};

struct ItoKunitaReport {
    std::string field;
    double mean_residual = 0.0;
    double stderr_residual = 0.0;
    double scale = 0.0;      // mean magnitude of the terms entering the identity
    double allowance = 0.0;  // C dt scale
    bool pass = false;
};

/// Discretization allowance constant for left-point quadrature against the
/// exponential-Euler scheme: C = 1 + max|lambda| T.
inline double discretization_constant(const GalerkinOperator& op, double horizon) {
    return 1.0 + op.max_abs_eigenvalue() * horizon;
}

/// Residual F(T, X_T) minus the left-point Ito-Kunita expansion per path,
/// using the bundle's own coefficients a(X, u) and b(X, u).
inline ItoKunitaReport ito_kunita_residual(const TestField& field, const ControlModel& model,
                                           const SamplePathBundle& bundle, const Execution& exec = {}) {
    field.validate();
    require(bundle.has_states(), "bundle has no simulated states");
    const std::size_t n = model.state_dim(), d = model.noise_dim;
    const auto& grid = bundle.grid();
    const double dt = grid.dt();
    std::vector<double> residual(bundle.paths()), magnitude(bundle.paths());
    parallel_for(bundle.paths(), exec, [&](std::size_t i) {
        CoefficientScratch s(model);
        Vector fx(static_cast<Eigen::Index>(n)), afx(static_cast<Eigen::Index>(n)), phi = Vector::Zero(static_cast<Eigen::Index>(d));
        Matrix fxx(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        Matrix phix = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        const PathContext c0 = bundle.context(i, 0);
        const double f0 = field.value(c0, bundle.x(i, 0));
        double acc = f0, mag = std::abs(f0);
        for (std::size_t k = 0; k < grid.steps; ++k) {
            const PathContext ctx = bundle.context(i, k);
            const auto xk = bundle.x(i, k);
            const auto uk = bundle.u(i, k);
            model.drift(ctx, xk, uk, s.a);
            model.diffusion(ctx, xk, uk, s.b);
            field.gradient(ctx, xk, fx);
            field.hessian(ctx, xk, fxx);
            if (field.adjoint_gradient)
                field.adjoint_gradient(ctx, xk, afx);
            else
                afx = model.generator.apply_adjoint(fx);
            if (field.phi) {
                field.phi(ctx, xk, phi);
                field.phi_x(ctx, xk, phix);
            }
            const double drift = field.gamma(ctx, xk) + afx.dot(xk) + fx.dot(s.a) +
                                 0.5 * (s.b.transpose() * fxx * s.b).trace() + (s.b.transpose() * phix).trace();
            const double mart = (phi + s.b.transpose() * fx).dot(bundle.dw(i, k));
            acc += drift * dt + mart;
            mag += std::abs(drift) * dt;
        }
        const double ft = field.value(bundle.context(i, grid.steps), bundle.x(i, grid.steps));
        residual[i] = ft - acc;
        magnitude[i] = mag + std::abs(ft);
    });
    ItoKunitaReport rep;
    rep.field = field.name;
    rep.mean_residual = mean_of(residual);
    rep.stderr_residual = stderr_of(residual);
    rep.scale = mean_of(magnitude);
    rep.allowance = discretization_constant(model.generator, grid.horizon - grid.t0) * dt * rep.scale;
    rep.pass = std::abs(rep.mean_residual) <= 3.0 * rep.stderr_residual + rep.allowance;
    return rep;
}

// ---------------------------------------------------------------------------
// Yosida approximation

struct YosidaRow {
    double n = 0.0;
    double sup_error_l2 = 0.0;  // (E sup_k |X^n_k - X_k|^2)^{1/2}
};

struct YosidaStudy {
    std::vector<YosidaRow> rows;
    bool nonincreasing = true;
};

/// Same increments for every n; X uses exp(A dt), X^n uses exp(A_n dt).
inline YosidaStudy yosida_convergence_study(const ControlModel& model, const FeedbackControl& control, const VecIn& xi,
                                            std::span<const double> n_list, const TimeGrid& grid, std::size_t paths,
                                            std::uint64_t seed, const Execution& exec = {}) {
    require(!n_list.empty(), "Yosida study needs at least one index");
    auto reference = simulate_forward(model, control, xi, grid, paths, seed, exec);
    YosidaStudy study;
    for (double n : n_list) {
        SamplePathBundle approx = reference;
        const Matrix an = model.generator.yosida_matrix(n);
        Propagator step;
        if (model.generator.is_diagonal()) {
            step.diagonal = (an.diagonal() * grid.dt()).array().exp();
        } else {
            step = Propagator::from_matrix((an * grid.dt()).exp());
        }
        simulate_on_noise(model, control, xi, approx, exec, step);
        double acc = 0.0;
        for (std::size_t i = 0; i < paths; ++i) {
            double sup = 0.0;
            for (std::size_t k = 0; k <= grid.steps; ++k) sup = std::max(sup, (approx.x(i, k) - reference.x(i, k)).squaredNorm());
            acc += sup;
        }
        study.rows.push_back({n, std::sqrt(acc / static_cast<double>(paths))});
    }
    for (std::size_t j = 1; j < study.rows.size(); ++j)
        if (study.rows[j].n > study.rows[j - 1].n && study.rows[j].sup_error_l2 > study.rows[j - 1].sup_error_l2)
            study.nonincreasing = false;
    return study;
}

}  // namespace workbench
