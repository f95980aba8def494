// Backward equations by least-squares Monte Carlo.
//
// Values (Y, p) regress pathwise multi-step targets on the slice inputs, so
// their estimates carry no accumulated regression bias. Martingale
// integrands (Z, q) are the dW loadings of a joint regression of the value
// one step ahead on [phi(x_k), phi(x_k) dW_k]; the loading estimates
// E[v_{k+1} dW_k | F_k] / dt without the noise of the raw product.

#pragma once

#include "workbench/core.hpp"
#include "workbench/forward.hpp"
#include "workbench/model.hpp"
#include "workbench/regression.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace workbench {

/// Regression inputs at step k: state coordinates, then W_k when asked.
inline Matrix regression_inputs(const SamplePathBundle& b, std::size_t k, const RegressionBasis& basis) {
    const std::size_t n = b.has_states() ? b.state_dim() : 0;
    const std::size_t d = basis.include_brownian ? b.noise_dim() : 0;
    Matrix in(static_cast<Eigen::Index>(b.paths()), static_cast<Eigen::Index>(n + d));
    for (std::size_t i = 0; i < b.paths(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (n) in.row(r).head(static_cast<Eigen::Index>(n)) = b.x(i, k).transpose();
        if (d) in.row(r).tail(static_cast<Eigen::Index>(d)) = b.w(i, k).transpose();
    }
    return in;
}

inline Vector input_row(const SamplePathBundle& b, std::size_t i, std::size_t k, const RegressionBasis& basis) {
    const std::size_t n = b.has_states() ? b.state_dim() : 0;
    const std::size_t d = basis.include_brownian ? b.noise_dim() : 0;
    Vector in(static_cast<Eigen::Index>(n + d));
    if (n) in.head(static_cast<Eigen::Index>(n)) = b.x(i, k);
    if (d) in.tail(static_cast<Eigen::Index>(d)) = b.w(i, k);
    return in;
}

namespace detail {

/// Fitted values of every sample on its own slice.
inline Matrix fitted(const RegressionSlice& s, const Matrix& inputs) {
    Matrix out(inputs.rows(), s.outputs());
    Vector row(s.outputs());
    for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
        s.predict(inputs.row(r).transpose(), row);
        out.row(r) = row.transpose();
    }
    return out;
}

/// dW loadings of `ahead` (samples x outputs) at step k; outputs of the
/// returned slice are ordered j*outputs + o.
inline RegressionSlice increment_projection(const Matrix& inputs, const Matrix& ahead, const SamplePathBundle& b,
                                            std::size_t k, int degree, const RegressionOptions& opt) {
    const auto d = static_cast<Eigen::Index>(b.noise_dim());
    Matrix dw(ahead.rows(), d);
    for (Eigen::Index r = 0; r < ahead.rows(); ++r) dw.row(r) = b.dw(static_cast<std::size_t>(r), k).transpose();
    return RegressionSlice::fit_increment_loadings(inputs, dw, ahead, degree, opt);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cost BSEE and the G-operator

struct CostPair {
    std::size_t first_step = 0;
    std::size_t last_step = 0;
    Matrix y;               // paths x (steps + 1); columns outside [first, last] unused
    std::vector<Matrix> z;  // per step: paths x d
    std::vector<double> r2; // Y-slice R^2 per step
    double y0_mean = 0.0;   // mean of Y at the first step
};

/// G^{t, xi; u}_{t, r}[eta] along the bundle: eta holds one value per path
/// at step r; the driver is the running cost along the bundle's controls.
inline CostPair g_operator(const ControlModel& model, const SamplePathBundle& bundle, std::span<const double> eta,
                           std::size_t first_step, std::size_t last_step, const RegressionBasis& basis = {},
                           const RegressionOptions& opt = {}) {
    require(bundle.has_states(), "bundle has no simulated states");
    require(first_step <= last_step && last_step <= bundle.steps(), "need t <= r <= T on the grid");
    require_dims(eta.size() == bundle.paths(), "terminal payoff needs one value per path");
    basis.validate();
    const std::size_t np = bundle.paths();
    const double dt = bundle.grid().dt();
    CostPair out;
    out.first_step = first_step;
    out.last_step = last_step;
    out.y = Matrix::Zero(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(bundle.steps() + 1));
    out.z.assign(bundle.steps(), Matrix::Zero(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(bundle.noise_dim())));
    out.r2.assign(bundle.steps() + 1, 1.0);

    Vector target(static_cast<Eigen::Index>(np));
    for (std::size_t i = 0; i < np; ++i) {
        target(static_cast<Eigen::Index>(i)) = eta[i];
        out.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(last_step)) = eta[i];
    }
    for (std::size_t k = last_step; k-- > first_step;) {
        const Matrix inputs = regression_inputs(bundle, k, basis);
        Vector running(static_cast<Eigen::Index>(np));
        for (std::size_t i = 0; i < np; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            running(r) = model.running_cost(bundle.context(i, k), bundle.x(i, k), bundle.u(i, k)) * dt;
            target(r) += running(r);
        }
        const auto y_slice = RegressionSlice::fit(inputs, target, basis.degree, opt);
        const Matrix y_fit = detail::fitted(y_slice, inputs);
        out.r2[k] = y_slice.min_r2();
        const Matrix ahead = out.y.col(static_cast<Eigen::Index>(k + 1));
        const auto z_slice = detail::increment_projection(inputs, ahead, bundle, k, basis.degree, opt);
        out.z[k] = detail::fitted(z_slice, inputs);
        out.y.col(static_cast<Eigen::Index>(k)) = y_fit.col(0);
    }
    out.y0_mean = out.y.col(static_cast<Eigen::Index>(first_step)).mean();
    return out;
}

/// (Y, Z) with Y(T) = h(X(T)); Y at step 0 estimates the cost functional.
inline CostPair solve_cost_bsee(const ControlModel& model, const SamplePathBundle& bundle,
                                const RegressionBasis& basis = {}, const RegressionOptions& opt = {}) {
    require(bundle.has_states(), "bundle has no simulated states");
    std::vector<double> eta(bundle.paths());
    for (std::size_t i = 0; i < bundle.paths(); ++i)
        eta[i] = model.terminal_cost(bundle.context(i, bundle.steps()), bundle.x(i, bundle.steps()));
    return g_operator(model, bundle, eta, 0, bundle.steps(), basis, opt);
}

// ---------------------------------------------------------------------------
// First-order adjoint

/// The one-step loading at step k tracks q near t_{k+1}, an O(dt) lag.
/// `centred` removes it by extrapolation, 2 S* L_k - (S*)^2 L2_k with L2_k
/// the dW_k loading of p_{k+2}; the last step borrows the correction of
/// step N-2.
enum class IntegrandScheme { one_step, centred };

inline const char* to_string(IntegrandScheme s) { return s == IntegrandScheme::one_step ? "one_step" : "centred"; }

struct FirstAdjoint {
    std::vector<Matrix> p;  // per step (0..N): paths x n
    std::vector<Matrix> q;  // per step (0..N-1): paths x (n*d), column j*n + i = q_ij
    std::vector<RegressionSlice> p_slices;  // per step 0..N-1
    std::vector<RegressionSlice> q_slices;
    RegressionBasis basis;
    IntegrandScheme scheme = IntegrandScheme::centred;
    /// Inflation of the q_slices standard error for the reported q.
    double q_stderr_factor = 1.0;

    std::size_t steps() const { return q.size(); }
    Vector p_at(std::size_t path, std::size_t step) const { return p[step].row(static_cast<Eigen::Index>(path)).transpose(); }
    /// q as an n x d matrix.
    Matrix q_at(std::size_t path, std::size_t step, std::size_t n) const {
        const Eigen::RowVectorXd row = q[step].row(static_cast<Eigen::Index>(path));
        return Eigen::Map<const Matrix>(row.data(), static_cast<Eigen::Index>(n), row.size() / static_cast<Eigen::Index>(n));
    }
};

/// dp = -(A* p + a_x* p + b_x* q - f_x) dt + q dW, p(T) = -h_x(X(T)), in
/// mild form along the bundle's controls.
inline FirstAdjoint solve_first_adjoint(const ControlModel& model, const SamplePathBundle& bundle,
                                        const RegressionBasis& basis = {}, const RegressionOptions& opt = {},
                                        IntegrandScheme scheme = IntegrandScheme::centred) {
    require(bundle.has_states(), "bundle has no simulated states");
    require(model.has_first_derivatives(), "first-order adjoint needs a_x, b_x, f_x and h_x");
    basis.validate();
    const std::size_t np = bundle.paths(), n = model.state_dim(), d = model.noise_dim, N = bundle.steps();
    const auto en = static_cast<Eigen::Index>(n);
    const auto ed = static_cast<Eigen::Index>(d);
    const double dt = bundle.grid().dt();
    const Propagator prop = Propagator::semigroup(model.generator, dt);

    FirstAdjoint adj;
    adj.basis = basis;
    adj.scheme = N >= 2 ? scheme : IntegrandScheme::one_step;
    adj.p.assign(N + 1, Matrix::Zero(static_cast<Eigen::Index>(np), en));
    adj.q.assign(N, Matrix::Zero(static_cast<Eigen::Index>(np), en * ed));
    adj.p_slices.resize(N);
    adj.q_slices.resize(N);

    Matrix target(static_cast<Eigen::Index>(np), en);
    {
        Vector hx(en);
        for (std::size_t i = 0; i < np; ++i) {
            model.terminal_x(bundle.context(i, N), bundle.x(i, N), hx);
            target.row(static_cast<Eigen::Index>(i)) = -hx.transpose();
        }
        adj.p[N] = target;
    }
    CoefficientScratch s(model);
    Vector drive(en), mild(en);
    for (std::size_t k = N; k-- > 0;) {
        const Matrix inputs = regression_inputs(bundle, k, basis);
        const Matrix& ahead = adj.p[k + 1];
        adj.q_slices[k] = detail::increment_projection(inputs, ahead, bundle, k, basis.degree, opt);
        adj.q[k] = detail::fitted(adj.q_slices[k], inputs);

        for (std::size_t i = 0; i < np; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const PathContext ctx = bundle.context(i, k);
            const auto xk = bundle.x(i, k);
            const auto uk = bundle.u(i, k);
            model.drift_x(ctx, xk, uk, s.ax);
            model.diffusion_x(ctx, xk, uk, s.bx);
            model.cost_x(ctx, xk, uk, s.fx);
            const Vector tk = target.row(r).transpose();
            drive.noalias() = s.ax.transpose() * tk - s.fx;
            for (Eigen::Index j = 0; j < ed; ++j)
                drive.noalias() += s.bx.middleCols(j * en, en).transpose() * adj.q[k].row(r).segment(j * en, en).transpose();
            prop.apply_transpose(tk + drive * dt, mild);
            target.row(r) = mild.transpose();
        }
        adj.p_slices[k] = RegressionSlice::fit(inputs, target, basis.degree, opt);
        adj.p[k] = detail::fitted(adj.p_slices[k], inputs);
    }
    // The p recursion above consumes the one-step loadings; only the
    // reported q is re-timed. The scheme loads dW_k through S(dt), so the
    // projection of p_{k+j} on dW_k is carried back by (S*)^j before the
    // Richardson step; without a generator this is 2 L_k - L_{k+1}.
    if (adj.scheme == IntegrandScheme::centred) {
        const auto transport = [&](Matrix& q, int times) {
            Vector col(en), out(en);
            for (Eigen::Index r = 0; r < q.rows(); ++r)
                for (Eigen::Index j = 0; j < ed; ++j) {
                    col = q.row(r).segment(j * en, en).transpose();
                    for (int t = 0; t < times; ++t) {
                        prop.apply_transpose(col, out);
                        col = out;
                    }
                    q.row(r).segment(j * en, en) = col.transpose();
                }
        };
        RegressionSlice last_two;
        for (std::size_t k = 0; k + 1 < N; ++k) {
            const Matrix inputs = regression_inputs(bundle, k, basis);
            auto slice = detail::increment_projection(inputs, adj.p[k + 2], bundle, k, basis.degree, opt);
            Matrix two = detail::fitted(slice, inputs);
            transport(adj.q[k], 1);
            transport(two, 2);
            adj.q[k] = 2.0 * adj.q[k] - two;
            if (k + 2 == N) last_two = std::move(slice);
        }
        // Last step: the one-step loading plus the correction of step N-2,
        // both read at x_{N-1}.
        const Matrix inputs = regression_inputs(bundle, N - 1, basis);
        Matrix one = detail::fitted(adj.q_slices[N - 2], inputs), two = detail::fitted(last_two, inputs);
        transport(adj.q[N - 1], 1);
        transport(one, 1);
        transport(two, 2);
        adj.q[N - 1] += one - two;
        adj.q_stderr_factor = std::sqrt(5.0);
    }
    return adj;
}

// ---------------------------------------------------------------------------
// Martingale representation

struct MartingaleDecomposition {
    std::vector<Matrix> k;         // per step: paths x d
    double max_drift_rms = 0.0;    // RMS of E[m_{k+1} | F_k] - m_k, worst step
    double reconstruction_rms = 0.0;  // RMS of m_N - m_0 - sum K dW
    bool drift_warning = false;
};

/// m holds one column per grid point (paths x (steps + 1)).
inline MartingaleDecomposition martingale_decomposition(const SamplePathBundle& bundle, const MatIn& m,
                                                        const RegressionBasis& basis = {.degree = 2, .include_brownian = true},
                                                        const RegressionOptions& opt = {},
                                                        double drift_tolerance = 1e-2) {
    require_dims(m.rows() == static_cast<Eigen::Index>(bundle.paths()) &&
                     m.cols() == static_cast<Eigen::Index>(bundle.steps() + 1),
                 "martingale values must be paths x (steps + 1)");
    const std::size_t N = bundle.steps(), np = bundle.paths();
    MartingaleDecomposition out;
    out.k.resize(N);
    for (std::size_t k = 0; k < N; ++k) {
        const Matrix inputs = regression_inputs(bundle, k, basis);
        const Matrix ahead = m.col(static_cast<Eigen::Index>(k + 1));
        const Matrix cv = m.col(static_cast<Eigen::Index>(k));
        const auto slice = detail::increment_projection(inputs, ahead, bundle, k, basis.degree, opt);
        out.k[k] = detail::fitted(slice, inputs);
        const auto drift = RegressionSlice::fit(inputs, Matrix(ahead - cv), basis.degree, opt);
        const Matrix dfit = detail::fitted(drift, inputs);
        out.max_drift_rms = std::max(out.max_drift_rms, std::sqrt(dfit.squaredNorm() / static_cast<double>(np)));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < np; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        double rec = m(r, 0);
        for (std::size_t k = 0; k < N; ++k) rec += out.k[k].row(r).dot(bundle.dw(i, k));
        acc += (m(r, static_cast<Eigen::Index>(N)) - rec) * (m(r, static_cast<Eigen::Index>(N)) - rec);
    }
    out.reconstruction_rms = std::sqrt(acc / static_cast<double>(np));
    out.drift_warning = out.max_drift_rms > drift_tolerance;
    return out;
}

}  // namespace workbench
