// Second-order adjoint (P, Q) as a matrix BSDE on the truncation, the test
// equation, and a Monte-Carlo check of the relaxed-transposition identity
// that characterizes (P, Q) by duality.

#pragma once

#include "workbench/backward.hpp"
#include "workbench/core.hpp"
#include "workbench/forward.hpp"
#include "workbench/model.hpp"
#include "workbench/regression.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace workbench {

/// open_loop differentiates the coefficients with the control frozen.
/// closed_loop differentiates x -> coefficient(x, kappa(x)) through the
/// feedback; it assumes a and b affine in (x, u) and kappa affine in x.
enum class Linearization { open_loop, closed_loop };

inline const char* to_string(Linearization l) { return l == Linearization::open_loop ? "open_loop" : "closed_loop"; }

/// J, K_j and F = -Hxx along the bundle, vectorized column-major per path.
struct LinearizationTrack {
    std::vector<Matrix> j;  // per step: paths x n^2
    std::vector<Matrix> k;  // per step: paths x (n^2 d), block j
    std::vector<Matrix> f;  // per step 0..N: paths x n^2; step N holds -h_xx

    static Matrix unvec(const Matrix& store, std::size_t path, Eigen::Index offset, Eigen::Index n) {
        Matrix out(n, n);
        for (Eigen::Index c = 0; c < n; ++c)
            for (Eigen::Index r = 0; r < n; ++r) out(r, c) = store(static_cast<Eigen::Index>(path), offset + c * n + r);
        return out;
    }
    static void vec_into(Matrix& store, std::size_t path, Eigen::Index offset, const Matrix& m) {
        const Eigen::Index n = m.rows();
        for (Eigen::Index c = 0; c < n; ++c)
            for (Eigen::Index r = 0; r < n; ++r) store(static_cast<Eigen::Index>(path), offset + c * n + r) = m(r, c);
    }
};

/// Closed-loop or open-loop J, K, Hxx at one point.
struct LocalLinearization {
    Matrix j;
    std::vector<Matrix> k;
    Matrix hxx;
};

inline LocalLinearization linearize(const ControlModel& model, const FeedbackControl& control, Linearization mode,
                                    const PathContext& ctx, const VecIn& x, const VecIn& u, const VecIn& p,
                                    const MatIn& q, CoefficientScratch& s) {
    const auto n = static_cast<Eigen::Index>(model.state_dim());
    const auto d = static_cast<Eigen::Index>(model.noise_dim);
    const auto m = static_cast<Eigen::Index>(model.control_dim);
    LocalLinearization out;
    model.drift_x(ctx, x, u, s.ax);
    model.diffusion_x(ctx, x, u, s.bx);
    model.cost_xx(ctx, x, u, s.fxx);
    out.j = s.ax;
    out.k.resize(static_cast<std::size_t>(d));
    for (Eigen::Index jn = 0; jn < d; ++jn) out.k[static_cast<std::size_t>(jn)] = s.bx.middleCols(jn * n, n);
    out.hxx = -s.fxx;
    if (model.curvature_xx) model.curvature_xx(ctx, x, u, p, q, out.hxx);
    if (mode == Linearization::closed_loop && m > 0) {
        require(model.has_control_derivatives(), "closed-loop linearization needs the control derivatives");
        require(static_cast<bool>(control.jacobian), "closed-loop linearization needs the feedback Jacobian");
        control.jacobian(ctx, x, s.du_dx);
        model.drift_u(ctx, x, u, s.au);
        model.diffusion_u(ctx, x, u, s.bu);
        model.cost_xu(ctx, x, u, s.fxu);
        model.cost_uu(ctx, x, u, s.fuu);
        out.j.noalias() += s.au * s.du_dx;
        for (Eigen::Index jn = 0; jn < d; ++jn)
            out.k[static_cast<std::size_t>(jn)].noalias() += s.bu.middleCols(jn * m, m) * s.du_dx;
        const Matrix cross = s.fxu * s.du_dx;
        out.hxx -= cross + cross.transpose() + s.du_dx.transpose() * s.fuu * s.du_dx;
    }
    return out;
}

struct SecondAdjoint {
    std::vector<Matrix> p;  // per step 0..N: paths x n^2 (column-major vec of P)
    std::vector<Matrix> q;  // per step 0..N-1: paths x (n^2 d), block j = vec Q_j
    std::vector<RegressionSlice> p_slices;
    std::vector<RegressionSlice> q_slices;
    LinearizationTrack track;
    Linearization mode = Linearization::closed_loop;
    double max_asymmetry = 0.0;  // before symmetrization
    bool asymmetry_warning = false;
    std::size_t n = 0;
    std::size_t d = 0;

    Matrix p_at(std::size_t path, std::size_t step) const {
        return LinearizationTrack::unvec(p[step], path, 0, static_cast<Eigen::Index>(n));
    }
    Matrix q_at(std::size_t path, std::size_t step, std::size_t j) const {
        const auto en = static_cast<Eigen::Index>(n);
        return LinearizationTrack::unvec(q[step], path, static_cast<Eigen::Index>(j) * en * en, en);
    }
};

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// dP = -[(A+J)* P + P (A+J) + sum K_j* P K_j + sum (K_j* Q_j + Q_j K_j) + Hxx] dt
///      + sum Q_j dW_j,   P(T) = -h_xx(X(T)).
inline SecondAdjoint solve_second_adjoint(const ControlModel& model, const SamplePathBundle& bundle,
                                          const FirstAdjoint& first, const FeedbackControl& control,
                                          Linearization mode = Linearization::closed_loop,
                                          const RegressionBasis& basis = {}, const RegressionOptions& opt = {}) {
    require(bundle.has_states(), "bundle has no simulated states");
    require(model.has_first_derivatives() && model.has_second_derivatives(),
            "second-order adjoint needs first and second state derivatives");
    require(first.steps() == bundle.steps(), "first-order adjoint is on a different grid");
    basis.validate();
    const std::size_t np = bundle.paths(), n = model.state_dim(), d = model.noise_dim, N = bundle.steps();
    const auto en = static_cast<Eigen::Index>(n);
    const auto en2 = en * en;
    const auto ed = static_cast<Eigen::Index>(d);
    const double dt = bundle.grid().dt();
    const Matrix s_mat = Propagator::semigroup(model.generator, dt).as_matrix();

    SecondAdjoint adj;
    adj.mode = mode;
    adj.n = n;
    adj.d = d;
    adj.p.assign(N + 1, Matrix::Zero(static_cast<Eigen::Index>(np), en2));
    adj.q.assign(N, Matrix::Zero(static_cast<Eigen::Index>(np), en2 * ed));
    adj.p_slices.resize(N);
    adj.q_slices.resize(N);
    adj.track.j.assign(N, Matrix::Zero(static_cast<Eigen::Index>(np), en2));
    adj.track.k.assign(N, Matrix::Zero(static_cast<Eigen::Index>(np), en2 * ed));
    adj.track.f.assign(N + 1, Matrix::Zero(static_cast<Eigen::Index>(np), en2));

    Matrix target(static_cast<Eigen::Index>(np), en2);
    {
        Matrix hxx(en, en);
        for (std::size_t i = 0; i < np; ++i) {
            model.terminal_xx(bundle.context(i, N), bundle.x(i, N), hxx);
            LinearizationTrack::vec_into(target, i, 0, Matrix(-hxx));
            LinearizationTrack::vec_into(adj.track.f[N], i, 0, Matrix(-hxx));
        }
        adj.p[N] = target;
    }
    CoefficientScratch s(model);
    for (std::size_t k = N; k-- > 0;) {
        const Matrix inputs = regression_inputs(bundle, k, basis);
        const Matrix& ahead = adj.p[k + 1];
        adj.q_slices[k] = detail::increment_projection(inputs, ahead, bundle, k, basis.degree, opt);
        adj.q[k] = detail::fitted(adj.q_slices[k], inputs);
        // Q_j inherits symmetry from P in exact arithmetic.
        for (std::size_t i = 0; i < np; ++i)
            for (Eigen::Index j = 0; j < ed; ++j) {
                const Matrix qj = LinearizationTrack::unvec(adj.q[k], i, j * en2, en);
                LinearizationTrack::vec_into(adj.q[k], i, j * en2, symmetrized(qj));
            }

        for (std::size_t i = 0; i < np; ++i) {
            const PathContext ctx = bundle.context(i, k);
            const auto xk = bundle.x(i, k);
            const auto uk = bundle.u(i, k);
            const Vector pk = first.p_at(i, k);
            const Matrix qk = first.q_at(i, k, n);
            const auto lin = linearize(model, control, mode, ctx, xk, uk, pk, qk, s);
            LinearizationTrack::vec_into(adj.track.j[k], i, 0, lin.j);
            for (Eigen::Index j = 0; j < ed; ++j)
                LinearizationTrack::vec_into(adj.track.k[k], i, j * en2, lin.k[static_cast<std::size_t>(j)]);
            LinearizationTrack::vec_into(adj.track.f[k], i, 0, Matrix(-lin.hxx));

            const Matrix t_next = LinearizationTrack::unvec(target, i, 0, en);
            Matrix drive = lin.j.transpose() * t_next + t_next * lin.j + lin.hxx;
            for (Eigen::Index j = 0; j < ed; ++j) {
                const Matrix& kj = lin.k[static_cast<std::size_t>(j)];
                const Matrix qj = LinearizationTrack::unvec(adj.q[k], i, j * en2, en);
                drive.noalias() += kj.transpose() * t_next * kj + kj.transpose() * qj + qj * kj;
            }
            const Matrix mild = s_mat.transpose() * (t_next + drive * dt) * s_mat;
            LinearizationTrack::vec_into(target, i, 0, symmetrized(mild));
        }
        adj.p_slices[k] = RegressionSlice::fit(inputs, target, basis.degree, opt);
        adj.p[k] = detail::fitted(adj.p_slices[k], inputs);
        for (std::size_t i = 0; i < np; ++i) {
            const Matrix pk = LinearizationTrack::unvec(adj.p[k], i, 0, en);
            adj.max_asymmetry = std::max(adj.max_asymmetry, (pk - pk.transpose()).cwiseAbs().maxCoeff());
            LinearizationTrack::vec_into(adj.p[k], i, 0, symmetrized(pk));
        }
    }
    adj.asymmetry_warning = adj.max_asymmetry > 1e-8;
    return adj;
}

// ---------------------------------------------------------------------------
// Test equation and the relaxed-transposition identity

/// Initial state and constant drift/diffusion forcings of the test equation.
struct TestProcessTriple {
    Vector xi;
    Vector u;
    Matrix v;  // n x d

    TestProcessTriple scaled(double a) const { return {a * xi, a * u, a * v}; }
};

/// phi_{k+1} = S(dt)(phi_k + (J phi_k + u) dt + sum_j (K_j phi_k + v_j) dW_j);
/// returns per step paths x n.
inline std::vector<Matrix> solve_test_equation(const GalerkinOperator& generator, const LinearizationTrack& track,
                                               const TestProcessTriple& triple, const SamplePathBundle& bundle) {
    const std::size_t np = bundle.paths(), N = bundle.steps(), d = bundle.noise_dim();
    const auto en = static_cast<Eigen::Index>(generator.dim());
    require_dims(triple.xi.size() == en && triple.u.size() == en && triple.v.rows() == en &&
                     triple.v.cols() == static_cast<Eigen::Index>(d),
                 "test triple dimensions do not match the model");
    require(track.j.size() == N, "linearization track is on a different grid");
    const Propagator prop = Propagator::semigroup(generator, bundle.grid().dt());
    const double dt = bundle.grid().dt();
    std::vector<Matrix> phi(N + 1, Matrix(static_cast<Eigen::Index>(np), en));
    Vector pre(en), next(en);
    for (std::size_t i = 0; i < np; ++i) {
        Vector cur = triple.xi;
        phi[0].row(static_cast<Eigen::Index>(i)) = cur.transpose();
        for (std::size_t k = 0; k < N; ++k) {
            const Matrix jm = LinearizationTrack::unvec(track.j[k], i, 0, en);
            pre = cur + (jm * cur + triple.u) * dt;
            const auto dw = bundle.dw(i, k);
            for (std::size_t j = 0; j < d; ++j) {
                const Matrix kj = LinearizationTrack::unvec(track.k[k], i, static_cast<Eigen::Index>(j) * en * en, en);
                pre.noalias() += (kj * cur + triple.v.col(static_cast<Eigen::Index>(j))) * dw(static_cast<Eigen::Index>(j));
            }
            prop.apply(pre, next);
            if (!next.allFinite()) throw SimulationError("non-finite state in test equation", i, k);
            cur = next;
            phi[k + 1].row(static_cast<Eigen::Index>(i)) = cur.transpose();
        }
    }
    return phi;
}

struct TranspositionReport {
    double lhs_mean = 0.0;
    double rhs_mean = 0.0;
    double residual_mean = 0.0;
    double stderr_residual = 0.0;
    double scale = 0.0;
    double allowance = 0.0;
    bool pass = false;
};

/// Both sides of
///   E<P_T phi1(T), phi2(T)> - E int <F phi1, phi2>
///     = E<P(0) xi1, xi2> + E int [<P u1, phi2> + <P phi1, u2>
///       + sum_j (<P K_j phi1, v2j> + <P v1j, K_j phi2 + v2j>
///                + <v1j, Q_j phi2> + <Q_j phi1, v2j>)]
/// with left-point quadrature on the bundle's noise.
inline TranspositionReport verify_relaxed_transposition(const ControlModel& model, const SecondAdjoint& second,
                                                        const TestProcessTriple& t1, const TestProcessTriple& t2,
                                                        const SamplePathBundle& bundle) {
    require(second.p.size() == bundle.steps() + 1, "second-order adjoint and bundle grids differ");
    const std::size_t np = bundle.paths(), N = bundle.steps(), d = bundle.noise_dim();
    const auto en = static_cast<Eigen::Index>(model.state_dim());
    const double dt = bundle.grid().dt();
    const auto phi1 = solve_test_equation(model.generator, second.track, t1, bundle);
    const auto phi2 = solve_test_equation(model.generator, second.track, t2, bundle);
    std::vector<double> lhs(np), rhs(np), resid(np), mag(np);
    for (std::size_t i = 0; i < np; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Matrix pt = second.p_at(i, N);
        double l = (pt * phi1[N].row(r).transpose()).dot(phi2[N].row(r).transpose());
        double rh = (second.p_at(i, 0) * t1.xi).dot(t2.xi);
        double m = std::abs(l) + std::abs(rh);
        for (std::size_t k = 0; k < N; ++k) {
            const Vector a1 = phi1[k].row(r).transpose(), a2 = phi2[k].row(r).transpose();
            const Vector b1 = phi1[k + 1].row(r).transpose(), b2 = phi2[k + 1].row(r).transpose();
            const Matrix fk = LinearizationTrack::unvec(second.track.f[k], i, 0, en);
            const Matrix pk = second.p_at(i, k), pn = second.p_at(i, k + 1);
            // Lebesgue terms by the trapezoid rule; noise-coupled terms stay at
            // the left point.
            const double lterm = 0.5 * ((fk * a1).dot(a2) + (fk * b1).dot(b2)) * dt;
            l -= lterm;
            double acc = 0.5 * ((pk * t1.u).dot(a2) + (pk * a1).dot(t2.u) + (pn * t1.u).dot(b2) + (pn * b1).dot(t2.u));
            for (std::size_t j = 0; j < d; ++j) {
                const auto jj = static_cast<Eigen::Index>(j);
                const Matrix kj = LinearizationTrack::unvec(second.track.k[k], i, jj * en * en, en);
                const Matrix qj = second.q_at(i, k, j);
                const Vector v1 = t1.v.col(jj), v2 = t2.v.col(jj);
                acc += (pk * kj * a1).dot(v2) + (pk * v1).dot(kj * a2 + v2) + v1.dot(qj * a2) + (qj * a1).dot(v2);
            }
            rh += acc * dt;
            m += std::abs(lterm) + std::abs(acc) * dt;
        }
        lhs[i] = l;
        rhs[i] = rh;
        resid[i] = l - rh;
        mag[i] = m;
    }
    TranspositionReport rep;
    rep.lhs_mean = mean_of(lhs);
    rep.rhs_mean = mean_of(rhs);
    rep.residual_mean = mean_of(resid);
    rep.stderr_residual = stderr_of(resid);
    rep.scale = mean_of(mag);
    rep.allowance = discretization_constant(model.generator, bundle.grid().horizon - bundle.grid().t0) * dt * rep.scale;
    rep.pass = std::abs(rep.residual_mean) <= 3.0 * rep.stderr_residual + rep.allowance;
    return rep;
}

}  // namespace workbench
