// Hamiltonians, the linear-quadratic Riccati oracle, value fields, the
// stochastic HJB residual and a regression estimate of the value function.
//
// Sign convention: Gamma(t, x) = <A* V_x, x> + inf_u HH(t, x, u, V_x, Phi_x, V_xx),
// so Gamma = -dV/dt for deterministic fields.

#pragma once

#include "workbench/core.hpp"
#include "workbench/forward.hpp"
#include "workbench/hilbert.hpp"
#include "workbench/model.hpp"
#include "workbench/regression.hpp"

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace workbench {

// ---------------------------------------------------------------------------
// Hamiltonians

/// HH = f + <p, a> + <q, b>_HS + 1/2 <B b, b>_HS.
inline double hamiltonian_hh(const ControlModel& model, const PathContext& ctx, const VecIn& x, const VecIn& u,
                             const VecIn& p, const MatIn& q, const MatIn& B, CoefficientScratch& s) {
    const auto n = static_cast<Eigen::Index>(model.state_dim());
    require_dims(x.size() == n && p.size() == n && q.rows() == n &&
                     q.cols() == static_cast<Eigen::Index>(model.noise_dim) && B.rows() == n && B.cols() == n &&
                     u.size() == static_cast<Eigen::Index>(model.control_dim),
                 "Hamiltonian argument dimensions do not match the model");
    model.drift(ctx, x, u, s.a);
    model.diffusion(ctx, x, u, s.b);
    return model.running_cost(ctx, x, u) + p.dot(s.a) + hs_inner(q, s.b) + 0.5 * hs_inner(B * s.b, s.b);
}

inline double hamiltonian_hh(const ControlModel& model, const PathContext& ctx, const VecIn& x, const VecIn& u,
                             const VecIn& p, const MatIn& q, const MatIn& B) {
    CoefficientScratch s(model);
    return hamiltonian_hh(model, ctx, x, u, p, q, B, s);
}

/// script-H = <p, a> + <q, b>_HS - f.
inline double hamiltonian_script(const ControlModel& model, const PathContext& ctx, const VecIn& x, const VecIn& u,
                                 const VecIn& p, const MatIn& q, CoefficientScratch& s) {
    const auto n = static_cast<Eigen::Index>(model.state_dim());
    require_dims(x.size() == n && p.size() == n && q.rows() == n &&
                     q.cols() == static_cast<Eigen::Index>(model.noise_dim) &&
                     u.size() == static_cast<Eigen::Index>(model.control_dim),
                 "Hamiltonian argument dimensions do not match the model");
    model.drift(ctx, x, u, s.a);
    model.diffusion(ctx, x, u, s.b);
    return p.dot(s.a) + hs_inner(q, s.b) - model.running_cost(ctx, x, u);
}

inline double hamiltonian_script(const ControlModel& model, const PathContext& ctx, const VecIn& x, const VecIn& u,
                                 const VecIn& p, const MatIn& q) {
    CoefficientScratch s(model);
    return hamiltonian_script(model, ctx, x, u, p, q, s);
}

struct HamiltonianMinimum {
    Vector u;
    double value = 0.0;
    std::size_t grid_index = 0;
};

/// inf over U of HH: tensor-grid minimum (ties to the lowest index) refined
/// by coordinate-wise Brent searches inside the neighbouring grid cells.
inline HamiltonianMinimum minimize_hamiltonian(const ControlModel& model, const PathContext& ctx, const VecIn& x,
                                               const VecIn& p, const MatIn& q, const MatIn& B,
                                               const std::vector<Vector>& grid, bool polish, CoefficientScratch& s) {
    require(!grid.empty(), "control grid is empty");
    HamiltonianMinimum best;
    best.value = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const double h = hamiltonian_hh(model, ctx, x, grid[c], p, q, B, s);
        if (h < best.value) {
            best.value = h;
            best.grid_index = c;
        }
    }
    best.u = grid[best.grid_index];
    if (!polish || model.control_dim == 0) return best;
    const std::size_t per_axis =
        static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(grid.size()), 1.0 / static_cast<double>(model.control_dim))));
    const double spacing = per_axis > 1 ? 2.0 * model.control_bound / static_cast<double>(per_axis - 1) : model.control_bound;
    Vector trial = best.u;
    for (int sweep = 0; sweep < 3; ++sweep) {
        for (Eigen::Index c = 0; c < trial.size(); ++c) {
            const double lo = std::max(-model.control_bound, best.u(c) - spacing);
            const double hi = std::min(model.control_bound, best.u(c) + spacing);
            auto obj = [&](double v) {
                trial(c) = v;
                return hamiltonian_hh(model, ctx, x, trial, p, q, B, s);
            };
            const auto [arg, val] = boost::math::tools::brent_find_minima(obj, lo, hi, std::numeric_limits<double>::digits);
            if (val < best.value) {
                best.value = val;
                best.u(c) = arg;
            }
            trial = best.u;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Value fields

struct ValueField {
    std::string provenance = "analytic";  // analytic | regression
    bool deterministic = true;
    std::function<double(const PathContext&, const VecIn&)> value;
    std::function<void(const PathContext&, const VecIn&, VecOut)> gradient;
    std::function<void(const PathContext&, const VecIn&, MatOut)> hessian;
    std::function<void(const PathContext&, const VecIn&, VecOut)> phi;    // empty means Phi = 0
    std::function<void(const PathContext&, const VecIn&, MatOut)> phi_x;  // empty means Phi_x = 0
    std::function<double(const PathContext&, const VecIn&)> gamma;
    /// Optional V(t, z) - V(t, x) without cancellation.
    std::function<double(const PathContext&, const VecIn& x, const VecIn& z)> increment;

    double difference(const PathContext& ctx, const VecIn& x, const VecIn& z) const {
        return increment ? increment(ctx, x, z) : value(ctx, z) - value(ctx, x);
    }
    Vector grad(const PathContext& ctx, const VecIn& x) const {
        Vector g(x.size());
        gradient(ctx, x, g);
        return g;
    }
    Matrix hess(const PathContext& ctx, const VecIn& x) const {
        Matrix h(x.size(), x.size());
        hessian(ctx, x, h);
        return h;
    }
    Matrix phi_x_at(const PathContext& ctx, const VecIn& x, std::size_t noise_dim) const {
        Matrix out = Matrix::Zero(x.size(), static_cast<Eigen::Index>(noise_dim));
        if (phi_x) phi_x(ctx, x, out);
        return out;
    }
};

inline PathContext deterministic_context(double t, std::size_t step = 0) {
    PathContext ctx;
    ctx.t = t;
    ctx.step = step;
    return ctx;
}

// ---------------------------------------------------------------------------
// Linear-quadratic oracle

/// dX = (Lambda X + M X + N u) dt + sigma dW,
/// cost E[int <R_x X, X> + <R_u u, u> dt + <G_T X(T), X(T)>].
struct LQSpec {
    std::vector<double> eigenvalues{0.0};
    Matrix m = Matrix::Zero(1, 1);
    Matrix n = Matrix::Ones(1, 1);
    Matrix sigma = Matrix::Ones(1, 1);
    Matrix rx = Matrix::Ones(1, 1);
    Matrix ru = Matrix::Ones(1, 1);
    Matrix gt = Matrix::Zero(1, 1);
    double horizon = 1.0;
    double control_bound = 5.0;
    std::size_t control_points = 33;

    std::size_t state_dim() const { return eigenvalues.size(); }
    Matrix a_total() const {
        Matrix a = m;
        for (std::size_t k = 0; k < eigenvalues.size(); ++k)
            a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) += eigenvalues[k];
        return a;
    }

    void validate() const {
        const auto n_ = static_cast<Eigen::Index>(state_dim());
        require(n_ >= 1, "LQ spec needs at least one mode");
        require_dims(m.rows() == n_ && m.cols() == n_, "LQ M must be n x n");
        require_dims(n.rows() == n_, "LQ N must have n rows");
        require_dims(sigma.rows() == n_, "LQ sigma must have n rows");
        require_dims(rx.rows() == n_ && rx.cols() == n_ && gt.rows() == n_ && gt.cols() == n_, "LQ R_x and G_T must be n x n");
        require_dims(ru.rows() == n.cols() && ru.cols() == n.cols(), "LQ R_u must be m x m");
        require(horizon > 0.0, "LQ horizon must be positive");
        Eigen::SelfAdjointEigenSolver<Matrix> eu(symmetrize(ru));
        require(eu.eigenvalues().minCoeff() > 0.0, "R_u must be positive definite");
        Eigen::SelfAdjointEigenSolver<Matrix> ex(symmetrize(rx)), eg(symmetrize(gt));
        require(ex.eigenvalues().minCoeff() >= -1e-14 && eg.eigenvalues().minCoeff() >= -1e-14,
                "R_x and G_T must be positive semidefinite");
    }
    static Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }
};

/// Backward RK4 solution of
///   P' = -(Lambda+M)^T P - P (Lambda+M) - R_x + P N R_u^{-1} N^T P,  P(T) = G_T,
///   r' = -tr(sigma^T P sigma),                                       r(T) = 0,
/// with cubic Hermite evaluation between nodes.
class RiccatiSolution {
public:
    RiccatiSolution(LQSpec spec, double max_step) : spec_(std::move(spec)) {
        spec_.validate();
        require(max_step > 0.0, "Riccati step must be positive");
        a_ = spec_.a_total();
        s_ = spec_.n * spec_.ru.inverse() * spec_.n.transpose();
        const auto intervals = static_cast<std::size_t>(std::ceil(spec_.horizon / max_step - 1e-12));
        h_ = spec_.horizon / static_cast<double>(intervals);
        p_.resize(intervals + 1);
        r_.resize(intervals + 1);
        p_[intervals] = spec_.gt;
        r_[intervals] = 0.0;
        for (std::size_t k = intervals; k > 0; --k) {
            const Matrix& p = p_[k];
            // Integrate backward: y(t - h) from y(t), y' = g.
            const Matrix k1 = rhs(p);
            const Matrix k2 = rhs(p - 0.5 * h_ * k1);
            const Matrix k3 = rhs(p - 0.5 * h_ * k2);
            const Matrix k4 = rhs(p - h_ * k3);
            const double r1 = rdot(p), r2 = rdot(p - 0.5 * h_ * k1), r3 = rdot(p - 0.5 * h_ * k2), r4 = rdot(p - h_ * k3);
            p_[k - 1] = LQSpec::symmetrize(p - h_ / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
            r_[k - 1] = r_[k] - h_ / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
            if (!p_[k - 1].allFinite() || p_[k - 1].norm() > 1e6)
                throw WorkbenchError("Riccati solution blew up near t = " + std::to_string(static_cast<double>(k - 1) * h_));
        }
    }

    const LQSpec& spec() const { return spec_; }
    double step() const { return h_; }

    Matrix rhs(const Matrix& p) const { return -a_.transpose() * p - p * a_ - spec_.rx + p * s_ * p; }
    double rdot(const Matrix& p) const { return -(spec_.sigma.transpose() * p * spec_.sigma).trace(); }

    Matrix p(double t) const {
        std::size_t k;
        double tau;
        locate(t, k, tau);
        if (tau == 0.0) return p_[k];
        const Matrix& p0 = p_[k];
        const Matrix& p1 = p_[k + 1];
        return LQSpec::symmetrize(hermite(p0, p1, rhs(p0), rhs(p1), tau));
    }
    Matrix p_dot(double t) const { return rhs(p(t)); }
    double r(double t) const {
        std::size_t k;
        double tau;
        locate(t, k, tau);
        if (tau == 0.0) return r_[k];
        Matrix a(1, 1), b(1, 1), da(1, 1), db(1, 1);
        a(0, 0) = r_[k];
        b(0, 0) = r_[k + 1];
        da(0, 0) = rdot(p_[k]);
        db(0, 0) = rdot(p_[k + 1]);
        return hermite(a, b, da, db, tau)(0, 0);
    }
    double r_dot(double t) const { return rdot(p(t)); }
    /// Optimal feedback gain: u* = -gain(t) x.
    Matrix gain(double t) const { return spec_.ru.inverse() * spec_.n.transpose() * p(t); }

private:
    void locate(double t, std::size_t& k, double& tau) const {
        require(t >= -1e-12 && t <= spec_.horizon + 1e-12, "time outside the Riccati horizon");
        const double s = std::clamp(t / h_, 0.0, static_cast<double>(p_.size() - 1));
        k = static_cast<std::size_t>(std::floor(s));
        if (k >= p_.size() - 1) {
            k = p_.size() - 1;
            tau = 0.0;
            return;
        }
        tau = s - static_cast<double>(k);
    }
    Matrix hermite(const Matrix& y0, const Matrix& y1, const Matrix& d0, const Matrix& d1, double tau) const {
        const double t2 = tau * tau, t3 = t2 * tau;
        const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + tau, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
        return h00 * y0 + h10 * h_ * d0 + h01 * y1 + h11 * h_ * d1;
    }

    LQSpec spec_;
    Matrix a_, s_;
    double h_ = 0.0;
    std::vector<Matrix> p_;
    std::vector<double> r_;
};

/// Riccati integration with step at most dt / 10.
inline std::shared_ptr<const RiccatiSolution> solve_riccati(const LQSpec& spec, const TimeGrid& grid) {
    grid.validate();
    return std::make_shared<const RiccatiSolution>(spec, grid.dt() / 10.0);
}

/// V = <P x, x> + r, V_x = 2 P x, V_xx = 2 P, Phi = 0, Gamma = -dV/dt.
inline ValueField lq_riccati_value(const LQSpec& spec, const TimeGrid& grid) {
    const auto sol = solve_riccati(spec, grid);
    ValueField f;
    f.provenance = "analytic";
    f.deterministic = true;
    f.value = [sol](const PathContext& c, const VecIn& x) { return x.dot(sol->p(c.t) * x) + sol->r(c.t); };
    f.gradient = [sol](const PathContext& c, const VecIn& x, VecOut g) { g.noalias() = 2.0 * sol->p(c.t) * x; };
    f.hessian = [sol](const PathContext& c, const VecIn&, MatOut h) { h = 2.0 * sol->p(c.t); };
    f.gamma = [sol](const PathContext& c, const VecIn& x) { return -x.dot(sol->p_dot(c.t) * x) - sol->r_dot(c.t); };
    f.increment = [sol](const PathContext& c, const VecIn& x, const VecIn& z) {
        return (sol->p(c.t) * (z - x)).dot(z + x);
    };
    return f;
}

inline FeedbackControl riccati_feedback(const LQSpec& spec, const TimeGrid& grid, double gain_scale = 1.0) {
    const auto sol = solve_riccati(spec, grid);
    auto c = FeedbackControl::linear([sol, gain_scale](double t) -> Matrix { return gain_scale * sol->gain(t); },
                                     gain_scale == 1.0 ? "riccati" : "riccati_scaled");
    return c;
}

/// The LQ problem as a ControlModel on the diagonal generator.
inline ControlModel lq_model(const LQSpec& spec, std::string name = "lq") {
    spec.validate();
    ControlModel mdl;
    mdl.name = std::move(name);
    double c = 0.0;
    for (double l : spec.eigenvalues) c = std::max(c, l);
    mdl.generator = GalerkinOperator::diagonal(spec.eigenvalues, c);
    mdl.noise_dim = static_cast<std::size_t>(spec.sigma.cols());
    mdl.control_dim = static_cast<std::size_t>(spec.n.cols());
    mdl.control_bound = spec.control_bound;
    mdl.control_points = spec.control_points;
    const Matrix M = spec.m, N = spec.n, S = spec.sigma, Rx = spec.rx, Ru = spec.ru, G = spec.gt;
    mdl.drift = [M, N](const PathContext&, const VecIn& x, const VecIn& u, VecOut a) { a.noalias() = M * x + N * u; };
    mdl.diffusion = [S](const PathContext&, const VecIn&, const VecIn&, MatOut b) { b = S; };
    mdl.running_cost = [Rx, Ru](const PathContext&, const VecIn& x, const VecIn& u) { return x.dot(Rx * x) + u.dot(Ru * u); };
    mdl.terminal_cost = [G](const PathContext&, const VecIn& x) { return x.dot(G * x); };
    mdl.drift_x = [M](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o = M; };
    mdl.diffusion_x = [](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o.setZero(); };
    const Matrix Rxs = Rx + Rx.transpose(), Rus = Ru + Ru.transpose(), Gs = G + G.transpose();
    mdl.cost_x = [Rxs](const PathContext&, const VecIn& x, const VecIn&, VecOut o) { o.noalias() = Rxs * x; };
    mdl.terminal_x = [Gs](const PathContext&, const VecIn& x, VecOut o) { o.noalias() = Gs * x; };
    mdl.cost_xx = [Rxs](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o = Rxs; };
    mdl.terminal_xx = [Gs](const PathContext&, const VecIn&, MatOut o) { o = Gs; };
    mdl.drift_u = [N](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o = N; };
    mdl.diffusion_u = [](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o.setZero(); };
    mdl.cost_u = [Rus](const PathContext&, const VecIn&, const VecIn& u, VecOut o) { o.noalias() = Rus * u; };
    mdl.cost_xu = [](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o.setZero(); };
    mdl.cost_uu = [Rus](const PathContext&, const VecIn&, const VecIn&, MatOut o) { o = Rus; };
    // Lipschitz constant of (a, b) in (x, u) on the truncation.
    mdl.lipschitz = std::max({1.0, M.norm() + N.norm(), S.norm()});
    mdl.description = "linear-quadratic";
    return mdl;
}

// ---------------------------------------------------------------------------
// HJB residual

struct HjbPoint {
    PathContext ctx;
    Vector x;
};

struct HjbReport {
    double max_abs = 0.0;
    double mean_abs = 0.0;
    std::size_t points = 0;
    std::vector<double> residuals;
};

struct HjbOptions {
    std::size_t control_points = 33;  // per control dimension
    bool polish = true;
};

/// Gamma - [<A* V_x, x> + min_U HH(t, x, u, V_x, Phi_x, V_xx)] per point.
inline HjbReport hjb_residual(const ValueField& field, const ControlModel& model, std::span<const HjbPoint> points,
                              const HjbOptions& opt = {}) {
    require(static_cast<bool>(field.gradient) && static_cast<bool>(field.hessian) && static_cast<bool>(field.gamma),
            "HJB residual needs V_x, V_xx and Gamma");
    const auto grid = model.control_grid(opt.control_points);
    CoefficientScratch s(model);
    HjbReport rep;
    const auto n = static_cast<Eigen::Index>(model.state_dim());
    Vector vx(n);
    Matrix vxx(n, n);
    for (const auto& pt : points) {
        field.gradient(pt.ctx, pt.x, vx);
        field.hessian(pt.ctx, pt.x, vxx);
        const Matrix phix = field.phi_x_at(pt.ctx, pt.x, model.noise_dim);
        const auto best = minimize_hamiltonian(model, pt.ctx, pt.x, vx, phix, vxx, grid, opt.polish, s);
        const double lhs = field.gamma(pt.ctx, pt.x);
        const double rhs = model.generator.apply_adjoint(vx).dot(pt.x) + best.value;
        rep.residuals.push_back(lhs - rhs);
        rep.max_abs = std::max(rep.max_abs, std::abs(lhs - rhs));
        rep.mean_abs += std::abs(lhs - rhs);
    }
    rep.points = points.size();
    if (rep.points) rep.mean_abs /= static_cast<double>(rep.points);
    return rep;
}

/// Tensor (t, x) grid: `nt` times in [t0, T] and `nx` points per state axis
/// in [-radius, radius].
inline std::vector<HjbPoint> hjb_grid(const TimeGrid& grid, std::size_t state_dim, std::size_t nt, std::size_t nx,
                                      double radius) {
    std::vector<HjbPoint> pts;
    const auto ts = linspace(grid.t0, grid.horizon, nt);
    const auto xs = linspace(-radius, radius, nx);
    for (double t : ts) {
        std::vector<std::size_t> idx(state_dim, 0);
        while (true) {
            Vector x(static_cast<Eigen::Index>(state_dim));
            for (std::size_t c = 0; c < state_dim; ++c) x(static_cast<Eigen::Index>(c)) = xs[idx[c]];
            pts.push_back({deterministic_context(t), x});
            std::size_t c = 0;
            while (c < state_dim && ++idx[c] == nx) idx[c++] = 0;
            if (c == state_dim) break;
        }
    }
    return pts;
}

// ---------------------------------------------------------------------------
// Regression estimate of the value function

struct ValueRegressionOptions {
    double box_radius = 3.0;    // training states uniform in [-R, R]^n
    int degree = 2;
    bool antithetic = true;
    double fd_step = 0.1;       // central-difference step, the output grid spacing
    std::uint64_t seed = 0;
    RegressionOptions regression{};
};

class RegressionValueField {
public:
    RegressionValueField() = default;
    RegressionValueField(TimeGrid grid, std::vector<RegressionSlice> slices, ControlModel::TermScalar terminal,
                         bool with_brownian, std::size_t noise_dim, std::vector<double> r2)
        : grid_(grid),
          slices_(std::move(slices)),
          terminal_(std::move(terminal)),
          with_brownian_(with_brownian),
          d_(noise_dim),
          r2_(std::move(r2)) {}

    const TimeGrid& grid() const { return grid_; }
    const std::vector<double>& slice_r2() const { return r2_; }

    double value(const PathContext& ctx, const VecIn& x) const {
        const std::size_t k = nearest_step(ctx.t);
        if (k == grid_.steps) return terminal_(ctx, x);
        return slices_[k].predict_scalar(inputs(ctx, x));
    }

    ValueField as_field(double fd_step) const {
        ValueField f;
        f.provenance = "regression";
        f.deterministic = !with_brownian_;
        const auto self = std::make_shared<RegressionValueField>(*this);
        f.value = [self](const PathContext& c, const VecIn& x) { return self->value(c, x); };
        f.gradient = [self, fd_step](const PathContext& c, const VecIn& x, VecOut g) {
            Vector z = x;
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                z(i) = x(i) + fd_step;
                const double up = self->value(c, z);
                z(i) = x(i) - fd_step;
                const double dn = self->value(c, z);
                z(i) = x(i);
                g(i) = (up - dn) / (2.0 * fd_step);
            }
        };
        f.hessian = [self, fd_step](const PathContext& c, const VecIn& x, MatOut h) {
            const double h2 = fd_step * fd_step;
            const double v0 = self->value(c, x);
            Vector z = x;
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                z(i) = x(i) + fd_step;
                const double up = self->value(c, z);
                z(i) = x(i) - fd_step;
                const double dn = self->value(c, z);
                z(i) = x(i);
                h(i, i) = (up - 2.0 * v0 + dn) / h2;
                for (Eigen::Index j = 0; j < i; ++j) {
                    double acc = 0.0;
                    for (int si : {1, -1})
                        for (int sj : {1, -1}) {
                            z(i) = x(i) + si * fd_step;
                            z(j) = x(j) + sj * fd_step;
                            acc += si * sj * self->value(c, z);
                        }
                    z(i) = x(i);
                    z(j) = x(j);
                    h(i, j) = h(j, i) = acc / (4.0 * h2);
                }
            }
        };
        return f;
    }

private:
    std::size_t nearest_step(double t) const {
        const double s = (t - grid_.t0) / grid_.dt();
        return static_cast<std::size_t>(std::clamp<long long>(std::llround(s), 0, static_cast<long long>(grid_.steps)));
    }
    Vector inputs(const PathContext& ctx, const VecIn& x) const {
        if (!with_brownian_) return x;
        Vector in(x.size() + static_cast<Eigen::Index>(d_));
        in.head(x.size()) = x;
        for (std::size_t c = 0; c < d_; ++c) in(x.size() + static_cast<Eigen::Index>(c)) = ctx.w_at(c);
        return in;
    }

    TimeGrid grid_;
    std::vector<RegressionSlice> slices_;
    ControlModel::TermScalar terminal_;
    bool with_brownian_ = false;
    std::size_t d_ = 1;
    std::vector<double> r2_;
};

/// Backward induction over a finite control family: at each slice, regress
/// f dt + V_{k+1}(X') on the slice inputs for every family member (one
/// shared design), take the pointwise minimum and refit it as V_k.
inline RegressionValueField estimate_value_regression(const ControlModel& model, const TimeGrid& grid,
                                                      std::size_t paths, std::span<const FeedbackControl> family,
                                                      const ValueRegressionOptions& opt = {}) {
    model.validate();
    grid.validate();
    require(!family.empty(), "value regression needs a non-empty control family");
    require(paths >= 2, "value regression needs at least two samples");
    require(family.size() <= 4096, "control family exceeds the enumeration cap");
    const std::size_t n = model.state_dim(), d = model.noise_dim, N = grid.steps;
    const auto en = static_cast<Eigen::Index>(n), ed = static_cast<Eigen::Index>(d);
    const bool with_w = model.path_dependent;
    const double dt = grid.dt();
    const Propagator prop = Propagator::semigroup(model.generator, dt);
    std::vector<RegressionSlice> slices(N);
    std::vector<double> r2(N, 1.0);

    Matrix inputs(static_cast<Eigen::Index>(paths), en + (with_w ? ed : 0));
    Matrix targets(static_cast<Eigen::Index>(paths), static_cast<Eigen::Index>(family.size()));
    Matrix dws(static_cast<Eigen::Index>(paths), ed);
    CoefficientScratch s(model);
    Vector pre(en), next(en), next_in(inputs.cols()), zbuf, phibuf;

    for (std::size_t k = N; k-- > 0;) {
        StreamRng rng(opt.seed, StreamTag::value_training, k);
        const double t = grid.time(k);
        for (std::size_t i = 0; i < paths; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            if (opt.antithetic && (i % 2 == 1)) {
                inputs.row(r) = inputs.row(r - 1);
                dws.row(r) = -dws.row(r - 1);
                continue;
            }
            for (Eigen::Index c = 0; c < en; ++c) inputs(r, c) = rng.uniform(-opt.box_radius, opt.box_radius);
            for (Eigen::Index c = 0; c < ed; ++c) {
                if (with_w) inputs(r, en + c) = std::sqrt(t) * rng.normal();
                dws(r, c) = std::sqrt(dt) * rng.normal();
            }
        }
        for (std::size_t i = 0; i < paths; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const Vector x = inputs.row(r).head(en).transpose();
            std::vector<double> w(d, 0.0), w1(d, 0.0);
            for (std::size_t c = 0; c < d; ++c) {
                if (with_w) w[c] = inputs(r, en + static_cast<Eigen::Index>(c));
                w1[c] = w[c] + dws(r, static_cast<Eigen::Index>(c));
            }
            PathContext ctx = make_context(t, k, w);
            ctx.path = i;
            PathContext ctx1 = make_context(grid.time(k + 1), k + 1, w1);
            ctx1.path = i;
            for (std::size_t c = 0; c < family.size(); ++c) {
                family[c].map(ctx, x, s.u);
                model.drift(ctx, x, s.u, s.a);
                model.diffusion(ctx, x, s.u, s.b);
                pre = x + s.a * dt;
                pre.noalias() += s.b * dws.row(r).transpose();
                prop.apply(pre, next);
                double cont;
                if (k + 1 == N) {
                    cont = model.terminal_cost(ctx1, next);
                } else {
                    next_in.head(en) = next;
                    for (std::size_t q = 0; q < (with_w ? d : 0); ++q) next_in(en + static_cast<Eigen::Index>(q)) = w1[q];
                    cont = slices[k + 1].predict_scalar(next_in, zbuf, phibuf);
                }
                targets(r, static_cast<Eigen::Index>(c)) = model.running_cost(ctx, x, s.u) * dt + cont;
            }
        }
        const auto per_control = RegressionSlice::fit(inputs, targets, opt.degree, opt.regression);
        Vector minimum(static_cast<Eigen::Index>(paths));
        Vector fitted(static_cast<Eigen::Index>(family.size()));
        for (std::size_t i = 0; i < paths; ++i) {
            per_control.predict(inputs.row(static_cast<Eigen::Index>(i)).transpose(), fitted);
            minimum(static_cast<Eigen::Index>(i)) = fitted.minCoeff();
        }
        slices[k] = RegressionSlice::fit(inputs, minimum, opt.degree, opt.regression);
        r2[k] = slices[k].min_r2();
    }
    return RegressionValueField(grid, std::move(slices), model.terminal_cost, with_w, d, std::move(r2));
}

}  // namespace workbench
