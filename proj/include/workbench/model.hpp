// Galerkin-truncated controlled SEE: generator, coefficients, their state
// derivatives, and the control set. Coefficient callables write into
// caller-owned buffers so that the path loops stay allocation free.
//
// Shapes (n = state, d = noise, m = control):
//   a: n            b: n x d           f, h: scalar
//   a_x: n x n      b_x: n x (n*d), block j = d(b e_j)/dx
//   f_x, h_x: n     f_xx, h_xx: n x n
//   a_u: n x m      b_u: n x (m*d), block j = d(b e_j)/du
//   f_u: m          f_xu: n x m     f_uu: m x m

#pragma once

#include "workbench/core.hpp"
#include "workbench/hilbert.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace workbench {

struct ControlModel {
    using VecField = std::function<void(const PathContext&, const VecIn& x, const VecIn& u, VecOut out)>;
    using MatField = std::function<void(const PathContext&, const VecIn& x, const VecIn& u, MatOut out)>;
    using Scalar = std::function<double(const PathContext&, const VecIn& x, const VecIn& u)>;
    using TermScalar = std::function<double(const PathContext&, const VecIn& x)>;
    using TermVec = std::function<void(const PathContext&, const VecIn& x, VecOut out)>;
    using TermMat = std::function<void(const PathContext&, const VecIn& x, MatOut out)>;
    /// Adds <p, a_xx> + <q, b_xx> (an n x n matrix) into `out`.
    using Curvature = std::function<void(const PathContext&, const VecIn& x, const VecIn& u, const VecIn& p,
                                         const MatIn& q, MatOut out)>;

    std::string name;
    GalerkinOperator generator;
    std::size_t noise_dim = 1;
    std::size_t control_dim = 1;

    VecField drift;
    MatField diffusion;
    Scalar running_cost;
    TermScalar terminal_cost;

    MatField drift_x;
    MatField diffusion_x;
    VecField cost_x;
    TermVec terminal_x;
    MatField cost_xx;
    TermMat terminal_xx;
    /// Empty when a and b are affine in x.
    Curvature curvature_xx;

    MatField drift_u;
    MatField diffusion_u;
    VecField cost_u;
    MatField cost_xu;
    MatField cost_uu;

    double lipschitz = 1.0;
    double modulus_exponent = 1.0;
    double control_bound = 1.0;
    std::size_t control_points = 33;
    /// Whether coefficients read the Brownian path (non-Markovian).
    bool path_dependent = false;
    std::string description;

    std::size_t state_dim() const { return generator.dim(); }

    bool has_first_derivatives() const { return drift_x && diffusion_x && cost_x && terminal_x; }
    bool has_second_derivatives() const { return cost_xx && terminal_xx; }
    bool has_control_derivatives() const { return drift_u && diffusion_u && cost_u && cost_xu && cost_uu; }

    void validate() const {
        require(drift && diffusion && running_cost && terminal_cost, "model " + name + " is missing a coefficient");
        require(noise_dim >= 1, "noise dimension must be positive");
        require(control_bound > 0.0, "control bound must be positive");
        require(control_points >= 1, "control grid needs at least one point");
        require(modulus_exponent > 0.0 && modulus_exponent <= 1.0, "modulus exponent must lie in (0, 1]");
    }

    /// Tensor grid over the box [-U_m, U_m]^m.
    std::vector<Vector> control_grid() const { return control_grid(control_points); }
    std::vector<Vector> control_grid(std::size_t points) const {
        const auto axis = linspace(-control_bound, control_bound, points);
        std::vector<Vector> out;
        if (control_dim == 0) {
            out.emplace_back(Vector::Zero(0));
            return out;
        }
        std::vector<std::size_t> idx(control_dim, 0);
        while (true) {
            Vector u(static_cast<Eigen::Index>(control_dim));
            for (std::size_t c = 0; c < control_dim; ++c) u(static_cast<Eigen::Index>(c)) = axis[idx[c]];
            out.push_back(u);
            std::size_t c = 0;
            while (c < control_dim && ++idx[c] == points) idx[c++] = 0;
            if (c == control_dim) break;
        }
        return out;
    }
};

/// Feedback law u = kappa(t, omega, x), optionally with its x-Jacobian
/// (m x n). Open-loop controls are feedbacks that ignore x.
struct FeedbackControl {
    using Map = std::function<void(const PathContext&, const VecIn& x, VecOut u)>;
    using Jacobian = std::function<void(const PathContext&, const VecIn& x, MatOut du_dx)>;

    Map map;
    Jacobian jacobian;
    std::string label;

    Vector operator()(const PathContext& ctx, const VecIn& x, std::size_t control_dim) const {
        Vector u(static_cast<Eigen::Index>(control_dim));
        map(ctx, x, u);
        return u;
    }

    static FeedbackControl constant(Vector value, std::string label = "constant") {
        FeedbackControl c;
        c.map = [value](const PathContext&, const VecIn&, VecOut u) { u = value; };
        c.jacobian = [](const PathContext&, const VecIn&, MatOut j) { j.setZero(); };
        c.label = std::move(label);
        return c;
    }

    /// u = -gain(t) x; `gain` returns an m x n matrix.
    static FeedbackControl linear(std::function<Matrix(double)> gain, std::string label = "linear") {
        FeedbackControl c;
        c.map = [gain](const PathContext& ctx, const VecIn& x, VecOut u) { u.noalias() = -gain(ctx.t) * x; };
        c.jacobian = [gain](const PathContext& ctx, const VecIn&, MatOut j) { j = -gain(ctx.t); };
        c.label = std::move(label);
        return c;
    }
};

/// Inputs to coefficient evaluation at grid step k of one path.
inline PathContext make_context(double t, std::size_t step, std::span<const double> w,
                                std::span<const double> history = {}) {
    PathContext ctx;
    ctx.t = t;
    ctx.step = step;
    ctx.w = w;
    ctx.history = history;
    return ctx;
}

/// Reusable per-thread buffers for coefficient evaluation.
struct CoefficientScratch {
    Vector u, a, fx, hx, ua, ub;
    Matrix b, ax, bx, fxx, hxx, du_dx, au, bu, fxu, fuu;

    explicit CoefficientScratch(const ControlModel& m) {
        const auto n = static_cast<Eigen::Index>(m.state_dim());
        const auto d = static_cast<Eigen::Index>(m.noise_dim);
        const auto c = static_cast<Eigen::Index>(m.control_dim);
        u.resize(c);
        a.resize(n);
        fx.resize(n);
        hx.resize(n);
        ua.resize(c);
        ub.resize(c);
        b.resize(n, d);
        ax.resize(n, n);
        bx.resize(n, n * d);
        fxx.resize(n, n);
        hxx.resize(n, n);
        du_dx.resize(c, n);
        au.resize(n, c);
        bu.resize(n, c * d);
        fxu.resize(n, c);
        fuu.resize(c, c);
    }
};

}  // namespace workbench
