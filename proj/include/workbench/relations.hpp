// Checks tying the adjoint processes to the value function: the smooth
// identities V_x = -p and V_xx b + Phi_x = -q, finite-radius probes of the
// spatial super/subdifferential inclusions, the temporal superdifferential
// bound and the pointwise maximum condition.

#pragma once

#include "workbench/backward.hpp"
#include "workbench/core.hpp"
#include "workbench/forward.hpp"
#include "workbench/model.hpp"
#include "workbench/second_order.hpp"
#include "workbench/value_hjb.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace workbench {

struct RelationReport {
    std::string check;
    double statistic = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    bool valid = true;
    std::string provenance = "oracle";  // oracle | regression
    std::vector<double> per_slice;
    std::map<std::string, double> details;

    void decide() { pass = valid && statistic <= tolerance; }
};

struct RelationTolerances {
    double oracle = 0.02;
    double regression = 0.05;

    double for_field(const ValueField& f) const { return f.provenance == "analytic" ? oracle : regression; }
};

inline std::string provenance_of(const ValueField& f) { return f.provenance == "analytic" ? "oracle" : "regression"; }

/// RMS |V_x(t, Xbar) + p| over (t, path), normalized by RMS |p|. A positive
/// `optimality_gap` above the tolerance marks the bundle as non-optimal.
inline RelationReport check_first_order_relation(const ValueField& field, const FirstAdjoint& adj,
                                                 const SamplePathBundle& bundle, const RelationTolerances& tol = {},
                                                 double optimality_gap = 0.0) {
    require(static_cast<bool>(field.gradient), "first-order relation needs V_x");
    require(adj.p.size() == bundle.steps() + 1, "adjoint and bundle grids differ");
    RelationReport rep;
    rep.check = "first_order_relation";
    rep.provenance = provenance_of(field);
    rep.tolerance = tol.for_field(field);
    const auto n = static_cast<Eigen::Index>(bundle.state_dim());
    Vector g(n);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k <= bundle.steps(); ++k) {
        double sn = 0.0, sd = 0.0;
        for (std::size_t i = 0; i < bundle.paths(); ++i) {
            field.gradient(bundle.context(i, k), bundle.x(i, k), g);
            const Vector p = adj.p_at(i, k);
            sn += (g + p).squaredNorm();
            sd += p.squaredNorm();
        }
        rep.per_slice.push_back(sd > 0.0 ? std::sqrt(sn / sd) : std::sqrt(sn));
        num += sn;
        den += sd;
    }
    rep.statistic = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num / static_cast<double>(bundle.paths()));
    rep.details["rms_p"] = std::sqrt(den / static_cast<double>(bundle.paths() * (bundle.steps() + 1)));
    rep.details["optimality_gap"] = optimality_gap;
    rep.valid = optimality_gap <= rep.tolerance;
    rep.decide();
    return rep;
}

/// RMS |V_xx b(t, Xbar, ubar) + Phi_x + q| normalized by RMS |q|.
inline RelationReport check_second_order_relation(const ValueField& field, const FirstAdjoint& adj,
                                                  const ControlModel& model, const SamplePathBundle& bundle,
                                                  const RelationTolerances& tol = {}) {
    require(static_cast<bool>(field.hessian), "second-order relation needs V_xx");
    require(adj.q.size() == bundle.steps(), "adjoint and bundle grids differ");
    RelationReport rep;
    rep.check = "second_order_relation";
    rep.provenance = provenance_of(field);
    rep.tolerance = tol.for_field(field);
    const std::size_t n = model.state_dim();
    const auto en = static_cast<Eigen::Index>(n);
    CoefficientScratch s(model);
    Matrix h(en, en);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < bundle.steps(); ++k) {
        double sn = 0.0, sd = 0.0;
        for (std::size_t i = 0; i < bundle.paths(); ++i) {
            const PathContext ctx = bundle.context(i, k);
            const auto x = bundle.x(i, k);
            model.diffusion(ctx, x, bundle.u(i, k), s.b);
            field.hessian(ctx, x, h);
            const Matrix q = adj.q_at(i, k, n);
            const Matrix lhs = h * s.b + field.phi_x_at(ctx, x, model.noise_dim);
            sn += (lhs + q).squaredNorm();
            sd += q.squaredNorm();
        }
        rep.per_slice.push_back(sd > 0.0 ? std::sqrt(sn / sd) : std::sqrt(sn));
        num += sn;
        den += sd;
    }
    const double count = static_cast<double>(bundle.paths() * bundle.steps());
    rep.details["rms_q"] = std::sqrt(den / count);
    rep.details["rms_error"] = std::sqrt(num / count);
    // With no diffusion both sides vanish; the statistic is then absolute.
    rep.statistic = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num / count);
    rep.decide();
    return rep;
}

// ---------------------------------------------------------------------------
// Spatial probes

enum class ProbeMode { super, sub };

struct ProbeConfig {
    std::vector<double> radii{1e-1, 1e-2, 1e-3};
    std::size_t directions = 16;  // half quasi-random, half their antipodes
    double tolerance = 1e-10;

    void validate() const {
        require(!radii.empty(), "probe needs at least one radius");
        for (std::size_t i = 0; i < radii.size(); ++i) {
            require(radii[i] > 0.0, "probe radii must be positive");
            if (i) require(radii[i] < radii[i - 1], "probe radii must be strictly decreasing");
        }
        require(directions >= 2 && directions % 2 == 0, "probe directions must be a positive even count");
    }
};

/// Unit directions on the sphere from a Halton sequence mapped through the
/// Gaussian quantile, followed by their antipodes.
inline std::vector<Vector> probe_directions(std::size_t dim, std::size_t count) {
    static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
    require(dim >= 1 && dim <= std::size(primes), "probe dimension out of range");
    std::vector<Vector> half;
    if (dim == 1) {
        half.assign(1, Vector::Ones(1));
    } else {
        for (std::size_t i = 1; half.size() < count / 2; ++i) {
            Vector v(static_cast<Eigen::Index>(dim));
            for (std::size_t c = 0; c < dim; ++c) {
                double f = 1.0, r = 0.0;
                std::size_t idx = i;
                const int b = primes[c];
                while (idx > 0) {
                    f /= b;
                    r += f * static_cast<double>(idx % static_cast<std::size_t>(b));
                    idx /= static_cast<std::size_t>(b);
                }
                v(static_cast<Eigen::Index>(c)) = std::numbers::sqrt2 * boost::math::erf_inv(2.0 * r - 1.0);
            }
            if (v.norm() > 1e-8) half.push_back(v.normalized());
        }
    }
    std::vector<Vector> out = half;
    for (const auto& v : half) out.push_back(-v);
    return out;
}

struct ProbePoint {
    PathContext ctx;
    Vector x;
    Vector p;
    Matrix P;
};

/// Ratio [V(z) - V(x) + <p, z - x> + 1/2 <P (z - x), z - x>] / |z - x|^2.
/// super: the largest ratio at the smallest radius must stay <= tolerance.
/// sub: the smallest ratio must stay <= tolerance and the odd part
/// |ratio(d) - ratio(-d)| / 2 (the first-order mismatch) as well.
inline RelationReport spatial_differential_probe(const ValueField& field, std::span<const ProbePoint> points,
                                                 ProbeMode mode, const ProbeConfig& cfg = {}) {
    cfg.validate();
    require(!points.empty(), "probe needs at least one point");
    const std::size_t n = static_cast<std::size_t>(points.front().x.size());
    const auto dirs = probe_directions(n, cfg.directions);
    const std::size_t half = dirs.size() / 2;
    RelationReport rep;
    rep.check = mode == ProbeMode::super ? "spatial_superdifferential" : "spatial_subdifferential";
    rep.provenance = provenance_of(field);
    rep.tolerance = cfg.tolerance;
    double last_stat = 0.0;
    for (double radius : cfg.radii) {
        double hi = -INFINITY, lo = INFINITY, odd = 0.0;
        for (const auto& pt : points) {
            std::vector<double> ratios(dirs.size());
            for (std::size_t j = 0; j < dirs.size(); ++j) {
                const Vector h = radius * dirs[j];
                const Vector z = pt.x + h;
                const double num = field.difference(pt.ctx, pt.x, z) + pt.p.dot(h) + 0.5 * h.dot(pt.P * h);
                ratios[j] = num / h.squaredNorm();
                hi = std::max(hi, ratios[j]);
                lo = std::min(lo, ratios[j]);
            }
            for (std::size_t j = 0; j < half; ++j) odd = std::max(odd, 0.5 * std::abs(ratios[j] - ratios[j + half]));
        }
        const double stat = mode == ProbeMode::super ? hi : std::max(lo, odd);
        rep.per_slice.push_back(stat);
        rep.details["max_ratio_r" + std::to_string(rep.per_slice.size() - 1)] = hi;
        rep.details["min_ratio_r" + std::to_string(rep.per_slice.size() - 1)] = lo;
        rep.details["odd_part_r" + std::to_string(rep.per_slice.size() - 1)] = odd;
        last_stat = stat;
    }
    rep.statistic = last_stat;
    rep.decide();
    return rep;
}

// ---------------------------------------------------------------------------
// Temporal superdifferential

struct TemporalOptions {
    std::vector<std::size_t> offsets{8, 4, 2};  // in grid steps, decreasing
    std::size_t max_paths = 2000;
    double tolerance = 0.05;
};

/// For each offset delta, D = [V(t + delta, Xbar(t)) - V(t, Xbar(t))] / delta
/// against r = <A Xbar, p> + <p, a> + <q, b> - f - 1/2 <P b, b>. The slack
/// RMS(D - r) / RMS(r) must shrink with delta and end below tolerance.
inline RelationReport check_time_superdifferential(const ValueField& field, const FirstAdjoint& first,
                                                   const SecondAdjoint& second, const ControlModel& model,
                                                   const SamplePathBundle& bundle, const TemporalOptions& opt = {}) {
    require(field.deterministic, "temporal check needs a deterministic value field");
    require(!opt.offsets.empty(), "temporal check needs offsets");
    const std::size_t N = bundle.steps(), n = model.state_dim();
    for (std::size_t i = 0; i < opt.offsets.size(); ++i) {
        require(opt.offsets[i] >= 1 && opt.offsets[i] <= N, "offset beyond the horizon");
        if (i) require(opt.offsets[i] < opt.offsets[i - 1], "offsets must decrease");
    }
    const double dt = bundle.grid().dt();
    const std::size_t np = std::min(bundle.paths(), opt.max_paths);
    const std::size_t kmax = N - opt.offsets.front();  // same (t, path) set for every offset
    CoefficientScratch s(model);

    // r at each sampled (k, i).
    std::vector<double> r_vals;
    r_vals.reserve(kmax * np);
    for (std::size_t k = 0; k < kmax; ++k)
        for (std::size_t i = 0; i < np; ++i) {
            const PathContext ctx = bundle.context(i, k);
            const auto x = bundle.x(i, k);
            const auto u = bundle.u(i, k);
            const Vector p = first.p_at(i, k);
            const Matrix q = first.q_at(i, k, n);
            const Matrix P = second.p_at(i, k);
            model.drift(ctx, x, u, s.a);
            model.diffusion(ctx, x, u, s.b);
            const double r = model.generator.apply(x).dot(p) + p.dot(s.a) + hs_inner(q, s.b) -
                             model.running_cost(ctx, x, u) - 0.5 * hs_inner(P * s.b, s.b);
            r_vals.push_back(r);
        }
    double r_ms = 0.0;
    for (double r : r_vals) r_ms += r * r;
    const double r_rms = std::sqrt(r_ms / static_cast<double>(r_vals.size()));

    RelationReport rep;
    rep.check = "temporal_superdifferential";
    rep.provenance = provenance_of(field);
    rep.tolerance = opt.tolerance;
    double worst_excess = -INFINITY;
    for (std::size_t off : opt.offsets) {
        const double delta = static_cast<double>(off) * dt;
        double ss = 0.0, mean = 0.0;
        std::size_t idx = 0;
        for (std::size_t k = 0; k < kmax; ++k) {
            PathContext later = deterministic_context(bundle.grid().time(k + off), k + off);
            for (std::size_t i = 0; i < np; ++i, ++idx) {
                const PathContext ctx = bundle.context(i, k);
                const auto x = bundle.x(i, k);
                const double dv = field.value(later, x) - field.value(ctx, x);
                const double diff = dv / delta - r_vals[idx];
                ss += diff * diff;
                mean += diff;
            }
        }
        const double cnt = static_cast<double>(r_vals.size());
        const double slack = r_rms > 0.0 ? std::sqrt(ss / cnt) / r_rms : std::sqrt(ss / cnt);
        rep.per_slice.push_back(slack);
        const double excess = r_rms > 0.0 ? (mean / cnt) / r_rms : mean / cnt;
        worst_excess = std::max(worst_excess, excess);
        rep.details["slack_offset_" + std::to_string(off)] = slack;
        rep.details["mean_excess_offset_" + std::to_string(off)] = excess;
    }
    bool monotone = true;
    for (std::size_t j = 1; j < rep.per_slice.size(); ++j)
        if (rep.per_slice[j] >= rep.per_slice[j - 1]) monotone = false;
    rep.details["monotone"] = monotone ? 1.0 : 0.0;
    rep.details["rms_r"] = r_rms;
    rep.details["one_sided_excess"] = worst_excess;
    rep.statistic = rep.per_slice.back();
    rep.pass = monotone && rep.statistic <= opt.tolerance && worst_excess <= opt.tolerance;
    return rep;
}

// ---------------------------------------------------------------------------
// Maximum condition

struct MaximumPrincipleOptions {
    std::size_t time_slices = 10;
    std::size_t paths = 100;
    double sigmas = 3.0;
    /// Absolute floor on the allowance, relative to the Hamiltonian scale.
    double floor = 1e-12;
};

/// E(rho) = H(ubar) - H(rho) - 1/2 <P [b(ubar) - b(rho)], b(ubar) - b(rho)>
/// over the control grid at sampled (t, path). sigma_E combines regression
/// standard errors of p, q and P through |da|, |db| and |db|^2 / 2.
/// The statistic is max over samples of -E / sigma_E.
inline RelationReport check_maximum_principle(const ControlModel& model, const FirstAdjoint& first,
                                              const SecondAdjoint& second, const SamplePathBundle& bundle,
                                              std::span<const Vector> control_grid, const MaximumPrincipleOptions& opt = {}) {
    require(!control_grid.empty(), "maximum principle check needs a non-empty control grid");
    const std::size_t N = bundle.steps(), n = model.state_dim();
    const auto en = static_cast<Eigen::Index>(n);
    const std::size_t slices = std::min(opt.time_slices, N);
    const std::size_t np = std::min(opt.paths, bundle.paths());
    CoefficientScratch s(model);
    Vector a_bar(en), a_rho(en), se_p(en), se_q(en * static_cast<Eigen::Index>(model.noise_dim)), se_P(en * en);
    Matrix b_bar(en, static_cast<Eigen::Index>(model.noise_dim)), b_rho = b_bar;

    RelationReport rep;
    rep.check = "maximum_principle";
    rep.provenance = "regression";
    rep.tolerance = opt.sigmas;
    double worst = -INFINITY, min_e = INFINITY, scale = 0.0;
    std::size_t count = 0;
    for (std::size_t sidx = 0; sidx < slices; ++sidx) {
        const std::size_t k = sidx * N / slices;
        double slice_worst = -INFINITY;
        for (std::size_t i = 0; i < np; ++i) {
            const PathContext ctx = bundle.context(i, k);
            const auto x = bundle.x(i, k);
            const Vector ubar = bundle.u(i, k);
            const Vector p = first.p_at(i, k);
            const Matrix q = first.q_at(i, k, n);
            const Matrix P = second.p_at(i, k);
            const Vector in = input_row(bundle, i, k, first.basis);
            first.p_slices[k].fitted_stderr(in, se_p);
            first.q_slices[k].fitted_stderr(in, se_q);
            se_q *= first.q_stderr_factor;
            second.p_slices[k].fitted_stderr(in, se_P);
            model.drift(ctx, x, ubar, a_bar);
            model.diffusion(ctx, x, ubar, b_bar);
            const double h_bar = p.dot(a_bar) + hs_inner(q, b_bar) - model.running_cost(ctx, x, ubar);
            scale = std::max(scale, std::abs(h_bar));
            for (const auto& rho : control_grid) {
                model.drift(ctx, x, rho, a_rho);
                model.diffusion(ctx, x, rho, b_rho);
                const double h_rho = p.dot(a_rho) + hs_inner(q, b_rho) - model.running_cost(ctx, x, rho);
                const Matrix db = b_bar - b_rho;
                const double e = h_bar - h_rho - 0.5 * hs_inner(P * db, db);
                const double da = (a_bar - a_rho).norm();
                const double sigma = da * se_p.norm() + db.norm() * se_q.norm() + 0.5 * db.squaredNorm() * se_P.norm();
                const double allowance = opt.sigmas * sigma + opt.floor * (1.0 + std::abs(h_bar));
                const double z = -e / (allowance / opt.sigmas);
                slice_worst = std::max(slice_worst, z);
                min_e = std::min(min_e, e);
                ++count;
            }
        }
        rep.per_slice.push_back(slice_worst);
        worst = std::max(worst, slice_worst);
    }
    rep.statistic = worst;
    rep.details["min_expression"] = min_e;
    rep.details["samples"] = static_cast<double>(count);
    rep.details["hamiltonian_scale"] = scale;
    rep.decide();
    return rep;
}

}  // namespace workbench
