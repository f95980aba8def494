// Named suites: fixed pipelines from a config to a report.

#pragma once

#include "workbench/backward.hpp"
#include "workbench/config.hpp"
#include "workbench/core.hpp"
#include "workbench/forward.hpp"
#include "workbench/io.hpp"
#include "workbench/presets.hpp"
#include "workbench/prob_tree.hpp"
#include "workbench/relations.hpp"
#include "workbench/report.hpp"
#include "workbench/second_order.hpp"
#include "workbench/value_hjb.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace workbench {

// ---------------------------------------------------------------------------
// Presets as simulation setups

/// A model, the feedback it is simulated under and its initial state.
struct PresetSetup {
    std::string name;
    ControlModel model;
    FeedbackControl control;
    Vector xi;
    std::optional<LQSpec> lq;
};

inline bool is_lq_preset(const std::string& name) { return name == "lq_scalar" || name == "lq_matrix"; }

inline LQSpec lq_spec_for(const ExperimentConfig& cfg, const std::string& preset) {
    if (preset == "lq_scalar")
        return lq_scalar_spec(cfg.lq.sigma, cfg.grid.horizon, cfg.controls.bound, cfg.controls.points, cfg.lq.terminal);
    if (preset == "lq_matrix") return lq_matrix_spec(cfg.grid.horizon, cfg.controls.bound, cfg.controls.points);
    throw InvalidArgument("not an LQ preset: " + preset);
}

/// u = -gain x with a single nonzero gain entry.
inline FeedbackControl single_gain_feedback(std::size_t m, std::size_t n, std::size_t col, double gain) {
    Matrix g = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    g(0, static_cast<Eigen::Index>(col)) = gain;
    return FeedbackControl::linear([g](double) { return g; }, "fixed_gain");
}

/// `own_state` lets the config's initial_state override the default.
inline PresetSetup make_preset(const ExperimentConfig& cfg, const std::string& name, const TimeGrid& grid,
                               bool own_state) {
    PresetSetup s;
    s.name = name;
    if (is_lq_preset(name)) {
        s.lq = lq_spec_for(cfg, name);
        s.model = lq_model(*s.lq, name);
        s.control = riccati_feedback(*s.lq, grid);
        s.xi = name == "lq_scalar" ? Vector::Ones(1) : Vector(Eigen::Vector2d(1.0, -0.5));
    } else if (name == "stochastic_heat") {
        HeatParameters hp;
        hp.modes = cfg.galerkin_dim;
        hp.reaction = cfg.heat.reaction;
        hp.noise_level = cfg.heat.noise_level;
        hp.additive = cfg.heat.additive;
        hp.control_bound = cfg.controls.bound;
        hp.control_points = cfg.controls.points;
        hp.modulus_exponent = cfg.heat.modulus_exponent;
        s.model = stochastic_heat_model(hp);
        s.control = single_gain_feedback(1, hp.modes, 0, 0.5);
        s.xi.resize(static_cast<Eigen::Index>(hp.modes));
        for (Eigen::Index k = 0; k < s.xi.size(); ++k) s.xi(k) = 1.0 / static_cast<double>(k + 1);
    } else if (name == "stochastic_wave") {
        WaveParameters wp;
        wp.modes = cfg.galerkin_dim;
        wp.control_bound = cfg.controls.bound;
        s.model = stochastic_wave_model(wp);
        s.control = single_gain_feedback(1, 2 * wp.modes, 1, 0.5);
        s.xi = Vector::Zero(static_cast<Eigen::Index>(2 * wp.modes));
        for (Eigen::Index k = 0; k < s.xi.size(); k += 2) s.xi(k) = 0.5 / static_cast<double>(k / 2 + 1);
    } else {
        throw InvalidArgument("preset " + name + " is not a simulation preset");
    }
    if (own_state && !cfg.initial_state.empty()) {
        require_dims(cfg.initial_state.size() == s.model.state_dim(),
                     "initial_state has " + std::to_string(cfg.initial_state.size()) + " entries, preset " + name +
                         " needs " + std::to_string(s.model.state_dim()));
        s.xi = Eigen::Map<const Vector>(cfg.initial_state.data(), static_cast<Eigen::Index>(cfg.initial_state.size()));
    }
    return s;
}

/// Polynomial fields for the Ito-Kunita battery; the third reads W.
inline std::vector<TestField> standard_test_fields(std::size_t n, std::size_t d) {
    const auto en = static_cast<Eigen::Index>(n), ed = static_cast<Eigen::Index>(d);
    std::vector<TestField> out;

    TestField sq;
    sq.name = "squared_norm";
    sq.value = [](const PathContext&, const VecIn& x) { return x.squaredNorm(); };
    sq.gradient = [](const PathContext&, const VecIn& x, VecOut g) { g = 2.0 * x; };
    sq.hessian = [en](const PathContext&, const VecIn&, MatOut h) { h = 2.0 * Matrix::Identity(en, en); };
    sq.gamma = [](const PathContext&, const VecIn&) { return 0.0; };
    out.push_back(sq);

    Vector c(en);
    for (Eigen::Index i = 0; i < en; ++i) c(i) = 1.0 / static_cast<double>(i + 1);
    TestField lin;
    lin.name = "decaying_linear";
    lin.value = [c](const PathContext& ctx, const VecIn& x) { return std::exp(-ctx.t) * c.dot(x); };
    lin.gradient = [c](const PathContext& ctx, const VecIn&, VecOut g) { g = std::exp(-ctx.t) * c; };
    lin.hessian = [](const PathContext&, const VecIn&, MatOut h) { h.setZero(); };
    lin.gamma = [c](const PathContext& ctx, const VecIn& x) { return -std::exp(-ctx.t) * c.dot(x); };
    out.push_back(lin);

    // F = W_1 x_1 + t |x|^2 / 2: dF = |x|^2 / 2 dt + x_1 dW_1 at frozen x.
    TestField bw;
    bw.name = "brownian_weighted";
    bw.value = [](const PathContext& ctx, const VecIn& x) { return ctx.w_at(0) * x(0) + 0.5 * ctx.t * x.squaredNorm(); };
    bw.gradient = [](const PathContext& ctx, const VecIn& x, VecOut g) {
        g = ctx.t * x;
        g(0) += ctx.w_at(0);
    };
    bw.hessian = [en](const PathContext& ctx, const VecIn&, MatOut h) { h = ctx.t * Matrix::Identity(en, en); };
    bw.gamma = [](const PathContext&, const VecIn& x) { return 0.5 * x.squaredNorm(); };
    bw.phi = [](const PathContext&, const VecIn& x, VecOut p) {
        p.setZero();
        p(0) = x(0);
    };
    bw.phi_x = [en, ed](const PathContext&, const VecIn&, MatOut px) {
        px = Matrix::Zero(en, ed);
        px(0, 0) = 1.0;
    };
    out.push_back(bw);

    TestField q4;
    q4.name = "quartic";
    q4.value = [](const PathContext&, const VecIn& x) { return 0.25 * x.squaredNorm() * x.squaredNorm(); };
    q4.gradient = [](const PathContext&, const VecIn& x, VecOut g) { g = x.squaredNorm() * x; };
    q4.hessian = [en](const PathContext&, const VecIn& x, MatOut h) {
        h = x.squaredNorm() * Matrix::Identity(en, en) + 2.0 * x * x.transpose();
    };
    q4.gamma = [](const PathContext&, const VecIn&) { return 0.0; };
    out.push_back(q4);
    return out;
}

// ---------------------------------------------------------------------------
// Suite plumbing

class SuiteRun {
public:
    explicit SuiteRun(const ExperimentConfig& cfg) : cfg(cfg), exec{cfg.threads}, mark_(Clock::now()), start_(mark_) {}

    /// Stamps the time since the previous record.
    void add(CheckRecord r) {
        const auto now = Clock::now();
        r.wall_ms = std::chrono::duration<double, std::milli>(now - mark_).count();
        mark_ = now;
        checks.push_back(std::move(r));
    }
    void artifact(std::string name, std::function<void(const std::filesystem::path&)> write) {
        artifacts.push_back({std::move(name), std::move(write)});
    }
    double elapsed_ms() const { return std::chrono::duration<double, std::milli>(Clock::now() - start_).count(); }

    const ExperimentConfig& cfg;
    Execution exec;
    std::vector<CheckRecord> checks;
    std::vector<Artifact> artifacts;

private:
    using Clock = std::chrono::steady_clock;
    Clock::time_point mark_, start_;
};

inline RegressionOptions regression_options(const ExperimentConfig& cfg) {
    RegressionOptions o;
    o.ridge_enabled = cfg.regression.ridge;
    return o;
}

inline Linearization linearization_of(const ExperimentConfig& cfg) {
    return cfg.second_order.linearization == "open_loop" ? Linearization::open_loop : Linearization::closed_loop;
}

/// Simulation plus first- and second-order adjoints on an LQ preset.
struct LqPipeline {
    PresetSetup setup;
    TimeGrid grid;
    ValueField field;
    std::shared_ptr<SamplePathBundle> bundle;
    std::shared_ptr<FirstAdjoint> first;
    std::shared_ptr<SecondAdjoint> second;
    RegressionBasis basis;
    RegressionOptions opt;
};

/// Preset, Riccati field and simulated bundle; no adjoints yet.
inline LqPipeline lq_forward(const ExperimentConfig& cfg, const Execution& exec, const std::string& suite,
                             double gain_scale = 1.0) {
    require(is_lq_preset(cfg.preset), "suite " + suite + " needs an LQ preset (lq_scalar or lq_matrix)");
    LqPipeline p;
    p.grid = cfg.time_grid();
    p.setup = make_preset(cfg, cfg.preset, p.grid, true);
    if (gain_scale != 1.0) p.setup.control = riccati_feedback(*p.setup.lq, p.grid, gain_scale);
    p.field = lq_riccati_value(*p.setup.lq, p.grid);
    p.basis = RegressionBasis{cfg.regression.degree, p.setup.model.path_dependent};
    p.opt = regression_options(cfg);
    p.bundle = std::make_shared<SamplePathBundle>(
        simulate_forward(p.setup.model, p.setup.control, p.setup.xi, p.grid, cfg.paths, cfg.seed, exec));
    return p;
}

inline void lq_adjoints(const ExperimentConfig& cfg, LqPipeline& p, bool with_second = true) {
    p.first = std::make_shared<FirstAdjoint>(solve_first_adjoint(p.setup.model, *p.bundle, p.basis, p.opt));
    if (with_second)
        p.second = std::make_shared<SecondAdjoint>(solve_second_adjoint(p.setup.model, *p.bundle, *p.first, p.setup.control,
                                                                        linearization_of(cfg), p.basis, p.opt));
}

inline LqPipeline lq_pipeline(const ExperimentConfig& cfg, const Execution& exec, const std::string& suite,
                              double gain_scale = 1.0, bool with_second = true) {
    auto p = lq_forward(cfg, exec, suite, gain_scale);
    lq_adjoints(cfg, p, with_second);
    return p;
}

inline RelationTolerances relation_tolerances(const ExperimentConfig& cfg) {
    return {cfg.tolerances.oracle, cfg.tolerances.regression};
}

inline CheckRecord maximum_principle_record(const ExperimentConfig& cfg, const LqPipeline& p, const std::string& name) {
    MaximumPrincipleOptions o;
    o.time_slices = cfg.maximum_principle.time_slices;
    o.paths = cfg.maximum_principle.paths;
    o.sigmas = cfg.tolerances.mp_sigmas;
    const auto grid = p.setup.model.control_grid(cfg.controls.points);
    return record_from(check_maximum_principle(p.setup.model, *p.first, *p.second, *p.bundle, grid, o), name);
}

inline void lq_artifacts(SuiteRun& run, const LqPipeline& p, bool with_value_grid) {
    const std::size_t rows = run.cfg.output.csv_paths;
    if (with_value_grid) {
        auto pts = std::make_shared<std::vector<HjbPoint>>(
            hjb_grid(p.grid, p.setup.model.state_dim(), run.cfg.hjb.times, run.cfg.hjb.points, run.cfg.hjb.radius));
        auto field = p.field;
        run.artifact("value_grid.csv", [pts, field](const std::filesystem::path& f) { write_value_grid_csv(field, *pts, f); });
    }
    auto first = p.first;
    auto grid = p.grid;
    run.artifact("adjoint_p.csv", [first, grid, rows](const std::filesystem::path& f) {
        write_step_table_csv(first->p, grid, "p", f, rows);
    });
    run.artifact("adjoint_q.csv", [first, grid, rows](const std::filesystem::path& f) {
        write_step_table_csv(first->q, grid, "q", f, rows);
    });
    if (p.second) {
        auto second = p.second;
        run.artifact("second_adjoint_P.csv", [second, grid, rows](const std::filesystem::path& f) {
            write_second_adjoint_csv(*second, grid, f, rows);
        });
    }
}

// ---------------------------------------------------------------------------
// Suites

inline std::vector<TreePreset> configured_trees(const ExperimentConfig& cfg) {
    std::vector<TreePreset> out;
    for (const auto& name : cfg.tree.presets)
        out.push_back(tree_preset(name, cfg.tree.depth ? cfg.tree.depth : default_tree_depth(name)));
    for (const auto& c : cfg.tree.custom) out.push_back(tree_from_parameters(c));
    return out;
}

inline void run_tree_dpp(SuiteRun& run) {
    const auto& cfg = run.cfg;
    const auto trees = configured_trees(cfg);
    for (std::size_t pi = 0; pi < trees.size(); ++pi) {
        const auto& tp = trees[pi];
        const std::size_t depth = tp.tree.depth(), controls = tp.model.controls.size();

        // DPP identity on every (t, r) pair small enough to enumerate.
        double gap = 0.0, enumerated = 0.0, root_value = 0.0;
        std::size_t checked = 0, skipped = 0;
        for (std::size_t t = 0; t <= depth; ++t)
            for (std::size_t r = t; r <= depth; ++r) {
                if (tree_policy_count(tp.tree, controls, t, r) > static_cast<double>(cfg.tree.cap)) {
                    ++skipped;
                    continue;
                }
                const auto rep = tree_dpp_value(tp.model, tp.tree, t, r, cfg.tree.cap);
                gap = std::max(gap, rep.dpp_gap);
                enumerated += static_cast<double>(rep.policies_enumerated);
                if (t == 0) root_value = rep.value_nodes[0][0];
                ++checked;
            }
        auto rec = make_record("tree_dpp/" + tp.name, gap, cfg.tolerances.tree);
        rec.details = {{"pairs_checked", double(checked)}, {"pairs_skipped", double(skipped)},
                       {"policies_enumerated", enumerated}, {"root_value", root_value}, {"depth", double(depth)}};
        run.add(rec);

        // Interchange of conditional expectation and essinf on random
        // families, plus the family of constant-policy costs.
        double igap = 0.0, largest = 0.0;
        for (std::size_t f = 0; f < cfg.tree.families; ++f) {
            StreamRng rng(cfg.seed, StreamTag::tree_families, pi * 1'000'000 + f);
            const std::size_t level = 1 + static_cast<std::size_t>(rng.bits() % depth);
            const std::size_t target = static_cast<std::size_t>(rng.bits() % level);
            std::vector<TreeRandomVariable> family;
            if (f == 0) {
                for (std::size_t c = 0; c < controls; ++c) {
                    const auto pol = TreeControlPolicy::constant(tp.tree, c);
                    family.push_back(tree_policy_cost_rv(tp.model, tp.tree, pol, level, tree_rollout(tp.model, tp.tree, pol)));
                }
            } else {
                const std::size_t size = 2 + static_cast<std::size_t>(rng.bits() % 5);
                for (std::size_t g = 0; g < size; ++g) {
                    TreeRandomVariable rv{level, std::vector<double>(tp.tree.nodes(level))};
                    for (double& v : rv.values) v = rng.uniform(-1.0, 1.0);
                    family.push_back(std::move(rv));
                }
            }
            const auto rep = verify_essinf_interchange(tp.tree, family, target);
            igap = std::max(igap, rep.max_abs_gap);
            largest = std::max(largest, static_cast<double>(rep.closed_family_size));
        }
        auto irec = make_record("essinf_interchange/" + tp.name, igap, cfg.tolerances.tree);
        irec.details = {{"families", double(cfg.tree.families)}, {"largest_closed_family", largest}};
        run.add(irec);

        // Switching between two policies on atoms equals the atomwise minimum.
        const auto u1 = TreeControlPolicy::constant(tp.tree, 0);
        const auto u2 = TreeControlPolicy::constant(tp.tree, controls - 1);
        double sgap = 0.0;
        for (std::size_t level = 0; level < depth; ++level) {
            const auto res = pairwise_min_control(tp.model, tp.tree, u1, u2, level);
            for (std::size_t i = 0; i < res.cost_switched.values.size(); ++i)
                sgap = std::max(sgap, std::abs(res.cost_switched.values[i] -
                                               std::min(res.cost_u1.values[i], res.cost_u2.values[i])));
        }
        run.add(make_record("pairwise_min/" + tp.name, sgap, cfg.tolerances.tree));
    }
}

inline CheckRecord value_regression_record(const ExperimentConfig& cfg, const LqPipeline& p) {
    const auto& model = p.setup.model;
    const std::size_t n = model.state_dim(), m = model.control_dim;
    std::vector<FeedbackControl> family;
    for (double g : linspace(cfg.value.gain_min, cfg.value.gain_max, cfg.value.gains)) {
        const Matrix gain = g * Matrix::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        family.push_back(FeedbackControl::linear([gain](double) { return gain; }, "gain"));
    }
    ValueRegressionOptions o;
    o.box_radius = cfg.value.box_radius;
    o.degree = cfg.regression.degree;
    o.seed = cfg.seed;
    o.regression = p.opt;
    const auto est = estimate_value_regression(model, p.grid, cfg.value.paths, family, o);
    const Vector dir = Vector::Ones(static_cast<Eigen::Index>(n)).normalized();
    const PathContext c0 = deterministic_context(p.grid.t0);
    double worst = 0.0;
    std::vector<double> errs;
    for (double s : linspace(-cfg.value.check_radius, cfg.value.check_radius, cfg.value.check_points)) {
        const Vector x = s * dir;
        const double v = p.field.value(c0, x);
        const double e = std::abs(est.value(c0, x) - v) / std::abs(v);
        errs.push_back(e);
        worst = std::max(worst, e);
    }
    auto rec = make_record("value_regression", worst, cfg.tolerances.value, "regression");
    rec.series = errs;
    rec.details = {{"paths", double(cfg.value.paths)}, {"family_size", double(family.size())}};
    return rec;
}

inline void run_lq_verify(SuiteRun& run) {
    const auto& cfg = run.cfg;
    const auto p = lq_pipeline(cfg, run.exec, "lq-verify");
    const auto& model = p.setup.model;
    const auto tol = relation_tolerances(cfg);

    const auto cost = solve_cost_bsee(model, *p.bundle, p.basis, p.opt);
    const double v0 = p.field.value(deterministic_context(p.grid.t0), p.setup.xi);
    auto crec = make_record("cost_value", std::abs(cost.y0_mean - v0) / std::abs(v0), tol.oracle);
    crec.details = {{"y0", cost.y0_mean}, {"v0", v0}};
    run.add(crec);

    run.add(record_from(check_first_order_relation(p.field, *p.first, *p.bundle, tol)));
    run.add(record_from(check_second_order_relation(p.field, *p.first, model, *p.bundle, tol)));

    const auto pts = hjb_grid(p.grid, model.state_dim(), cfg.hjb.times, cfg.hjb.points, cfg.hjb.radius);
    const auto hjb = hjb_residual(p.field, model, pts, HjbOptions{cfg.controls.points, true});
    auto hrec = make_record("hjb_residual", hjb.max_abs, cfg.tolerances.hjb);
    hrec.details = {{"mean_abs", hjb.mean_abs}, {"points", double(hjb.points)}};
    run.add(hrec);

    run.add(maximum_principle_record(cfg, p, "maximum_principle"));
    if (cfg.value.enabled) run.add(value_regression_record(cfg, p));
    lq_artifacts(run, p, true);
}

inline void run_relations(SuiteRun& run) {
    const auto& cfg = run.cfg;
    // The probes need only the field and the bundle.
    auto p = lq_forward(cfg, run.exec, "relations");
    const auto& model = p.setup.model;
    const std::size_t N = p.grid.steps, n = model.state_dim();

    // Probe points along the optimal bundle with the smooth pair (-V_x, -V_xx).
    std::vector<ProbePoint> points, perturbed;
    for (std::size_t j = 0; j < cfg.probe.points; ++j) {
        const std::size_t k = j * N / cfg.probe.points;
        const std::size_t i = j % p.bundle->paths();
        ProbePoint pt;
        pt.ctx = deterministic_context(p.grid.time(k), k);
        pt.x = p.bundle->x(i, k);
        pt.p = -p.field.grad(pt.ctx, pt.x);
        pt.P = -p.field.hess(pt.ctx, pt.x);
        points.push_back(pt);
        pt.P += cfg.probe.epsilon * Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        perturbed.push_back(pt);
    }
    ProbeConfig pc;
    pc.radii = cfg.probe.radii;
    pc.directions = cfg.probe.directions;
    pc.tolerance = cfg.tolerances.probe;
    run.add(record_from(spatial_differential_probe(p.field, points, ProbeMode::super, pc)));
    run.add(record_from(spatial_differential_probe(p.field, points, ProbeMode::sub, pc)));
    const auto counter = spatial_differential_probe(p.field, perturbed, ProbeMode::super, pc);
    auto crec = make_record("spatial_counterexample", counter.statistic, cfg.tolerances.counterexample, "oracle", true);
    crec.details = counter.details;
    crec.details["epsilon"] = cfg.probe.epsilon;
    crec.series = counter.per_slice;
    run.add(crec);

    lq_adjoints(cfg, p);
    TemporalOptions to;
    to.offsets = cfg.temporal.offsets;
    to.max_paths = cfg.temporal.max_paths;
    to.tolerance = cfg.tolerances.temporal;
    run.add(record_from(check_time_superdifferential(p.field, *p.first, *p.second, model, *p.bundle, to)));

    run.add(maximum_principle_record(cfg, p, "maximum_principle"));
    // Halving the optimal gain must be detected.
    const auto sub = lq_pipeline(cfg, run.exec, "relations", 0.5);
    auto srec = maximum_principle_record(cfg, sub, "maximum_principle_suboptimal");
    srec.tolerance = cfg.tolerances.suboptimal_margin;
    srec.sense = "at_least";
    srec.pass = std::isfinite(srec.statistic) && srec.statistic >= srec.tolerance;
    run.add(srec);
}

inline void run_second_order(SuiteRun& run) {
    const auto& cfg = run.cfg;
    const auto p = lq_pipeline(cfg, run.exec, "second-order");
    const auto& model = p.setup.model;
    const std::size_t N = p.grid.steps, n = model.state_dim(), d = model.noise_dim;
    const auto en = static_cast<Eigen::Index>(n);
    const double T = p.grid.horizon;

    // Path-averaged P against -V_xx of the Riccati field.
    std::vector<Matrix> pbar(N + 1, Matrix::Zero(en, en));
    for (std::size_t k = 0; k <= N; ++k) {
        for (std::size_t i = 0; i < p.bundle->paths(); ++i) pbar[k] += p.second->p_at(i, k);
        pbar[k] /= static_cast<double>(p.bundle->paths());
    }
    const auto relative_errors = [&](const std::function<Matrix(double)>& reference) {
        std::vector<double> ref_norm(N + 1), err(N + 1);
        double peak = 0.0;
        for (std::size_t k = 0; k <= N; ++k) {
            const Matrix r = reference(p.grid.time(k));
            ref_norm[k] = r.norm();
            err[k] = (pbar[k] - r).norm();
            peak = std::max(peak, ref_norm[k]);
        }
        std::vector<double> rel;
        for (std::size_t k = 0; k <= N; ++k)
            if (ref_norm[k] >= 1e-3 * peak) rel.push_back(err[k] / ref_norm[k]);
        return rel;
    };
    const auto max_of = [](const std::vector<double>& v) { return v.empty() ? NAN : *std::max_element(v.begin(), v.end()); };

    const bool closed = linearization_of(cfg) == Linearization::closed_loop;
    const auto rel = relative_errors([&](double t) { return Matrix(-p.field.hess(deterministic_context(t), Vector::Zero(en))); });
    auto orec = make_record("second_adjoint_oracle", max_of(rel), cfg.tolerances.oracle);
    orec.series = rel;
    orec.details = {{"max_asymmetry", p.second->max_asymmetry}, {"closed_loop", closed ? 1.0 : 0.0}};
    if (!closed) orec.details["expected_mismatch"] = 1.0;
    run.add(orec);

    const bool scalar_closed_form = cfg.preset == "lq_scalar" && cfg.lq.terminal == 0.0;
    if (scalar_closed_form) {
        const auto expected = [closed, T](double t) {
            return Matrix::Constant(1, 1, closed ? -2.0 * std::tanh(T - t) : -2.0 * (T - t));
        };
        const auto crel = relative_errors(expected);
        auto crec = make_record(closed ? "second_adjoint_closed_form" : "second_adjoint_open_loop_form", max_of(crel),
                                cfg.tolerances.oracle);
        crec.series = crel;
        run.add(crec);
        if (closed && cfg.second_order.open_loop_reference) {
            const auto open = solve_second_adjoint(model, *p.bundle, *p.first, p.setup.control, Linearization::open_loop,
                                                   p.basis, p.opt);
            for (std::size_t k = 0; k <= N; ++k) {
                pbar[k].setZero();
                for (std::size_t i = 0; i < p.bundle->paths(); ++i) pbar[k] += open.p_at(i, k);
                pbar[k] /= static_cast<double>(p.bundle->paths());
            }
            const auto orel = relative_errors([T](double t) { return Matrix::Constant(1, 1, -2.0 * (T - t)); });
            auto rec = make_record("second_adjoint_open_loop_reference", max_of(orel), cfg.tolerances.oracle);
            rec.series = orel;
            run.add(rec);
        }
    }

    // Relaxed transposition identity on four pairs of test triples.
    const Vector e1 = Vector::Unit(en, 0), ones = Vector::Ones(en), zero = Vector::Zero(en);
    const Matrix vz = Matrix::Zero(en, static_cast<Eigen::Index>(d)), vo = Matrix::Ones(en, static_cast<Eigen::Index>(d));
    const std::vector<std::tuple<std::string, TestProcessTriple, TestProcessTriple>> pairs{
        {"initial_states", {e1, zero, vz}, {ones, zero, vz}},
        {"drift_forcing", {zero, ones, vz}, {e1, 0.5 * ones, vz}},
        {"diffusion_forcing", {e1, zero, vo}, {ones, zero, vz}},
        {"both_diffusions", {zero, 0.5 * ones, vo}, {e1, zero, 0.5 * vo}},
    };
    for (const auto& [label, t1, t2] : pairs) {
        const auto rep = verify_relaxed_transposition(model, *p.second, t1, t2, *p.bundle);
        const double bound = 3.0 * rep.stderr_residual + rep.allowance;
        auto rec = make_record("transposition/" + label, std::abs(rep.residual_mean) / bound, 1.0, "regression");
        rec.details = {{"lhs_mean", rep.lhs_mean},       {"rhs_mean", rep.rhs_mean}, {"residual_mean", rep.residual_mean},
                       {"stderr", rep.stderr_residual}, {"allowance", rep.allowance}, {"scale", rep.scale}};
        run.add(rec);
    }
    lq_artifacts(run, p, false);
}

inline void run_yosida(SuiteRun& run) {
    const auto& cfg = run.cfg;
    require(!is_tree_preset(cfg.preset), "suite yosida needs a simulation preset");
    const auto grid = cfg.time_grid();
    const auto s = make_preset(cfg, cfg.preset, grid, true);
    const auto study = yosida_convergence_study(s.model, s.control, s.xi, cfg.yosida.n, grid, cfg.yosida.paths, cfg.seed, run.exec);
    double worst_ratio = 0.0;
    CheckRecord rec;
    for (std::size_t j = 0; j < study.rows.size(); ++j) {
        rec.series.push_back(study.rows[j].sup_error_l2);
        rec.details["error_n" + std::to_string(static_cast<long long>(study.rows[j].n))] = study.rows[j].sup_error_l2;
        if (j > 0 && study.rows[j - 1].sup_error_l2 > 0.0)
            worst_ratio = std::max(worst_ratio, study.rows[j].sup_error_l2 / study.rows[j - 1].sup_error_l2);
    }
    auto mrec = make_record("yosida_monotone", worst_ratio, 1.0, "statistical");
    mrec.pass = study.nonincreasing;
    mrec.series = rec.series;
    mrec.details = rec.details;
    run.add(mrec);

    // Scalar A = -1 without forcing: X = e^{-t}, X^n = e^{-nt/(n+1)}.
    const auto zm = zero_coefficient_model(GalerkinOperator::diagonal({-1.0}), 1);
    const double nn = cfg.yosida.closed_form_n;
    const std::vector<double> one{nn};
    const auto cf = yosida_convergence_study(zm, FeedbackControl::constant(Vector::Zero(1)), Vector::Ones(1), one, grid, 1,
                                             cfg.seed, run.exec);
    double expected = 0.0;
    for (std::size_t k = 0; k <= grid.steps; ++k) {
        const double t = grid.time(k) - grid.t0;
        expected = std::max(expected, std::abs(std::exp(-t) - std::exp(-nn * t / (nn + 1.0))));
    }
    auto crec = make_record("yosida_closed_form", std::abs(cf.rows[0].sup_error_l2 - expected), cfg.tolerances.closed_form);
    crec.details = {{"error", cf.rows[0].sup_error_l2}, {"expected", expected}, {"n", nn}};
    run.add(crec);
}

inline void run_ito_kunita(SuiteRun& run) {
    const auto& cfg = run.cfg;
    const auto grid = cfg.time_grid();
    for (const auto& name : cfg.ito_kunita.presets) {
        const auto s = make_preset(cfg, name, grid, name == cfg.preset);
        const auto bundle = simulate_forward(s.model, s.control, s.xi, grid, cfg.ito_kunita.paths, cfg.seed, run.exec);
        for (const auto& field : standard_test_fields(s.model.state_dim(), s.model.noise_dim)) {
            const auto rep = ito_kunita_residual(field, s.model, bundle, run.exec);
            const double bound = 3.0 * rep.stderr_residual + rep.allowance;
            auto rec = make_record("ito_kunita/" + name + "/" + field.name, std::abs(rep.mean_residual) / bound, 1.0,
                                   "statistical");
            rec.details = {{"mean_residual", rep.mean_residual}, {"stderr", rep.stderr_residual},
                           {"allowance", rep.allowance},         {"scale", rep.scale}};
            run.add(rec);
        }
    }
}

inline void run_simulate(SuiteRun& run) {
    const auto& cfg = run.cfg;
    require(!is_tree_preset(cfg.preset), "suite simulate needs a simulation preset");
    const auto grid = cfg.time_grid();
    const auto s = make_preset(cfg, cfg.preset, grid, true);
    auto bundle = std::make_shared<SamplePathBundle>(simulate_forward(s.model, s.control, s.xi, grid, cfg.paths, cfg.seed, run.exec));

    const auto st = noise_statistics(*bundle);
    run.add(make_record("noise_mean", st.max_mean_ratio, cfg.tolerances.noise_mean_sigmas, "statistical"));
    const double var_tol = cfg.tolerances.noise_mean_sigmas * std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(cfg.paths - 1, 1)));
    run.add(make_record("noise_variance", st.max_variance_error, var_tol, "statistical"));

    // Moment and continuity diagnostics on common noise; the bound itself is
    // not asserted, only that the estimates are finite.
    std::vector<SamplePathBundle> variants;
    std::vector<Vector> states;
    for (double scale : {1.0, 1.5, 2.0}) {
        SamplePathBundle v = *bundle;
        const Vector xi = scale * s.xi;
        if (scale != 1.0) simulate_on_noise(s.model, s.control, xi, v, run.exec);
        variants.push_back(std::move(v));
        states.push_back(xi);
    }
    const auto mom = moment_estimate_check(variants, states, cfg.simulate.moment_exponent);
    double cmax = 0.0;
    for (double c : mom.fitted_c) cmax = std::max(cmax, c);
    auto mrec = make_record("moment_estimates", cmax, std::numeric_limits<double>::max(), "statistical");
    mrec.series = mom.fitted_c;
    mrec.details = {{"fitted_c_spread", mom.fitted_c_spread},
                    {"continuity_ratio_max", mom.continuity_ratio_max},
                    {"continuity_ratio_spread", mom.continuity_ratio_spread}};
    run.add(mrec);

    if (cfg.simulate.zero_coefficients_check) {
        const auto zm = zero_coefficient_model(s.model.generator, s.model.noise_dim);
        const std::size_t zp = std::min<std::size_t>(cfg.paths, 64);
        const auto zb = simulate_forward(zm, FeedbackControl::constant(Vector::Zero(1)), s.xi, grid, zp, cfg.seed, run.exec);
        const auto prop = Propagator::semigroup(s.model.generator, grid.dt());
        Vector cur = s.xi, next(cur.size());
        double mismatches = 0.0;
        for (std::size_t k = 0; k <= grid.steps; ++k) {
            for (std::size_t i = 0; i < zp; ++i)
                for (Eigen::Index c = 0; c < cur.size(); ++c)
                    if (zb.x(i, k)(c) != cur(c)) mismatches += 1.0;
            prop.apply(cur, next);
            cur = next;
        }
        run.add(make_record("semigroup_flow_exact", mismatches, 0.0));
    }

    const std::size_t rows = cfg.output.csv_paths;
    run.artifact("paths.csv", [bundle, rows](const std::filesystem::path& f) { write_bundle_csv(*bundle, f, rows); });
    if (cfg.output.binary)
        run.artifact("paths.bin", [bundle](const std::filesystem::path& f) { write_bundle_binary(*bundle, f); });
}

/// Runs `cfg.suite` and returns its report; artifacts are written later by
/// emit_report.
inline ReportDocument run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    require(!cfg.suite.empty(), "config names no suite");
    SuiteRun run(cfg);
    if (cfg.suite == "tree-dpp")
        run_tree_dpp(run);
    else if (cfg.suite == "lq-verify")
        run_lq_verify(run);
    else if (cfg.suite == "relations")
        run_relations(run);
    else if (cfg.suite == "second-order")
        run_second_order(run);
    else if (cfg.suite == "yosida")
        run_yosida(run);
    else if (cfg.suite == "ito-kunita")
        run_ito_kunita(run);
    else if (cfg.suite == "simulate")
        run_simulate(run);
    else
        throw InvalidArgument("unknown suite: " + cfg.suite);

    ReportDocument doc;
    doc.suite = cfg.suite;
    doc.timestamp = utc_timestamp();
    doc.config = Json(cfg);
    doc.checks = std::move(run.checks);
    doc.artifacts = std::move(run.artifacts);
    doc.wall_ms = run.elapsed_ms();
    doc.finalize();
    return doc;
}

}  // namespace workbench
