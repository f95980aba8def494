#include "workbench/backward.hpp"
#include "workbench/presets.hpp"
#include "workbench/relations.hpp"
#include "workbench/second_order.hpp"
#include "workbench/value_hjb.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace workbench;

namespace {

struct Chain {
    LQSpec spec;
    TimeGrid grid{0.0, 1.0, 50};
    ControlModel model;
    FeedbackControl control;
    ValueField field;
    SamplePathBundle bundle;
    FirstAdjoint first;
    SecondAdjoint second;

    Chain(LQSpec s, Vector xi, std::size_t paths, double gain_scale = 1.0, int degree = 2)
        : spec(std::move(s)),
          model(lq_model(spec)),
          control(riccati_feedback(spec, grid, gain_scale)),
          field(lq_riccati_value(spec, grid)),
          bundle(simulate_forward(model, control, xi, grid, paths, 7)),
          first(solve_first_adjoint(model, bundle, RegressionBasis{.degree = degree})),
          second(solve_second_adjoint(model, bundle, first, control, Linearization::closed_loop,
                                      RegressionBasis{.degree = degree})) {}
};

// The adjoints are affine in the state on both presets; an affine basis keeps
// the q noise well under the 2% relation tolerance at these path counts.
const Chain& scalar_chain() {
    static const Chain c(lq_scalar_spec(), Vector::Ones(1), 20000, 1.0, 1);
    return c;
}

const Chain& matrix_chain() {
    static const Chain c(lq_matrix_spec(), Eigen::Vector2d(1.0, -0.5), 50000, 1.0, 1);
    return c;
}

// V = 1/2 x'Mx + c'x + delta sum x_i^3 with its exact derivatives and an
// increment free of cancellation.
struct CubicField {
    Matrix m;
    Vector c;
    double delta;

    ValueField field() const {
        ValueField f;
        const auto cubic = [d = delta](const VecIn& x) { return d * x.array().cube().sum(); };
        f.value = [*this, cubic](const PathContext&, const VecIn& x) { return 0.5 * x.dot(m * x) + c.dot(x) + cubic(x); };
        f.increment = [*this](const PathContext&, const VecIn& x, const VecIn& z) {
            const Vector h = z - x;
            const Vector g = m * x + c;
            const double third = (z.array().cube() - x.array().cube()).sum();
            return g.dot(h) + 0.5 * h.dot(m * h) + delta * third;
        };
        f.gradient = [*this](const PathContext&, const VecIn& x, VecOut g) {
            g = m * x + c + 3.0 * delta * x.array().square().matrix();
        };
        f.hessian = [*this](const PathContext&, const VecIn& x, MatOut h) {
            h = m;
            h.diagonal() += 6.0 * delta * x;
        };
        return f;
    }
};

std::vector<ProbePoint> smooth_pairs(const ValueField& f, std::size_t dim, std::size_t count, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<ProbePoint> pts;
    for (std::size_t j = 0; j < count; ++j) {
        ProbePoint pt;
        pt.ctx = deterministic_context(0.0);
        pt.x = Vector::NullaryExpr(static_cast<Eigen::Index>(dim), [&] { return g(rng); });
        pt.p = -f.grad(pt.ctx, pt.x);
        pt.P = -f.hess(pt.ctx, pt.x);
        pts.push_back(pt);
    }
    return pts;
}

ValueField scaled_field(const ValueField& base, double grad_scale, double hess_scale) {
    ValueField f = base;
    f.gradient = [base, grad_scale](const PathContext& c, const VecIn& x, VecOut g) {
        base.gradient(c, x, g);
        g *= grad_scale;
    };
    f.hessian = [base, hess_scale](const PathContext& c, const VecIn& x, MatOut h) {
        base.hessian(c, x, h);
        h *= hess_scale;
    };
    return f;
}

}  // namespace

TEST(Relations, FirstAndSecondOrderHoldOnLqPresets) {
    for (const Chain* c : {&scalar_chain(), &matrix_chain()}) {
        const auto r1 = check_first_order_relation(c->field, c->first, c->bundle);
        const auto r2 = check_second_order_relation(c->field, c->first, c->model, c->bundle);
        EXPECT_TRUE(r1.pass) << c->model.state_dim() << " first " << r1.statistic;
        EXPECT_TRUE(r2.pass) << c->model.state_dim() << " second " << r2.statistic;
        EXPECT_EQ(r1.provenance, "oracle");
    }
}

TEST(Relations, WrongDerivativesAreRejected) {
    const auto& c = scalar_chain();
    const auto bad_grad = scaled_field(c.field, 1.1, 1.0);
    const auto bad_hess = scaled_field(c.field, 1.0, 1.1);
    const auto r1 = check_first_order_relation(bad_grad, c.first, c.bundle);
    const auto r2 = check_second_order_relation(bad_hess, c.first, c.model, c.bundle);
    EXPECT_FALSE(r1.pass);
    EXPECT_NEAR(r1.statistic, 0.1, 0.03);
    EXPECT_FALSE(r2.pass);
    EXPECT_NEAR(r2.statistic, 0.1, 0.03);
}

TEST(Relations, PositiveOptimalityGapInvalidatesFirstOrderCheck) {
    const auto& c = scalar_chain();
    const auto r = check_first_order_relation(c.field, c.first, c.bundle, {}, 0.5);
    EXPECT_FALSE(r.valid);
    EXPECT_FALSE(r.pass);
}

TEST(Probe, SmoothPairsPassBothModes) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    for (std::size_t dim : {1u, 2u, 5u}) {
        const auto en = static_cast<Eigen::Index>(dim);
        const Matrix a = Matrix::NullaryExpr(en, en, [&] { return g(rng); });
        const CubicField cf{a + a.transpose(), Vector::NullaryExpr(en, [&] { return g(rng); }), 1e-7};
        const auto field = cf.field();
        const auto pts = smooth_pairs(field, dim, 6, rng);
        ProbeConfig pc;
        pc.tolerance = 1e-8;
        const auto sup = spatial_differential_probe(field, pts, ProbeMode::super, pc);
        const auto sub = spatial_differential_probe(field, pts, ProbeMode::sub, pc);
        EXPECT_TRUE(sup.pass) << dim << " " << sup.statistic;
        EXPECT_TRUE(sub.pass) << dim << " " << sub.statistic;
        // The cubic remainder decays linearly with the radius.
        EXPECT_LT(std::abs(sup.per_slice.back()), std::abs(sup.per_slice.front()) + 1e-12);
    }
}

TEST(Probe, CurvatureAndSlopeCounterexamples) {
    std::mt19937_64 rng(5);
    const CubicField cf{Matrix::Identity(3, 3) * 2.0, Vector::Zero(3), 0.0};
    const auto field = cf.field();
    const auto pts = smooth_pairs(field, 3, 4, rng);
    const double eps = 0.1;

    auto raised = pts, lowered = pts, tilted = pts;
    for (auto& pt : raised) pt.P += eps * Matrix::Identity(3, 3);
    for (auto& pt : lowered) pt.P -= eps * Matrix::Identity(3, 3);
    for (auto& pt : tilted) pt.p += Eigen::Vector3d(1e-3, 0.0, 0.0);

    const auto up = spatial_differential_probe(field, raised, ProbeMode::super);
    EXPECT_FALSE(up.pass);
    EXPECT_NEAR(up.statistic, eps / 2, 1e-9);
    // Lowering P keeps a valid upper second-order bound.
    EXPECT_TRUE(spatial_differential_probe(field, lowered, ProbeMode::super).pass);
    EXPECT_FALSE(spatial_differential_probe(field, tilted, ProbeMode::super).pass);
    EXPECT_FALSE(spatial_differential_probe(field, tilted, ProbeMode::sub).pass);
}

TEST(Probe, DirectionsAreUnitAndAntipodal) {
    const auto dirs = probe_directions(4, 16);
    ASSERT_EQ(dirs.size(), 16u);
    for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_NEAR(dirs[j].norm(), 1.0, 1e-12);
        EXPECT_EQ(dirs[j], -dirs[j + 8]);
    }
}

TEST(Temporal, RiccatiFieldPasses) {
    const auto& c = scalar_chain();
    const auto r = check_time_superdifferential(c.field, c.first, c.second, c.model, c.bundle);
    EXPECT_TRUE(r.pass) << r.statistic;
    EXPECT_EQ(r.details.at("monotone"), 1.0);
}

TEST(Temporal, ShiftedTimeDerivativeFails) {
    const auto& c = scalar_chain();
    ValueField wrong = c.field;
    wrong.value = [base = c.field](const PathContext& ctx, const VecIn& x) { return base.value(ctx, x) + 0.5 * ctx.t; };
    const auto r = check_time_superdifferential(wrong, c.first, c.second, c.model, c.bundle);
    EXPECT_FALSE(r.pass);
    EXPECT_GT(r.details.at("one_sided_excess"), 0.05);
}

TEST(MaximumPrinciple, OptimalPassesAndHalvedGainFails) {
    const auto& c = scalar_chain();
    const auto grid = c.model.control_grid();
    const auto good = check_maximum_principle(c.model, c.first, c.second, c.bundle, grid);
    EXPECT_TRUE(good.pass) << good.statistic;
    EXPECT_GT(good.details.at("samples"), 0.0);

    const Chain sub(lq_scalar_spec(), Vector::Ones(1), 20000, 0.5);
    const auto bad = check_maximum_principle(sub.model, sub.first, sub.second, sub.bundle, sub.model.control_grid());
    EXPECT_GE(bad.statistic, 10.0);
    EXPECT_LT(bad.details.at("min_expression"), 0.0);
}

TEST(MaximumPrinciple, CostScalingScalesAdjointsNotTheVerdict) {
    // Multiplying every cost by lambda leaves the feedback unchanged and
    // scales p, q, P and the expression by lambda.
    const double lambda = 3.0;
    auto spec = lq_scalar_spec(1.0, 1.0, 5.0, 33, 0.5);
    const Chain base(spec, Vector::Ones(1), 4000);
    spec.rx *= lambda;
    spec.ru *= lambda;
    spec.gt *= lambda;
    const Chain scaled(spec, Vector::Ones(1), 4000);

    for (std::size_t k : {0u, 17u, 49u}) {
        for (std::size_t i : {0u, 123u, 3999u}) {
            EXPECT_NEAR(scaled.first.p_at(i, k)(0), lambda * base.first.p_at(i, k)(0), 1e-8);
            EXPECT_NEAR(scaled.first.q_at(i, k, 1)(0, 0), lambda * base.first.q_at(i, k, 1)(0, 0), 1e-8);
            EXPECT_NEAR(scaled.second.p_at(i, k)(0, 0), lambda * base.second.p_at(i, k)(0, 0), 1e-8);
        }
    }
    const auto grid = base.model.control_grid();
    const auto r0 = check_maximum_principle(base.model, base.first, base.second, base.bundle, grid);
    const auto r1 = check_maximum_principle(scaled.model, scaled.first, scaled.second, scaled.bundle, grid);
    EXPECT_NEAR(r1.statistic, r0.statistic, 1e-6 * (1.0 + std::abs(r0.statistic)));
    EXPECT_NEAR(r1.details.at("min_expression"), lambda * r0.details.at("min_expression"), 1e-8);
}

TEST(Relations, InvalidOptionsThrow) {
    const auto& c = scalar_chain();
    const std::vector<Vector> empty;
    EXPECT_THROW(check_maximum_principle(c.model, c.first, c.second, c.bundle, empty), InvalidArgument);

    const std::vector<ProbePoint> pts = {ProbePoint{deterministic_context(0.0), Vector::Zero(1), Vector::Zero(1),
                                                    Matrix::Zero(1, 1)}};
    ProbeConfig rising;
    rising.radii = {1e-3, 1e-2};
    EXPECT_THROW(spatial_differential_probe(c.field, pts, ProbeMode::super, rising), InvalidArgument);
    ProbeConfig odd;
    odd.directions = 5;
    EXPECT_THROW(spatial_differential_probe(c.field, pts, ProbeMode::super, odd), InvalidArgument);
    EXPECT_THROW(spatial_differential_probe(c.field, std::vector<ProbePoint>{}, ProbeMode::super), InvalidArgument);

    TemporalOptions t;
    t.offsets = {2, 4};
    EXPECT_THROW(check_time_superdifferential(c.field, c.first, c.second, c.model, c.bundle, t), InvalidArgument);
    t.offsets = {60};
    EXPECT_THROW(check_time_superdifferential(c.field, c.first, c.second, c.model, c.bundle, t), InvalidArgument);
}
