#include "workbench/experiment.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace workbench;

namespace {

ControlModel heat(std::size_t modes = 4) {
    HeatParameters hp;
    hp.modes = modes;
    return stochastic_heat_model(hp);
}

Vector heat_state(std::size_t modes) {
    Vector xi(static_cast<Eigen::Index>(modes));
    for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = 1.0 / static_cast<double>(k + 1);
    return xi;
}

bool bitwise_equal(const SamplePathBundle& a, const SamplePathBundle& b) {
    for (std::size_t i = 0; i < a.paths(); ++i)
        for (std::size_t k = 0; k <= a.steps(); ++k) {
            if (a.x(i, k) != b.x(i, k) || a.w(i, k) != b.w(i, k)) return false;
            if (k < a.steps() && (a.u(i, k) != b.u(i, k) || a.dw(i, k) != b.dw(i, k))) return false;
        }
    return true;
}

}  // namespace

TEST(Rng, StreamsAreDeterministicAndDistinct) {
    StreamRng a(7, StreamTag::brownian, 3), b(7, StreamTag::brownian, 3), c(7, StreamTag::brownian, 4),
        d(7, StreamTag::tree_families, 3), e(8, StreamTag::brownian, 3);
    const auto x = a.bits();
    EXPECT_EQ(x, b.bits());
    EXPECT_NE(x, c.bits());
    EXPECT_NE(x, d.bits());
    EXPECT_NE(x, e.bits());
}

TEST(Rng, IncrementsHaveBrownianMoments) {
    const auto b = generate_noise(TimeGrid{0.0, 1.0, 20}, 20000, 2, 11);
    const auto st = noise_statistics(b);
    EXPECT_LE(st.max_mean_ratio, 4.5);
    EXPECT_LE(st.max_variance_error, 4.5 * std::sqrt(2.0 / 19999.0));
    // W is the running sum of the increments.
    for (std::size_t k = 0; k < 20; ++k) EXPECT_NEAR(b.w(5, k + 1)(1) - b.w(5, k)(1), b.dw(5, k)(1), 1e-15);
    EXPECT_EQ(b.w(5, 0)(0), 0.0);
}

TEST(Simulation, ThreadCountDoesNotChangeOutput) {
    const auto model = heat(6);
    const auto u = single_gain_feedback(1, 6, 0, 0.5);
    const TimeGrid grid{0.0, 1.0, 40};
    const auto one = simulate_forward(model, u, heat_state(6), grid, 500, 5, Execution{1});
    const auto four = simulate_forward(model, u, heat_state(6), grid, 500, 5, Execution{4});
    EXPECT_TRUE(bitwise_equal(one, four));
    const auto other = simulate_forward(model, u, heat_state(6), grid, 500, 6, Execution{1});
    EXPECT_FALSE(bitwise_equal(one, other));
}

TEST(Simulation, EulerMeanOfLinearFeedbackMatchesRecursion) {
    // A = 0, u = -x: E X_k = (1 - dt)^k x0 exactly for the scheme.
    const auto spec = lq_scalar_spec();
    const auto model = lq_model(spec);
    const auto u = FeedbackControl::linear([](double) { return Matrix::Ones(1, 1); });
    const TimeGrid grid{0.0, 1.0, 25};
    const auto b = simulate_forward(model, u, Vector::Ones(1), grid, 40000, 3);
    std::vector<double> xt(b.paths());
    for (std::size_t i = 0; i < b.paths(); ++i) xt[i] = b.x(i, grid.steps)(0);
    const double expected = std::pow(1.0 - grid.dt(), 25.0);
    EXPECT_LE(std::abs(mean_of(xt) - expected), 4.0 * stderr_of(xt));
}

TEST(Simulation, ZeroCoefficientsGiveTheSemigroupFlowBitForBit) {
    for (const auto& op : {GalerkinOperator::dirichlet_laplacian(5), GalerkinOperator::oscillator({1.0, 2.0})}) {
        const auto zm = zero_coefficient_model(op);
        const TimeGrid grid{0.0, 1.0, 30};
        const Vector xi = Vector::LinSpaced(static_cast<Eigen::Index>(op.dim()), 1.0, 0.2);
        const auto b = simulate_forward(zm, FeedbackControl::constant(Vector::Zero(1)), xi, grid, 8, 1);
        const auto prop = Propagator::semigroup(op, grid.dt());
        Vector cur = xi, next(xi.size());
        for (std::size_t k = 0; k <= grid.steps; ++k) {
            for (std::size_t i = 0; i < b.paths(); ++i) ASSERT_TRUE(b.x(i, k) == cur);
            prop.apply(cur, next);
            cur = next;
        }
    }
}

TEST(Simulation, RejectsBadInput) {
    const auto model = heat(3);
    const auto u = FeedbackControl::constant(Vector::Zero(1));
    EXPECT_THROW(simulate_forward(model, u, Vector::Ones(2), TimeGrid{0.0, 1.0, 10}, 4, 1), DimensionMismatch);
    EXPECT_THROW(simulate_forward(model, u, Vector::Ones(3), TimeGrid{0.0, 1.0, 10}, 0, 1), InvalidArgument);
    const auto bad = FeedbackControl::constant(Vector::Constant(1, NAN));
    EXPECT_THROW(simulate_forward(model, bad, Vector::Ones(3), TimeGrid{0.0, 1.0, 10}, 4, 1), SimulationError);
}

TEST(Moments, EstimatesOnCommonNoise) {
    const auto model = heat(4);
    const auto u = single_gain_feedback(1, 4, 0, 0.5);
    const TimeGrid grid{0.0, 1.0, 40};
    auto base = simulate_forward(model, u, heat_state(4), grid, 2000, 9);
    std::vector<SamplePathBundle> variants{base, base};
    std::vector<Vector> states{heat_state(4), 2.0 * heat_state(4)};
    simulate_on_noise(model, u, states[1], variants[1]);
    const auto rep = moment_estimate_check(variants, states, 4);
    ASSERT_EQ(rep.fitted_c.size(), 2u);
    for (double c : rep.fitted_c) EXPECT_TRUE(std::isfinite(c) && c > 0.0);
    EXPECT_GT(rep.continuity_ratio_max, 0.0);
    EXPECT_THROW(moment_estimate_check(variants, states, 3), InvalidArgument);
}

TEST(ItoKunita, StandardFieldsOnTheHeatPreset) {
    const auto model = heat(4);
    const auto u = single_gain_feedback(1, 4, 0, 0.5);
    const auto b = simulate_forward(model, u, heat_state(4), TimeGrid{0.0, 1.0, 200}, 5000, 21);
    for (const auto& field : standard_test_fields(4, 1)) {
        const auto rep = ito_kunita_residual(field, model, b);
        EXPECT_TRUE(rep.pass) << field.name << " mean " << rep.mean_residual << " allowance " << rep.allowance;
    }
}

TEST(ItoKunita, MisspecifiedDriftIsDetected) {
    // Lq scalar: no stiff modes, so the allowance is tight.
    const auto spec = lq_scalar_spec();
    const auto model = lq_model(spec);
    const TimeGrid grid{0.0, 1.0, 50};
    const auto b = simulate_forward(model, riccati_feedback(spec, grid), Vector::Ones(1), grid, 20000, 4);
    auto field = standard_test_fields(1, 1)[0];
    EXPECT_TRUE(ito_kunita_residual(field, model, b).pass);
    field.gamma = [](const PathContext&, const VecIn&) { return 0.5; };
    EXPECT_FALSE(ito_kunita_residual(field, model, b).pass);
    // Dropping Phi from a field that has one breaks the identity too.
    auto bw = standard_test_fields(1, 1)[2];
    EXPECT_TRUE(ito_kunita_residual(bw, model, b).pass);
    bw.phi = nullptr;
    bw.phi_x = nullptr;
    EXPECT_FALSE(ito_kunita_residual(bw, model, b).pass);
}

TEST(ItoKunita, ResidualShrinksWithTheStep) {
    const auto model = heat(4);
    const auto u = single_gain_feedback(1, 4, 0, 0.5);
    const auto field = standard_test_fields(4, 1)[0];
    double prev = INFINITY;
    for (std::size_t steps : {50, 200, 800}) {
        const auto b = simulate_forward(model, u, heat_state(4), TimeGrid{0.0, 1.0, steps}, 2000, 8);
        const double r = std::abs(ito_kunita_residual(field, model, b).mean_residual);
        EXPECT_LT(r, prev);
        prev = r;
    }
}
