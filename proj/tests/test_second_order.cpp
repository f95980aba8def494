#include "workbench/backward.hpp"
#include "workbench/presets.hpp"
#include "workbench/second_order.hpp"
#include "workbench/value_hjb.hpp"

#include <gtest/gtest.h>

#include <cmath>

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

    Chain(LQSpec s, Vector xi, std::size_t paths)
        : spec(std::move(s)),
          model(lq_model(spec)),
          control(riccati_feedback(spec, grid)),
          field(lq_riccati_value(spec, grid)),
          bundle(simulate_forward(model, control, xi, grid, paths, 7)),
          first(solve_first_adjoint(model, bundle)) {}

    SecondAdjoint second(Linearization mode) const { return solve_second_adjoint(model, bundle, first, control, mode); }

    Matrix mean_p(const SecondAdjoint& adj, std::size_t k) const {
        Matrix acc = Matrix::Zero(static_cast<Eigen::Index>(adj.n), static_cast<Eigen::Index>(adj.n));
        for (std::size_t i = 0; i < bundle.paths(); ++i) acc += adj.p_at(i, k);
        return acc / static_cast<double>(bundle.paths());
    }
};

}  // namespace

TEST(SecondAdjoint, ClosedLoopScalarMatchesTanh) {
    // P solves P' = 4 tanh(T-t) P - 2 + ..., whose solution is -2 tanh(T-t).
    const Chain c(lq_scalar_spec(), Vector::Ones(1), 20000);
    const auto adj = c.second(Linearization::closed_loop);
    for (std::size_t k = 0; k < c.grid.steps; ++k) {
        const double ref = -2.0 * std::tanh(1.0 - c.grid.time(k));
        EXPECT_NEAR(c.mean_p(adj, k)(0, 0), ref, 0.02 * std::abs(ref)) << "step " << k;
    }
    EXPECT_EQ(c.mean_p(adj, c.grid.steps)(0, 0), 0.0);
}

TEST(SecondAdjoint, OpenLoopScalarIsLinearInTime) {
    // Open loop drops the feedback: P' = 2, P(T) = 0.
    const Chain c(lq_scalar_spec(), Vector::Ones(1), 2000);
    const auto adj = c.second(Linearization::open_loop);
    for (std::size_t k = 0; k <= c.grid.steps; ++k)
        EXPECT_NEAR(c.mean_p(adj, k)(0, 0), -2.0 * (1.0 - c.grid.time(k)), 1e-10);
}

TEST(SecondAdjoint, MatrixPresetConvergesToRiccatiHessian) {
    // First order in dt: the stiffer mode (lambda = -4) dominates the error.
    const auto spec = lq_matrix_spec();
    const auto model = lq_model(spec);
    const Vector xi = Eigen::Vector2d(1.0, -0.5);
    std::vector<double> errors;
    for (std::size_t steps : {25, 50, 100}) {
        const TimeGrid grid{0.0, 1.0, steps};
        const auto u = riccati_feedback(spec, grid);
        const auto b = simulate_forward(model, u, xi, grid, 20000, 7);
        const auto first = solve_first_adjoint(model, b);
        const auto adj = solve_second_adjoint(model, b, first, u, Linearization::closed_loop);
        EXPECT_LE(adj.max_asymmetry, 1e-8);
        Matrix mean = Matrix::Zero(2, 2);
        for (std::size_t i = 0; i < b.paths(); ++i) mean += adj.p_at(i, 0);
        mean /= static_cast<double>(b.paths());
        const Matrix ref = -lq_riccati_value(spec, grid).hess(deterministic_context(0.0), Vector::Zero(2));
        errors.push_back((mean - ref).norm() / ref.norm());
    }
    EXPECT_NEAR(errors[0] / errors[1], 2.0, 0.3);
    EXPECT_NEAR(errors[1] / errors[2], 2.0, 0.3);
    EXPECT_LE(errors[2], 0.02);
}

TEST(SecondAdjoint, RequiresFeedbackJacobianForClosedLoop) {
    Chain c(lq_scalar_spec(), Vector::Ones(1), 500);
    auto control = c.control;
    control.jacobian = nullptr;
    EXPECT_THROW(solve_second_adjoint(c.model, c.bundle, c.first, control, Linearization::closed_loop), InvalidArgument);
    EXPECT_NO_THROW(solve_second_adjoint(c.model, c.bundle, c.first, control, Linearization::open_loop));
}

TEST(Transposition, IdentityHoldsForFourTriples) {
    const Chain c(lq_scalar_spec(), Vector::Ones(1), 20000);
    const auto adj = c.second(Linearization::closed_loop);
    const Vector one = Vector::Ones(1), zero = Vector::Zero(1);
    const Matrix vz = Matrix::Zero(1, 1), vo = Matrix::Ones(1, 1);
    const std::vector<std::pair<TestProcessTriple, TestProcessTriple>> pairs{
        {{one, zero, vz}, {one, zero, vz}},
        {{zero, one, vz}, {one, 0.5 * one, vz}},
        {{one, zero, vo}, {one, zero, vz}},
        {{zero, 0.5 * one, vo}, {one, zero, 0.5 * vo}},
    };
    for (const auto& [a, b] : pairs) {
        const auto rep = verify_relaxed_transposition(c.model, adj, a, b, c.bundle);
        EXPECT_TRUE(rep.pass) << "residual " << rep.residual_mean << " allowance " << rep.allowance;
    }
}

TEST(Transposition, IdentityIsBilinear) {
    const Chain c(lq_scalar_spec(), Vector::Ones(1), 2000);
    const auto adj = c.second(Linearization::closed_loop);
    const TestProcessTriple a{Vector::Ones(1), Vector::Zero(1), Matrix::Ones(1, 1)};
    const TestProcessTriple b{Vector::Ones(1), Vector::Constant(1, 0.3), Matrix::Zero(1, 1)};
    const auto base = verify_relaxed_transposition(c.model, adj, a, b, c.bundle);
    const auto scaled = verify_relaxed_transposition(c.model, adj, a.scaled(3.0), b, c.bundle);
    EXPECT_NEAR(scaled.lhs_mean, 3.0 * base.lhs_mean, 1e-10 * std::abs(base.lhs_mean) + 1e-12);
    EXPECT_NEAR(scaled.rhs_mean, 3.0 * base.rhs_mean, 1e-10 * std::abs(base.rhs_mean) + 1e-12);
}

TEST(Transposition, PerturbedAdjointIsRejected) {
    const Chain c(lq_scalar_spec(), Vector::Ones(1), 20000);
    auto adj = c.second(Linearization::closed_loop);
    for (auto& pk : adj.p) pk.array() += 0.5;
    const TestProcessTriple a{Vector::Ones(1), Vector::Zero(1), Matrix::Zero(1, 1)};
    EXPECT_FALSE(verify_relaxed_transposition(c.model, adj, a, a, c.bundle).pass);
}

TEST(Transposition, ResidualShrinksWithTheStep) {
    const TestProcessTriple a{Vector::Ones(1), Vector::Zero(1), Matrix::Zero(1, 1)};
    double prev = INFINITY;
    for (std::size_t steps : {25, 50, 100}) {
        const auto spec = lq_scalar_spec();
        const TimeGrid grid{0.0, 1.0, steps};
        const auto model = lq_model(spec);
        const auto u = riccati_feedback(spec, grid);
        const auto b = simulate_forward(model, u, Vector::Ones(1), grid, 5000, 3);
        const auto first = solve_first_adjoint(model, b);
        const auto adj = solve_second_adjoint(model, b, first, u, Linearization::closed_loop);
        const double r = std::abs(verify_relaxed_transposition(model, adj, a, a, b).residual_mean);
        EXPECT_LT(r, prev);
        prev = r;
    }
}
