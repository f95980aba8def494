#include "workbench/backward.hpp"
#include "workbench/presets.hpp"
#include "workbench/value_hjb.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace workbench;

namespace {

struct ScalarLq {
    LQSpec spec = lq_scalar_spec();
    TimeGrid grid{0.0, 1.0, 50};
    ControlModel model = lq_model(spec);
    ValueField field = lq_riccati_value(spec, grid);
    SamplePathBundle bundle;

    explicit ScalarLq(std::size_t paths, std::uint64_t seed = 7)
        : bundle(simulate_forward(model, riccati_feedback(spec, grid), Vector::Ones(1), grid, paths, seed)) {}
};

// sqrt(mean |est - ref|^2) / sqrt(mean |ref|^2) over every step and path.
template <class Est, class Ref>
double normalized_rms(std::size_t steps, std::size_t paths, Est est, Ref ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < steps; ++k)
        for (std::size_t i = 0; i < paths; ++i) {
            const double r = ref(i, k);
            num += (est(i, k) - r) * (est(i, k) - r);
            den += r * r;
        }
    return std::sqrt(num / den);
}

}  // namespace

TEST(Regression, RecoversExactLinearModel) {
    Matrix phi(200, 3);
    Vector y(200);
    for (int r = 0; r < 200; ++r) {
        const double x = -1.0 + 0.01 * r;
        phi.row(r) << 1.0, x, x * x;
        y(r) = 0.5 - 2.0 * x + 3.0 * x * x;
    }
    const auto fit = lsmc_conditional_expectation(phi, y);
    EXPECT_NEAR(fit.coefficients(0, 0), 0.5, 1e-10);
    EXPECT_NEAR(fit.coefficients(1, 0), -2.0, 1e-10);
    EXPECT_NEAR(fit.coefficients(2, 0), 3.0, 1e-10);
    EXPECT_NEAR(fit.r2(0), 1.0, 1e-12);
}

TEST(Regression, GuardsAgainstDegenerateDesigns) {
    Matrix phi = Matrix::Ones(100, 2);
    const Vector y = Vector::Ones(100);
    RegressionOptions no_ridge;
    no_ridge.ridge_enabled = false;
    EXPECT_THROW(lsmc_conditional_expectation(phi, y, no_ridge), RegressionError);
    EXPECT_NO_THROW(lsmc_conditional_expectation(phi, y));
    EXPECT_THROW(lsmc_conditional_expectation(Matrix::Ones(15, 2), Vector::Ones(15)), InvalidArgument);
}

TEST(Regression, IncrementLoadingsRecoverIntegrand) {
    StreamRng rng(3, StreamTag::misc, 0);
    const int n = 20000;
    Matrix x(n, 1), dw(n, 1), y(n, 1);
    for (int r = 0; r < n; ++r) {
        x(r, 0) = rng.uniform(-1.0, 1.0);
        dw(r, 0) = 0.1 * rng.normal();
        y(r, 0) = std::cos(x(r, 0)) + (1.0 + x(r, 0) * x(r, 0)) * dw(r, 0) + 0.05 * rng.normal();
    }
    const auto s = RegressionSlice::fit_increment_loadings(x, dw, y, 2);
    Vector out(1), in(1);
    for (double v : {-0.8, 0.0, 0.6}) {
        in(0) = v;
        s.predict(in, out);
        EXPECT_NEAR(out(0), 1.0 + v * v, 0.03);
    }
}

TEST(CostBsee, MatchesRiccatiValue) {
    // V(0, 1) = P(0) + r(0) = tanh(1) + ln cosh(1).
    const ScalarLq lq(20000);
    const auto cost = solve_cost_bsee(lq.model, lq.bundle);
    const double oracle = std::tanh(1.0) + std::log(std::cosh(1.0));
    EXPECT_NEAR(cost.y0_mean, oracle, 0.01 * oracle);
}

TEST(CostBsee, GOperatorOnTrivialIntervalReturnsPayoff) {
    const ScalarLq lq(500);
    std::vector<double> eta(500);
    for (std::size_t i = 0; i < eta.size(); ++i) eta[i] = static_cast<double>(i);
    const auto g = g_operator(lq.model, lq.bundle, eta, 10, 10);
    EXPECT_EQ(g.y(17, 10), 17.0);
    EXPECT_THROW(g_operator(lq.model, lq.bundle, eta, 11, 10), InvalidArgument);
    eta.pop_back();
    EXPECT_THROW(g_operator(lq.model, lq.bundle, eta, 0, 10), DimensionMismatch);
}

TEST(CostBsee, ZeroRunningCostKeepsConditionalMean) {
    // With f = 0 and eta = W(T): Y(t) = W(t), Z = 1. Y(0) is the sample
    // mean of W(T), so its error is pure Monte Carlo noise.
    const ScalarLq lq(20000);
    auto model = lq.model;
    model.running_cost = [](const PathContext&, const VecIn&, const VecIn&) { return 0.0; };
    const std::size_t np = lq.bundle.paths();
    std::vector<double> eta(np);
    for (std::size_t i = 0; i < np; ++i) eta[i] = lq.bundle.w(i, lq.grid.steps)(0);
    const auto g = g_operator(model, lq.bundle, eta, 0, lq.grid.steps, RegressionBasis{1, true});
    EXPECT_LE(std::abs(g.y0_mean), 4.0 * stderr_of(eta));
    double zbar = 0.0;
    for (const auto& z : g.z) zbar += z.mean() / static_cast<double>(g.z.size());
    EXPECT_NEAR(zbar, 1.0, 0.02);
}

TEST(FirstAdjoint, MatchesRiccatiGradient) {
    const ScalarLq lq(100000);
    const auto adj = solve_first_adjoint(lq.model, lq.bundle);
    const auto ctx = [&](std::size_t k) { return deterministic_context(lq.grid.time(k), k); };
    const double ep = normalized_rms(
        lq.grid.steps + 1, 5000, [&](std::size_t i, std::size_t k) { return adj.p[k](static_cast<Eigen::Index>(i), 0); },
        [&](std::size_t i, std::size_t k) { return -lq.field.grad(ctx(k), lq.bundle.x(i, k))(0); });
    EXPECT_LE(ep, 0.02);
    // q = -V_xx b = -2 P(t) sigma.
    const double eq = normalized_rms(
        lq.grid.steps, 5000, [&](std::size_t i, std::size_t k) { return adj.q[k](static_cast<Eigen::Index>(i), 0); },
        [&](std::size_t, std::size_t k) { return -lq.field.hess(ctx(k), Vector::Zero(1))(0, 0); });
    EXPECT_LE(eq, 0.02);
}

TEST(FirstAdjoint, CentredSchemeRemovesIntegrandLag) {
    // The lag is a bias, so compare per-step path means against -2 P(t).
    const ScalarLq lq(20000);
    const auto bias = [&](IntegrandScheme s) {
        const auto adj = solve_first_adjoint(lq.model, lq.bundle, {}, {}, s);
        double acc = 0.0;
        for (std::size_t k = 0; k < lq.grid.steps; ++k) {
            const double ref = -lq.field.hess(deterministic_context(lq.grid.time(k), k), Vector::Zero(1))(0, 0);
            acc += std::abs(adj.q[k].col(0).mean() - ref) / std::abs(ref);
        }
        return acc / static_cast<double>(lq.grid.steps);
    };
    const double one = bias(IntegrandScheme::one_step), centred = bias(IntegrandScheme::centred);
    EXPECT_LT(centred, 0.2 * one) << "one_step " << one << " centred " << centred;
    EXPECT_LT(centred, 0.01);
}

TEST(FirstAdjoint, RequiresDerivatives) {
    const ScalarLq lq(200);
    auto model = lq.model;
    model.terminal_x = nullptr;
    EXPECT_THROW(solve_first_adjoint(model, lq.bundle), InvalidArgument);
}

TEST(Martingale, BrownianSquareHasIntegrandTwoW) {
    const ScalarLq lq(20000);
    const std::size_t N = lq.grid.steps, np = lq.bundle.paths();
    Matrix m(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(N + 1));
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t k = 0; k <= N; ++k) {
            const double w = lq.bundle.w(i, k)(0);
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = w * w - lq.grid.time(k);
        }
    const auto dec = martingale_decomposition(lq.bundle, m);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 1; k < N; ++k)
        for (std::size_t i = 0; i < 2000; ++i) {
            const double ref = 2.0 * lq.bundle.w(i, k)(0);
            num += std::pow(dec.k[k](static_cast<Eigen::Index>(i), 0) - ref, 2);
            den += ref * ref;
        }
    EXPECT_LE(std::sqrt(num / den), 0.02);
    // What is left is sum (dW^2 - dt), whose RMS is dt sqrt(2N).
    EXPECT_NEAR(dec.reconstruction_rms, lq.grid.dt() * std::sqrt(2.0 * static_cast<double>(N)), 0.01);

    // W^2 itself drifts by dt per step.
    for (std::size_t k = 0; k <= N; ++k) m.col(static_cast<Eigen::Index>(k)).array() += lq.grid.time(k);
    EXPECT_GT(martingale_decomposition(lq.bundle, m).max_drift_rms, 1.5 * dec.max_drift_rms);
}
