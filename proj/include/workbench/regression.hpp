// Least-squares Monte Carlo: polynomial regression of pathwise targets on
// standardized inputs, used to realize conditional expectations.

#pragma once

#include "workbench/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace workbench {

struct RegressionOptions {
    bool ridge_enabled = true;
    /// Ridge switches on when the design condition number exceeds this.
    double ridge_threshold = 1e8;
    /// Ridge weight relative to the mean Gram eigenvalue.
    double ridge_scale = 1e-10;
    /// Enforce paths > 10 x features.
    bool require_oversampling = true;
};

struct LeastSquaresFit {
    Matrix coefficients;  // features x outputs
    Matrix gram_inverse;  // (Phi^T Phi + ridge)^{-1}
    Vector r2;            // per output
    Vector sigma2;        // residual variance per output
    double condition = 1.0;
    double ridge = 0.0;
};

/// Fits targets (rows = samples) on the design matrix `phi`.
inline LeastSquaresFit lsmc_conditional_expectation(const MatIn& phi, const MatIn& targets,
                                                    const RegressionOptions& opt = {}) {
    const Eigen::Index rows = phi.rows(), p = phi.cols();
    require_dims(targets.rows() == rows, "targets and design have different sample counts");
    require(p >= 1, "design needs at least one feature");
    if (opt.require_oversampling)
        require(rows > 10 * p, "regression needs more than 10 samples per feature (" + std::to_string(rows) +
                                   " samples, " + std::to_string(p) + " features)");
    Matrix gram = phi.transpose() * phi;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
    const double lmax = eig.eigenvalues().maxCoeff();
    const double lmin = eig.eigenvalues().minCoeff();
    LeastSquaresFit fit;
    fit.condition = (lmin > 0.0) ? std::sqrt(lmax / lmin) : std::numeric_limits<double>::infinity();
    if (!(lmax > 0.0)) throw RegressionError("regression design is identically zero");
    if (fit.condition > opt.ridge_threshold) {
        if (!opt.ridge_enabled)
            throw RegressionError("rank-deficient regression design (condition " + std::to_string(fit.condition) +
                                  ") and ridge disabled");
        fit.ridge = opt.ridge_scale * gram.trace() / static_cast<double>(p);
        gram.diagonal().array() += fit.ridge;
    }
    Eigen::LDLT<Matrix> ldlt(gram);
    fit.coefficients = ldlt.solve(phi.transpose() * targets);
    fit.gram_inverse = ldlt.solve(Matrix::Identity(p, p));
    const Matrix resid = targets - phi * fit.coefficients;
    const Eigen::Index outs = targets.cols();
    fit.r2.resize(outs);
    fit.sigma2.resize(outs);
    const double dof = static_cast<double>(std::max<Eigen::Index>(rows - p, 1));
    for (Eigen::Index j = 0; j < outs; ++j) {
        const double rss = resid.col(j).squaredNorm();
        const double mean = targets.col(j).mean();
        const double tss = (targets.col(j).array() - mean).square().sum();
        fit.r2(j) = tss > 0.0 ? 1.0 - rss / tss : 1.0;
        fit.sigma2(j) = rss / dof;
    }
    return fit;
}

/// Which inputs feed the basis: state coordinates and, for path-dependent
/// models, the current Brownian value.
struct RegressionBasis {
    int degree = 2;
    bool include_brownian = false;

    void validate() const { require(degree >= 0 && degree <= 4, "regression degree must lie in [0, 4]"); }
};

/// A fitted slice: standardization, monomial list and coefficients.
class RegressionSlice {
public:
    RegressionSlice() = default;

    /// `inputs` has one row per sample.
    static RegressionSlice fit(const MatIn& inputs, const MatIn& targets, int degree, const RegressionOptions& opt = {}) {
        RegressionSlice s = empty_like(inputs, degree);
        Matrix phi(inputs.rows(), static_cast<Eigen::Index>(s.monomials_.size()));
        Vector z(inputs.cols());
        for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
            s.standardize(inputs.row(r).transpose(), z);
            s.features_of(z, phi.row(r));
        }
        s.fit_ = lsmc_conditional_expectation(phi, targets, opt);
        return s;
    }

    /// Joint fit of targets on [phi(x), phi(x) dW_1, ..., phi(x) dW_d].
    /// Returns the integrand slice, whose output j*outs + o is the dW_j
    /// loading of target o. `increments` has one row per sample.
    static RegressionSlice fit_increment_loadings(const MatIn& inputs, const MatIn& increments, const MatIn& targets,
                                                  int degree, const RegressionOptions& opt = {}) {
        require_dims(increments.rows() == inputs.rows(), "increments and inputs have different sample counts");
        RegressionSlice s = empty_like(inputs, degree);
        const auto p = static_cast<Eigen::Index>(s.monomials_.size());
        const Eigen::Index d = increments.cols(), outs = targets.cols();
        Matrix phi(inputs.rows(), p * (1 + d));
        Vector z(inputs.cols()), base(p);
        for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
            s.standardize(inputs.row(r).transpose(), z);
            s.features_of(z, base);
            phi.row(r).head(p) = base.transpose();
            for (Eigen::Index j = 0; j < d; ++j) phi.row(r).segment((1 + j) * p, p) = base.transpose() * increments(r, j);
        }
        const LeastSquaresFit joint = lsmc_conditional_expectation(phi, targets, opt);
        s.fit_.coefficients.resize(p, outs * d);
        s.fit_.gram_inverse = Matrix::Zero(p, p);
        for (Eigen::Index j = 0; j < d; ++j) {
            s.fit_.coefficients.middleCols(j * outs, outs) = joint.coefficients.middleRows((1 + j) * p, p);
            s.fit_.gram_inverse += joint.gram_inverse.block((1 + j) * p, (1 + j) * p, p, p);
        }
        // Loadings share one leverage; averaging the blocks keeps it scalar.
        s.fit_.gram_inverse /= static_cast<double>(std::max<Eigen::Index>(d, 1));
        s.fit_.r2 = joint.r2.replicate(d, 1);
        s.fit_.sigma2 = joint.sigma2.replicate(d, 1);
        s.fit_.condition = joint.condition;
        s.fit_.ridge = joint.ridge;
        return s;
    }

    std::size_t feature_count() const { return monomials_.size(); }
    Eigen::Index outputs() const { return fit_.coefficients.cols(); }
    const LeastSquaresFit& fit_result() const { return fit_; }
    double min_r2() const { return fit_.r2.size() ? fit_.r2.minCoeff() : 1.0; }

    void predict(const VecIn& input, VecOut out) const {
        Vector phi(static_cast<Eigen::Index>(monomials_.size()));
        features(input, phi);
        out.noalias() = fit_.coefficients.transpose() * phi;
    }
    double predict_scalar(const VecIn& input) const {
        Vector out(outputs());
        predict(input, out);
        return out(0);
    }
    /// Allocation-free first output; buffers are resized on first use.
    double predict_scalar(const VecIn& input, Vector& z, Vector& phi) const {
        if (z.size() != input.size()) z.resize(input.size());
        const auto p = static_cast<Eigen::Index>(monomials_.size());
        if (phi.size() != p) phi.resize(p);
        standardize(input, z);
        features_of(z, phi);
        return fit_.coefficients.col(0).dot(phi);
    }
    /// Standard error of the fitted conditional mean, per output.
    void fitted_stderr(const VecIn& input, VecOut out) const {
        Vector phi(static_cast<Eigen::Index>(monomials_.size()));
        features(input, phi);
        const double lever = phi.dot(fit_.gram_inverse * phi);
        out = (fit_.sigma2.array() * std::max(lever, 0.0)).sqrt();
    }
    void features(const VecIn& input, VecOut phi) const {
        Vector z(input.size());
        standardize(input, z);
        features_of(z, phi);
    }

private:
    /// Standardization and monomials for `inputs`; constant inputs drop out.
    static RegressionSlice empty_like(const MatIn& inputs, int degree) {
        RegressionSlice s;
        s.input_dim_ = inputs.cols();
        s.mean_ = inputs.colwise().mean().transpose();
        s.scale_ = Vector::Ones(inputs.cols());
        for (Eigen::Index c = 0; c < inputs.cols(); ++c) {
            const double var = (inputs.col(c).array() - s.mean_(c)).square().mean();
            const double sd = std::sqrt(var);
            if (sd > 1e-12 * (1.0 + std::abs(s.mean_(c)))) {
                s.kept_.push_back(c);
                s.scale_(c) = sd;
            }
        }
        s.build_monomials(degree);
        return s;
    }

    void standardize(const VecIn& in, VecOut z) const {
        for (Eigen::Index c = 0; c < in.size(); ++c) z(c) = (in(c) - mean_(c)) / scale_(c);
    }
    template <class Row>
    void features_of(const Vector& z, Row&& phi) const {
        for (std::size_t m = 0; m < monomials_.size(); ++m) {
            double v = 1.0;
            for (Eigen::Index c : monomials_[m]) v *= z(c);
            phi(static_cast<Eigen::Index>(m)) = v;
        }
    }
    void build_monomials(int degree) {
        monomials_.clear();
        monomials_.push_back({});
        std::vector<std::vector<Eigen::Index>> frontier{{}};
        for (int d = 1; d <= degree; ++d) {
            std::vector<std::vector<Eigen::Index>> next;
            for (const auto& mono : frontier) {
                const std::size_t start = mono.empty() ? 0 : position(mono.back());
                for (std::size_t k = start; k < kept_.size(); ++k) {
                    auto m = mono;
                    m.push_back(kept_[k]);
                    next.push_back(m);
                }
            }
            for (const auto& m : next) monomials_.push_back(m);
            frontier = std::move(next);
        }
    }
    std::size_t position(Eigen::Index input) const {
        for (std::size_t k = 0; k < kept_.size(); ++k)
            if (kept_[k] == input) return k;
        return kept_.size();
    }

    Eigen::Index input_dim_ = 0;
    Vector mean_, scale_;
    std::vector<Eigen::Index> kept_;
    std::vector<std::vector<Eigen::Index>> monomials_;
    LeastSquaresFit fit_;
};

}  // namespace workbench
