// Galerkin truncation of the generator: spectral (diagonal) modes or
// undamped oscillator pairs, with exact semigroups and Yosida approximants.

#pragma once

#include "workbench/core.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace workbench {

enum class GeneratorKind { diagonal, oscillator };

class GalerkinOperator {
public:
    GalerkinOperator() = default;

    /// Diagonal generator with the given eigenvalues.
    static GalerkinOperator diagonal(std::vector<double> eigenvalues, double contraction = 0.0) {
        GalerkinOperator op;
        op.kind_ = GeneratorKind::diagonal;
        op.eigenvalues_ = std::move(eigenvalues);
        op.contraction_ = contraction;
        op.validate();
        return op;
    }

    /// Pairs (y_k, v_k) rotating at frequency omega_k: the energy-scaled
    /// first-order form of a wave equation. Each block is [[0, w], [-w, 0]].
    static GalerkinOperator oscillator(std::vector<double> frequencies, double contraction = 0.0) {
        GalerkinOperator op;
        op.kind_ = GeneratorKind::oscillator;
        op.eigenvalues_ = std::move(frequencies);
        op.contraction_ = contraction;
        op.validate();
        return op;
    }

    /// Dirichlet Laplacian on (0,1): lambda_k = -(k pi)^2.
    static GalerkinOperator dirichlet_laplacian(std::size_t modes) {
        std::vector<double> ev(modes);
        for (std::size_t k = 0; k < modes; ++k) {
            const double kp = static_cast<double>(k + 1) * std::numbers::pi;
            ev[k] = -kp * kp;
        }
        return diagonal(std::move(ev), 0.0);
    }

    GeneratorKind kind() const { return kind_; }
    std::size_t dim() const { return kind_ == GeneratorKind::diagonal ? eigenvalues_.size() : 2 * eigenvalues_.size(); }
    const std::vector<double>& eigenvalues() const { return eigenvalues_; }
    double contraction_constant() const { return contraction_; }
    bool is_diagonal() const { return kind_ == GeneratorKind::diagonal; }

    double max_abs_eigenvalue() const {
        double m = 0.0;
        for (double l : eigenvalues_) m = std::max(m, std::abs(l));
        return m;
    }

    /// Dense A on the truncation.
    Matrix matrix() const {
        const auto n = static_cast<Eigen::Index>(dim());
        Matrix a = Matrix::Zero(n, n);
        if (is_diagonal()) {
            for (Eigen::Index k = 0; k < n; ++k) a(k, k) = eigenvalues_[static_cast<std::size_t>(k)];
        } else {
            for (std::size_t k = 0; k < eigenvalues_.size(); ++k) {
                const auto i = static_cast<Eigen::Index>(2 * k);
                a(i, i + 1) = eigenvalues_[k];
                a(i + 1, i) = -eigenvalues_[k];
            }
        }
        return a;
    }

    Vector apply(const VecIn& x) const {
        check_dim(x.size());
        Vector out(x.size());
        if (is_diagonal()) {
            for (Eigen::Index k = 0; k < x.size(); ++k) out(k) = eigenvalues_[static_cast<std::size_t>(k)] * x(k);
        } else {
            for (std::size_t k = 0; k < eigenvalues_.size(); ++k) {
                const auto i = static_cast<Eigen::Index>(2 * k);
                out(i) = eigenvalues_[k] * x(i + 1);
                out(i + 1) = -eigenvalues_[k] * x(i);
            }
        }
        return out;
    }

    Vector apply_adjoint(const VecIn& x) const {
        check_dim(x.size());
        if (is_diagonal()) return apply(x);
        Vector out(x.size());
        for (std::size_t k = 0; k < eigenvalues_.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(2 * k);
            out(i) = -eigenvalues_[k] * x(i + 1);
            out(i + 1) = eigenvalues_[k] * x(i);
        }
        return out;
    }

    /// Dense S(t) = exp(tA).
    Matrix semigroup_matrix(double t) const {
        require(t >= 0.0, "semigroup time must be non-negative");
        const auto n = static_cast<Eigen::Index>(dim());
        Matrix s = Matrix::Zero(n, n);
        if (is_diagonal()) {
            for (Eigen::Index k = 0; k < n; ++k) s(k, k) = std::exp(eigenvalues_[static_cast<std::size_t>(k)] * t);
        } else {
            for (std::size_t k = 0; k < eigenvalues_.size(); ++k) {
                const auto i = static_cast<Eigen::Index>(2 * k);
                const double c = std::cos(eigenvalues_[k] * t), sn = std::sin(eigenvalues_[k] * t);
                s(i, i) = c;
                s(i, i + 1) = sn;
                s(i + 1, i) = -sn;
                s(i + 1, i + 1) = c;
            }
        }
        return s;
    }

    Vector semigroup_apply(double t, const VecIn& x) const {
        require(t >= 0.0, "semigroup time must be non-negative");
        check_dim(x.size());
        if (is_diagonal()) {
            Vector out(x.size());
            for (Eigen::Index k = 0; k < x.size(); ++k)
                out(k) = std::exp(eigenvalues_[static_cast<std::size_t>(k)] * t) * x(k);
            return out;
        }
        return semigroup_matrix(t) * x;
    }

    /// A_n = nA(nI - A)^{-1}.
    Matrix yosida_matrix(double n) const {
        check_yosida(n);
        if (is_diagonal()) {
            const auto d = static_cast<Eigen::Index>(dim());
            Matrix out = Matrix::Zero(d, d);
            for (Eigen::Index k = 0; k < d; ++k) out(k, k) = yosida_factor(eigenvalues_[static_cast<std::size_t>(k)], n);
            return out;
        }
        const Matrix a = matrix();
        const Matrix resolvent = (n * Matrix::Identity(a.rows(), a.cols()) - a).inverse();
        return n * a * resolvent;
    }

    Vector yosida_apply(double n, const VecIn& x) const {
        check_dim(x.size());
        if (is_diagonal()) {
            check_yosida(n);
            Vector out(x.size());
            for (Eigen::Index k = 0; k < x.size(); ++k)
                out(k) = yosida_factor(eigenvalues_[static_cast<std::size_t>(k)], n) * x(k);
            return out;
        }
        return yosida_matrix(n) * x;
    }

    static double yosida_factor(double lambda, double n) { return n * lambda / (n - lambda); }

private:
    void validate() const {
        require(!eigenvalues_.empty(), "generator needs at least one mode");
        if (is_diagonal())
            for (double l : eigenvalues_)
                require(l <= contraction_ + 1e-12, "eigenvalue exceeds the contraction constant");
        else
            require(contraction_ >= 0.0, "oscillator generator needs c >= 0");
    }
    void check_dim(Eigen::Index n) const {
        require_dims(static_cast<std::size_t>(n) == dim(), "state dimension does not match the generator");
    }
    void check_yosida(double n) const {
        require(n > std::max(0.0, contraction_), "Yosida index must exceed max(0, c)");
        if (is_diagonal())
            for (double l : eigenvalues_) require(n > l, "Yosida index must exceed every eigenvalue");
    }

    GeneratorKind kind_ = GeneratorKind::diagonal;
    std::vector<double> eigenvalues_{0.0};
    double contraction_ = 0.0;
};

/// Hilbert-Schmidt norm of a truncated operator.
inline double hs_norm(const MatIn& b) { return b.norm(); }

}  // namespace workbench
