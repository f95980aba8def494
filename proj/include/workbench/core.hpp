// Shared vocabulary for the workbench: linear-algebra aliases, time grids,
// path contexts handed to model coefficients, seeded random streams, the
// error hierarchy and a deterministic parallel loop.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace workbench {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VecIn = Eigen::Ref<const Eigen::VectorXd>;
using VecOut = Eigen::Ref<Eigen::VectorXd>;
using MatIn = Eigen::Ref<const Eigen::MatrixXd>;
using MatOut = Eigen::Ref<Eigen::MatrixXd>;

inline constexpr const char* kVersion = "0.4.0";

// ---------------------------------------------------------------------------
// Errors

class WorkbenchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public WorkbenchError {
public:
    using WorkbenchError::WorkbenchError;
};

class DimensionMismatch : public WorkbenchError {
public:
    using WorkbenchError::WorkbenchError;
};

class SimulationError : public WorkbenchError {
public:
    SimulationError(const std::string& what, std::size_t path, std::size_t step)
        : WorkbenchError(what + " (path " + std::to_string(path) + ", step " + std::to_string(step) + ")"),
          path_(path),
          step_(step) {}
    std::size_t path() const noexcept { return path_; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t path_;
    std::size_t step_;
};

class RegressionError : public WorkbenchError {
public:
    using WorkbenchError::WorkbenchError;
};

class InstanceTooLarge : public WorkbenchError {
public:
    using WorkbenchError::WorkbenchError;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw InvalidArgument(message);
}

inline void require_dims(bool condition, const std::string& message) {
    if (!condition) throw DimensionMismatch(message);
}

// ---------------------------------------------------------------------------
// Time grid

/// Uniform grid t_0 < t_1 < ... < t_N = T.
struct TimeGrid {
    double t0 = 0.0;
    double horizon = 1.0;
    std::size_t steps = 50;

    TimeGrid() = default;
    TimeGrid(double start, double end, std::size_t n) : t0(start), horizon(end), steps(n) { validate(); }

    void validate() const {
        require(steps >= 1, "time grid needs at least one step");
        require(horizon > t0, "time grid needs T > t0");
    }
    double dt() const { return (horizon - t0) / static_cast<double>(steps); }
    double time(std::size_t k) const {
        return k == steps ? horizon : t0 + static_cast<double>(k) * dt();
    }
    std::size_t points() const { return steps + 1; }
};

// ---------------------------------------------------------------------------
// Path context

/// What a coefficient may observe about the random element: the current
/// time, the grid index and the Brownian path sampled on the grid up to now.
/// `w` is W(t) (noise-dim); `history` holds W(t_0..t_step) row-wise and may
/// be empty when the caller only tracks the current value.
struct PathContext {
    double t = 0.0;
    std::size_t step = 0;
    std::size_t path = 0;
    std::span<const double> w{};
    std::span<const double> history{};

    double w_at(std::size_t coord) const { return coord < w.size() ? w[coord] : 0.0; }
};

// ---------------------------------------------------------------------------
// Random streams

/// SplitMix64 finalizer; the mixing step of the stream-key expansion.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Stream tags keep module streams disjoint under one global seed.
enum class StreamTag : std::uint64_t {
    brownian = 1,
    value_training = 2,
    tree_families = 3,
    probe_directions = 4,
    initial_states = 5,
    misc = 99,
};

/// Seed for stream (seed, tag, index): three chained SplitMix64 rounds over
/// the counter triple. Every path gets its own independent engine, so the
/// output does not depend on scheduling.
inline std::uint64_t stream_seed(std::uint64_t seed, StreamTag tag, std::uint64_t index) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
    return splitmix64(h ^ (index * 0xD1B54A32D192ED03ULL));
}

class StreamRng {
public:
    StreamRng(std::uint64_t seed, StreamTag tag, std::uint64_t index) : engine_(stream_seed(seed, tag, index)) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
    std::uint64_t bits() { return engine_(); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Execution

struct Execution {
    /// 0 picks the hardware concurrency.
    std::size_t threads = 0;

    std::size_t resolved() const {
        if (threads > 0) return threads;
        const auto hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : hw;
    }
};

/// Runs body(i) for i in [0, n) over contiguous chunks. Bodies must only
/// write to index-owned storage; results are then independent of the
/// thread count.
template <class Body>
void parallel_for(std::size_t n, const Execution& exec, Body&& body) {
    const std::size_t workers = std::min<std::size_t>(exec.resolved(), std::max<std::size_t>(n, 1));
    if (workers <= 1 || n < 64) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi, w] {
            try {
                for (std::size_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Small numeric helpers

/// Frobenius inner product <A, B>_HS.
inline double hs_inner(const MatIn& a, const MatIn& b) {
    require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "hs_inner: shape mismatch");
    return (a.array() * b.array()).sum();
}

inline double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Sample standard error of the mean.
inline double stderr_of(std::span<const double> v) {
    const std::size_t n = v.size();
    if (n < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = lo;
        return out;
    }
    for (std::size_t i = 0; i < n; ++i)
        out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return out;
}

}  // namespace workbench
