// File exports: CSV tables and a compact binary bundle layout.
//
// Binary layout, all fields little-endian:
//   bytes  0..7   magic "WBBUNDLE"
//   u32           format version (1)
//   u32           reserved (0)
//   u64 x 6       state dim n, control dim m, noise dim d, steps N, paths, seed
//   f64 x 2       t0, horizon
//   f64[...]      states    paths x (N+1) x n
//   f64[...]      controls  paths x N x m
//   f64[...]      increments paths x N x d
// Arrays are path-major, matching SamplePathBundle.
//
// Step tables (adjoints, cost pairs) use magic "WBSTEPS\0", the same two
// u32 fields, then u64 columns, steps+1 or steps, paths, seed, the two f64
// grid bounds and f64[paths x rows x columns].

#pragma once

#include "workbench/backward.hpp"
#include "workbench/core.hpp"
#include "workbench/forward.hpp"
#include "workbench/second_order.hpp"
#include "workbench/value_hjb.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace workbench {

class IoError : public WorkbenchError {
public:
    IoError(const std::string& what, const std::filesystem::path& path)
        : WorkbenchError(what + ": " + path.string()), path_(path) {}
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory (" + ec.message() + ")", path.parent_path());
    }
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw IoError("cannot open for writing", path);
    return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw IoError("write failed", path);
}

/// Round-trip decimal form.
inline std::string num(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

template <class T>
void put_le(std::ostream& out, T v) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> bytes;
    in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
}

}  // namespace detail

inline constexpr char kBundleMagic[8] = {'W', 'B', 'B', 'U', 'N', 'D', 'L', 'E'};
inline constexpr std::uint32_t kBundleFormat = 1;

/// One row per (path, step): path, step, t, x_*, u_*, dw_*, w_*. Controls
/// and increments are blank on the terminal step.
inline void write_bundle_csv(const SamplePathBundle& b, const std::filesystem::path& path,
                             std::size_t max_paths = SIZE_MAX) {
    auto out = detail::open_out(path);
    const std::size_t n = b.state_dim(), m = b.control_dim(), d = b.noise_dim();
    out << "path,step,t";
    for (std::size_t c = 0; c < n; ++c) out << ",x" << c;
    for (std::size_t c = 0; c < m; ++c) out << ",u" << c;
    for (std::size_t c = 0; c < d; ++c) out << ",dw" << c;
    for (std::size_t c = 0; c < d; ++c) out << ",w" << c;
    out << '\n';
    for (std::size_t i = 0; i < std::min(b.paths(), max_paths); ++i)
        for (std::size_t k = 0; k <= b.steps(); ++k) {
            out << i << ',' << k << ',' << detail::num(b.grid().time(k));
            const bool last = k == b.steps();
            for (std::size_t c = 0; c < n; ++c) out << ',' << detail::num(b.x(i, k)(static_cast<Eigen::Index>(c)));
            for (std::size_t c = 0; c < m; ++c) out << ',' << (last ? "" : detail::num(b.u(i, k)(static_cast<Eigen::Index>(c))));
            for (std::size_t c = 0; c < d; ++c) out << ',' << (last ? "" : detail::num(b.dw(i, k)(static_cast<Eigen::Index>(c))));
            for (std::size_t c = 0; c < d; ++c) out << ',' << detail::num(b.w(i, k)(static_cast<Eigen::Index>(c)));
            out << '\n';
        }
    detail::finish(out, path);
}

inline void write_bundle_binary(const SamplePathBundle& b, const std::filesystem::path& path) {
    require(b.has_states(), "bundle has no simulated states");
    auto out = detail::open_out(path, true);
    out.write(kBundleMagic, sizeof(kBundleMagic));
    detail::put_le<std::uint32_t>(out, kBundleFormat);
    detail::put_le<std::uint32_t>(out, 0);
    for (std::uint64_t v : {std::uint64_t(b.state_dim()), std::uint64_t(b.control_dim()), std::uint64_t(b.noise_dim()),
                            std::uint64_t(b.steps()), std::uint64_t(b.paths()), b.seed()})
        detail::put_le<std::uint64_t>(out, v);
    detail::put_le<double>(out, b.grid().t0);
    detail::put_le<double>(out, b.grid().horizon);
    for (const auto* arr : {&b.raw_states(), &b.raw_controls(), &b.raw_increments()})
        for (double v : *arr) detail::put_le<double>(out, v);
    detail::finish(out, path);
}

/// Reads a bundle written by write_bundle_binary; W is rebuilt from the
/// increments.
inline SamplePathBundle read_bundle_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading", path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kBundleMagic, sizeof(magic)) != 0) throw IoError("not a bundle file", path);
    if (detail::get_le<std::uint32_t>(in) != kBundleFormat) throw IoError("unsupported bundle format", path);
    (void)detail::get_le<std::uint32_t>(in);
    std::uint64_t h[6];
    for (auto& v : h) v = detail::get_le<std::uint64_t>(in);
    const double t0 = detail::get_le<double>(in), horizon = detail::get_le<double>(in);
    if (!in) throw IoError("truncated bundle header", path);
    SamplePathBundle b(TimeGrid{t0, horizon, static_cast<std::size_t>(h[3])}, h[4], h[2], h[5]);
    b.allocate_states(h[0], h[1]);
    auto& dw = b.raw_increments();
    std::vector<double> xs(b.raw_states().size()), us(b.raw_controls().size());
    for (auto* arr : {&xs, &us, &dw})
        for (double& v : *arr) v = detail::get_le<double>(in);
    if (!in) throw IoError("truncated bundle data", path);
    for (std::size_t i = 0; i < b.paths(); ++i) {
        for (std::size_t k = 0; k <= b.steps(); ++k)
            b.x(i, k) = Eigen::Map<const Vector>(xs.data() + (i * (b.steps() + 1) + k) * h[0], static_cast<Eigen::Index>(h[0]));
        for (std::size_t k = 0; k < b.steps(); ++k)
            b.u(i, k) = Eigen::Map<const Vector>(us.data() + (i * b.steps() + k) * h[1], static_cast<Eigen::Index>(h[1]));
    }
    b.integrate_brownian();
    return b;
}

/// Per-step matrices (paths x cols) in the bundle's row layout:
/// path, step, t, then `prefix`0.. columns.
inline void write_step_table_csv(const std::vector<Matrix>& per_step, const TimeGrid& grid, const std::string& prefix,
                                 const std::filesystem::path& path, std::size_t max_paths = SIZE_MAX) {
    require(!per_step.empty(), "nothing to export");
    auto out = detail::open_out(path);
    const Eigen::Index cols = per_step.front().cols();
    const auto rows = std::min<Eigen::Index>(per_step.front().rows(), static_cast<Eigen::Index>(std::min<std::size_t>(max_paths, PTRDIFF_MAX)));
    out << "path,step,t";
    for (Eigen::Index c = 0; c < cols; ++c) out << ',' << prefix << c;
    out << '\n';
    for (Eigen::Index i = 0; i < rows; ++i)
        for (std::size_t k = 0; k < per_step.size(); ++k) {
            out << i << ',' << k << ',' << detail::num(grid.time(k));
            for (Eigen::Index c = 0; c < cols; ++c) out << ',' << detail::num(per_step[k](i, c));
            out << '\n';
        }
    detail::finish(out, path);
}

inline constexpr char kStepTableMagic[8] = {'W', 'B', 'S', 'T', 'E', 'P', 'S', '\0'};

inline void write_step_table_binary(const std::vector<Matrix>& per_step, const TimeGrid& grid, std::uint64_t seed,
                                    const std::filesystem::path& path) {
    require(!per_step.empty(), "nothing to export");
    auto out = detail::open_out(path, true);
    out.write(kStepTableMagic, sizeof(kStepTableMagic));
    detail::put_le<std::uint32_t>(out, kBundleFormat);
    detail::put_le<std::uint32_t>(out, 0);
    const auto rows = per_step.front().rows(), cols = per_step.front().cols();
    for (std::uint64_t v : {std::uint64_t(cols), std::uint64_t(per_step.size()), std::uint64_t(rows), seed})
        detail::put_le<std::uint64_t>(out, v);
    detail::put_le<double>(out, grid.t0);
    detail::put_le<double>(out, grid.horizon);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (const auto& m : per_step)
            for (Eigen::Index c = 0; c < cols; ++c) detail::put_le<double>(out, m(i, c));
    detail::finish(out, path);
}

inline std::vector<Matrix> read_step_table_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading", path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kStepTableMagic, sizeof(magic)) != 0) throw IoError("not a step table file", path);
    if (detail::get_le<std::uint32_t>(in) != kBundleFormat) throw IoError("unsupported step table format", path);
    (void)detail::get_le<std::uint32_t>(in);
    std::uint64_t h[4];
    for (auto& v : h) v = detail::get_le<std::uint64_t>(in);
    (void)detail::get_le<double>(in);
    (void)detail::get_le<double>(in);
    if (!in) throw IoError("truncated step table header", path);
    std::vector<Matrix> out(h[1], Matrix(static_cast<Eigen::Index>(h[2]), static_cast<Eigen::Index>(h[0])));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(h[2]); ++i)
        for (auto& m : out)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = detail::get_le<double>(in);
    if (!in) throw IoError("truncated step table data", path);
    return out;
}

inline void write_first_adjoint_csv(const FirstAdjoint& adj, const TimeGrid& grid, const std::filesystem::path& p_path,
                                    const std::filesystem::path& q_path, std::size_t max_paths = SIZE_MAX) {
    write_step_table_csv(adj.p, grid, "p", p_path, max_paths);
    write_step_table_csv(adj.q, grid, "q", q_path, max_paths);
}

inline void write_cost_pair_csv(const CostPair& c, const TimeGrid& grid, const std::filesystem::path& path,
                                std::size_t max_paths = SIZE_MAX) {
    std::vector<Matrix> y;
    for (Eigen::Index k = 0; k < c.y.cols(); ++k) y.push_back(c.y.col(k));
    write_step_table_csv(y, grid, "y", path, max_paths);
}

/// P paths flattened row-major with entries named P_r_c.
inline void write_second_adjoint_csv(const SecondAdjoint& adj, const TimeGrid& grid, const std::filesystem::path& path,
                                     std::size_t max_paths = SIZE_MAX) {
    auto out = detail::open_out(path);
    const auto n = static_cast<Eigen::Index>(adj.n);
    out << "path,step,t";
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c) out << ",P_" << r << '_' << c;
    out << '\n';
    const std::size_t np = std::min(static_cast<std::size_t>(adj.p.front().rows()), max_paths);
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t k = 0; k < adj.p.size(); ++k) {
            const Matrix pk = adj.p_at(i, k);
            out << i << ',' << k << ',' << detail::num(grid.time(k));
            for (Eigen::Index r = 0; r < n; ++r)
                for (Eigen::Index c = 0; c < n; ++c) out << ',' << detail::num(pk(r, c));
            out << '\n';
        }
    detail::finish(out, path);
}

/// Value field on a deterministic (t, x) grid: t, x*, V, V_x*, V_xx (row-major).
inline void write_value_grid_csv(const ValueField& field, std::span<const HjbPoint> points,
                                 const std::filesystem::path& path) {
    require(!points.empty(), "value grid is empty");
    auto out = detail::open_out(path);
    const auto n = points.front().x.size();
    out << "t";
    for (Eigen::Index c = 0; c < n; ++c) out << ",x" << c;
    out << ",V";
    for (Eigen::Index c = 0; c < n; ++c) out << ",V_x" << c;
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c) out << ",V_xx" << r << '_' << c;
    out << '\n';
    for (const auto& pt : points) {
        out << detail::num(pt.ctx.t);
        for (Eigen::Index c = 0; c < n; ++c) out << ',' << detail::num(pt.x(c));
        out << ',' << detail::num(field.value(pt.ctx, pt.x));
        const Vector g = field.grad(pt.ctx, pt.x);
        const Matrix h = field.hess(pt.ctx, pt.x);
        for (Eigen::Index c = 0; c < n; ++c) out << ',' << detail::num(g(c));
        for (Eigen::Index r = 0; r < n; ++r)
            for (Eigen::Index c = 0; c < n; ++c) out << ',' << detail::num(h(r, c));
        out << '\n';
    }
    detail::finish(out, path);
}

}  // namespace workbench
