// Experiment configuration: TOML on disk, JSON in reports. Both map onto
// the same nested structs, so a report's config echo reruns the experiment.

#pragma once

#include "workbench/core.hpp"
#include "workbench/presets.hpp"

#include <json.hpp>
#include <tomlplusplus/toml.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

namespace workbench {

using Json = nlohmann::json;

struct GridConfig {
    std::size_t steps = 50;
    double horizon = 1.0;
};

struct ControlGridConfig {
    double bound = 5.0;
    std::size_t points = 33;
};

struct RegressionConfig {
    int degree = 2;
    bool ridge = true;
};

struct LqConfig {
    double sigma = 1.0;
    double terminal = 0.0;
};

struct HeatConfig {
    double reaction = 0.5;
    double noise_level = 0.3;
    double additive = 0.2;
    double modulus_exponent = 1.0;
};

struct ToleranceConfig {
    double oracle = 0.02;           // relations against an analytic field
    double regression = 0.05;       // relations against a regressed field
    double value = 0.02;            // value regression vs Riccati
    double hjb = 1e-8;
    double probe = 1e-10;
    double counterexample = 0.04;   // perturbed P must reach this ratio
    double temporal = 0.05;
    double mp_sigmas = 3.0;
    double suboptimal_margin = 10.0;
    double tree = 1e-12;
    double closed_form = 1e-12;
    double noise_mean_sigmas = 4.5;
};

struct OutputConfig {
    std::string dir = "out";
    std::size_t csv_paths = 200;  // paths written to per-path CSV tables
    bool binary = true;
};

struct TreeConfig {
    std::vector<std::string> presets{"tree_binomial", "tree_nonmarkov", "tree_trinomial"};
    std::size_t depth = 0;  // 0 keeps each preset's default
    std::size_t families = 10;
    std::size_t cap = kDefaultEnumerationCap;
    std::vector<TreeParameters> custom;
};

struct ValueConfig {
    bool enabled = false;
    std::size_t paths = 100000;
    double gain_min = 0.0;
    double gain_max = 2.0;
    std::size_t gains = 21;
    double box_radius = 3.0;
    double check_radius = 2.0;
    std::size_t check_points = 9;
};

struct YosidaConfig {
    std::vector<double> n{4.0, 16.0, 64.0, 256.0};
    std::size_t paths = 2000;
    double closed_form_n = 9.0;
};

struct ProbeSettings {
    std::vector<double> radii{1e-1, 1e-2, 1e-3};
    std::size_t directions = 16;
    std::size_t points = 20;
    double epsilon = 0.1;
};

struct TemporalConfig {
    std::vector<std::size_t> offsets{8, 4, 2};
    std::size_t max_paths = 2000;
};

struct MaximumPrincipleConfig {
    std::size_t time_slices = 10;
    std::size_t paths = 100;
};

struct SecondOrderConfig {
    std::string linearization = "closed_loop";
    bool open_loop_reference = true;
};

struct ItoKunitaConfig {
    std::vector<std::string> presets{"stochastic_heat", "lq_scalar", "lq_matrix", "stochastic_wave"};
    std::size_t paths = 20000;
};

struct SimulateConfig {
    int moment_exponent = 4;
    bool zero_coefficients_check = true;
};

struct HjbConfig {
    std::size_t times = 20;
    std::size_t points = 20;
    double radius = 2.0;
};

struct ExperimentConfig {
    std::string suite;
    std::string preset = "lq_scalar";
    std::size_t galerkin_dim = 4;
    std::size_t paths = 100000;
    std::uint64_t seed = 7;
    std::size_t threads = 0;
    std::vector<double> initial_state;  // empty: preset default

    GridConfig grid;
    ControlGridConfig controls;
    RegressionConfig regression;
    LqConfig lq;
    HeatConfig heat;
    ToleranceConfig tolerances;
    OutputConfig output;
    TreeConfig tree;
    ValueConfig value;
    YosidaConfig yosida;
    ProbeSettings probe;
    TemporalConfig temporal;
    MaximumPrincipleConfig maximum_principle;
    SecondOrderConfig second_order;
    ItoKunitaConfig ito_kunita;
    SimulateConfig simulate;
    HjbConfig hjb;

    TimeGrid time_grid() const { return TimeGrid(0.0, grid.horizon, grid.steps); }
    void validate() const;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GridConfig, steps, horizon)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ControlGridConfig, bound, points)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RegressionConfig, degree, ridge)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LqConfig, sigma, terminal)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HeatConfig, reaction, noise_level, additive, modulus_exponent)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ToleranceConfig, oracle, regression, value, hjb, probe, counterexample,
                                                temporal, mp_sigmas, suboptimal_margin, tree, closed_form,
                                                noise_mean_sigmas)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OutputConfig, dir, csv_paths, binary)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TreeParameters, name, branching, depth, shock_scale, initial_state,
                                                controls, reversion, history_drift, volatility, state_weight,
                                                control_weight, terminal_weight, terminal_quartic)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TreeConfig, presets, depth, families, cap, custom)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ValueConfig, enabled, paths, gain_min, gain_max, gains, box_radius,
                                                check_radius, check_points)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(YosidaConfig, n, paths, closed_form_n)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProbeSettings, radii, directions, points, epsilon)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TemporalConfig, offsets, max_paths)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MaximumPrincipleConfig, time_slices, paths)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SecondOrderConfig, linearization, open_loop_reference)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ItoKunitaConfig, presets, paths)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SimulateConfig, moment_exponent, zero_coefficients_check)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HjbConfig, times, points, radius)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, suite, preset, galerkin_dim, paths, seed, threads,
                                                initial_state, grid, controls, regression, lq, heat, tolerances, output,
                                                tree, value, yosida, probe, temporal, maximum_principle, second_order,
                                                ito_kunita, simulate, hjb)

inline const std::vector<std::string>& known_suites() {
    static const std::vector<std::string> s{"tree-dpp", "lq-verify", "relations", "yosida",
                                            "ito-kunita", "simulate", "second-order"};
    return s;
}

inline const std::vector<std::string>& known_presets() {
    static const std::vector<std::string> p{"lq_scalar", "lq_matrix", "stochastic_heat", "stochastic_wave",
                                            "tree_binomial", "tree_nonmarkov", "tree_trinomial"};
    return p;
}

inline bool is_tree_preset(const std::string& name) { return name.rfind("tree_", 0) == 0; }

namespace detail {

inline bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

/// Every key of `given` must exist in `reference`; arrays of tables are
/// checked against `element` references registered by path.
inline void check_keys(const Json& given, const Json& reference, const std::string& where) {
    if (!given.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!reference.is_object() || !reference.contains(key)) throw InvalidArgument("unknown config key: " + path);
        if (value.is_object()) check_keys(value, reference.at(key), path);
        if (value.is_array() && path == "tree.custom")
            for (const auto& item : value) check_keys(item, Json(TreeParameters{}), path + "[]");
    }
}

inline Json toml_to_json(const toml::node& node) {
    if (const auto* t = node.as_table()) {
        Json out = Json::object();
        for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
        return out;
    }
    if (const auto* a = node.as_array()) {
        Json out = Json::array();
        for (const auto& v : *a) out.push_back(toml_to_json(v));
        return out;
    }
    if (const auto* v = node.as_integer()) return v->get();
    if (const auto* v = node.as_floating_point()) return v->get();
    if (const auto* v = node.as_boolean()) return v->get();
    if (const auto* v = node.as_string()) return v->get();
    throw InvalidArgument("unsupported TOML value (dates and times are not config values)");
}

/// Integers in the config must not be negative before they reach unsigned
/// fields.
inline void reject_negative_integers(const Json& j, const std::string& where) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) reject_negative_integers(v, where.empty() ? k : where + "." + k);
    } else if (j.is_array()) {
        for (const auto& v : j) reject_negative_integers(v, where);
    } else if (j.is_number_integer() && j.get<std::int64_t>() < 0) {
        throw InvalidArgument("config value must be non-negative: " + where);
    }
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
    if (!suite.empty())
        require(detail::contains(known_suites(), suite), "unknown suite: " + suite);
    require(detail::contains(known_presets(), preset), "unknown preset: " + preset);
    require(galerkin_dim >= 1 && galerkin_dim <= 64, "galerkin_dim must lie in [1, 64]");
    require(paths >= 1 && paths <= 100'000'000, "paths must lie in [1, 1e8]");
    require(grid.steps >= 1 && grid.steps <= 100'000, "grid.steps must lie in [1, 1e5]");
    require(grid.horizon > 0.0, "grid.horizon must be positive");
    require(controls.bound > 0.0 && controls.points >= 2, "controls need a positive bound and at least two points");
    require(regression.degree >= 1 && regression.degree <= 4, "regression.degree must lie in [1, 4]");
    require(lq.sigma > 0.0 && lq.terminal >= 0.0, "lq.sigma must be positive and lq.terminal non-negative");
    require(heat.noise_level >= 0.0 && heat.additive >= 0.0 && heat.modulus_exponent > 0.0,
            "heat noise levels must be non-negative and the modulus exponent positive");
    const auto& t = tolerances;
    for (double v : {t.oracle, t.regression, t.value, t.hjb, t.probe, t.counterexample, t.temporal, t.mp_sigmas,
                     t.suboptimal_margin, t.tree, t.closed_form, t.noise_mean_sigmas})
        require(v > 0.0, "tolerances must be positive");
    require(!output.dir.empty(), "output.dir must not be empty");
    for (const auto& name : tree.presets)
        require(detail::contains(known_presets(), name) && is_tree_preset(name), "unknown tree preset: " + name);
    require(tree.families >= 1 && tree.cap >= 1, "tree.families and tree.cap must be positive");
    for (const auto& c : tree.custom) {
        require(c.branching == 2 || c.branching == 3, "tree.custom branching must be 2 or 3");
        require(c.depth >= 1 && c.depth <= 12, "tree.custom depth must lie in [1, 12]");
        require(!c.controls.empty() && c.volatility >= 0.0, "tree.custom needs controls and a non-negative volatility");
    }
    require(value.paths >= 2 && value.gains >= 1 && value.gain_max >= value.gain_min, "invalid value regression settings");
    require(value.box_radius > 0.0 && value.check_radius > 0.0 && value.check_points >= 1, "invalid value check grid");
    require(!yosida.n.empty() && yosida.paths >= 1 && yosida.closed_form_n > 0.0, "invalid Yosida settings");
    for (double n : yosida.n) require(n > 0.0, "Yosida indices must be positive");
    require(!probe.radii.empty() && probe.directions >= 2 && probe.points >= 1 && probe.epsilon > 0.0,
            "invalid probe settings");
    require(!temporal.offsets.empty() && temporal.max_paths >= 1, "invalid temporal settings");
    require(maximum_principle.time_slices >= 1 && maximum_principle.paths >= 1, "invalid maximum principle settings");
    require(second_order.linearization == "closed_loop" || second_order.linearization == "open_loop",
            "second_order.linearization must be closed_loop or open_loop");
    for (const auto& name : ito_kunita.presets)
        require(detail::contains(known_presets(), name) && !is_tree_preset(name), "unknown Ito-Kunita preset: " + name);
    require(ito_kunita.paths >= 2, "ito_kunita.paths must be at least 2");
    require(simulate.moment_exponent >= 2 && simulate.moment_exponent % 2 == 0, "simulate.moment_exponent must be even");
    require(hjb.times >= 1 && hjb.points >= 1 && hjb.radius > 0.0, "invalid HJB grid");
}

/// Defaults overlaid with `j`; unknown keys are errors.
inline ExperimentConfig config_from_json(const Json& j) {
    detail::check_keys(j, Json(ExperimentConfig{}), "");
    detail::reject_negative_integers(j, "");
    ExperimentConfig cfg;
    try {
        cfg = j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig config_from_toml_string(std::string_view text, const std::string& source = "config") {
    toml::table table;
    try {
        table = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        throw InvalidArgument("TOML parse error in " + source + ": " + std::string(e.description()));
    }
    return config_from_json(detail::toml_to_json(table));
}

/// TOML file, or a JSON report whose "config" member is rerun.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot read config file: " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (path.extension() == ".json") {
        Json j;
        try {
            j = Json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("JSON parse error in " + path.string() + ": " + e.what());
        }
        return config_from_json(j.contains("config") ? j.at("config") : j);
    }
    return config_from_toml_string(text, path.string());
}

}  // namespace workbench
