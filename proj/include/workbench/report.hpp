// Report documents: per-check records, JSON (de)serialization and file
// emission. Everything except `timestamp` and the `wall_ms` fields is a
// function of (config, seed).

#pragma once

#include "workbench/config.hpp"
#include "workbench/core.hpp"
#include "workbench/io.hpp"
#include "workbench/relations.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace workbench {

/// One named check. `sense` says which side of the tolerance passes:
/// "at_most" (statistic <= tolerance) or "at_least" (counterexamples that
/// must be detected).
struct CheckRecord {
    std::string name;
    std::string provenance = "oracle";
    std::string sense = "at_most";
    double statistic = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::map<std::string, double> details;
    std::vector<double> series;
    double wall_ms = 0.0;

    bool operator==(const CheckRecord&) const = default;
};

inline CheckRecord make_record(std::string name, double statistic, double tolerance, std::string provenance = "oracle",
                               bool at_least = false) {
    CheckRecord r;
    r.name = std::move(name);
    r.provenance = std::move(provenance);
    r.sense = at_least ? "at_least" : "at_most";
    r.statistic = statistic;
    r.tolerance = tolerance;
    r.pass = std::isfinite(statistic) && (at_least ? statistic >= tolerance : statistic <= tolerance);
    return r;
}

inline CheckRecord record_from(const RelationReport& rep, std::string name = {}) {
    CheckRecord r;
    r.name = name.empty() ? rep.check : std::move(name);
    r.provenance = rep.provenance;
    r.statistic = rep.statistic;
    r.tolerance = rep.tolerance;
    r.pass = rep.pass;
    r.details = rep.details;
    r.series = rep.per_slice;
    r.details["valid"] = rep.valid ? 1.0 : 0.0;
    return r;
}

/// A file produced alongside the report; `write` receives the target path.
struct Artifact {
    std::string name;  // suffix such as "value_grid.csv"
    std::function<void(const std::filesystem::path&)> write;
};

struct ReportDocument {
    std::string suite;
    std::string version = kVersion;
    std::string timestamp;
    Json config = Json::object();
    std::vector<CheckRecord> checks;
    bool overall_pass = true;
    double wall_ms = 0.0;
    std::vector<std::string> artifact_names;
    std::vector<Artifact> artifacts;  // not serialized

    void finalize() {
        overall_pass = true;
        for (const auto& c : checks) overall_pass = overall_pass && c.pass;
        artifact_names.clear();
        for (const auto& a : artifacts) artifact_names.push_back(a.name);
    }
    bool operator==(const ReportDocument& o) const {
        return suite == o.suite && version == o.version && timestamp == o.timestamp && config == o.config &&
               checks == o.checks && overall_pass == o.overall_pass && wall_ms == o.wall_ms &&
               artifact_names == o.artifact_names;
    }
};

namespace detail {

inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
inline double number_from(const Json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace detail

inline void to_json(Json& j, const CheckRecord& r) {
    Json details = Json::object();
    for (const auto& [k, v] : r.details) details[k] = detail::number(v);
    Json series = Json::array();
    for (double v : r.series) series.push_back(detail::number(v));
    j = Json{{"name", r.name},           {"provenance", r.provenance}, {"sense", r.sense},
             {"statistic", detail::number(r.statistic)}, {"tolerance", detail::number(r.tolerance)},
             {"pass", r.pass},           {"details", details},         {"series", series},
             {"wall_ms", r.wall_ms}};
}

inline void from_json(const Json& j, CheckRecord& r) {
    r.name = j.at("name").get<std::string>();
    r.provenance = j.at("provenance").get<std::string>();
    r.sense = j.at("sense").get<std::string>();
    r.statistic = detail::number_from(j.at("statistic"));
    r.tolerance = detail::number_from(j.at("tolerance"));
    r.pass = j.at("pass").get<bool>();
    r.details.clear();
    for (const auto& [k, v] : j.at("details").items()) r.details[k] = detail::number_from(v);
    r.series.clear();
    for (const auto& v : j.at("series")) r.series.push_back(detail::number_from(v));
    r.wall_ms = j.at("wall_ms").get<double>();
}

inline Json report_to_json(const ReportDocument& doc) {
    return Json{{"suite", doc.suite},   {"version", doc.version},           {"timestamp", doc.timestamp},
                {"config", doc.config}, {"checks", doc.checks},             {"overall_pass", doc.overall_pass},
                {"wall_ms", doc.wall_ms}, {"artifacts", doc.artifact_names}};
}

inline ReportDocument report_from_json(const Json& j) {
    ReportDocument doc;
    doc.suite = j.at("suite").get<std::string>();
    doc.version = j.at("version").get<std::string>();
    doc.timestamp = j.at("timestamp").get<std::string>();
    doc.config = j.at("config");
    doc.checks = j.at("checks").get<std::vector<CheckRecord>>();
    doc.overall_pass = j.at("overall_pass").get<bool>();
    doc.wall_ms = j.at("wall_ms").get<double>();
    doc.artifact_names = j.at("artifacts").get<std::vector<std::string>>();
    return doc;
}

inline std::string emit_json(const ReportDocument& doc) { return report_to_json(doc).dump(2) + "\n"; }

inline ReportDocument parse_report(const std::string& text) { return report_from_json(Json::parse(text)); }

/// The report with its clock-dependent fields blanked, for rerun comparison.
inline Json reproducible_view(Json j) {
    j.erase("timestamp");
    j.erase("wall_ms");
    if (j.contains("checks"))
        for (auto& c : j["checks"]) c.erase("wall_ms");
    return j;
}

/// UTC, millisecond resolution, safe in file names: 20261015T101112.345Z.
inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%S", &tm);
    char out[40];
    std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

inline std::string checks_csv(const ReportDocument& doc) {
    std::string s = "name,provenance,sense,statistic,tolerance,pass,wall_ms\n";
    for (const auto& c : doc.checks)
        s += c.name + ',' + c.provenance + ',' + c.sense + ',' + detail::num(c.statistic) + ',' + detail::num(c.tolerance) +
             ',' + (c.pass ? "true" : "false") + ',' + detail::num(c.wall_ms) + '\n';
    return s;
}

struct EmitFormats {
    bool json = true;
    bool csv = true;
    bool artifacts = true;
};

/// Writes <suite>_seed<seed>_<timestamp>{.json,_checks.csv,_<artifact>}
/// into `dir` and returns the paths written.
inline std::vector<std::filesystem::path> emit_report(const ReportDocument& doc, const std::filesystem::path& dir,
                                                      const EmitFormats& formats = {}) {
    const std::uint64_t seed = doc.config.contains("seed") ? doc.config.at("seed").get<std::uint64_t>() : 0;
    const std::string stem = doc.suite + "_seed" + std::to_string(seed) + "_" + doc.timestamp;
    std::vector<std::filesystem::path> written;
    const auto text_file = [&](const std::string& name, const std::string& content) {
        const auto path = dir / name;
        auto out = detail::open_out(path);
        out << content;
        detail::finish(out, path);
        written.push_back(path);
    };
    if (formats.json) text_file(stem + ".json", emit_json(doc));
    if (formats.csv) text_file(stem + "_checks.csv", checks_csv(doc));
    if (formats.artifacts)
        for (const auto& a : doc.artifacts) {
            const auto path = dir / (stem + "_" + a.name);
            a.write(path);
            written.push_back(path);
        }
    return written;
}

}  // namespace workbench
