// workbench <suite> --config <file> [--seed N] [--paths N] [--out DIR]
//
// Exit status: 0 when every check passes, 1 when a check fails, 2 on bad
// arguments or config, 3 on any other error.

#include "workbench/workbench.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

void print_summary(const workbench::ReportDocument& doc, std::ostream& os) {
    for (const auto& c : doc.checks) {
        char line[256];
        std::snprintf(line, sizeof(line), "%-4s %-48s %12.5g %s %-12.5g (%.0f ms)\n", c.pass ? "PASS" : "FAIL",
                      c.name.c_str(), c.statistic, c.sense == "at_least" ? ">=" : "<=", c.tolerance, c.wall_ms);
        os << line;
    }
    os << (doc.overall_pass ? "overall PASS" : "overall FAIL") << " [" << doc.suite << ", " << doc.checks.size()
       << " checks, " << static_cast<long long>(doc.wall_ms) << " ms]\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic control verification workbench"};
    app.set_version_flag("--version", std::string(workbench::kVersion));

    std::string suite, config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths, threads;
    bool quiet = false, no_artifacts = false;

    app.add_option("suite", suite, "Suite to run")
        ->required()
        ->check(CLI::IsMember(workbench::known_suites()));
    app.add_option("-c,--config", config_path, "TOML config (or a previous JSON report to rerun)")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Override the master seed");
    app.add_option("--paths", paths, "Override the Monte Carlo path count")->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "Output directory (defaults to output.dir)");
    app.add_option("--threads", threads, "Worker threads, 0 for hardware concurrency");
    app.add_flag("--no-artifacts", no_artifacts, "Write only the JSON report and check table");
    app.add_flag("-q,--quiet", quiet, "Suppress the check table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    workbench::ExperimentConfig cfg;
    try {
        cfg = workbench::load_config(config_path);
        cfg.suite = suite;
        if (seed) cfg.seed = *seed;
        if (paths) cfg.paths = *paths;
        if (threads) cfg.threads = *threads;
        if (!out_dir.empty()) cfg.output.dir = out_dir;
        cfg.validate();
    } catch (const workbench::WorkbenchError& e) {
        std::cerr << "workbench: " << e.what() << '\n';
        return 2;
    }

    try {
        const auto doc = workbench::run_experiment(cfg);
        const auto written = workbench::emit_report(doc, cfg.output.dir, {true, true, !no_artifacts});
        if (!quiet) print_summary(doc, std::cout);
        if (!quiet) std::cout << "report: " << written.front().string() << '\n';
        return doc.overall_pass ? 0 : 1;
    } catch (const workbench::InvalidArgument& e) {
        std::cerr << "workbench: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "workbench: " << e.what() << '\n';
        return 3;
    }
}
