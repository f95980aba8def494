#include "workbench/workbench.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>

using namespace workbench;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("workbench_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(WORKBENCH_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_path(const std::string& name) { return std::string(WORKBENCH_CONFIG_DIR) + "/" + name; }

ExperimentConfig small_yosida() {
    auto cfg = config_from_toml_string(R"(
suite = "yosida"
preset = "stochastic_heat"
galerkin_dim = 4
paths = 200
[grid]
steps = 20
[yosida]
paths = 200
)");
    cfg.output.dir = scratch("yosida_run").string();
    return cfg;
}

}  // namespace

TEST(Config, DefaultsOverlaidAndValidated) {
    const auto cfg = config_from_toml_string("suite = \"simulate\"\npaths = 123\n[grid]\nsteps = 7\n");
    EXPECT_EQ(cfg.suite, "simulate");
    EXPECT_EQ(cfg.paths, 123u);
    EXPECT_EQ(cfg.grid.steps, 7u);
    EXPECT_EQ(cfg.preset, ExperimentConfig{}.preset);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(config_from_toml_string("suite = \"simulate\"\npathz = 3\n"), InvalidArgument);
    EXPECT_THROW(config_from_toml_string("[grid]\nstepz = 3\n"), InvalidArgument);
    EXPECT_THROW(config_from_toml_string("suite = \"nope\"\n"), InvalidArgument);
    EXPECT_THROW(config_from_toml_string("preset = \"nope\"\n"), InvalidArgument);
    EXPECT_THROW(config_from_toml_string("paths = -4\n"), InvalidArgument);
    EXPECT_THROW(config_from_toml_string("paths = \"many\"\n"), InvalidArgument);
    EXPECT_THROW(config_from_toml_string("[tolerances]\noracle = 0.0\n"), InvalidArgument);
    EXPECT_THROW(config_from_toml_string("suite = = 3\n"), InvalidArgument);
}

TEST(Config, ShippedConfigsLoad) {
    std::size_t count = 0;
    for (const auto& entry : fs::directory_iterator(WORKBENCH_CONFIG_DIR)) {
        if (entry.path().extension() != ".toml") continue;
        EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
        ++count;
    }
    EXPECT_GE(count, 8u);
}

TEST(Config, JsonRoundTrip) {
    const auto cfg = load_config(config_path("relations.toml"));
    const auto again = config_from_json(Json(cfg));
    EXPECT_EQ(Json(again), Json(cfg));
}

TEST(Report, JsonRoundTripIsExact) {
    ReportDocument doc;
    doc.suite = "simulate";
    doc.timestamp = "20261015T101112.345Z";
    doc.config = Json{{"seed", 9}};
    auto a = make_record("alpha", 0.1 + 0.2, 1.0 / 3.0);
    a.details["ratio"] = 1e-300;
    a.details["missing"] = std::nan("");
    a.series = {1.0, -2.5e-17, 3.0};
    a.wall_ms = 12.5;
    doc.checks = {a, make_record("beta", 7.0, 5.0, "regression", true)};
    doc.wall_ms = 99.0;
    doc.finalize();
    const auto back = parse_report(emit_json(doc));
    EXPECT_EQ(back.checks.size(), 2u);
    EXPECT_TRUE(std::isnan(back.checks[0].details.at("missing")));
    // NaN never compares equal; drop it before the structural comparison.
    auto lhs = doc, rhs = back;
    lhs.checks[0].details.erase("missing");
    rhs.checks[0].details.erase("missing");
    EXPECT_EQ(lhs, rhs);
    EXPECT_EQ(emit_json(back), emit_json(doc));
}

TEST(Report, OverallPassFollowsChecks) {
    ReportDocument doc;
    doc.finalize();
    EXPECT_TRUE(doc.overall_pass);
    doc.checks = {make_record("a", 1.0, 2.0), make_record("b", 3.0, 2.0)};
    doc.finalize();
    EXPECT_FALSE(doc.overall_pass);
    EXPECT_TRUE(make_record("c", 3.0, 2.0, "oracle", true).pass);
    EXPECT_FALSE(make_record("d", std::nan(""), 2.0).pass);
}

TEST(Report, EmittedNamesCarrySuiteSeedAndTimestamp) {
    const auto dir = scratch("emit");
    ReportDocument doc;
    doc.suite = "tree-dpp";
    doc.config = Json{{"seed", 42}};
    doc.timestamp = utc_timestamp();
    doc.artifacts.push_back({"extra.csv", [](const fs::path& p) { write_text(p, "x\n1\n"); }});
    doc.finalize();
    const auto written = emit_report(doc, dir);
    ASSERT_EQ(written.size(), 3u);
    const std::regex stamp(R"(\d{8}T\d{6}\.\d{3}Z)");
    EXPECT_TRUE(std::regex_match(doc.timestamp, stamp));
    const std::string stem = "tree-dpp_seed42_" + doc.timestamp;
    EXPECT_EQ(written[0].filename(), stem + ".json");
    EXPECT_EQ(written[1].filename(), stem + "_checks.csv");
    EXPECT_EQ(written[2].filename(), stem + "_extra.csv");
    for (const auto& p : written) EXPECT_TRUE(fs::exists(p));
    std::ifstream in(written[0]);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(parse_report(text), doc);
}

TEST(Report, RerunIsReproducible) {
    const auto cfg = small_yosida();
    const auto a = run_experiment(cfg);
    const auto b = run_experiment(cfg);
    EXPECT_FALSE(a.checks.empty());
    EXPECT_EQ(reproducible_view(report_to_json(a)), reproducible_view(report_to_json(b)));
    auto other = cfg;
    other.seed += 1;
    EXPECT_NE(reproducible_view(report_to_json(run_experiment(other))), reproducible_view(report_to_json(a)));
}

TEST(Io, BundleBinaryRoundTripIsBitExact) {
    const auto dir = scratch("bundle");
    const auto spec = lq_matrix_spec();
    const TimeGrid grid{0.0, 1.0, 12};
    const auto b = simulate_forward(lq_model(spec), riccati_feedback(spec, grid), Eigen::Vector2d(1.0, -0.5), grid, 37, 3);
    write_bundle_binary(b, dir / "b.bin");
    const auto r = read_bundle_binary(dir / "b.bin");
    EXPECT_EQ(r.paths(), b.paths());
    EXPECT_EQ(r.steps(), b.steps());
    EXPECT_EQ(r.seed(), b.seed());
    EXPECT_EQ(r.raw_states(), b.raw_states());
    EXPECT_EQ(r.raw_controls(), b.raw_controls());
    EXPECT_EQ(r.raw_increments(), b.raw_increments());
    for (std::size_t i : {0u, 36u})
        for (std::size_t k : {0u, 5u, 12u}) EXPECT_EQ(r.w(i, k), b.w(i, k));

    write_bundle_csv(b, dir / "b.csv", 2);
    std::ifstream in(dir / "b.csv");
    std::string header, line;
    std::getline(in, header);
    EXPECT_EQ(header, "path,step,t,x0,x1,u0,u1,dw0,dw1,w0,w1");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 2u * 13u);

    EXPECT_THROW(read_bundle_binary(dir / "b.csv"), IoError);
    EXPECT_THROW(read_bundle_binary(dir / "missing.bin"), IoError);
}

TEST(Io, StepTableRoundTrip) {
    const auto dir = scratch("steps");
    std::vector<Matrix> table(4, Matrix(3, 2));
    for (std::size_t k = 0; k < table.size(); ++k) {
        table[k].setConstant(0.1 * static_cast<double>(k));
        table[k](2, 1) = -1e-300;
    }
    write_step_table_binary(table, TimeGrid{0.0, 1.0, 3}, 5, dir / "t.bin");
    EXPECT_EQ(read_step_table_binary(dir / "t.bin"), table);
    write_step_table_csv(table, TimeGrid{0.0, 1.0, 3}, "q", dir / "t.csv");
    std::ifstream in(dir / "t.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "path,step,t,q0,q1");
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    const std::string out = " --out " + dir.string() + " -q";
    EXPECT_EQ(run_cli("yosida -c " + config_path("yosida.toml") + " -q --out " + (dir / "ok").string()), 0);
    EXPECT_EQ(run_cli("nonsense -c " + config_path("yosida.toml") + out), 2);
    EXPECT_EQ(run_cli("yosida -c " + (dir / "absent.toml").string() + out), 2);
    EXPECT_EQ(run_cli("yosida" + out), 2);

    write_text(dir / "typo.toml", "suite = \"yosida\"\npathz = 4\n");
    EXPECT_EQ(run_cli("yosida -c " + (dir / "typo.toml").string() + out), 2);

    // An unattainable tolerance turns a passing check into a failing run.
    std::ifstream in(config_path("yosida.toml"));
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    text += "\n[tolerances]\nclosed_form = 1e-300\n";
    write_text(dir / "strict.toml", text);
    EXPECT_EQ(run_cli("yosida -c " + (dir / "strict.toml").string() + out), 1);

    // A JSON report reruns its own config.
    const auto report = std::find_if(fs::directory_iterator(dir / "ok"), fs::directory_iterator{}, [](const auto& e) {
        return e.path().extension() == ".json";
    });
    ASSERT_NE(report, fs::directory_iterator{});
    EXPECT_EQ(run_cli("yosida -c " + report->path().string() + out + " --no-artifacts"), 0);
}

TEST(Cli, OverridesReachTheReport) {
    const auto dir = scratch("cli_override");
    ASSERT_EQ(run_cli("simulate -c " + config_path("simulate.toml") + " --seed 11 --paths 64 --out " + dir.string() +
                      " -q --no-artifacts"),
              0);
    std::size_t reports = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".json") continue;
        ++reports;
        EXPECT_NE(e.path().filename().string().find("simulate_seed11_"), std::string::npos);
        std::ifstream in(e.path());
        const auto j = Json::parse(in);
        EXPECT_EQ(j.at("config").at("seed").get<std::uint64_t>(), 11u);
        EXPECT_EQ(j.at("config").at("paths").get<std::size_t>(), 64u);
    }
    EXPECT_EQ(reports, 1u);
}
