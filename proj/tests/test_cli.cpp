#include "gnmk/experiment.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace gnmk;
using namespace gnmk::experiment;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("gnmk_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

json cheap()
{
    return json::parse(R"({
        "seed": 4,
        "time": {"horizon": 12, "report_step": 6, "delta_tau": 6},
        "basis": {"policy": "fixed-hermite", "validation_samples": 200, "work_samples": 2000},
        "samples": 40,
        "output": {"quantile_samples": 2000},
        "sweep": {"delta_tau": [6, 3], "noise_coefficient": [0.1], "smoother": ["ps2"]}
    })");
}

std::string error_of(const json& j)
{
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

int run_cli(const std::string& args)
{
    const int status = std::system((std::string(GNMK_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("configuration errors name the field")
{
    CHECK(error_of(json::object()).rfind("seed:", 0) == 0);
    CHECK(error_of(json{{"seed", -1}}).rfind("seed:", 0) == 0);
    CHECK(error_of(json{{"seed", 1}, {"colour", 2}}).rfind("colour:", 0) == 0);
    CHECK(error_of(json{{"seed", 1}, {"smoother", {{"kind", "ps3"}}}}).rfind("smoother.kind:", 0) == 0);
    CHECK(error_of(json{{"seed", 1}, {"prior", {{"std", {1, 0, 1}}}}}).rfind("prior.std:", 0) == 0);
    CHECK(error_of(json{{"seed", 1}, {"truth", {1, 2}}}).rfind("truth:", 0) == 0);
    CHECK(error_of(json{{"seed", 1}, {"time", {{"delta_tau", 4}}}}).rfind("time.delta_tau:", 0) == 0);
    CHECK(error_of(json{{"seed", 1}, {"basis", {{"order", 0}}}}).rfind("basis", 0) == 0);
    CHECK(error_of(json{{"seed", 1}, {"measurement", {{"observed", {2, 0}}}}}).rfind("measurement.observed:", 0) == 0);
    CHECK(error_of(json{{"seed", 1}}).empty());
}

TEST_CASE("defaults describe the 48 h twin experiment")
{
    const ExperimentConfig c = parse_config(json{{"seed", 0}});
    CHECK(c.truth == (Vec(3) << 1.0, 0.0, -0.75).finished());
    CHECK(c.horizon == 48.0);
    CHECK(c.filter.delta_tau == 6.0);
    CHECK(c.smoother == SmootherKind::ps2);
    CHECK(c.forecast.policy == basis_adapt::BasisPolicy::nmap);
    CHECK(c.forecast.order == 4);
    CHECK(c.samples == 100);
    CHECK(c.noise_coefficient == 0.1);
    CHECK(report_times(c).size() == 9);
}

TEST_CASE("canonical JSON round trip and hashing")
{
    const ExperimentConfig c = parse_config(cheap());
    const ExperimentConfig d = parse_config(to_json(c));
    CHECK(config_hash(c) == config_hash(d));
    CHECK(config_hash(c).size() == 16);
    ExperimentConfig e = c;
    e.output_dir = "elsewhere";
    CHECK(config_hash(e) == config_hash(c));
    e.seed = 5;
    CHECK(config_hash(e) != config_hash(c));
}

TEST_CASE("output directories reject mixed configurations")
{
    const fs::path dir = scratch("mixed");
    const ExperimentConfig c = parse_config(cheap());
    {
        const OutputDirectory out(dir, config_hash(c));
        write_simulation(simulate(c), out);
    }
    CHECK_NOTHROW(OutputDirectory(dir, config_hash(c)));
    CHECK_THROWS_AS(OutputDirectory(dir, "0000000000000000"), ConfigError);
    CHECK(slurp(dir / "truth.csv").rfind("# config_hash=" + config_hash(c) + "\ntime,", 0) == 0);
    fs::remove_all(dir);
}

TEST_CASE("simulation is deterministic and noise scales with the state")
{
    const ExperimentConfig c = parse_config(cheap());
    const Twin a = simulate(c), b = simulate(c);
    CHECK(a.measurement == b.measurement);
    CHECK(a.truth.row(0).transpose() == c.truth);
    CHECK(a.noise_std.isApprox((0.1 * a.truth_final.cwiseAbs()).cwiseMax(c.noise_floor)));
}

TEST_CASE("zero-length direct smoothing is one linear update")
{
    json j = cheap();
    j["time"]["horizon"] = 0;
    j["smoother"] = {{"kind", "ds"}};
    const RunSummary s = run_experiment(parse_config(j));
    REQUIRE(s.rows.size() == 1);
    CHECK(s.rows[0].iterations == 1);
    CHECK(s.rows[0].converged);
    CHECK((s.rows[0].p01.array() <= s.rows[0].mean.array()).all());
    CHECK((s.rows[0].mean.array() <= s.rows[0].p99.array()).all());
}

TEST_CASE("quantiles are ordered and reproducible")
{
    const pce::PCExpansion x = pce::PCExpansion::linear(Vec::Zero(2), Mat::Identity(2, 2));
    Vec a01, a99, b01, b99;
    pce_quantiles(x, 100000, 3, a01, a99);
    pce_quantiles(x, 100000, 3, b01, b99);
    CHECK(a01 == b01);
    // Standard error of a 1% quantile at 1e5 samples is about 0.012.
    CHECK(((a01.array() + 2.3263).abs() <= 0.05).all());
    CHECK(((a99.array() - 2.3263).abs() <= 0.05).all());
}

TEST_CASE("sweep cells in parallel equal isolated serial runs")
{
    const fs::path dir = scratch("sweep");
    const ExperimentConfig c = parse_config(cheap());
    const auto cells = run_sweep(c, dir);
    REQUIRE(cells.size() == 2);
    for (const auto& cell : cells) {
        ExperimentConfig k = c;
        k.filter.delta_tau = cell.delta_tau;
        const RunSummary s = run_experiment(k);
        CHECK(config_hash(k) == cell.config_hash);
        CHECK(coverage(s) == cell.coverage);
        const fs::path sub = dir / ("cell_dt" + format_double(cell.delta_tau) + "_noise0.1_ps2");
        const fs::path solo = scratch("solo");
        write_run(s, OutputDirectory(solo, s.config_hash));
        CHECK(slurp(sub / "trajectory.csv") == slurp(solo / "trajectory.csv"));
        fs::remove_all(solo);
    }
    fs::remove_all(dir);
}

TEST_CASE("command line exit codes")
{
    const fs::path dir = scratch("cli");
    fs::create_directories(dir);
    const fs::path cfg = dir / "c.json";
    std::ofstream(cfg) << cheap().dump();
    std::ofstream(dir / "bad.json") << R"({"seed": 1, "smoother": {"kind": "ps9"}})";
    const std::string out = (dir / "out").string();

    CHECK(run_cli("simulate --config " + cfg.string() + " --out " + out) == 0);
    const std::string first = slurp(dir / "out" / "measurement.csv");
    CHECK(run_cli("simulate --config " + cfg.string() + " --out " + out) == 0);
    CHECK(slurp(dir / "out" / "measurement.csv") == first);
    CHECK(run_cli("simulate --config " + cfg.string() + " --seed 9 --out " + out) == 2);
    CHECK(run_cli("smooth --config " + (dir / "bad.json").string()) == 2);
    CHECK(run_cli("simulate --out " + out) == 2);
    CHECK(run_cli("simulate --bogus") == 2);
    CHECK(run_cli("") == 2);
    fs::remove_all(dir);
}

TEST_CASE("shipped example configurations are valid")
{
    int count = 0;
    for (const auto& entry : fs::directory_iterator(GNMK_CONFIG_DIR)) {
        if (entry.path().extension() != ".json") continue;
        CAPTURE(entry.path().string());
        CHECK_NOTHROW(load_config(entry.path()));
        ++count;
    }
    CHECK(count >= 5);
}
