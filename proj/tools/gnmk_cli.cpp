#include "gnmk/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>

namespace ex = gnmk::experiment;
using nlohmann::json;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool strict = false;
};

constexpr int exit_config = 2;
constexpr int exit_strict = 3;

ex::ExperimentConfig resolve(const Options& o)
{
    json j = json::object();
    if (!o.config.empty()) {
        std::ifstream is(o.config);
        if (!is) throw ex::ConfigError(o.config + ": cannot open configuration file");
        try {
            j = json::parse(is);
        } catch (const json::parse_error& e) {
            throw ex::ConfigError(o.config + ": " + e.what());
        }
        if (!j.is_object()) throw ex::ConfigError("(root): expected an object");
    }
    if (o.seed) j["seed"] = *o.seed;
    if (!o.out.empty()) j["output"]["directory"] = o.out;
    ex::ExperimentConfig cfg = ex::parse_config(j);
    if (cfg.output_dir.empty()) cfg.output_dir = "out";
    return cfg;
}

bool strict_failure(const gnmk::Flags& f)
{
    using gnmk::Flag;
    for (Flag x : {Flag::gnmk_not_converged, Flag::gnmk_diverged, Flag::integrator_failure, Flag::singular_update}) {
        if (f.has(x)) return true;
    }
    return false;
}

void print_flags(const gnmk::Flags& f)
{
    if (f.empty()) return;
    std::cerr << "flags:";
    for (auto x : f.items()) std::cerr << ' ' << gnmk::flag_name(x);
    std::cerr << '\n';
}

int cmd_simulate(const ex::ExperimentConfig& cfg)
{
    const ex::OutputDirectory out(cfg.output_dir, ex::config_hash(cfg));
    const ex::Twin tw = ex::simulate(cfg);
    ex::write_simulation(tw, out);
    std::cout << "wrote " << (out.path() / "truth.csv").string() << " and measurement.csv\n";
    return 0;
}

int cmd_smooth(const ex::ExperimentConfig& cfg, bool strict)
{
    const ex::OutputDirectory out(cfg.output_dir, ex::config_hash(cfg));
    const ex::RunSummary s = ex::run_experiment(cfg);
    ex::write_run(s, out);
    std::cout << ex::smoother_name(cfg.smoother) << " " << cfg.t0 << "-" << cfg.horizon << " h: coverage "
              << ex::coverage(s) << ", " << s.result.steps.size() << " steps, " << s.wall_clock_s << " s\n";
    print_flags(s.flags);
    return strict && strict_failure(s.flags) ? exit_strict : 0;
}

int cmd_fit_pce(const ex::ExperimentConfig& cfg)
{
    const ex::OutputDirectory out(cfg.output_dir, ex::config_hash(cfg));
    const auto records = ex::fit_pce_study(cfg);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : records) {
        rows.push_back({gnmk::basis_adapt::policy_name(r.policy), ex::format_double(r.time),
                        ex::format_double(r.relative_rmse), std::to_string(r.anchors)});
        std::cout << gnmk::basis_adapt::policy_name(r.policy) << " t=" << r.time << " rmse=" << r.relative_rmse
                  << " anchors=" << r.anchors << '\n';
    }
    out.write_csv("fit_pce.csv", {"policy", "time", "relative_rmse", "anchors"}, rows);
    return 0;
}

int cmd_jacobian(const ex::ExperimentConfig& cfg)
{
    const ex::OutputDirectory out(cfg.output_dir, ex::config_hash(cfg));
    std::vector<std::vector<std::string>> rows;
    json summary = json::array();
    for (double w : cfg.jacobian_windows) {
        double proj = 0.0, bayes = 0.0;
        for (int run = 0; run < cfg.jacobian_runs; ++run) {
            const auto recs = ex::jacobian_check(cfg, w, run);
            for (const auto& r : recs) {
                rows.push_back({ex::format_double(r.window), std::to_string(r.run), std::to_string(r.iteration),
                                ex::format_double(r.projection_error), ex::format_double(r.bayes_error)});
            }
            proj += recs.back().projection_error;
            bayes += recs.back().bayes_error;
        }
        proj /= cfg.jacobian_runs;
        bayes /= cfg.jacobian_runs;
        summary.push_back({{"window", w}, {"projection_error", proj}, {"bayes_error", bayes}});
        std::cout << "window " << w << " h: projection " << proj << ", bayes " << bayes << '\n';
    }
    out.write_csv("jacobian.csv", {"window", "run", "iteration", "projection_error", "bayes_error"}, rows);
    out.write_json("jacobian_summary.json", {{"runs", cfg.jacobian_runs}, {"windows", summary}});
    return 0;
}

int cmd_sweep(const ex::ExperimentConfig& cfg, bool strict)
{
    const ex::OutputDirectory out(cfg.output_dir, ex::config_hash(cfg));
    const auto cells = ex::run_sweep(cfg, out.path());
    std::vector<std::vector<std::string>> rows;
    gnmk::Flags all;
    for (const auto& c : cells) {
        std::string flags;
        for (auto f : c.flags.items()) flags += std::string(flags.empty() ? "" : ";") + gnmk::flag_name(f);
        rows.push_back({ex::format_double(c.delta_tau), ex::format_double(c.noise_coefficient),
                        ex::smoother_name(c.smoother), c.config_hash, ex::format_double(c.coverage),
                        ex::format_double(c.mean_band_width), std::to_string(c.max_iterations), flags});
        all.merge(c.flags);
    }
    out.write_csv("sweep.csv",
                  {"delta_tau", "noise_coefficient", "smoother", "cell_hash", "coverage", "mean_band_width",
                   "max_iterations", "flags"},
                  rows);
    std::cout << cells.size() << " cells written to " << out.path().string() << '\n';
    print_flags(all);
    return strict && strict_failure(all) ? exit_strict : 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Gauss-Newton-Markov-Kalman smoothing experiments on Lorenz-84"};
    app.require_subcommand(1);
    Options opt;
    std::uint64_t seed = 0;

    const std::map<std::string, std::string> commands{
        {"simulate", "Generate the truth trajectory and the noisy measurement"},
        {"smooth", "Run the configured smoother and write posterior statistics"},
        {"fit-pce", "Compare basis policies against Monte Carlo validation states"},
        {"jacobian-check", "Compare forward-map estimators with finite-difference Jacobians"},
        {"sweep", "Run every (delta_tau, noise, smoother) cell"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Seed (overrides the configuration)");
        sub->add_option("--out", opt.out, "Output directory (overrides the configuration)");
        sub->add_flag("--strict", opt.strict, "Exit with status 3 when numerical flags indicate failure");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    if (app.get_subcommands().front()->count("--seed")) opt.seed = seed;

    try {
        const ex::ExperimentConfig cfg = resolve(opt);
        if (name == "simulate") return cmd_simulate(cfg);
        if (name == "smooth") return cmd_smooth(cfg, opt.strict);
        if (name == "fit-pce") return cmd_fit_pce(cfg);
        if (name == "jacobian-check") return cmd_jacobian(cfg);
        return cmd_sweep(cfg, opt.strict);
    } catch (const ex::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
