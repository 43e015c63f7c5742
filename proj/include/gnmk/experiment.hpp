#pragma once

#include "gnmk/dynsys.hpp"
#include "gnmk/filter.hpp"
#include "gnmk/forecaster.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnmk::experiment {

/// Invalid configuration; the message starts with the offending field path.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class SmootherKind { ds, ps1, ps2 };

const char* smoother_name(SmootherKind k);
SmootherKind parse_smoother(const std::string& name);

struct ExperimentConfig {
    std::uint64_t seed = 0;
    dynsys::SystemParams system;
    double hours_per_unit = 120.0;
    Vec truth;
    Vec prior_mean;
    Vec prior_std;
    double t0 = 0.0;
    double horizon = 48.0;
    double report_step = 6.0;
    double noise_coefficient = 0.1;
    double noise_floor = 1e-6;
    std::vector<int> observed;
    SmootherKind smoother = SmootherKind::ps2;
    long samples = 100;
    filter::FilterConfig filter;
    basis_adapt::ForecastConfig forecast;
    dynsys::IntegratorConfig integrator;
    long quantile_samples = 100000;
    std::string output_dir;

    std::vector<double> fit_times;
    std::vector<basis_adapt::BasisPolicy> fit_policies;
    std::vector<double> jacobian_windows;
    int jacobian_runs = 10;
    std::vector<double> sweep_delta_tau;
    std::vector<double> sweep_noise;
    std::vector<SmootherKind> sweep_smoother;
};

/// Defaults: the 48 h Lorenz-84 twin experiment smoothed by PS-2 with an NMAP basis.
ExperimentConfig default_config();
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Complete configuration with every default filled in.
nlohmann::json to_json(const ExperimentConfig& cfg);
/// FNV-1a hash (16 hex digits) of the canonical configuration, output directory excluded.
std::string config_hash(const ExperimentConfig& cfg);

std::vector<double> report_times(const ExperimentConfig& cfg);

struct Twin {
    std::vector<double> times;  ///< report times
    Mat truth;                  ///< one row per report time
    Vec truth_final;            ///< truth at the horizon
    Vec measurement;            ///< observed components at the horizon
    Vec noise_std;
    filter::MeasurementModel model;
};

/// Truth trajectory and the noisy measurement at the horizon.
Twin simulate(const ExperimentConfig& cfg);

struct ReportRow {
    double time = 0.0;
    Vec truth;
    Vec mean;
    Vec variance;
    Vec p01;
    Vec p99;
    int iterations = 0;
    bool converged = false;
};

struct RunSummary {
    std::string config_hash;
    nlohmann::json config;
    Twin twin;
    filter::SmootherResult result;
    std::vector<ReportRow> rows;
    std::vector<double> anchors;
    Flags flags;
    double wall_clock_s = 0.0;
};

RunSummary run_experiment(const ExperimentConfig& cfg);

/// Fraction of report times at which every truth component lies in [p01, p99].
double coverage(const RunSummary& s);

/// 1% and 99% quantiles per component from n samples of the expansion.
void pce_quantiles(const pce::PCExpansion& x, long n, std::uint64_t seed, Vec& p01, Vec& p99);

struct FitPceRecord {
    basis_adapt::BasisPolicy policy;
    double time;
    double relative_rmse;
    std::size_t anchors;
};

std::vector<FitPceRecord> fit_pce_study(const ExperimentConfig& cfg);

struct JacobianRecord {
    double window;
    int run;
    int iteration;
    double projection_error;
    double bayes_error;
};

/// Central finite-difference Jacobian of the flow map over [t0, t1].
Mat finite_difference_jacobian(const dynsys::Flow& flow, const Vec& x, double t0, double t1);

/// Relative Frobenius errors of both forward-map estimators against finite differences,
/// at every GNMK iteration of the last backward step of length `window`.
std::vector<JacobianRecord> jacobian_check(const ExperimentConfig& cfg, double window, int run);

struct SweepCell {
    double delta_tau;
    double noise_coefficient;
    SmootherKind smoother;
    std::string config_hash;
    double coverage;
    double mean_band_width;
    int max_iterations;
    Flags flags;
};

/// Runs every (delta_tau, noise, smoother) cell; each cell writes into its own sub-directory.
std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Output directory bound to one configuration hash. Files already present that declare
/// a different hash make the constructor throw ConfigError.
class OutputDirectory {
public:
    OutputDirectory(std::filesystem::path dir, std::string hash);
    const std::filesystem::path& path() const { return dir_; }
    const std::string& hash() const { return hash_; }
    /// CSV with a leading "# config_hash=" line followed by the header row.
    void write_csv(const std::string& name, const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows) const;
    /// JSON object; the config_hash key is added.
    void write_json(const std::string& name, nlohmann::json j) const;
    void write_pce(const std::string& name, const pce::PCExpansion& x) const;

private:
    std::filesystem::path dir_;
    std::string hash_;
};

/// Shortest round-trip decimal form.
std::string format_double(double v);

void write_simulation(const Twin& twin, const OutputDirectory& out);
void write_run(const RunSummary& s, const OutputDirectory& out);

}  // namespace gnmk::experiment
