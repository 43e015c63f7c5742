#pragma once

#include "gnmk/basis_adapt.hpp"
#include "gnmk/dynsys.hpp"
#include "gnmk/forecaster.hpp"
#include "gnmk/linalg.hpp"
#include "gnmk/pce.hpp"
#include "gnmk/sparse_bayes.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

namespace gnmk::filter {

enum class MapMode { projection, bayes };

const char* map_mode_name(MapMode m);
MapMode parse_map_mode(const std::string& name);

/// Observation y = selector * x + eps with eps ~ N(0, noise.cov) on its own germ.
struct MeasurementModel {
    Mat selector;                       ///< m x d, rows of the identity
    pce::GaussianDensity noise;
    pce::PCExpansion noise_expansion;   ///< order-1 expansion over an m-dimensional germ

    MeasurementModel() = default;
    MeasurementModel(const std::vector<int>& observed, int state_dim, const Mat& noise_cov);
    static MeasurementModel identity(int state_dim, const Mat& noise_cov);

    int obs_dim() const { return static_cast<int>(selector.rows()); }
    int state_dim() const { return static_cast<int>(selector.cols()); }
    bool has_noise() const { return noise.cov.size() > 0 && !noise.cov.isZero(0.0); }
    void validate() const;
};

/// z ~ H (x - x_lin) + h, with residual variance eps_var per output.
struct AffineForwardMap {
    Mat H;
    Vec x_lin;
    Vec h;
    Vec eps_var;
};

/// x ~ K y + b, with residual variance eps_var per state component.
struct AffineInverseMap {
    Mat K;
    Vec b;
    Vec eps_var;
};

struct FilterConfig {
    double tol = 1e-3;
    int max_iter = 100;
    MapMode map_mode = MapMode::projection;
    double pinv_rcond = 1e-10;
    double delta_tau = 6.0;
    bool bias_correct = false;
    /// Invert K_re H in the bias correction; false uses K H ~ I.
    bool bias_invert = true;
    /// Germ samples per map estimate.
    long samples = 100;
    /// Posterior samples propagated by the bias correction.
    long bias_samples = 2000;
    /// Stop and flag divergence after this many consecutive error increases (0 disables).
    int divergence_window = 0;
    /// Variance of an optional model-error block added to random pseudo-measurements.
    double model_error_var = 0.0;
    std::uint64_t seed = 0;
    sparse_bayes::RvmConfig rvm;
    basis_adapt::ReductionConfig reduction;

    void validate() const;
};

/// Propagates sample rows from t0 to t1.
using Propagator = std::function<Mat(const Mat&, double, double)>;

/// What the smoothers need from the dynamics: sample propagation and the prior at a time.
struct Dynamics {
    Propagator propagate;
    std::function<pce::PCExpansion(double)> forecast;
};

/// Flow-based propagation with priors served by a forecaster (which must outlive the result).
Dynamics make_dynamics(const dynsys::Flow& flow, basis_adapt::StateForecaster& forecaster);
/// dx/dt = A x, propagated exactly through the matrix exponential; x0 is the prior at t0.
Dynamics linear_dynamics(const Mat& A, const pce::PCExpansion& x0, double t0);

/// selector * x plus the noise expansion, on the concatenated germ [x germ, noise germ].
pce::PCExpansion forecast_measurement(const pce::PCExpansion& x, const MeasurementModel& model);

/// x_a = x_f + K (y_mes - y_f), K = C_{x_f y_f} C_{y_f}^+. x_f may live on a leading
/// block of the germ of y_f.
pce::PCExpansion gmk_update(const pce::PCExpansion& x_f, const pce::PCExpansion& y_f, const Vec& y_mes,
                            double pinv_rcond = 1e-10, Flags* flags = nullptr);

AffineForwardMap estimate_forward_map_projection(const pce::PCExpansion& x, const pce::PCExpansion& z,
                                                 const Vec& x_lin, double pinv_rcond = 1e-10,
                                                 Flags* flags = nullptr);
AffineForwardMap estimate_forward_map_bayes(const Mat& x_samples, const Mat& z_samples, const Vec& x_lin,
                                            const Mat& prior_mean_H, const sparse_bayes::RvmConfig& cfg,
                                            Flags* flags = nullptr);

/// Projection mode: K = C_{x y} C_y^+, b = E(x) - K E(y).
AffineInverseMap estimate_inverse_map(const pce::PCExpansion& x_f, const pce::PCExpansion& y,
                                      double pinv_rcond = 1e-10, Flags* flags = nullptr);
/// Bayes mode: one RVM per state component on the design [1, y^T].
AffineInverseMap estimate_inverse_map(const Mat& x_samples, const Mat& y_samples,
                                      const sparse_bayes::RvmConfig& cfg, Flags* flags = nullptr);

/// Deterministic data, Gaussian data (mean plus noise covariance replacing the model's),
/// or a random pseudo-measurement on its own germ.
using MeasurementValue = std::variant<Vec, pce::GaussianDensity, pce::PCExpansion>;

struct GnmkResult {
    pce::PCExpansion posterior;
    AffineForwardMap forward;
    AffineInverseMap inverse;
    int iterations = 0;
    bool converged = false;
    bool diverged = false;
    std::vector<double> errors;
    std::vector<Vec> linearization_points;
    Flags flags;
};

/// Data seen by one GNMK iteration before the maps are estimated.
struct IterationSamples {
    int iteration;
    const pce::PCExpansion& current;  ///< current posterior on the joint germ
    const Mat& germ;                  ///< joint-germ samples
    const Mat& states;                ///< current posterior at the germ samples
    const Mat& observed;              ///< observed part of the propagated states
    const Vec& x_lin;
    const Mat& previous_gain;         ///< empty on the first iteration
};
using IterationObserver = std::function<void(const IterationSamples&)>;

/// Iterated update of the state at t_start against data observed at t_end.
GnmkResult gnmk_iterate(const pce::PCExpansion& x_f, const MeasurementValue& y_mes, double t_start,
                        double t_end, const MeasurementModel& model, const FilterConfig& cfg,
                        const Propagator& propagate, std::uint64_t seed,
                        const IterationObserver& observer = {});

struct SmootherStep {
    double time = 0.0;
    pce::PCExpansion posterior;
    int iterations = 0;
    bool converged = false;
    std::vector<double> errors;
    std::vector<Vec> linearization_points;
    Vec bias;  ///< empty unless bias correction ran
    Flags flags;
};

struct SmootherResult {
    std::vector<SmootherStep> steps;  ///< ascending in time
    Flags flags;

    const SmootherStep& at(double t) const;
};

/// t0, t0 + delta_tau, ..., T.
std::vector<double> smoothing_times(double t0, double T, double delta_tau);

SmootherResult direct_smooth(const Vec& y_mes, double t0, double T, const MeasurementModel& model,
                             const FilterConfig& cfg, const Dynamics& dyn);
SmootherResult ps1_smooth(const Vec& y_mes, double t0, double T, const MeasurementModel& model,
                          const FilterConfig& cfg, const Dynamics& dyn);
SmootherResult ps2_smooth(const Vec& y_mes, double t0, double T, const MeasurementModel& model,
                          const FilterConfig& cfg, const Dynamics& dyn);

/// Mean bias of a backward posterior: propagates it to t_next, re-assimilates the
/// pseudo-measurement (mean x_mes, covariance C_mes) and returns
/// (K_re H)^+ K_re (E x^f - x_mes).
Vec bias_correct(const pce::PCExpansion& x_prev_post, const Vec& x_mes, const Mat& C_mes,
                 const AffineForwardMap& forward, double t, double t_next, const Propagator& propagate,
                 const FilterConfig& cfg, std::uint64_t seed, Flags* flags = nullptr);

/// C_xf + K (C_meas - C_y) K^T with K = C_xy C_y^+.
Mat posterior_cov_rv(const Mat& C_xf, const Mat& C_xy, const Mat& C_y, const Mat& C_meas,
                     double pinv_rcond = 1e-10, Flags* flags = nullptr);

}  // namespace gnmk::filter
