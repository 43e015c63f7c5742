#pragma once

#include "gnmk/basis_adapt.hpp"
#include "gnmk/dynsys.hpp"
#include "gnmk/pce.hpp"
#include "gnmk/sparse_bayes.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gnmk::basis_adapt {

enum class BasisPolicy { fixed_hermite, mgs, nmap };

const char* policy_name(BasisPolicy p);
BasisPolicy parse_policy(const std::string& name);

struct ForecastConfig {
    BasisPolicy policy = BasisPolicy::nmap;
    int order = 4;                 ///< order of the link maps (and of the fixed Hermite fit)
    int reexpand_order = 4;        ///< order of the Hermite re-expansion of forecasts
    long train_samples = 100;
    long validation_samples = 1000;
    long work_samples = 10000;
    double anchor_step = 6.0;      ///< re-anchoring grid, hours
    double kl_tolerance = 0.05;
    std::uint64_t seed = 0;
    sparse_bayes::RvmConfig rvm;

    void validate() const;
};

struct AdaptiveBasisState {
    double anchor_time = 0.0;
    pce::PCExpansion anchor_expansion;
    pce::BasisKind basis;
    double kl_tolerance = 0.05;
};

/// Propagates a Hermite prior through a flow and serves forecasts at later times.
/// Under the fixed-Hermite policy the state at t is fitted directly in the prior
/// germ. Under the MGS and NMAP policies it is a chain of polynomial maps between
/// anchor states; a new anchor is placed whenever the KL divergence between the
/// chain prediction and exact validation trajectories exceeds kl_tolerance.
class StateForecaster {
public:
    StateForecaster(dynsys::Flow flow, pce::PCExpansion prior, double t0, ForecastConfig cfg);

    double t0() const { return t0_; }
    const pce::PCExpansion& prior() const { return prior_; }
    const ForecastConfig& config() const { return cfg_; }

    /// Hermite expansion of the state at t >= t0. The germ is the prior germ under
    /// the fixed-Hermite policy and a fresh germ of dimension state_dim otherwise.
    const pce::PCExpansion& forecast(double t);

    /// Surrogate state at t for samples of the prior germ.
    Mat predict(const Mat& prior_germ, double t);

    /// Exact states at t of the trajectories started from the given prior-germ set.
    const Mat& training_states(double t) { return states(train_, t); }
    const Mat& validation_states(double t) { return states(validation_, t); }
    const Mat& validation_germ() const { return validation_.germ; }

    /// Relative validation RMSE of predict() at t: ||pred - exact||_F / ||exact||_F.
    double validation_error(double t);

    /// Anchor times placed so far (t0 first).
    const std::vector<double>& anchors() const { return anchors_; }
    AdaptiveBasisState anchor_state(std::size_t j);

    const Flags& flags() const { return flags_; }

private:
    struct Ensemble {
        Mat germ;
        std::map<double, Mat> states;  // keyed by time
    };
    struct AnchorBasis {
        pce::BasisKind basis;
        pce::MultiIndexSet index_set;
    };

    const Mat& states(Ensemble& e, double t);
    void extend_to(double t);
    std::size_t anchor_index_before(double t) const;
    const pce::PCExpansion& link(std::size_t anchor_index, double t);
    const AnchorBasis& anchor_basis(std::size_t anchor_index);
    const pce::PCExpansion& hermite_fit(double t);
    Mat chain_to_anchor(const Mat& prior_germ, std::size_t anchor_index);
    Mat clamp_to_training(std::size_t anchor_index, Mat anchor_states);
    Mat apply_link(std::size_t anchor_index, double t, const Mat& anchor_states);
    double grid_floor(double t) const;

    dynsys::Flow flow_;
    pce::PCExpansion prior_;
    double t0_;
    ForecastConfig cfg_;
    Ensemble train_;
    Ensemble validation_;
    std::vector<double> anchors_;
    double checked_until_;
    std::map<std::pair<std::size_t, double>, pce::PCExpansion> links_;
    std::map<std::size_t, AnchorBasis> anchor_bases_;
    std::map<std::size_t, Mat> validation_anchor_states_;
    std::map<double, pce::PCExpansion> hermite_fits_;
    std::map<double, pce::PCExpansion> forecasts_;
    Flags flags_;
};

}  // namespace gnmk::basis_adapt
