#pragma once

#include "gnmk/linalg.hpp"
#include "gnmk/pce.hpp"

#include <vector>

namespace gnmk::sparse_bayes {

struct RvmConfig {
    int max_iter = 2000;
    /// Relative change of the log evidence below which the fit is converged.
    double tol = 1e-9;
    double noise_floor = 1e-12;
    /// Precision (in units of the normalized problem) above which a weight is removed.
    double prune_threshold = 1e12;
    bool estimate_noise = true;
    /// Noise variance used when estimate_noise is off.
    double fixed_noise_var = 1e-6;

    void validate() const;
};

struct RvmResult {
    Vec weights;                 ///< length P, exactly zero off the active set
    Vec precisions;              ///< per weight; +inf for pruned weights
    double noise_var = 0.0;
    std::vector<int> active_set;
    Mat posterior_cov;           ///< over the active set, in active_set order
    std::vector<double> log_evidence_trace;
    int iterations = 0;
    bool converged = false;
    bool rank_deficient = false;
};

RvmResult rvm_fit(const Mat& design, const Vec& targets, const RvmConfig& cfg);

/// RVM on [1, features] with an unregularized intercept (weight 0, precision 0).
RvmResult rvm_fit_intercept(const Mat& features, const Vec& targets, const RvmConfig& cfg);

struct Prediction {
    double mean = 0.0;
    double variance = 0.0;
};

Prediction rvm_predict(const RvmResult& result, const Vec& features);

/// One RVM per state component on the shared design of basis evaluations.
pce::PCExpansion fit_pce(const Mat& germ_samples, const Mat& state_samples, const pce::BasisKind& basis,
                         const pce::MultiIndexSet& index_set, const RvmConfig& cfg, Flags* flags = nullptr);

/// As fit_pce with a precomputed design matrix.
pce::PCExpansion fit_pce_design(const Mat& design, const Mat& state_samples, const pce::BasisKind& basis,
                                const pce::MultiIndexSet& index_set, const RvmConfig& cfg, Flags* flags = nullptr);

}  // namespace gnmk::sparse_bayes
