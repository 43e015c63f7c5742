#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnmk {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// Raised when a numerical contract cannot be met (non-PSD covariance, degenerate data).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-fatal conditions recorded while a computation proceeds.
enum class Flag {
    rvm_not_converged,
    rank_deficient,
    singular_update,
    psd_clamped,
    nataf_regularized,
    gnmk_not_converged,
    gnmk_diverged,
    integrator_failure,
    bias_pseudo_inverse,
    mgs_column_dropped,
};

const char* flag_name(Flag f);

/// Ordered set of flags; insertion keeps the first occurrence only.
class Flags {
public:
    void add(Flag f);
    void merge(const Flags& other);
    bool has(Flag f) const;
    bool empty() const { return flags_.empty(); }
    const std::vector<Flag>& items() const { return flags_; }

private:
    std::vector<Flag> flags_;
};

struct PinvResult {
    Mat inverse;
    int rank = 0;
    bool truncated = false;
};

/// Moore-Penrose pseudo-inverse by truncated SVD; singular values below
/// rcond * sigma_max are discarded.
PinvResult pinv_svd(const Mat& a, double rcond);
Mat pinv(const Mat& a, double rcond);

/// Symmetrizes c and clamps slightly negative eigenvalues to zero.
/// Eigenvalues below -1e-12 * ||c|| raise NumericalError.
Mat repair_psd(const Mat& c, bool* clamped = nullptr);

/// Lower Cholesky-like factor L with L L^T = c for a PSD matrix (eigen-based when
/// c is singular).
Mat psd_factor(const Mat& c);

double normal_cdf(double x);
double normal_quantile(double p);

/// Derives an independent stream seed from a base seed and a salt (splitmix64).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

/// Sample mean and (1/N) covariance of the rows of x.
Vec sample_mean(const Mat& x);
Mat sample_cov(const Mat& x);

}  // namespace gnmk
