#pragma once

#include "gnmk/exec.hpp"
#include "gnmk/linalg.hpp"
#include "gnmk/pce.hpp"
#include "gnmk/sparse_bayes.hpp"

#include <cstdint>
#include <vector>

namespace gnmk::basis_adapt {

struct MgsResult {
    Mat features;              ///< N x k, empirically orthonormal
    Mat transform;             ///< P x k; rows of dropped columns are zero
    std::vector<int> kept;     ///< input columns retained, in order
    std::vector<int> dropped;  ///< input columns rejected as collinear
};

/// Modified Gram-Schmidt under the empirical inner product (1/N) u^T v, with one
/// re-orthogonalization pass. Columns whose residual falls below 1e-10 of their
/// norm are dropped.
MgsResult mgs_orthonormalize(const Mat& feature_samples);

/// MgsOrthonormal basis over the kept monomials of `monomials`.
struct MgsBasis {
    pce::BasisKind basis;
    pce::MultiIndexSet index_set;
    std::vector<int> dropped;
};
MgsBasis build_mgs_basis(const Mat& anchor_samples, int order, const std::string& reference = {});

/// Total-degree monomials of the anchor state components in graded-lex order.
Mat build_nmap_features(const Mat& anchor_samples, int order, Exec exec = Exec::parallel);

double silverman_bandwidth(const Vec& samples);

/// Improved Sheather-Jones bandwidth of Botev's diffusion estimator; falls back to
/// Silverman when the fixed-point equation has no root.
double isj_bandwidth(const Vec& samples);

/// Gaussian-kernel KDE CDF of sorted samples at the given points.
Vec kde_cdf(const Vec& sorted_samples, double bandwidth, const Vec& points, Exec exec = Exec::parallel);
Vec kde_density(const Vec& sorted_samples, double bandwidth, const Vec& points, Exec exec = Exec::parallel);

/// Smooth CDF estimate: KDE tabulated on a grid, monotone cubic Hermite in between,
/// clamped to [eps, 1 - eps].
class EmpiricalCdf {
public:
    EmpiricalCdf() = default;
    EmpiricalCdf(Vec grid, Vec values, double eps, double bandwidth);

    double operator()(double x) const;
    const Vec& grid() const { return grid_; }
    const Vec& values() const { return values_; }
    double eps() const { return eps_; }
    double bandwidth() const { return bandwidth_; }

private:
    Vec grid_;
    Vec values_;
    Vec slopes_;
    double eps_ = 0.0;
    double bandwidth_ = 0.0;
};

EmpiricalCdf fit_cdf(const Vec& samples);

struct NatafTransform {
    std::vector<EmpiricalCdf> marginals;
    Mat chol_inv;  ///< inverse of the lower Cholesky factor of the Gaussianized second-moment matrix
    bool regularized = false;
};

NatafTransform nataf_fit(const Mat& samples);
Mat nataf_apply(const NatafTransform& t, const Mat& samples);

pce::PCExpansion reexpand_hermite(const Mat& state_samples, const Mat& theta_samples, int order,
                                  const sparse_bayes::RvmConfig& cfg, Flags* flags = nullptr);

/// KL(p_approx || p_validation) from KDE densities on a shared grid.
double kl_check(const Vec& approx_samples, const Vec& validation_samples);

struct ReductionConfig {
    int order = 4;
    long samples = 10000;
    std::uint64_t seed = 0;
    sparse_bayes::RvmConfig rvm;
};

/// Re-expands a Hermite expansion on a fresh germ of dimension state_dim. Expansions
/// that are affine in the germ are reduced exactly through a covariance factor; all
/// others go through Nataf on samples followed by reexpand_hermite.
pce::PCExpansion reduce_germ(const pce::PCExpansion& x, const ReductionConfig& cfg, Flags* flags = nullptr);

}  // namespace gnmk::basis_adapt
