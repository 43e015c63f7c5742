#include "gnmk/linalg.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

namespace gnmk {

const char* flag_name(Flag f)
{
    switch (f) {
    case Flag::rvm_not_converged: return "rvm_not_converged";
    case Flag::rank_deficient: return "rank_deficient";
    case Flag::singular_update: return "singular_update";
    case Flag::psd_clamped: return "psd_clamped";
    case Flag::nataf_regularized: return "nataf_regularized";
    case Flag::gnmk_not_converged: return "gnmk_not_converged";
    case Flag::gnmk_diverged: return "gnmk_diverged";
    case Flag::integrator_failure: return "integrator_failure";
    case Flag::bias_pseudo_inverse: return "bias_pseudo_inverse";
    case Flag::mgs_column_dropped: return "mgs_column_dropped";
    }
    return "unknown";
}

void Flags::add(Flag f)
{
    if (!has(f)) flags_.push_back(f);
}

void Flags::merge(const Flags& other)
{
    for (Flag f : other.flags_) add(f);
}

bool Flags::has(Flag f) const
{
    return std::find(flags_.begin(), flags_.end(), f) != flags_.end();
}

PinvResult pinv_svd(const Mat& a, double rcond)
{
    PinvResult out;
    out.inverse = Mat::Zero(a.cols(), a.rows());
    if (a.size() == 0) return out;
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& s = svd.singularValues();
    const double smax = s.size() > 0 ? s(0) : 0.0;
    const double cutoff = rcond * smax;
    Vec sinv = Vec::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > cutoff && s(i) > 0.0) {
            sinv(i) = 1.0 / s(i);
            ++out.rank;
        }
    }
    out.truncated = out.rank < std::min(a.rows(), a.cols());
    out.inverse = svd.matrixV() * sinv.asDiagonal() * svd.matrixU().transpose();
    return out;
}

Mat pinv(const Mat& a, double rcond)
{
    return pinv_svd(a, rcond).inverse;
}

Mat repair_psd(const Mat& c, bool* clamped)
{
    if (clamped) *clamped = false;
    if (c.rows() != c.cols()) throw std::invalid_argument("repair_psd: matrix not square");
    if (c.size() == 0) return c;
    Mat sym = 0.5 * (c + c.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
    Vec lam = eig.eigenvalues();
    const double scale = std::max(std::abs(lam.minCoeff()), std::abs(lam.maxCoeff()));
    if (lam.minCoeff() >= 0.0) return sym;
    if (lam.minCoeff() < -1e-12 * scale) {
        throw NumericalError("covariance is not positive semi-definite (min eigenvalue "
                             + std::to_string(lam.minCoeff()) + ")");
    }
    for (Eigen::Index i = 0; i < lam.size(); ++i) lam(i) = std::max(lam(i), 0.0);
    if (clamped) *clamped = true;
    Mat out = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

Mat psd_factor(const Mat& c)
{
    Eigen::LLT<Mat> llt(c);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (c + c.transpose()));
    Vec lam = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * lam.asDiagonal();
}

double normal_cdf(double x)
{
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double normal_quantile(double p)
{
    static const boost::math::normal_distribution<double> standard;
    return boost::math::quantile(standard, p);
}

Vec sample_mean(const Mat& x)
{
    return x.colwise().mean().transpose();
}

Mat sample_cov(const Mat& x)
{
    const Mat centered = x.rowwise() - x.colwise().mean();
    return centered.transpose() * centered / static_cast<double>(x.rows());
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace gnmk
