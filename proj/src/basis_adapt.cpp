#include "gnmk/basis_adapt.hpp"

#include <boost/math/tools/roots.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace gnmk::basis_adapt {

MgsResult mgs_orthonormalize(const Mat& f)
{
    const Eigen::Index n = f.rows();
    const Eigen::Index p = f.cols();
    if (n < 1 || p < 1) throw std::invalid_argument("mgs_orthonormalize: empty feature matrix");
    const double inv_n = 1.0 / static_cast<double>(n);

    MgsResult out;
    Mat q(n, p);
    Mat t = Mat::Zero(p, p);
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
        Vec v = f.col(j);
        Vec tj = Vec::Zero(p);
        tj(j) = 1.0;
        const double norm0 = std::sqrt(v.squaredNorm() * inv_n);
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index i = 0; i < k; ++i) {
                const double r = q.col(i).dot(v) * inv_n;
                v -= r * q.col(i);
                tj -= r * t.col(i);
            }
        }
        const double norm = std::sqrt(v.squaredNorm() * inv_n);
        if (!(norm > 1e-10 * norm0)) {
            out.dropped.push_back(static_cast<int>(j));
            continue;
        }
        v /= norm;
        tj /= norm;
        Eigen::Index imax = 0;
        tj.cwiseAbs().maxCoeff(&imax);
        if (tj(imax) < 0.0) {
            v = -v;
            tj = -tj;
        }
        q.col(k) = v;
        t.col(k) = tj;
        out.kept.push_back(static_cast<int>(j));
        ++k;
    }
    out.features = q.leftCols(k);
    out.transform = t.leftCols(k);
    return out;
}

Mat build_nmap_features(const Mat& anchor_samples, int order, Exec exec)
{
    if (order < 1) throw std::invalid_argument("build_nmap_features: order must be >= 1");
    const auto set = pce::total_degree_index_set(static_cast<int>(anchor_samples.cols()), order);
    return pce::design_matrix(pce::BasisKind::nmap({}), set, anchor_samples, exec);
}

MgsBasis build_mgs_basis(const Mat& anchor_samples, int order, const std::string& reference)
{
    const auto full = pce::total_degree_index_set(static_cast<int>(anchor_samples.cols()), order);
    const MgsResult m = mgs_orthonormalize(build_nmap_features(anchor_samples, order));
    std::vector<std::size_t> kept(m.kept.begin(), m.kept.end());
    MgsBasis out;
    out.index_set = pce::subset(full, kept);
    Mat t(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t r = 0; r < kept.size(); ++r) t.row(static_cast<Eigen::Index>(r)) = m.transform.row(static_cast<Eigen::Index>(kept[r]));
    out.basis = pce::BasisKind::mgs(std::move(t), reference);
    out.dropped = m.dropped;
    return out;
}

double silverman_bandwidth(const Vec& samples)
{
    const auto n = samples.size();
    if (n < 2) throw std::invalid_argument("silverman_bandwidth: need at least two samples");
    std::vector<double> s(samples.data(), samples.data() + n);
    std::sort(s.begin(), s.end());
    const double mean = samples.mean();
    const double sd = std::sqrt((samples.array() - mean).square().sum() / static_cast<double>(n - 1));
    auto quantile = [&](double pr) {
        const double pos = pr * static_cast<double>(n - 1);
        const auto i = static_cast<std::size_t>(std::floor(pos));
        const double w = pos - static_cast<double>(i);
        return i + 1 < s.size() ? (1.0 - w) * s[i] + w * s[i + 1] : s[i];
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

namespace {

// Unnormalized DCT-II, y_k = 2 sum_m x_m cos(pi k (2m+1) / (2n)), via a mirrored FFT.
Vec dct2(const Vec& x)
{
    const Eigen::Index n = x.size();
    std::vector<double> ext(static_cast<std::size_t>(2 * n));
    for (Eigen::Index i = 0; i < n; ++i) {
        ext[static_cast<std::size_t>(i)] = x(i);
        ext[static_cast<std::size_t>(2 * n - 1 - i)] = x(i);
    }
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spec;
    fft.fwd(spec, ext);
    Vec y(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double ang = -std::numbers::pi * static_cast<double>(k) / (2.0 * static_cast<double>(n));
        y(k) = (std::polar(1.0, ang) * spec[static_cast<std::size_t>(k)]).real();
    }
    return y;
}

}  // namespace

double isj_bandwidth(const Vec& samples)
{
    const auto n_samples = samples.size();
    if (n_samples < 2) throw std::invalid_argument("isj_bandwidth: need at least two samples");
    const double lo = samples.minCoeff(), hi = samples.maxCoeff();
    if (!(hi > lo)) throw NumericalError("isj_bandwidth: degenerate samples");
    const double pad = (hi - lo) / 10.0;
    const double a = lo - pad, range = (hi - lo) + 2.0 * pad;
    constexpr Eigen::Index bins = 1 << 14;

    Vec hist = Vec::Zero(bins);
    for (Eigen::Index i = 0; i < n_samples; ++i) {
        auto b = static_cast<Eigen::Index>((samples(i) - a) / range * static_cast<double>(bins));
        hist(std::clamp<Eigen::Index>(b, 0, bins - 1)) += 1.0;
    }
    hist /= static_cast<double>(n_samples);
    const Vec coef = dct2(hist);
    Vec i2(bins - 1), a2(bins - 1);
    for (Eigen::Index k = 1; k < bins; ++k) {
        i2(k - 1) = static_cast<double>(k) * static_cast<double>(k);
        a2(k - 1) = 0.25 * coef(k) * coef(k);
    }
    const double nn = static_cast<double>(n_samples);
    const double pi2 = std::numbers::pi * std::numbers::pi;
    auto functional = [&](int s, double time) {
        double acc = 0.0;
        for (Eigen::Index k = 0; k < i2.size(); ++k) acc += std::pow(i2(k), s) * a2(k) * std::exp(-i2(k) * pi2 * time);
        return 2.0 * std::pow(std::numbers::pi, 2 * s) * acc;
    };
    auto fixed_point = [&](double t) {
        constexpr int l = 7;
        double f = functional(l, t);
        for (int s = l - 1; s >= 2; --s) {
            double k0 = 1.0;
            for (int j = 1; j <= 2 * s - 1; j += 2) k0 *= j;
            k0 /= std::sqrt(2.0 * std::numbers::pi);
            const double c = (1.0 + std::pow(0.5, s + 0.5)) / 3.0;
            const double time = std::pow(2.0 * c * k0 / nn / f, 2.0 / (3.0 + 2.0 * s));
            f = functional(s, time);
        }
        return t - std::pow(2.0 * nn * std::sqrt(std::numbers::pi) * f, -0.4);
    };

    const double t_lo = 1e-12, t_hi = 0.1;
    const double f_lo = fixed_point(t_lo), f_hi = fixed_point(t_hi);
    if (!(std::isfinite(f_lo) && std::isfinite(f_hi)) || f_lo * f_hi > 0.0) return silverman_bandwidth(samples);
    boost::uintmax_t iters = 200;
    auto tolf = boost::math::tools::eps_tolerance<double>(40);
    const auto root = boost::math::tools::toms748_solve(fixed_point, t_lo, t_hi, f_lo, f_hi, tolf, iters);
    const double t_star = 0.5 * (root.first + root.second);
    const double h = std::sqrt(t_star) * range;
    if (!(h > 0.0) || !std::isfinite(h)) return silverman_bandwidth(samples);
    return h;
}

Vec kde_cdf(const Vec& sorted, double h, const Vec& points, Exec exec)
{
    const Eigen::Index n = sorted.size();
    const double* begin = sorted.data();
    const double* end = begin + n;
    const double inv = 1.0 / (h * std::numbers::sqrt2);
    Vec out(points.size());
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
    for (Eigen::Index k = 0; k < points.size(); ++k) {
        const double g = points(k);
        const double* lo = std::lower_bound(begin, end, g - 8.0 * h);
        const double* hi = std::upper_bound(lo, end, g + 8.0 * h);
        double acc = static_cast<double>(lo - begin);
        for (const double* it = lo; it != hi; ++it) acc += 0.5 * std::erfc(-(g - *it) * inv);
        out(k) = acc / static_cast<double>(n);
    }
    return out;
}

Vec kde_density(const Vec& sorted, double h, const Vec& points, Exec exec)
{
    const Eigen::Index n = sorted.size();
    const double* begin = sorted.data();
    const double* end = begin + n;
    const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
    Vec out(points.size());
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
    for (Eigen::Index k = 0; k < points.size(); ++k) {
        const double g = points(k);
        const double* lo = std::lower_bound(begin, end, g - 8.0 * h);
        const double* hi = std::upper_bound(lo, end, g + 8.0 * h);
        double acc = 0.0;
        for (const double* it = lo; it != hi; ++it) {
            const double u = (g - *it) / h;
            acc += std::exp(-0.5 * u * u);
        }
        out(k) = acc * norm;
    }
    return out;
}

EmpiricalCdf::EmpiricalCdf(Vec grid, Vec values, double eps, double bandwidth)
    : grid_(std::move(grid)), values_(std::move(values)), eps_(eps), bandwidth_(bandwidth)
{
    const Eigen::Index m = grid_.size();
    if (m < 2 || values_.size() != m) throw std::invalid_argument("EmpiricalCdf: need matching grid and values");
    // Fritsch-Carlson monotone cubic Hermite slopes.
    Vec delta(m - 1), hk(m - 1);
    for (Eigen::Index k = 0; k + 1 < m; ++k) {
        hk(k) = grid_(k + 1) - grid_(k);
        delta(k) = (values_(k + 1) - values_(k)) / hk(k);
    }
    slopes_ = Vec::Zero(m);
    for (Eigen::Index k = 1; k + 1 < m; ++k) {
        if (delta(k - 1) > 0.0 && delta(k) > 0.0) {
            const double w1 = 2.0 * hk(k) + hk(k - 1);
            const double w2 = hk(k) + 2.0 * hk(k - 1);
            slopes_(k) = (w1 + w2) / (w1 / delta(k - 1) + w2 / delta(k));
        }
    }
    slopes_(0) = delta(0);
    slopes_(m - 1) = delta(m - 2);
}

double EmpiricalCdf::operator()(double x) const
{
    const Eigen::Index m = grid_.size();
    double v;
    if (x <= grid_(0)) {
        v = values_(0);
    } else if (x >= grid_(m - 1)) {
        v = values_(m - 1);
    } else {
        const double* it = std::upper_bound(grid_.data(), grid_.data() + m, x);
        const Eigen::Index k = (it - grid_.data()) - 1;
        const double h = grid_(k + 1) - grid_(k);
        const double t = (x - grid_(k)) / h;
        const double t2 = t * t, t3 = t2 * t;
        v = (2 * t3 - 3 * t2 + 1) * values_(k) + (t3 - 2 * t2 + t) * h * slopes_(k)
            + (-2 * t3 + 3 * t2) * values_(k + 1) + (t3 - t2) * h * slopes_(k + 1);
    }
    return std::clamp(v, eps_, 1.0 - eps_);
}

EmpiricalCdf fit_cdf(const Vec& samples)
{
    const Eigen::Index n = samples.size();
    if (n < 30) throw std::invalid_argument("fit_cdf: at least 30 samples required");
    if (!samples.allFinite()) throw std::invalid_argument("fit_cdf: non-finite samples");
    Vec sorted = samples;
    std::sort(sorted.data(), sorted.data() + n);
    if (!(sorted(n - 1) > sorted(0))) throw NumericalError("fit_cdf: degenerate marginal (all samples identical)");

    const double h = isj_bandwidth(sorted);
    constexpr int half = 512;
    std::vector<double> pts;
    pts.reserve(2 * half);
    const double lo = sorted(0) - 6.0 * h, hi = sorted(n - 1) + 6.0 * h;
    for (int i = 0; i < half; ++i) pts.push_back(lo + (hi - lo) * i / (half - 1));
    for (int i = 0; i < half; ++i) {
        const auto idx = static_cast<Eigen::Index>((i + 0.5) / half * static_cast<double>(n));
        pts.push_back(sorted(std::min(idx, n - 1)));
    }
    std::sort(pts.begin(), pts.end());
    const double min_gap = 1e-9 * (hi - lo);
    std::vector<double> grid;
    for (double p : pts) {
        if (grid.empty() || p - grid.back() > min_gap) grid.push_back(p);
    }
    Vec g = Eigen::Map<Vec>(grid.data(), static_cast<Eigen::Index>(grid.size()));
    Vec f = kde_cdf(sorted, h, g);
    for (Eigen::Index k = 0; k < f.size(); ++k) {
        f(k) = std::clamp(f(k), 0.0, 1.0);
        if (k > 0) f(k) = std::max(f(k), f(k - 1));
    }
    return EmpiricalCdf(std::move(g), std::move(f), 0.5 / static_cast<double>(n), h);
}

namespace {

Mat gaussianized(const std::vector<EmpiricalCdf>& marginals, const Mat& samples)
{
    Mat kappa(samples.rows(), samples.cols());
    for (Eigen::Index c = 0; c < samples.cols(); ++c) {
        const EmpiricalCdf& cdf = marginals[static_cast<std::size_t>(c)];
#pragma omp parallel for schedule(static)
        for (Eigen::Index i = 0; i < samples.rows(); ++i) kappa(i, c) = normal_quantile(cdf(samples(i, c)));
    }
    return kappa;
}

}  // namespace

NatafTransform nataf_fit(const Mat& samples)
{
    if (samples.rows() < 30) throw std::invalid_argument("nataf_fit: at least 30 samples required");
    const Eigen::Index d = samples.cols();
    NatafTransform t;
    t.marginals.resize(static_cast<std::size_t>(d));
    for (Eigen::Index c = 0; c < d; ++c) t.marginals[static_cast<std::size_t>(c)] = fit_cdf(samples.col(c));
    const Mat kappa = gaussianized(t.marginals, samples);
    Mat c = kappa.transpose() * kappa / static_cast<double>(samples.rows());
    Eigen::LLT<Mat> llt(c);
    if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 1e-7)) {
        t.regularized = true;
        c += 1e-10 * Mat::Identity(d, d);
        llt.compute(c);
        if (llt.info() != Eigen::Success) throw NumericalError("nataf_fit: correlation matrix not positive definite");
    }
    const Mat l = llt.matrixL();
    t.chol_inv = l.triangularView<Eigen::Lower>().solve(Mat::Identity(d, d));
    return t;
}

Mat nataf_apply(const NatafTransform& t, const Mat& samples)
{
    if (samples.cols() != static_cast<Eigen::Index>(t.marginals.size())) throw std::invalid_argument("nataf_apply: dimension mismatch");
    return gaussianized(t.marginals, samples) * t.chol_inv.transpose();
}

pce::PCExpansion reexpand_hermite(const Mat& state_samples, const Mat& theta_samples, int order,
                                  const sparse_bayes::RvmConfig& cfg, Flags* flags)
{
    if (state_samples.rows() != theta_samples.rows()) throw std::invalid_argument("reexpand_hermite: unpaired samples");
    const auto set = pce::total_degree_index_set(static_cast<int>(theta_samples.cols()), order);
    return sparse_bayes::fit_pce(theta_samples, state_samples, pce::BasisKind::hermite(), set, cfg, flags);
}

double kl_check(const Vec& approx, const Vec& validation)
{
    if (approx.size() < 100 || validation.size() < 100) throw std::invalid_argument("kl_check: at least 100 samples each");
    Vec a = approx, v = validation;
    std::sort(a.data(), a.data() + a.size());
    std::sort(v.data(), v.data() + v.size());
    const double ha = isj_bandwidth(a), hv = isj_bandwidth(v);
    const double h = std::max(ha, hv);
    const double lo = std::min(a(0), v(0)) - 4.0 * h;
    const double hi = std::max(a(a.size() - 1), v(v.size() - 1)) + 4.0 * h;
    constexpr Eigen::Index m = 1024;
    const Vec grid = Vec::LinSpaced(m, lo, hi);
    const double dx = (hi - lo) / static_cast<double>(m - 1);
    Vec p = kde_density(a, ha, grid);
    Vec q = kde_density(v, hv, grid);
    p /= p.sum() * dx;
    q /= q.sum() * dx;
    const double floor = 1e-300;
    double kl = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
        if (p(k) <= floor) continue;
        kl += p(k) * std::log(p(k) / std::max(q(k), floor)) * dx;
    }
    return kl;
}

pce::PCExpansion reduce_germ(const pce::PCExpansion& x, const ReductionConfig& cfg, Flags* flags)
{
    if (!x.is_hermite()) throw std::invalid_argument("reduce_germ: Hermite expansion required");
    if (pce::effective_order(x) <= 1) {
        const Vec mean = pce::pce_mean(x);
        bool clamped = false;
        const Mat cov = repair_psd(pce::pce_cov(x, x), &clamped);
        if (clamped && flags) flags->add(Flag::psd_clamped);
        return pce::PCExpansion::linear(mean, psd_factor(cov));
    }
    const Mat xi = pce::sample_germ(cfg.samples, x.germ_dim(), cfg.seed);
    const Mat states = pce::pce_eval_samples(x, xi);
    const NatafTransform t = nataf_fit(states);
    if (t.regularized && flags) flags->add(Flag::nataf_regularized);
    return reexpand_hermite(states, nataf_apply(t, states), cfg.order, cfg.rvm, flags);
}

}  // namespace gnmk::basis_adapt
