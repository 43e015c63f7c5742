#include "gnmk/basis_adapt.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace gnmk;
using namespace gnmk::basis_adapt;

namespace {

double skewness(const Vec& v)
{
    const Vec c = v.array() - v.mean();
    const double s2 = c.squaredNorm() / static_cast<double>(v.size());
    return c.array().cube().mean() / std::pow(s2, 1.5);
}

double kurtosis(const Vec& v)
{
    const Vec c = v.array() - v.mean();
    const double s2 = c.squaredNorm() / static_cast<double>(v.size());
    return c.array().square().square().mean() / (s2 * s2);
}

}  // namespace

TEST_CASE("MGS keeps orthonormal input and drops duplicates")
{
    const Mat z = pce::sample_germ(2000, 3, 1);
    const MgsResult first = mgs_orthonormalize(z);
    const MgsResult again = mgs_orthonormalize(first.features);
    CHECK((again.transform - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-10);

    Mat dup(2000, 3);
    dup << z.col(0), z.col(1), z.col(0);
    const MgsResult d = mgs_orthonormalize(dup);
    CHECK(d.dropped == std::vector<int>{2});
    CHECK(d.kept == std::vector<int>{0, 1});
    const Mat gram = d.features.transpose() * d.features / 2000.0;
    CHECK((gram - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("MGS on 1, z, z^2 recovers normalized Hermite directions")
{
    const Vec z = pce::sample_germ(100000, 1, 2).col(0);
    Mat f(z.size(), 3);
    f << Vec::Ones(z.size()), z, z.cwiseAbs2();
    const MgsResult r = mgs_orthonormalize(f);
    REQUIRE(r.features.cols() == 3);
    const Vec he2 = (z.cwiseAbs2().array() - 1.0) / std::sqrt(2.0);
    CHECK(std::abs(std::abs(r.features.col(0).mean()) - 1.0) <= 1e-12);
    CHECK(std::abs(r.features.col(1).dot(z)) / z.size() >= 0.999);
    CHECK(std::abs(r.features.col(2).dot(he2)) / z.size() >= 0.99);
}

TEST_CASE("NMAP features")
{
    const Mat x = pce::sample_germ(5, 3, 3);
    const Mat f1 = build_nmap_features(x, 1);
    REQUIRE(f1.cols() == 4);
    CHECK(f1.col(0) == Vec::Ones(5));
    CHECK(f1.rightCols(3) == x);
    CHECK(build_nmap_features(x, 4).cols() == 35);

    const Mat a = (Mat(1, 3) << 2.0, 0.0, 0.0).finished();
    Vec expected(10);
    expected << 1, 2, 0, 0, 4, 0, 0, 0, 0, 0;
    CHECK(build_nmap_features(a, 2).row(0).transpose() == expected);

    const Mat many = pce::sample_germ(300, 3, 4);
    CHECK(build_nmap_features(many, 4, Exec::serial) == build_nmap_features(many, 4, Exec::parallel));
}

TEST_CASE("empirical CDF of normal samples")
{
    const Vec s = pce::sample_germ(100000, 1, 5).col(0);
    const EmpiricalCdf F = fit_cdf(s);
    double worst = 0.0;
    for (double x = -4.0; x <= 4.0; x += 0.05) worst = std::max(worst, std::abs(F(x) - normal_cdf(x)));
    CHECK(worst <= 0.01);
    Vec sorted = s;
    std::sort(sorted.begin(), sorted.end());
    const double median = 0.5 * (sorted(49999) + sorted(50000));
    CHECK(std::abs(F(median) - 0.5) <= 0.02);
    const double below = F(sorted(0) - 100.0);
    CHECK(below > 0.0);
    CHECK(below <= F.eps());
}

TEST_CASE("KDE kernels: serial and parallel agree")
{
    Vec s = pce::sample_germ(2000, 1, 6).col(0);
    std::sort(s.begin(), s.end());
    const Vec pts = Vec::LinSpaced(101, -3.0, 3.0);
    const double h = isj_bandwidth(s);
    CHECK(h > 0.0);
    CHECK(kde_cdf(s, h, pts, Exec::serial) == kde_cdf(s, h, pts, Exec::parallel));
    CHECK(kde_density(s, h, pts, Exec::serial) == kde_density(s, h, pts, Exec::parallel));
    CHECK(silverman_bandwidth(s) == doctest::Approx(1.06 * std::pow(2000.0, -0.2)).epsilon(0.1));
}

TEST_CASE("Nataf: calibration moments on a correlated non-Gaussian pair")
{
    const Mat g = pce::sample_germ(100000, 2, 7);
    Mat x(g.rows(), 2);
    x.col(0) = g.col(0).array().exp();
    x.col(1) = 0.6 * g.col(0) + 0.8 * g.col(1);
    const NatafTransform t = nataf_fit(x);
    const Mat u = nataf_apply(t, x);
    const Vec m = sample_mean(u);
    const Mat c = sample_cov(u);
    CHECK(m.cwiseAbs().maxCoeff() <= 0.02);
    CHECK(c(0, 0) >= 0.95);
    CHECK(c(0, 0) <= 1.05);
    CHECK(c(1, 1) >= 0.95);
    CHECK(c(1, 1) <= 1.05);
    CHECK(std::abs(c(0, 1)) / std::sqrt(c(0, 0) * c(1, 1)) <= 0.01);
}

TEST_CASE("Nataf: lognormal marginal becomes normal")
{
    const Mat g = pce::sample_germ(100000, 1, 8);
    const Mat x = g.array().exp().matrix();
    const Vec u = nataf_apply(nataf_fit(x), x).col(0);
    CHECK(std::abs(skewness(u)) <= 0.1);
    CHECK(std::abs(kurtosis(u) - 3.0) <= 0.2);
}

TEST_CASE("Nataf: fixed point, median and degeneracy")
{
    const long n = 100000;
    const Mat g = pce::sample_germ(n, 2, 9);
    const NatafTransform t = nataf_fit(g);
    const Mat u = nataf_apply(t, g);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        // The extreme order statistics are too sparse for any CDF estimate.
        if (g.row(i).cwiseAbs().maxCoeff() <= 3.0) worst = std::max(worst, (u.row(i) - g.row(i)).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 0.05);
    CHECK(!t.regularized);

    Mat med(1, 2);
    for (int c = 0; c < 2; ++c) {
        Vec col = g.col(c);
        std::sort(col.begin(), col.end());
        med(0, c) = 0.5 * (col(n / 2 - 1) + col(n / 2));
    }
    CHECK(nataf_apply(t, med).cwiseAbs().maxCoeff() <= 0.05);

    Mat lo = g.topRows(5), hi = g.topRows(5);
    hi.col(0).array() += 0.3;
    const Mat a = nataf_apply(t, lo), b = nataf_apply(t, hi);
    CHECK((b.col(0).array() > a.col(0).array()).all());

    Mat dup(g.rows(), 2);
    dup << g.col(0), g.col(0);
    const NatafTransform d = nataf_fit(dup);
    CHECK(d.regularized);
    CHECK(nataf_apply(d, dup.topRows(10)).allFinite());
}

TEST_CASE("re-expansion: linear states and a Hermite round trip")
{
    const Mat theta = pce::sample_germ(400, 2, 10);
    Mat lin(400, 2);
    lin.col(0) = 1.0 + 2.0 * theta.col(0).array();
    lin.col(1) = -0.5 * theta.col(0) + 0.3 * theta.col(1);
    const pce::PCExpansion e = reexpand_hermite(lin, theta, 3, sparse_bayes::RvmConfig{});
    CHECK(pce::effective_order(e) == 1);
    CHECK(std::abs(e.coeffs()(0, 0) - 1.0) <= 1e-8);

    const auto set = pce::total_degree_index_set(2, 2);
    Mat c = Mat::Zero(1, static_cast<Eigen::Index>(set.size()));
    c << 0.5, 1.0, -0.4, 0.2, 0.1, -0.05;
    const pce::PCExpansion known(c, pce::BasisKind::hermite(), set);
    const pce::PCExpansion back =
        reexpand_hermite(pce::pce_eval_samples(known, theta), theta, 2, sparse_bayes::RvmConfig{});
    CHECK((back.coeffs() - c).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("KL check against closed forms")
{
    const Vec a = pce::sample_germ(100000, 1, 11).col(0);
    const Vec b = pce::sample_germ(100000, 1, 12).col(0);
    CHECK(kl_check(a, a) <= 0.01);
    CHECK(kl_check(a, (b.array() + 1.0).matrix()) == doctest::Approx(0.5).epsilon(0.1));
    CHECK(std::abs(kl_check(a, 2.0 * b) - 0.5 * (std::log(4.0) + 0.25 - 1.0)) <= 0.05);
}

TEST_CASE("germ reduction is exact for affine expansions")
{
    Mat L(2, 3);
    L << 1.0, 0.5, 0.0, 0.0, 2.0, 1.0;
    const pce::PCExpansion x = pce::PCExpansion::linear((Vec(2) << 1.0, -1.0).finished(), L);
    const pce::PCExpansion r = reduce_germ(x, ReductionConfig{});
    CHECK(r.germ_dim() == 2);
    CHECK((pce::pce_mean(r) - pce::pce_mean(x)).norm() <= 1e-12);
    CHECK((pce::pce_cov(r) - pce::pce_cov(x)).norm() <= 1e-12);
}
