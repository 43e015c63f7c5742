#include "gnmk/pce.hpp"
#include "gnmk/sparse_bayes.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace gnmk;
using namespace gnmk::sparse_bayes;

namespace {

struct Planted {
    Mat design;
    Vec targets;
    std::vector<int> support;
};

Planted planted(double sigma, std::uint64_t seed)
{
    const auto set = pce::total_degree_index_set(3, 4);
    Planted p;
    p.design = pce::design_matrix(pce::BasisKind::hermite(), set, pce::sample_germ(100, 3, seed));
    p.support = {0, 2, 7, 15, 30};
    Vec w = Vec::Zero(static_cast<Eigen::Index>(set.size()));
    const double values[] = {1.5, -2.0, 0.8, 0.5, -0.3};
    for (std::size_t k = 0; k < p.support.size(); ++k) w(p.support[k]) = values[k];
    p.targets = p.design * w + sigma * pce::sample_germ(100, 1, seed + 1).col(0);
    return p;
}

}  // namespace

TEST_CASE("all-zero targets prune every weight")
{
    const Mat phi = pce::sample_germ(40, 4, 1);
    RvmConfig cfg;
    const RvmResult r = rvm_fit(phi, Vec::Zero(40), cfg);
    CHECK(r.active_set.empty());
    CHECK(r.weights.isZero(0.0));
    CHECK(r.noise_var == doctest::Approx(cfg.noise_floor));
}

TEST_CASE("exact single-feature fit and replay")
{
    const Mat phi = pce::sample_germ(50, 1, 2);
    const Vec u = 3.0 * phi.col(0);
    const RvmResult r = rvm_fit(phi, u, RvmConfig{});
    CHECK(std::abs(r.weights(0) - 3.0) <= 1e-6);
    CHECK(r.noise_var <= 1e-8);
    for (Eigen::Index i = 0; i < 5; ++i) {
        const Prediction p = rvm_predict(r, phi.row(i).transpose());
        CHECK(std::abs(p.mean - u(i)) <= 1e-6);
        CHECK(p.variance >= r.noise_var);
    }
    const Prediction z = rvm_predict(r, Vec::Zero(1));
    CHECK(z.mean == 0.0);
    CHECK(z.variance == doctest::Approx(r.noise_var));
}

TEST_CASE("planted sparse model")
{
    const Planted p = planted(0.01, 3);
    const RvmResult r = rvm_fit(p.design, p.targets, RvmConfig{});
    for (int k : p.support) CHECK(std::find(r.active_set.begin(), r.active_set.end(), k) != r.active_set.end());

    Mat sub(p.design.rows(), static_cast<Eigen::Index>(p.support.size()));
    for (std::size_t k = 0; k < p.support.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = p.design.col(p.support[k]);
    const Vec ls = sub.colPivHouseholderQr().solve(p.targets);
    for (std::size_t a = 0; a < r.active_set.size(); ++a) {
        const int k = r.active_set[a];
        const double sd = std::sqrt(r.posterior_cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)));
        const auto it = std::find(p.support.begin(), p.support.end(), k);
        const double reference = it == p.support.end() ? 0.0 : ls(it - p.support.begin());
        CHECK(std::abs(r.weights(k) - reference) <= 3 * sd);
    }
}

TEST_CASE("log evidence never decreases")
{
    for (double sigma : {0.01, 0.1, 1.0}) {
        const Planted p = planted(sigma, 5);
        const RvmResult r = rvm_fit(p.design, p.targets, RvmConfig{});
        REQUIRE(r.log_evidence_trace.size() >= 2);
        for (std::size_t i = 1; i < r.log_evidence_trace.size(); ++i)
            CHECK(r.log_evidence_trace[i] >= r.log_evidence_trace[i - 1] - 1e-10);
    }
}

TEST_CASE("sparsity does not decrease with noise")
{
    for (std::uint64_t seed : {7, 8, 9}) {
        const RvmResult lo = rvm_fit(planted(0.01, seed).design, planted(0.01, seed).targets, RvmConfig{});
        const RvmResult hi = rvm_fit(planted(0.1, seed).design, planted(0.1, seed).targets, RvmConfig{});
        CHECK(hi.active_set.size() <= lo.active_set.size());
    }
}

TEST_CASE("intercept is never pruned")
{
    const Mat x = pce::sample_germ(60, 2, 12);
    const Vec y = Vec::Constant(60, 1e-3) + 2.0 * x.col(1);
    const RvmResult r = rvm_fit_intercept(x, y, RvmConfig{});
    REQUIRE(r.weights.size() == 3);
    CHECK(std::abs(r.weights(0) - 1e-3) <= 1e-8);
    CHECK(std::abs(r.weights(2) - 2.0) <= 1e-8);
    CHECK(r.weights(1) == 0.0);
    CHECK(r.precisions(0) == 0.0);
}

TEST_CASE("fit_pce recovers a known expansion and constants")
{
    const auto set = pce::total_degree_index_set(2, 3);
    Mat c(2, static_cast<Eigen::Index>(set.size()));
    c.setZero();
    c(0, 0) = 1.0;
    c(0, 1) = 0.5;
    c(0, 5) = -0.25;
    c(1, 0) = -2.0;
    c(1, 2) = 1.0;
    c(1, 9) = 0.1;
    const pce::PCExpansion truth(c, pce::BasisKind::hermite(), set);
    const Mat germ = pce::sample_germ(2 * static_cast<long>(set.size()), 2, 4);
    const pce::PCExpansion fit =
        fit_pce(germ, pce::pce_eval_samples(truth, germ), pce::BasisKind::hermite(), set, RvmConfig{});
    CHECK((fit.coeffs() - c).cwiseAbs().maxCoeff() <= 1e-5);

    const Mat constant = Mat::Constant(germ.rows(), 1, 4.25);
    const pce::PCExpansion k = fit_pce(germ, constant, pce::BasisKind::hermite(), set, RvmConfig{});
    CHECK(k.coeffs()(0, 0) == doctest::Approx(4.25).epsilon(1e-12));
    CHECK(k.coeffs().rightCols(k.coeffs().cols() - 1).isZero(0.0));
}
