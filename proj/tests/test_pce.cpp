#include "gnmk/pce.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace gnmk;
using namespace gnmk::pce;

namespace {

PCExpansion scalar_211()
{
    Mat c(1, 3);
    c << 2.0, 3.0, 1.0;
    return PCExpansion(c, BasisKind::hermite(), total_degree_index_set(1, 2));
}

PCExpansion random_expansion(int d, int germ, int order, std::uint64_t seed)
{
    const auto set = total_degree_index_set(germ, order);
    Mat c = sample_germ(d, static_cast<int>(set.size()), seed);
    for (std::size_t j = 0; j < set.size(); ++j) c.col(static_cast<Eigen::Index>(j)) /= 1.0 + total_degree(set[j]);
    return PCExpansion(c, BasisKind::hermite(), set);
}

}  // namespace

TEST_CASE("total degree index sets")
{
    CHECK(total_degree_index_set(2, 2).size() == 6);
    CHECK(total_degree_index_set(3, 4).size() == 35);
    const auto s = total_degree_index_set(1, 0);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == MultiIndex{0});
    const auto g = total_degree_index_set(2, 2);
    CHECK(g[0] == MultiIndex{0, 0});
    CHECK(g[1] == MultiIndex{1, 0});
    CHECK(g[2] == MultiIndex{0, 1});
    CHECK(g.find(MultiIndex{1, 1}).has_value());
}

TEST_CASE("Hermite evaluation")
{
    CHECK(hermite_eval(MultiIndex{0, 0, 0}, Vec::Constant(3, 1.7)) == 1.0);
    CHECK(hermite_eval(MultiIndex{2}, Vec::Constant(1, 2.0)) == doctest::Approx(3.0));
    CHECK(hermite_eval(MultiIndex{1, 2}, (Vec(2) << 1.0, 2.0).finished()) == doctest::Approx(3.0));
    CHECK(hermite_1d(4, 1.5) == doctest::Approx(std::pow(1.5, 4) - 6 * 1.5 * 1.5 + 3));
    CHECK(hermite_norm_sq(MultiIndex{2, 3}) == 12.0);
}

TEST_CASE("evaluation, mean and covariance of the (2,3,1) expansion")
{
    const PCExpansion x = scalar_211();
    CHECK(pce_eval(x, Vec::Ones(1))(0) == doctest::Approx(5.0));
    CHECK(pce_mean(x)(0) == 2.0);
    CHECK(pce_cov(x)(0, 0) == 11.0);
    const GaussianDensity g = gaussianize(x);
    CHECK(g.mean(0) == 2.0);
    CHECK(g.cov(0, 0) == 11.0);
}

TEST_CASE("constant expansions")
{
    const Vec c = (Vec(2) << 1.5, -2.0).finished();
    const auto set = total_degree_index_set(3, 2);
    const PCExpansion x = PCExpansion::constant(c, set);
    const Mat germ = sample_germ(20, 3, 4);
    const Mat vals = pce_eval_samples(x, germ);
    for (Eigen::Index i = 0; i < vals.rows(); ++i) CHECK(vals.row(i).transpose() == c);
    CHECK(pce_mean(x) == c);
    CHECK(pce_cov(x).isZero(0.0));
    CHECK(gaussianize(x).cov.isZero(0.0));
}

TEST_CASE("cross-covariance is transpose symmetric and linear expansions gaussianize exactly")
{
    const PCExpansion a = random_expansion(3, 2, 3, 1);
    const PCExpansion b = random_expansion(2, 2, 3, 2);
    CHECK((pce_cov(a, b) - pce_cov(b, a).transpose()).norm() <= 1e-14);

    const Vec m = (Vec(2) << 1.0, -1.0).finished();
    Mat L(2, 2);
    L << 1.0, 0.0, 0.5, 2.0;
    const GaussianDensity g = gaussianize(PCExpansion::linear(m, L));
    CHECK(g.mean == m);
    CHECK(g.cov.isApprox(L * L.transpose(), 1e-14));
}

TEST_CASE("Hermite Gram matrix is diag(alpha!) under Monte Carlo")
{
    const auto set = total_degree_index_set(2, 3);
    const long n = 400000;
    const Mat germ = sample_germ(n, 2, 77);
    const Mat psi = design_matrix(BasisKind::hermite(), set, germ);
    const Mat gram = psi.transpose() * psi / static_cast<double>(n);
    for (std::size_t i = 0; i < set.size(); ++i) {
        for (std::size_t j = 0; j < set.size(); ++j) {
            const double expected = i == j ? hermite_norm_sq(set[i]) : 0.0;
            const Vec prod = psi.col(static_cast<Eigen::Index>(i)).cwiseProduct(psi.col(static_cast<Eigen::Index>(j)));
            const double se = std::sqrt((prod.array() - prod.mean()).square().mean() / static_cast<double>(n));
            CHECK(std::abs(gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - expected) <= 4 * se);
        }
    }
}

TEST_CASE("pce_mean agrees with the sample mean within three standard errors")
{
    const PCExpansion x = random_expansion(3, 3, 3, 5);
    const long n = 1000000;
    const Mat s = pce_eval_samples(x, sample_germ(n, 3, 6));
    const Vec se = (pce_cov(x).diagonal() / static_cast<double>(n)).cwiseSqrt();
    CHECK(((sample_mean(s) - pce_mean(x)).cwiseAbs().array() <= 3 * se.array()).all());
}

TEST_CASE("sample_germ determinism and moments")
{
    CHECK(sample_germ(0, 3, 1).rows() == 0);
    CHECK(sample_germ(50, 2, 9) == sample_germ(50, 2, 9));
    CHECK(sample_germ(50, 2, 9) != sample_germ(50, 2, 10));
    const Mat g = sample_germ(100000, 3, 123);
    const Vec m = sample_mean(g);
    const Vec v = sample_cov(g).diagonal();
    CHECK(m.cwiseAbs().maxCoeff() <= 0.02);
    CHECK((v.array() - 1.0).abs().maxCoeff() <= 0.03);
}

TEST_CASE("serial and parallel kernels agree bit for bit")
{
    const PCExpansion x = random_expansion(3, 3, 4, 8);
    const Mat germ = sample_germ(500, 3, 9);
    CHECK(design_matrix(x.basis(), x.index_set(), germ, Exec::serial) ==
          design_matrix(x.basis(), x.index_set(), germ, Exec::parallel));
    CHECK(pce_eval_samples(x, germ, Exec::serial) == pce_eval_samples(x, germ, Exec::parallel));
}

TEST_CASE("direct sum, embedding and restriction")
{
    const auto a = total_degree_index_set(2, 2);
    const auto b = total_degree_index_set(1, 1);
    const auto s = direct_sum(a, b);
    CHECK(s.germ_dim() == 3);
    CHECK(s.size() == a.size() + b.size() - 1);
    CHECK(s[s.size() - 1] == MultiIndex{0, 0, 1});

    const PCExpansion x = random_expansion(2, 2, 2, 3);
    const PCExpansion e = embed(x, s);
    const Mat g = sample_germ(10, 3, 4);
    CHECK((pce_eval_samples(e, g) - pce_eval_samples(x, g.leftCols(2))).norm() <= 1e-12);

    const PCExpansion noise = PCExpansion::linear(Vec::Zero(1), Mat::Identity(1, 1));
    const PCExpansion en = embed(noise, s, 2);
    CHECK((pce_eval_samples(en, g).col(0) - g.col(2)).norm() <= 1e-14);

    Mat c = Mat::Zero(1, 6);
    c(0, 0) = 1.0;
    c(0, 4) = 2.0;
    const PCExpansion sparse(c, BasisKind::hermite(), a);
    const auto sup = active_support(sparse);
    CHECK(sup == std::vector<std::size_t>{0, 4});
    const PCExpansion r = restrict_to(sparse, sup);
    CHECK(r.cardinality() == 2);
    CHECK((pce_eval_samples(r, g.leftCols(2)) - pce_eval_samples(sparse, g.leftCols(2))).norm() <= 1e-14);
    CHECK(effective_order(sparse) == 2);
}

TEST_CASE("serialization round trip")
{
    const PCExpansion x = random_expansion(3, 3, 2, 21);
    const PCExpansion y = deserialize(serialize(x));
    CHECK(y.coeffs() == x.coeffs());
    CHECK(y.index_set() == x.index_set());
    std::stringstream ss;
    write_pce(ss, x, "config_hash=abc");
    CHECK(ss.str().find("config_hash=abc") != std::string::npos);
    CHECK(read_pce(ss).coeffs() == x.coeffs());
    CHECK_THROWS(deserialize("not a pce"));
}
