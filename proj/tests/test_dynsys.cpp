#include "gnmk/dynsys.hpp"
#include "gnmk/pce.hpp"

#include <doctest.h>

#include <cmath>

using namespace gnmk;
using namespace gnmk::dynsys;

TEST_CASE("lorenz84 vector field at hand-evaluated points")
{
    SystemParams p;
    Vec x(3);
    x << 1.0, 0.0, -0.75;
    const Vec f = lorenz84_rhs(x, p);
    CHECK(f(0) == doctest::Approx(1.1875).epsilon(1e-15));
    CHECK(f(1) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(f(2) == doctest::Approx(0.0));

    const Vec zero = Vec::Zero(3);
    CHECK(lorenz84_rhs(zero, p).isApprox((Vec(3) << 2.0, 1.0, 0.0).finished(), 1e-15));
    SystemParams unforced;
    unforced.F1 = 0.0;
    unforced.F2 = 0.0;
    CHECK(lorenz84_rhs(zero, unforced).isZero(0.0));
}

TEST_CASE("hour scaling divides the model clock")
{
    Vec x(3);
    x << 0.3, -0.2, 0.7;
    const Rhs f = lorenz84_hours(SystemParams{}, 120.0);
    CHECK((f(0.0, x) * 120.0).isApprox(lorenz84_rhs(x, SystemParams{}), 1e-14));
}

TEST_CASE("integrate: zero interval and exponential decay")
{
    IntegratorConfig cfg;
    const Rhs decay = [](double, const Vec& x) { return Vec(-x); };
    const Vec x0 = Vec::Ones(1);
    CHECK(integrate(decay, x0, 2.0, 2.0, cfg) == x0);
    const Vec x1 = integrate(decay, x0, 0.0, 1.0, cfg);
    CHECK(std::abs(x1(0) - std::exp(-1.0)) <= 10 * cfg.rel_tol);
    CHECK_THROWS_AS(integrate(decay, x0, 1.0, 0.0, cfg), std::invalid_argument);
}

TEST_CASE("integrate agrees with fine fixed-step RK4 on Lorenz-84 over 6 h")
{
    const Rhs f = lorenz84_hours(SystemParams{}, 120.0);
    Vec x0(3);
    x0 << 1.0, 0.0, -0.75;
    const Vec a = integrate(f, x0, 0.0, 6.0, IntegratorConfig{});
    const Vec b = integrate_rk4(f, x0, 0.0, 6.0, 1e-4 * 120.0);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("integrate rejects invalid settings")
{
    IntegratorConfig cfg;
    cfg.rel_tol = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("propagate_ensemble: empty, singleton, serial and parallel paths")
{
    const Flow flow{lorenz84_hours(SystemParams{}, 120.0), IntegratorConfig{}};
    CHECK(flow.propagate(Mat(0, 3), 0.0, 6.0).rows() == 0);

    Vec truth(3);
    truth << 1.0, 0.0, -0.75;
    const Mat one = truth.transpose();
    CHECK(flow.propagate(one, 0.0, 6.0).row(0).transpose() == flow(truth, 0.0, 6.0));

    const Mat samples = pce::sample_germ(100, 3, 11) * 0.1 + Mat::Ones(100, 1) * truth.transpose();
    const Mat par = flow.propagate(samples, 0.0, 6.0, Exec::parallel);
    const Mat ser = flow.propagate(samples, 0.0, 6.0, Exec::serial);
    CHECK(par == ser);
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
        CHECK(par.row(i).transpose() == flow(samples.row(i).transpose(), 0.0, 6.0));
}

TEST_CASE("propagate_ensemble reports the failing row")
{
    IntegratorConfig cfg;
    cfg.min_step = 1e-3;
    const Rhs blowup = [](double, const Vec& x) { return Vec(x.cwiseAbs2()); };
    Mat samples(3, 1);
    samples << -1.0, 0.5, 2.0;
    try {
        propagate_ensemble(blowup, samples, 0.0, 1.0, cfg);
        FAIL("expected IntegrationError");
    } catch (const IntegrationError& e) {
        CHECK(e.sample() == 2);
    }
}
