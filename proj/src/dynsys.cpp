#include "gnmk/dynsys.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace gnmk::dynsys {

Vec lorenz84_rhs(const Vec& s, const SystemParams& p)
{
    if (s.size() != 3) throw std::invalid_argument("lorenz84_rhs: state must have dimension 3");
    const double x = s(0), y = s(1), z = s(2);
    Vec d(3);
    d(0) = -p.a * x - y * y - z * z + p.a * p.F1;
    d(1) = -y + x * y - p.b * x * z + p.F2;
    d(2) = -z + x * z + p.b * x * y;
    return d;
}

Rhs lorenz84_hours(const SystemParams& p, double hours_per_unit)
{
    if (!(hours_per_unit > 0.0)) throw std::invalid_argument("hours_per_unit must be positive");
    const double scale = 1.0 / hours_per_unit;
    return [p, scale](double, const Vec& x) { return Vec(scale * lorenz84_rhs(x, p)); };
}

void IntegratorConfig::validate() const
{
    if (!(abs_tol > 0.0) || !(rel_tol > 0.0)) throw std::invalid_argument("integrator tolerances must be positive");
    if (!(min_step > 0.0) || !(min_step <= initial_step) || !(initial_step <= max_step)) {
        throw std::invalid_argument("integrator steps must satisfy 0 < min_step <= initial_step <= max_step");
    }
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

bool all_finite(const Vec& v)
{
    return v.allFinite();
}

}  // namespace

Vec integrate(const Rhs& rhs, const Vec& x0, double t0, double t1, const IntegratorConfig& cfg)
{
    cfg.validate();
    if (!(t1 >= t0)) throw std::invalid_argument("integrate: t1 must not precede t0");
    if (!all_finite(x0)) throw IntegrationError("integrate: non-finite initial state");
    if (t1 == t0) return x0;

    Vec x = x0;
    double t = t0;
    double h = std::min(cfg.initial_step, t1 - t0);
    Vec k1 = rhs(t, x);
    Vec k2, k3, k4, k5, k6, k7, xn, err;
    while (t < t1) {
        const bool last = t + h >= t1;
        const double step = last ? t1 - t : h;
        k2 = rhs(t + c2 * step, x + step * a21 * k1);
        k3 = rhs(t + c3 * step, x + step * (a31 * k1 + a32 * k2));
        k4 = rhs(t + c4 * step, x + step * (a41 * k1 + a42 * k2 + a43 * k3));
        k5 = rhs(t + c5 * step, x + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        k6 = rhs(t + step, x + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
        xn = x + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        k7 = rhs(t + step, xn);
        err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        double norm = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double sc = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(x(i)), std::abs(xn(i)));
            norm = std::max(norm, std::abs(err(i)) / sc);
        }
        if (!std::isfinite(norm)) norm = std::numeric_limits<double>::infinity();

        if (norm <= 1.0) {
            t = last ? t1 : t + step;
            x = xn;
            k1 = k7;
            if (!all_finite(x)) throw IntegrationError("integrate: non-finite state at t=" + std::to_string(t));
        }
        const double factor = norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(norm, -0.2), 0.2, 5.0);
        h = std::min(step * factor, cfg.max_step);
        if (norm > 1.0 && h < cfg.min_step) {
            throw IntegrationError("integrate: step size underflow at t=" + std::to_string(t));
        }
        h = std::max(h, cfg.min_step);
    }
    return x;
}

Vec integrate_rk4(const Rhs& rhs, const Vec& x0, double t0, double t1, double dt)
{
    if (!(dt > 0.0)) throw std::invalid_argument("integrate_rk4: dt must be positive");
    if (!(t1 >= t0)) throw std::invalid_argument("integrate_rk4: t1 must not precede t0");
    Vec x = x0;
    const auto n = static_cast<long>(std::ceil((t1 - t0) / dt - 1e-9));
    for (long i = 0; i < n; ++i) {
        const double t = t0 + static_cast<double>(i) * dt;
        const double h = std::min(dt, t1 - t);
        const Vec k1 = rhs(t, x);
        const Vec k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1);
        const Vec k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2);
        const Vec k4 = rhs(t + h, x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return x;
}

Mat propagate_ensemble(const Rhs& rhs, const Mat& samples, double t0, double t1,
                       const IntegratorConfig& cfg, Exec exec)
{
    cfg.validate();
    const long n = samples.rows();
    Mat out(samples.rows(), samples.cols());
    std::atomic<long> first_failure{n};
    std::string failure_message;

#pragma omp parallel for schedule(dynamic) if (exec == Exec::parallel)
    for (long i = 0; i < n; ++i) {
        try {
            out.row(i) = integrate(rhs, samples.row(i).transpose(), t0, t1, cfg).transpose();
        } catch (const std::exception& e) {
#pragma omp critical(gnmk_propagate_failure)
            {
                if (i < first_failure.load()) {
                    first_failure = i;
                    failure_message = e.what();
                }
            }
        }
    }
    if (first_failure.load() < n) {
        throw IntegrationError("sample " + std::to_string(first_failure.load()) + ": " + failure_message,
                               first_failure.load());
    }
    return out;
}

}  // namespace gnmk::dynsys
