#pragma once

#include "gnmk/exec.hpp"
#include "gnmk/linalg.hpp"

#include <functional>
#include <stdexcept>
#include <string>

namespace gnmk::dynsys {

struct SystemParams {
    double a = 0.25;
    double b = 4.0;
    double F1 = 8.0;
    double F2 = 1.0;
};

/// Lorenz-84 vector field in model time units.
Vec lorenz84_rhs(const Vec& state, const SystemParams& p);

/// Right-hand side f(t, x) of an autonomous or non-autonomous ODE.
using Rhs = std::function<Vec(double, const Vec&)>;

/// Lorenz-84 with time measured in hours; one model time unit spans hours_per_unit hours.
Rhs lorenz84_hours(const SystemParams& p, double hours_per_unit = 120.0);

struct IntegratorConfig {
    double abs_tol = 1e-8;
    double rel_tol = 1e-8;
    double initial_step = 0.1;
    double max_step = 6.0;
    double min_step = 1e-10;

    void validate() const;
};

class IntegrationError : public std::runtime_error {
public:
    explicit IntegrationError(const std::string& what, long sample = -1)
        : std::runtime_error(what), sample_(sample) {}
    long sample() const { return sample_; }

private:
    long sample_;
};

/// Dormand-Prince 4(5) with mixed absolute/relative max-norm error control.
Vec integrate(const Rhs& rhs, const Vec& x0, double t0, double t1, const IntegratorConfig& cfg);

/// Classical fixed-step RK4; the last step is shortened to land on t1.
Vec integrate_rk4(const Rhs& rhs, const Vec& x0, double t0, double t1, double dt);

/// Integrates every row of samples from t0 to t1; output rows follow input rows.
/// Failures raise IntegrationError carrying the lowest failing row index.
Mat propagate_ensemble(const Rhs& rhs, const Mat& samples, double t0, double t1,
                       const IntegratorConfig& cfg, Exec exec = Exec::parallel);

/// A right-hand side bundled with its integrator settings.
struct Flow {
    Rhs rhs;
    IntegratorConfig cfg;

    Vec operator()(const Vec& x, double t0, double t1) const { return integrate(rhs, x, t0, t1, cfg); }
    Mat propagate(const Mat& samples, double t0, double t1, Exec exec = Exec::parallel) const
    {
        return propagate_ensemble(rhs, samples, t0, t1, cfg, exec);
    }
};

}  // namespace gnmk::dynsys
