#include "gnmk/filter.hpp"

#include "gnmk/dynsys.hpp"
#include "gnmk/forecaster.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gnmk::filter {

namespace {

constexpr double time_eps = 1e-9;

void shift_mean(pce::PCExpansion& x, const Vec& delta)
{
    Mat c = x.coeffs();
    c.col(0) += delta;
    x = pce::PCExpansion(std::move(c), x.basis(), x.index_set());
}

pce::PCExpansion with_coeffs(Mat coeffs, const pce::MultiIndexSet& set)
{
    return pce::PCExpansion(std::move(coeffs), pce::BasisKind::hermite(), set);
}

Mat kalman_gain(const Mat& C_xy, const Mat& C_y, double rcond, Flags* flags)
{
    const PinvResult p = pinv_svd(C_y, rcond);
    if (p.truncated && flags) flags->add(Flag::rank_deficient);
    return C_xy * p.inverse;
}

}  // namespace

const char* map_mode_name(MapMode m)
{
    return m == MapMode::projection ? "projection" : "bayes";
}

MapMode parse_map_mode(const std::string& name)
{
    if (name == "projection") return MapMode::projection;
    if (name == "bayes") return MapMode::bayes;
    throw std::invalid_argument("unknown map mode '" + name + "'");
}

MeasurementModel::MeasurementModel(const std::vector<int>& observed, int state_dim, const Mat& noise_cov)
{
    if (state_dim < 1) throw std::invalid_argument("state dimension must be positive");
    if (observed.empty()) throw std::invalid_argument("at least one component must be observed");
    const int m = static_cast<int>(observed.size());
    selector = Mat::Zero(m, state_dim);
    for (int i = 0; i < m; ++i) {
        const int c = observed[static_cast<std::size_t>(i)];
        if (c < 0 || c >= state_dim) throw std::invalid_argument("observed component out of range");
        if (i > 0 && c <= observed[static_cast<std::size_t>(i - 1)])
            throw std::invalid_argument("observed components must be strictly increasing");
        selector(i, c) = 1.0;
    }
    if (noise_cov.rows() != m || noise_cov.cols() != m)
        throw std::invalid_argument("noise covariance must be m x m");
    noise.mean = Vec::Zero(m);
    noise.cov = repair_psd(noise_cov);
    noise_expansion = pce::PCExpansion::linear(noise.mean, psd_factor(noise.cov));
}

MeasurementModel MeasurementModel::identity(int state_dim, const Mat& noise_cov)
{
    std::vector<int> all(static_cast<std::size_t>(state_dim));
    for (int i = 0; i < state_dim; ++i) all[static_cast<std::size_t>(i)] = i;
    return MeasurementModel(all, state_dim, noise_cov);
}

void MeasurementModel::validate() const
{
    if (selector.size() == 0) throw std::invalid_argument("measurement model has no selector");
    if (noise.cov.rows() != obs_dim() || noise_expansion.state_dim() != obs_dim())
        throw std::invalid_argument("measurement noise does not match the observation dimension");
}

void FilterConfig::validate() const
{
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
    if (!(pinv_rcond > 0.0) || pinv_rcond >= 1.0) throw std::invalid_argument("pinv_rcond must be in (0, 1)");
    if (!(delta_tau > 0.0) || !std::isfinite(delta_tau)) throw std::invalid_argument("delta_tau must be positive");
    if (samples < 4) throw std::invalid_argument("samples must be >= 4");
    if (bias_samples < 4) throw std::invalid_argument("bias_samples must be >= 4");
    if (divergence_window < 0) throw std::invalid_argument("divergence_window must be >= 0");
    if (!(model_error_var >= 0.0)) throw std::invalid_argument("model_error_var must be >= 0");
    rvm.validate();
}

Dynamics make_dynamics(const dynsys::Flow& flow, basis_adapt::StateForecaster& forecaster)
{
    Dynamics d;
    d.propagate = [flow](const Mat& x, double t0, double t1) {
        if (std::abs(t1 - t0) <= time_eps) return x;
        return flow.propagate(x, t0, t1);
    };
    d.forecast = [&forecaster](double t) { return forecaster.forecast(t); };
    return d;
}

Dynamics linear_dynamics(const Mat& A, const pce::PCExpansion& x0, double t0)
{
    if (A.rows() != A.cols() || A.rows() != x0.state_dim())
        throw std::invalid_argument("linear dynamics: A must be d x d");
    Dynamics d;
    d.propagate = [A](const Mat& x, double s0, double s1) -> Mat {
        const Mat phi = (A * (s1 - s0)).exp();
        return x * phi.transpose();
    };
    d.forecast = [A, x0, t0](double t) {
        const Mat phi = (A * (t - t0)).exp();
        return pce::PCExpansion(phi * x0.coeffs(), x0.basis(), x0.index_set());
    };
    return d;
}

pce::PCExpansion forecast_measurement(const pce::PCExpansion& x, const MeasurementModel& model)
{
    model.validate();
    if (!x.is_hermite()) throw std::invalid_argument("forecast_measurement: Hermite expansion required");
    if (x.state_dim() != model.state_dim()) throw std::invalid_argument("forecast_measurement: dimension mismatch");
    const auto set = pce::direct_sum(x.index_set(), model.noise_expansion.index_set());
    const Mat xs = pce::embed(x, set, 0).coeffs();
    const Mat eps = pce::embed(model.noise_expansion, set, x.germ_dim()).coeffs();
    return with_coeffs(model.selector * xs + eps, set);
}

pce::PCExpansion gmk_update(const pce::PCExpansion& x_f, const pce::PCExpansion& y_f, const Vec& y_mes,
                            double pinv_rcond, Flags* flags)
{
    if (y_mes.size() != y_f.state_dim()) throw std::invalid_argument("gmk_update: measurement size mismatch");
    const pce::PCExpansion x = x_f.index_set() == y_f.index_set() ? x_f : pce::embed(x_f, y_f.index_set(), 0);
    const PinvResult p = pinv_svd(pce::pce_cov(y_f), pinv_rcond);
    const Vec innovation = y_mes - pce::pce_mean(y_f);
    if (flags) {
        if (p.rank == 0 && innovation.norm() > 0.0) flags->add(Flag::singular_update);
        else if (p.truncated) flags->add(Flag::rank_deficient);
    }
    const Mat K = pce::pce_cov(x, y_f) * p.inverse;
    Mat c = x.coeffs() - K * y_f.coeffs();
    c.col(0) += K * y_mes;
    return with_coeffs(std::move(c), x.index_set());
}

AffineForwardMap estimate_forward_map_projection(const pce::PCExpansion& x, const pce::PCExpansion& z,
                                                 const Vec& x_lin, double pinv_rcond, Flags* flags)
{
    if (!(x.index_set() == z.index_set())) throw std::invalid_argument("forward map: germ mismatch");
    if (x_lin.size() != x.state_dim()) throw std::invalid_argument("forward map: x_lin size mismatch");
    AffineForwardMap f;
    f.H = kalman_gain(pce::pce_cov(z, x), pce::pce_cov(x), pinv_rcond, flags);
    f.x_lin = x_lin;
    f.h = pce::pce_mean(z) - f.H * (pce::pce_mean(x) - x_lin);
    f.eps_var = Vec::Zero(z.state_dim());
    return f;
}

AffineForwardMap estimate_forward_map_bayes(const Mat& x_samples, const Mat& z_samples, const Vec& x_lin,
                                            const Mat& prior_mean_H, const sparse_bayes::RvmConfig& cfg,
                                            Flags* flags)
{
    const Eigen::Index n = x_samples.rows(), d = x_samples.cols(), m = z_samples.cols();
    if (z_samples.rows() != n) throw std::invalid_argument("forward map: sample counts differ");
    if (n < d + 2) throw std::invalid_argument("forward map: need at least d + 2 samples");
    if (prior_mean_H.rows() != m || prior_mean_H.cols() != d)
        throw std::invalid_argument("forward map: prior mean must be m x d");
    const Mat dx = x_samples.rowwise() - x_lin.transpose();
    AffineForwardMap f;
    f.H = prior_mean_H;
    f.x_lin = x_lin;
    f.h.resize(m);
    f.eps_var.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Vec target = z_samples.col(i) - dx * prior_mean_H.row(i).transpose();
        const auto r = sparse_bayes::rvm_fit_intercept(dx, target, cfg);
        if (flags && !r.converged) flags->add(Flag::rvm_not_converged);
        if (flags && r.rank_deficient) flags->add(Flag::rank_deficient);
        f.h(i) = r.weights(0);
        f.H.row(i) += r.weights.tail(d).transpose();
        f.eps_var(i) = r.noise_var;
    }
    return f;
}

AffineInverseMap estimate_inverse_map(const pce::PCExpansion& x_f, const pce::PCExpansion& y, double pinv_rcond,
                                      Flags* flags)
{
    const pce::PCExpansion x = x_f.index_set() == y.index_set() ? x_f : pce::embed(x_f, y.index_set(), 0);
    AffineInverseMap g;
    g.K = kalman_gain(pce::pce_cov(x, y), pce::pce_cov(y), pinv_rcond, flags);
    g.b = pce::pce_mean(x) - g.K * pce::pce_mean(y);
    g.eps_var = Vec::Zero(x.state_dim());
    return g;
}

AffineInverseMap estimate_inverse_map(const Mat& x_samples, const Mat& y_samples,
                                      const sparse_bayes::RvmConfig& cfg, Flags* flags)
{
    const Eigen::Index n = x_samples.rows(), d = x_samples.cols(), m = y_samples.cols();
    if (y_samples.rows() != n) throw std::invalid_argument("inverse map: sample counts differ");
    if (n < m + 2) throw std::invalid_argument("inverse map: need at least m + 2 samples");
    AffineInverseMap g;
    g.K.resize(d, m);
    g.b.resize(d);
    g.eps_var.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const auto r = sparse_bayes::rvm_fit_intercept(y_samples, x_samples.col(j), cfg);
        if (flags && !r.converged) flags->add(Flag::rvm_not_converged);
        if (flags && r.rank_deficient) flags->add(Flag::rank_deficient);
        g.b(j) = r.weights(0);
        g.K.row(j) = r.weights.tail(m).transpose();
        g.eps_var(j) = r.noise_var;
    }
    return g;
}

GnmkResult gnmk_iterate(const pce::PCExpansion& x_f, const MeasurementValue& y_mes, double t_start,
                        double t_end, const MeasurementModel& model, const FilterConfig& cfg,
                        const Propagator& propagate, std::uint64_t seed, const IterationObserver& observer)
{
    cfg.validate();
    model.validate();
    if (!x_f.is_hermite()) throw std::invalid_argument("gnmk_iterate: Hermite prior required");
    if (x_f.state_dim() != model.state_dim()) throw std::invalid_argument("gnmk_iterate: dimension mismatch");
    if (t_end < t_start - time_eps) throw std::invalid_argument("gnmk_iterate: window end precedes its start");

    const int m = model.obs_dim();
    MeasurementModel mm = model;
    Vec value;
    const pce::PCExpansion* random = nullptr;
    if (const auto* v = std::get_if<Vec>(&y_mes)) {
        value = *v;
    } else if (const auto* g = std::get_if<pce::GaussianDensity>(&y_mes)) {
        value = g->mean;
        std::vector<int> observed;
        for (Eigen::Index i = 0; i < model.selector.rows(); ++i) {
            Eigen::Index c = 0;
            model.selector.row(i).maxCoeff(&c);
            observed.push_back(static_cast<int>(c));
        }
        mm = MeasurementModel(observed, model.state_dim(), g->cov);
    } else {
        random = &std::get<pce::PCExpansion>(y_mes);
        if (!random->is_hermite()) throw std::invalid_argument("gnmk_iterate: Hermite pseudo-measurement required");
        if (random->state_dim() != m) throw std::invalid_argument("gnmk_iterate: pseudo-measurement size mismatch");
    }
    if (!random && value.size() != m) throw std::invalid_argument("gnmk_iterate: measurement size mismatch");

    // Joint germ: [state | measurement noise | model error | pseudo-measurement].
    pce::MultiIndexSet joint = x_f.index_set();
    const bool has_noise = mm.has_noise();
    const int noise_offset = joint.germ_dim();
    if (has_noise) joint = pce::direct_sum(joint, mm.noise_expansion.index_set());
    const bool has_model_error = random && cfg.model_error_var > 0.0;
    const int model_error_offset = joint.germ_dim();
    const pce::PCExpansion model_error =
        pce::PCExpansion::linear(Vec::Zero(m), std::sqrt(cfg.model_error_var) * Mat::Identity(m, m));
    if (has_model_error) joint = pce::direct_sum(joint, model_error.index_set());
    const int random_offset = joint.germ_dim();
    if (random) joint = pce::direct_sum(joint, random->index_set());

    const pce::PCExpansion xf = pce::embed(x_f, joint, 0);
    Mat eps = Mat::Zero(m, static_cast<Eigen::Index>(joint.size()));
    if (has_noise) eps += pce::embed(mm.noise_expansion, joint, noise_offset).coeffs();
    if (has_model_error) eps += pce::embed(model_error, joint, model_error_offset).coeffs();
    Mat measured;
    if (random) measured = pce::embed(*random, joint, random_offset).coeffs();

    GnmkResult r;
    auto update = [&](const AffineForwardMap& fwd, const Mat& K) {
        Mat innovation;
        Mat yl = fwd.H * xf.coeffs() + eps;
        yl.col(0) += fwd.h - fwd.H * fwd.x_lin;
        if (random) {
            innovation = measured - yl;
        } else {
            innovation = -yl;
            innovation.col(0) += value;
        }
        return with_coeffs(xf.coeffs() + K * innovation, joint);
    };
    auto linearized = [&](const AffineForwardMap& fwd) {
        Mat yl = fwd.H * xf.coeffs() + eps;
        yl.col(0) += fwd.h - fwd.H * fwd.x_lin;
        return with_coeffs(std::move(yl), joint);
    };

    const Mat select = mm.selector;
    Vec x_lin = pce::pce_mean(xf);

    if (std::abs(t_end - t_start) <= time_eps) {
        // The observation is linear in the state: one update is exact.
        AffineForwardMap fwd{select, x_lin, select * x_lin, Vec::Zero(m)};
        const pce::PCExpansion yl = linearized(fwd);
        r.inverse = estimate_inverse_map(xf, yl, cfg.pinv_rcond, &r.flags);
        if (!random && pce::pce_cov(yl).isZero(0.0) && (value - pce::pce_mean(yl)).norm() > 0.0)
            r.flags.add(Flag::singular_update);
        r.posterior = update(fwd, r.inverse.K);
        r.forward = fwd;
        r.linearization_points.push_back(x_lin);
        const Vec mean = pce::pce_mean(r.posterior);
        r.errors.push_back((mean - x_lin).norm() / std::max({x_lin.norm(), mean.norm(), 1e-300}));
        r.iterations = 1;
        r.converged = mean.allFinite();
        if (!r.converged) {
            r.diverged = true;
            r.flags.add(Flag::gnmk_diverged);
        }
        return r;
    }

    const Mat germ = pce::sample_germ(cfg.samples, joint.germ_dim(), seed);
    pce::PCExpansion xa = xf;
    Mat K_prev;
    int increases = 0;
    for (int it = 1; it <= cfg.max_iter; ++it) {
        x_lin = pce::pce_mean(xa);
        r.linearization_points.push_back(x_lin);
        const Mat xs = pce::pce_eval_samples(xa, germ);
        Mat zs;
        try {
            zs = propagate(xs, t_start, t_end) * select.transpose();
        } catch (const dynsys::IntegrationError&) {
            r.flags.add(Flag::integrator_failure);
            r.diverged = true;
            break;
        }
        if (!zs.allFinite()) {
            r.diverged = true;
            break;
        }

        if (observer) observer(IterationSamples{it, xa, germ, xs, zs, x_lin, K_prev});

        AffineForwardMap fwd;
        if (cfg.map_mode == MapMode::projection) {
            const auto support = pce::active_support(xa);
            const auto set = pce::subset(joint, support);
            const pce::PCExpansion z =
                sparse_bayes::fit_pce(germ, zs, pce::BasisKind::hermite(), set, cfg.rvm, &r.flags);
            fwd = estimate_forward_map_projection(pce::restrict_to(xa, support), z, x_lin, cfg.pinv_rcond,
                                                  &r.flags);
        } else {
            const Mat prior_H = K_prev.size() ? pinv(K_prev, cfg.pinv_rcond) : Mat::Zero(m, xf.state_dim());
            fwd = estimate_forward_map_bayes(xs, zs, x_lin, prior_H, cfg.rvm, &r.flags);
        }

        const pce::PCExpansion yl = linearized(fwd);
        AffineInverseMap inv;
        if (cfg.map_mode == MapMode::projection) {
            inv = estimate_inverse_map(xf, yl, cfg.pinv_rcond, &r.flags);
        } else {
            inv = estimate_inverse_map(pce::pce_eval_samples(xf, germ), pce::pce_eval_samples(yl, germ), cfg.rvm,
                                       &r.flags);
        }
        pce::PCExpansion next = update(fwd, inv.K);
        if (!next.coeffs().allFinite()) {
            r.diverged = true;
            break;
        }
        const Vec mean = pce::pce_mean(next);
        const double err = (mean - x_lin).norm() / std::max({x_lin.norm(), mean.norm(), 1e-300});
        if (!r.errors.empty() && err > r.errors.back()) ++increases;
        else increases = 0;
        r.errors.push_back(err);
        xa = std::move(next);
        r.forward = std::move(fwd);
        r.inverse = std::move(inv);
        K_prev = r.inverse.K;
        r.iterations = it;
        if (err < cfg.tol) {
            r.converged = true;
            break;
        }
        if (cfg.divergence_window > 0 && increases >= cfg.divergence_window) {
            r.diverged = true;
            break;
        }
    }
    r.posterior = std::move(xa);
    if (r.diverged) r.flags.add(Flag::gnmk_diverged);
    if (!r.converged) r.flags.add(Flag::gnmk_not_converged);
    return r;
}

const SmootherStep& SmootherResult::at(double t) const
{
    for (const auto& s : steps) {
        if (std::abs(s.time - t) <= time_eps) return s;
    }
    throw std::out_of_range("no smoother step at the requested time");
}

std::vector<double> smoothing_times(double t0, double T, double delta_tau)
{
    if (T < t0 - time_eps) throw std::invalid_argument("horizon precedes the initial time");
    if (!(delta_tau > 0.0)) throw std::invalid_argument("delta_tau must be positive");
    const double steps = (T - t0) / delta_tau;
    const double n = std::round(steps);
    if (std::abs(steps - n) > 1e-9 * std::max(1.0, steps))
        throw std::invalid_argument("horizon is not a multiple of delta_tau");
    std::vector<double> out;
    for (long k = 0; k <= static_cast<long>(n); ++k) out.push_back(t0 + static_cast<double>(k) * delta_tau);
    return out;
}

namespace {

SmootherStep to_step(double t, GnmkResult&& g)
{
    SmootherStep s;
    s.time = t;
    s.posterior = std::move(g.posterior);
    s.iterations = g.iterations;
    s.converged = g.converged;
    s.errors = std::move(g.errors);
    s.linearization_points = std::move(g.linearization_points);
    s.flags = std::move(g.flags);
    return s;
}

void finish(SmootherResult& r)
{
    std::sort(r.steps.begin(), r.steps.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    for (const auto& s : r.steps) r.flags.merge(s.flags);
}

/// Backward pass shared by both pseudo-smoothers.
template <class Backward>
SmootherResult pseudo_smooth(const Vec& y_mes, double t0, double T, const MeasurementModel& model,
                             const FilterConfig& cfg, const Dynamics& dyn, Backward&& backward)
{
    cfg.validate();
    const auto times = smoothing_times(t0, T, cfg.delta_tau);
    SmootherResult out;
    const std::size_t n = times.size();
    GnmkResult last = gnmk_iterate(dyn.forecast(T), y_mes, T, T, model, cfg, dyn.propagate, mix_seed(cfg.seed, n));
    out.steps.push_back(to_step(T, std::move(last)));
    for (std::size_t k = n - 1; k-- > 0;) {
        const SmootherStep& next = out.steps.back();
        out.steps.push_back(backward(times[k], times[k + 1], next, mix_seed(cfg.seed, k)));
    }
    finish(out);
    return out;
}

}  // namespace

SmootherResult direct_smooth(const Vec& y_mes, double t0, double T, const MeasurementModel& model,
                             const FilterConfig& cfg, const Dynamics& dyn)
{
    cfg.validate();
    const auto times = smoothing_times(t0, T, cfg.delta_tau);
    SmootherResult out;
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double tt = times[k];
        auto g = gnmk_iterate(dyn.forecast(tt), y_mes, tt, T, model, cfg, dyn.propagate, mix_seed(cfg.seed, k));
        out.steps.push_back(to_step(tt, std::move(g)));
    }
    finish(out);
    return out;
}

SmootherResult ps1_smooth(const Vec& y_mes, double t0, double T, const MeasurementModel& model,
                          const FilterConfig& cfg, const Dynamics& dyn)
{
    const int d = model.state_dim();
    return pseudo_smooth(y_mes, t0, T, model, cfg, dyn,
                         [&](double tt, double t_next, const SmootherStep& next, std::uint64_t seed) {
                             Flags gauss_flags;
                             const pce::GaussianDensity pm = pce::gaussianize(next.posterior, &gauss_flags);
                             const auto ident = MeasurementModel::identity(d, pm.cov);
                             GnmkResult g = gnmk_iterate(dyn.forecast(tt), pm.mean, tt, t_next, ident, cfg,
                                                         dyn.propagate, seed);
                             g.flags.merge(gauss_flags);
                             Vec e;
                             if (cfg.bias_correct) {
                                 e = bias_correct(g.posterior, pm.mean, pm.cov, g.forward, tt, t_next,
                                                  dyn.propagate, cfg, mix_seed(seed, 1), &g.flags);
                                 shift_mean(g.posterior, -e);
                             }
                             SmootherStep s = to_step(tt, std::move(g));
                             s.bias = std::move(e);
                             return s;
                         });
}

SmootherResult ps2_smooth(const Vec& y_mes, double t0, double T, const MeasurementModel& model,
                          const FilterConfig& cfg, const Dynamics& dyn)
{
    const int d = model.state_dim();
    const auto ident = MeasurementModel::identity(d, Mat::Zero(d, d));
    return pseudo_smooth(y_mes, t0, T, model, cfg, dyn,
                         [&](double tt, double t_next, const SmootherStep& next, std::uint64_t seed) {
                             Flags reduce_flags;
                             basis_adapt::ReductionConfig red = cfg.reduction;
                             red.seed = mix_seed(seed, 2);
                             const pce::PCExpansion pm = basis_adapt::reduce_germ(next.posterior, red, &reduce_flags);
                             GnmkResult g = gnmk_iterate(dyn.forecast(tt), pm, tt, t_next, ident, cfg,
                                                         dyn.propagate, seed);
                             g.flags.merge(reduce_flags);
                             Vec e;
                             if (cfg.bias_correct) {
                                 e = bias_correct(g.posterior, pce::pce_mean(pm), pce::pce_cov(pm), g.forward, tt,
                                                  t_next, dyn.propagate, cfg, mix_seed(seed, 1), &g.flags);
                                 shift_mean(g.posterior, -e);
                             }
                             SmootherStep s = to_step(tt, std::move(g));
                             s.bias = std::move(e);
                             return s;
                         });
}

Vec bias_correct(const pce::PCExpansion& x_prev_post, const Vec& x_mes, const Mat& C_mes,
                 const AffineForwardMap& forward, double t, double t_next, const Propagator& propagate,
                 const FilterConfig& cfg, std::uint64_t seed, Flags* flags)
{
    const Eigen::Index d = x_prev_post.state_dim();
    if (x_mes.size() != d || C_mes.rows() != d || C_mes.cols() != d || forward.H.rows() != d ||
        forward.H.cols() != d)
        throw std::invalid_argument("bias_correct: the pseudo-measurement must observe the full state");
    const Mat germ = pce::sample_germ(cfg.bias_samples, x_prev_post.germ_dim(), seed);
    const Mat xs = pce::pce_eval_samples(x_prev_post, germ);
    const Mat xf = propagate(xs, t, t_next);
    // Control variate through the forward map removes most of the sampling error in E(x^f).
    const Vec mean_f = sample_mean(xf) + forward.H * (pce::pce_mean(x_prev_post) - sample_mean(xs));
    const Mat C_f = sample_cov(xf);
    const Mat K_re = kalman_gain(C_f, C_f + C_mes, cfg.pinv_rcond, flags);
    const Vec shift = K_re * (mean_f - x_mes);
    if (!cfg.bias_invert) return shift;
    const PinvResult p = pinv_svd(K_re * forward.H, cfg.pinv_rcond);
    if (p.truncated && flags) flags->add(Flag::bias_pseudo_inverse);
    return p.inverse * shift;
}

Mat posterior_cov_rv(const Mat& C_xf, const Mat& C_xy, const Mat& C_y, const Mat& C_meas, double pinv_rcond,
                     Flags* flags)
{
    if (C_xf.rows() != C_xf.cols() || C_xy.rows() != C_xf.rows() || C_y.rows() != C_y.cols() ||
        C_xy.cols() != C_y.rows() || C_meas.rows() != C_y.rows() || C_meas.cols() != C_y.cols())
        throw std::invalid_argument("posterior_cov_rv: dimension mismatch");
    const Mat K = kalman_gain(C_xy, C_y, pinv_rcond, flags);
    bool clamped = false;
    Mat out = repair_psd(C_xf + K * (C_meas - C_y) * K.transpose(), &clamped);
    if (clamped && flags) flags->add(Flag::psd_clamped);
    return out;
}

}  // namespace gnmk::filter
