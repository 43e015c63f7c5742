#include "gnmk/forecaster.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gnmk::basis_adapt {

namespace {

constexpr double time_eps = 1e-9;

std::string time_label(double t)
{
    std::ostringstream os;
    os << "t=" << t;
    return os.str();
}

}  // namespace

const char* policy_name(BasisPolicy p)
{
    switch (p) {
    case BasisPolicy::fixed_hermite: return "fixed-hermite";
    case BasisPolicy::mgs: return "mgs";
    case BasisPolicy::nmap: return "nmap";
    }
    return "?";
}

BasisPolicy parse_policy(const std::string& name)
{
    if (name == "fixed-hermite") return BasisPolicy::fixed_hermite;
    if (name == "mgs") return BasisPolicy::mgs;
    if (name == "nmap") return BasisPolicy::nmap;
    throw std::invalid_argument("unknown basis policy '" + name + "'");
}

void ForecastConfig::validate() const
{
    if (order < 1) throw std::invalid_argument("order must be >= 1");
    if (reexpand_order < 1) throw std::invalid_argument("reexpand_order must be >= 1");
    if (train_samples < 2) throw std::invalid_argument("train_samples must be >= 2");
    if (validation_samples < 30) throw std::invalid_argument("validation_samples must be >= 30");
    if (work_samples < 30) throw std::invalid_argument("work_samples must be >= 30");
    if (!(anchor_step > 0.0) || !std::isfinite(anchor_step))
        throw std::invalid_argument("anchor_step must be positive");
    if (!(kl_tolerance > 0.0)) throw std::invalid_argument("kl_tolerance must be positive");
    rvm.validate();
}

StateForecaster::StateForecaster(dynsys::Flow flow, pce::PCExpansion prior, double t0, ForecastConfig cfg)
    : flow_(std::move(flow)), prior_(std::move(prior)), t0_(t0), cfg_(std::move(cfg)), checked_until_(t0)
{
    cfg_.validate();
    if (!prior_.is_hermite()) throw std::invalid_argument("prior expansion must use the Hermite basis");
    train_.germ = pce::sample_germ(cfg_.train_samples, prior_.germ_dim(), cfg_.seed);
    validation_.germ = pce::sample_germ(cfg_.validation_samples, prior_.germ_dim(), cfg_.seed + 1);
    anchors_.push_back(t0_);
}

double StateForecaster::grid_floor(double t) const
{
    const double k = std::floor((t - t0_) / cfg_.anchor_step + time_eps);
    return t0_ + std::max(0.0, k) * cfg_.anchor_step;
}

const Mat& StateForecaster::states(Ensemble& e, double t)
{
    if (t < t0_ - time_eps) throw std::invalid_argument("time precedes the initial time");
    if (auto it = e.states.find(t); it != e.states.end()) return it->second;
    if (e.states.empty()) e.states.emplace(t0_, pce::pce_eval_samples(prior_, e.germ));
    // Grid points are reached from the previous grid point so results do not
    // depend on the order of requests.
    const double g = grid_floor(t);
    double prev = t0_;
    for (double s = t0_ + cfg_.anchor_step; s <= g + time_eps; s = prev + cfg_.anchor_step) {
        if (e.states.find(s) == e.states.end())
            e.states.emplace(s, flow_.propagate(e.states.at(prev), prev, s));
        prev = s;
    }
    if (std::abs(t - prev) <= time_eps) return e.states.at(prev);
    return e.states.emplace(t, flow_.propagate(e.states.at(prev), prev, t)).first->second;
}

const pce::PCExpansion& StateForecaster::hermite_fit(double t)
{
    if (auto it = hermite_fits_.find(t); it != hermite_fits_.end()) return it->second;
    const auto set = pce::total_degree_index_set(prior_.germ_dim(), cfg_.order);
    auto fit = sparse_bayes::fit_pce(train_.germ, training_states(t), pce::BasisKind::hermite(), set,
                                     cfg_.rvm, &flags_);
    return hermite_fits_.emplace(t, std::move(fit)).first->second;
}

const StateForecaster::AnchorBasis& StateForecaster::anchor_basis(std::size_t j)
{
    if (auto it = anchor_bases_.find(j); it != anchor_bases_.end()) return it->second;
    const double a = anchors_.at(j);
    const Mat& z = training_states(a);
    AnchorBasis b;
    if (cfg_.policy == BasisPolicy::mgs) {
        auto m = build_mgs_basis(z, cfg_.order, time_label(a));
        if (!m.dropped.empty()) flags_.add(Flag::mgs_column_dropped);
        b.basis = std::move(m.basis);
        b.index_set = std::move(m.index_set);
    } else {
        b.basis = pce::BasisKind::nmap(time_label(a));
        b.index_set = pce::total_degree_index_set(static_cast<int>(z.cols()), cfg_.order);
    }
    return anchor_bases_.emplace(j, std::move(b)).first->second;
}

const pce::PCExpansion& StateForecaster::link(std::size_t j, double t)
{
    const auto key = std::make_pair(j, t);
    if (auto it = links_.find(key); it != links_.end()) return it->second;
    const AnchorBasis& b = anchor_basis(j);
    const Mat& z = training_states(anchors_.at(j));
    auto fit = sparse_bayes::fit_pce(z, training_states(t), b.basis, b.index_set, cfg_.rvm, &flags_);
    return links_.emplace(key, std::move(fit)).first->second;
}

Mat StateForecaster::clamp_to_training(std::size_t j, Mat z)
{
    // Polynomial links are only trusted near the states they were fitted on.
    const Mat& train = training_states(anchors_.at(j));
    const RowVec lo = train.colwise().minCoeff();
    const RowVec hi = train.colwise().maxCoeff();
    const RowVec pad = 0.1 * (hi - lo);
    for (Eigen::Index c = 0; c < z.cols(); ++c)
        z.col(c) = z.col(c).cwiseMax(lo(c) - pad(c)).cwiseMin(hi(c) + pad(c));
    return z;
}

Mat StateForecaster::apply_link(std::size_t j, double t, const Mat& anchor_states)
{
    if (j == 0) return pce::pce_eval_samples(link(j, t), anchor_states);
    return pce::pce_eval_samples(link(j, t), clamp_to_training(j, anchor_states));
}

Mat StateForecaster::chain_to_anchor(const Mat& prior_germ, std::size_t j)
{
    Mat z = pce::pce_eval_samples(prior_, prior_germ);
    for (std::size_t i = 1; i <= j; ++i) z = apply_link(i - 1, anchors_[i], z);
    return z;
}

std::size_t StateForecaster::anchor_index_before(double t) const
{
    std::size_t j = 0;
    while (j + 1 < anchors_.size() && anchors_[j + 1] < t - time_eps) ++j;
    return j;
}

void StateForecaster::extend_to(double t)
{
    if (cfg_.policy == BasisPolicy::fixed_hermite) return;
    while (checked_until_ < t - time_eps) {
        const double g = checked_until_ + cfg_.anchor_step;
        const std::size_t j = anchors_.size() - 1;
        if (validation_anchor_states_.find(j) == validation_anchor_states_.end())
            validation_anchor_states_.emplace(j, chain_to_anchor(validation_.germ, j));
        const Mat pred = apply_link(j, g, validation_anchor_states_.at(j));
        const Mat& exact = validation_states(g);
        double kl = 0.0;
        for (Eigen::Index c = 0; c < exact.cols(); ++c)
            kl = std::max(kl, kl_check(pred.col(c), exact.col(c)));
        const double previous = g - cfg_.anchor_step;
        if (kl > cfg_.kl_tolerance && previous > anchors_.back() + time_eps) {
            anchors_.push_back(previous);
            continue;
        }
        checked_until_ = g;
    }
}

const pce::PCExpansion& StateForecaster::forecast(double t)
{
    if (t < t0_ - time_eps) throw std::invalid_argument("forecast time precedes the initial time");
    if (t <= t0_ + time_eps) return prior_;
    if (auto it = forecasts_.find(t); it != forecasts_.end()) return it->second;
    if (cfg_.policy == BasisPolicy::fixed_hermite) return forecasts_.emplace(t, hermite_fit(t)).first->second;

    extend_to(t);
    const std::size_t j = anchor_index_before(t);
    const Mat work = pce::sample_germ(cfg_.work_samples, prior_.germ_dim(), cfg_.seed + 2);
    const Mat z = chain_to_anchor(work, j);
    const Mat x = apply_link(j, t, z);
    const NatafTransform nataf = nataf_fit(z);
    if (nataf.regularized) flags_.add(Flag::nataf_regularized);
    auto exp = reexpand_hermite(x, nataf_apply(nataf, z), cfg_.reexpand_order, cfg_.rvm, &flags_);
    return forecasts_.emplace(t, std::move(exp)).first->second;
}

Mat StateForecaster::predict(const Mat& prior_germ, double t)
{
    if (t <= t0_ + time_eps) return pce::pce_eval_samples(prior_, prior_germ);
    if (cfg_.policy == BasisPolicy::fixed_hermite) return pce::pce_eval_samples(hermite_fit(t), prior_germ);
    extend_to(t);
    const std::size_t j = anchor_index_before(t);
    return apply_link(j, t, chain_to_anchor(prior_germ, j));
}

double StateForecaster::validation_error(double t)
{
    const Mat pred = predict(validation_.germ, t);
    const Mat& exact = validation_states(t);
    return (pred - exact).norm() / exact.norm();
}

AdaptiveBasisState StateForecaster::anchor_state(std::size_t j)
{
    AdaptiveBasisState s;
    s.anchor_time = anchors_.at(j);
    s.anchor_expansion = forecast(s.anchor_time);
    s.basis = cfg_.policy == BasisPolicy::fixed_hermite ? pce::BasisKind::hermite() : anchor_basis(j).basis;
    s.kl_tolerance = cfg_.kl_tolerance;
    return s;
}

}  // namespace gnmk::basis_adapt
