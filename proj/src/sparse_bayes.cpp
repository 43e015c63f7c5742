#include "gnmk/sparse_bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace gnmk::sparse_bayes {

void RvmConfig::validate() const
{
    if (max_iter < 1) throw std::invalid_argument("RvmConfig: max_iter must be >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("RvmConfig: tol must be positive");
    if (!(prune_threshold > 0.0)) throw std::invalid_argument("RvmConfig: prune_threshold must be positive");
    if (!(noise_floor > 0.0)) throw std::invalid_argument("RvmConfig: noise_floor must be positive");
    if (!estimate_noise && !(fixed_noise_var > 0.0)) throw std::invalid_argument("RvmConfig: fixed_noise_var must be positive");
}

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

// Posterior quantities for one hyperparameter setting of the normalized problem.
struct Posterior {
    std::vector<int> active;   // positions into the candidate columns
    Vec mu;
    Mat sigma;
    double rss = 0.0;
    double log_evidence = -inf;
    bool rank_deficient = false;
};

class Problem {
public:
    Problem(Mat phi, Vec t) : phi_(std::move(phi)), t_(std::move(t)), gram_(phi_.transpose() * phi_), proj_(phi_.transpose() * t_) {}

    Eigen::Index candidates() const { return phi_.cols(); }
    double n() const { return static_cast<double>(phi_.rows()); }

    Posterior evaluate(const Vec& alpha, double s2) const
    {
        Posterior post;
        for (Eigen::Index i = 0; i < alpha.size(); ++i) {
            if (std::isfinite(alpha(i))) post.active.push_back(static_cast<int>(i));
        }
        const auto k = static_cast<Eigen::Index>(post.active.size());
        double log_det_s = 0.0, sum_log_alpha = 0.0, prior_quad = 0.0;
        if (k > 0) {
            Mat s(k, k);
            Vec b(k);
            for (Eigen::Index r = 0; r < k; ++r) {
                b(r) = proj_(post.active[r]);
                for (Eigen::Index c = 0; c < k; ++c) s(r, c) = gram_(post.active[r], post.active[c]) / s2;
                s(r, r) += alpha(post.active[r]);
                sum_log_alpha += std::log(alpha(post.active[r]));
            }
            Eigen::LLT<Mat> llt(s);
            if (llt.info() == Eigen::Success) {
                post.sigma = llt.solve(Mat::Identity(k, k));
                const Mat l = llt.matrixL();
                for (Eigen::Index i = 0; i < k; ++i) log_det_s += 2.0 * std::log(l(i, i));
            } else {
                post.rank_deficient = true;
                Eigen::SelfAdjointEigenSolver<Mat> eig(s);
                const Vec lam = eig.eigenvalues();
                const double cut = 1e-14 * lam.cwiseAbs().maxCoeff();
                Vec inv = Vec::Zero(k);
                for (Eigen::Index i = 0; i < k; ++i) {
                    if (lam(i) > cut) {
                        inv(i) = 1.0 / lam(i);
                        log_det_s += std::log(lam(i));
                    }
                }
                post.sigma = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
            }
            post.mu = post.sigma * b / s2;
            Vec fit = Vec::Zero(phi_.rows());
            for (Eigen::Index r = 0; r < k; ++r) {
                fit += post.mu(r) * phi_.col(post.active[r]);
                prior_quad += alpha(post.active[r]) * post.mu(r) * post.mu(r);
            }
            post.rss = (t_ - fit).squaredNorm();
        } else {
            post.mu.resize(0);
            post.sigma.resize(0, 0);
            post.rss = t_.squaredNorm();
        }
        const double nn = n();
        post.log_evidence = -0.5 * (nn * std::log(2.0 * std::numbers::pi) + nn * std::log(s2) - sum_log_alpha
                                    + log_det_s + post.rss / s2 + prior_quad);
        return post;
    }

private:
    Mat phi_;
    Vec t_;
    Mat gram_;
    Vec proj_;
};

}  // namespace

RvmResult rvm_fit(const Mat& design, const Vec& targets, const RvmConfig& cfg)
{
    cfg.validate();
    if (design.rows() != targets.size()) throw std::invalid_argument("rvm_fit: design rows must match targets");
    if (design.rows() < 1 || design.cols() < 1) throw std::invalid_argument("rvm_fit: empty design");
    if (!design.allFinite() || !targets.allFinite()) throw std::invalid_argument("rvm_fit: non-finite input");

    const Eigen::Index n = design.rows();
    const Eigen::Index p = design.cols();
    RvmResult res;
    res.weights = Vec::Zero(p);
    res.precisions = Vec::Constant(p, inf);

    // Normalize columns and targets so that thresholds are scale free.
    Vec scale(p);
    std::vector<Eigen::Index> cand;
    for (Eigen::Index j = 0; j < p; ++j) {
        scale(j) = std::sqrt(design.col(j).squaredNorm() / static_cast<double>(n));
        if (scale(j) > 0.0) cand.push_back(j);
    }
    const double tscale = std::sqrt(targets.squaredNorm() / static_cast<double>(n));

    if (tscale == 0.0 || cand.empty()) {
        res.noise_var = cfg.estimate_noise ? std::max(cfg.noise_floor, tscale * tscale) : cfg.fixed_noise_var;
        const double s2 = res.noise_var;
        const double nn = static_cast<double>(n);
        res.log_evidence_trace.push_back(-0.5 * (nn * std::log(2.0 * std::numbers::pi * s2) + targets.squaredNorm() / s2));
        res.converged = true;
        return res;
    }

    Mat phi(n, static_cast<Eigen::Index>(cand.size()));
    for (std::size_t c = 0; c < cand.size(); ++c) phi.col(static_cast<Eigen::Index>(c)) = design.col(cand[c]) / scale(cand[c]);
    const Problem prob(std::move(phi), targets / tscale);
    const double log_offset = static_cast<double>(n) * std::log(tscale);

    const double floor_n = cfg.noise_floor / (tscale * tscale);
    double s2 = cfg.estimate_noise ? std::max(0.1, floor_n) : std::max(cfg.fixed_noise_var / (tscale * tscale), floor_n);
    Vec alpha = Vec::Ones(prob.candidates());

    Posterior cur = prob.evaluate(alpha, s2);
    res.log_evidence_trace.push_back(cur.log_evidence - log_offset);

    for (int it = 1; it <= cfg.max_iter; ++it) {
        res.iterations = it;
        const auto k = static_cast<Eigen::Index>(cur.active.size());
        double sum_gamma = 0.0;
        Vec gamma(k);
        for (Eigen::Index r = 0; r < k; ++r) {
            gamma(r) = 1.0 - alpha(cur.active[r]) * cur.sigma(r, r);
            sum_gamma += gamma(r);
        }

        // Fixed-point re-estimation.
        Vec alpha_fp = Vec::Constant(prob.candidates(), inf);
        for (Eigen::Index r = 0; r < k; ++r) {
            const double m2 = cur.mu(r) * cur.mu(r);
            double a = (gamma(r) > 0.0 && m2 > 0.0) ? gamma(r) / m2 : inf;
            if (a > cfg.prune_threshold) a = inf;
            alpha_fp(cur.active[r]) = a;
        }
        double s2_fp = s2;
        if (cfg.estimate_noise) s2_fp = std::max(cur.rss / std::max(static_cast<double>(n) - sum_gamma, 1e-12), floor_n);
        Posterior next = prob.evaluate(alpha_fp, s2_fp);
        Vec alpha_next = alpha_fp;
        double s2_next = s2_fp;

        if (!(next.log_evidence >= cur.log_evidence)) {
            // Expectation-maximization step; never decreases the evidence.
            Vec alpha_em = Vec::Constant(prob.candidates(), inf);
            for (Eigen::Index r = 0; r < k; ++r) alpha_em(cur.active[r]) = 1.0 / (cur.mu(r) * cur.mu(r) + cur.sigma(r, r));
            double s2_em = s2;
            if (cfg.estimate_noise) s2_em = std::max((cur.rss + s2 * sum_gamma) / static_cast<double>(n), floor_n);
            next = prob.evaluate(alpha_em, s2_em);
            alpha_next = alpha_em;
            s2_next = s2_em;
            if (!(next.log_evidence >= cur.log_evidence)) {
                res.converged = true;
                break;
            }
        }

        const double change = next.log_evidence - cur.log_evidence;
        double max_log_step = 0.0;
        for (Eigen::Index i = 0; i < alpha.size(); ++i) {
            if (std::isfinite(alpha_next(i)) && std::isfinite(alpha(i))) {
                max_log_step = std::max(max_log_step, std::abs(std::log(alpha_next(i) / alpha(i))));
            }
        }
        const bool pruned = next.active.size() != cur.active.size();
        alpha = alpha_next;
        s2 = s2_next;
        cur = std::move(next);
        res.log_evidence_trace.push_back(cur.log_evidence - log_offset);
        if (!pruned && change <= cfg.tol * std::max(1.0, std::abs(cur.log_evidence)) && max_log_step < 1e-3) {
            res.converged = true;
            break;
        }
    }

    res.rank_deficient = cur.rank_deficient;
    res.noise_var = s2 * tscale * tscale;
    const auto k = static_cast<Eigen::Index>(cur.active.size());
    Vec d(k);
    for (Eigen::Index r = 0; r < k; ++r) {
        const Eigen::Index j = cand[static_cast<std::size_t>(cur.active[r])];
        d(r) = tscale / scale(j);
        res.active_set.push_back(static_cast<int>(j));
        res.weights(j) = cur.mu(r) * d(r);
        res.precisions(j) = alpha(cur.active[r]) / (d(r) * d(r));
    }
    res.posterior_cov = d.asDiagonal() * cur.sigma * d.asDiagonal();
    return res;
}

RvmResult rvm_fit_intercept(const Mat& features, const Vec& targets, const RvmConfig& cfg)
{
    cfg.validate();
    if (features.rows() != targets.size()) throw std::invalid_argument("rvm_fit_intercept: feature rows must match targets");
    if (features.rows() < 1) throw std::invalid_argument("rvm_fit_intercept: no samples");
    const Eigen::Index n = features.rows(), q = features.cols();
    const double nn = static_cast<double>(n);
    const double tbar = targets.mean();
    const RowVec fbar = features.colwise().mean();
    RvmResult inner;
    if (q > 0) {
        inner = rvm_fit(features.rowwise() - fbar, targets.array() - tbar, cfg);
    } else {
        inner.weights.resize(0);
        inner.precisions.resize(0);
        const double rss = (targets.array() - tbar).square().sum();
        inner.noise_var = cfg.estimate_noise ? std::max(cfg.noise_floor, rss / nn) : cfg.fixed_noise_var;
        inner.converged = true;
    }
    RvmResult res;
    res.weights.resize(q + 1);
    res.precisions.resize(q + 1);
    res.weights(0) = tbar - fbar.dot(inner.weights);
    res.weights.tail(q) = inner.weights;
    res.precisions(0) = 0.0;
    res.precisions.tail(q) = inner.precisions;
    res.noise_var = inner.noise_var;
    res.active_set.push_back(0);
    for (int j : inner.active_set) res.active_set.push_back(j + 1);
    const auto k = static_cast<Eigen::Index>(inner.active_set.size());
    Vec fa(k);
    for (Eigen::Index r = 0; r < k; ++r) fa(r) = fbar(inner.active_set[static_cast<std::size_t>(r)]);
    res.posterior_cov.resize(k + 1, k + 1);
    if (k > 0) {
        res.posterior_cov.bottomRightCorner(k, k) = inner.posterior_cov;
        const Vec cross = -(inner.posterior_cov * fa);
        res.posterior_cov.block(1, 0, k, 1) = cross;
        res.posterior_cov.block(0, 1, 1, k) = cross.transpose();
    }
    res.posterior_cov(0, 0) = res.noise_var / nn + (k > 0 ? fa.dot(inner.posterior_cov * fa) : 0.0);
    res.log_evidence_trace = std::move(inner.log_evidence_trace);
    res.iterations = inner.iterations;
    res.converged = inner.converged;
    res.rank_deficient = inner.rank_deficient;
    return res;
}

Prediction rvm_predict(const RvmResult& result, const Vec& features)
{
    if (features.size() != result.weights.size()) throw std::invalid_argument("rvm_predict: feature length mismatch");
    Prediction p;
    p.mean = features.dot(result.weights);
    Vec fa(static_cast<Eigen::Index>(result.active_set.size()));
    for (std::size_t r = 0; r < result.active_set.size(); ++r) fa(static_cast<Eigen::Index>(r)) = features(result.active_set[r]);
    p.variance = result.noise_var + (fa.size() > 0 ? std::max(0.0, fa.dot(result.posterior_cov * fa)) : 0.0);
    return p;
}

pce::PCExpansion fit_pce_design(const Mat& design, const Mat& state_samples, const pce::BasisKind& basis,
                                const pce::MultiIndexSet& index_set, const RvmConfig& cfg, Flags* flags)
{
    if (design.rows() != state_samples.rows()) throw std::invalid_argument("fit_pce: sample counts differ");
    if (design.cols() != static_cast<Eigen::Index>(index_set.size())) throw std::invalid_argument("fit_pce: design/index set mismatch");
    const Eigen::Index d = state_samples.cols();
    // The constant basis function carries the mean and is left unregularized.
    const double c0 = design.rows() > 0 ? design(0, 0) : 0.0;
    const bool intercept = c0 != 0.0 && (design.col(0).array() == c0).all();
    Mat coeffs(d, design.cols());
    std::vector<RvmResult> results(static_cast<std::size_t>(d));
#pragma omp parallel for schedule(dynamic)
    for (Eigen::Index c = 0; c < d; ++c) {
        results[static_cast<std::size_t>(c)] = intercept
            ? rvm_fit_intercept(design.rightCols(design.cols() - 1), state_samples.col(c), cfg)
            : rvm_fit(design, state_samples.col(c), cfg);
    }
    for (Eigen::Index c = 0; c < d; ++c) {
        const RvmResult& r = results[static_cast<std::size_t>(c)];
        coeffs.row(c) = r.weights.transpose();
        if (intercept) coeffs(c, 0) /= c0;
        if (flags && !r.converged) flags->add(Flag::rvm_not_converged);
        if (flags && r.rank_deficient) flags->add(Flag::rank_deficient);
    }
    return pce::PCExpansion(std::move(coeffs), basis, index_set);
}

pce::PCExpansion fit_pce(const Mat& germ_samples, const Mat& state_samples, const pce::BasisKind& basis,
                         const pce::MultiIndexSet& index_set, const RvmConfig& cfg, Flags* flags)
{
    if (germ_samples.rows() != state_samples.rows()) throw std::invalid_argument("fit_pce: sample counts differ");
    return fit_pce_design(pce::design_matrix(basis, index_set, germ_samples), state_samples, basis, index_set, cfg, flags);
}

}  // namespace gnmk::sparse_bayes
