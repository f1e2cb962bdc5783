#include "t1map/fit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <stdexcept>

namespace t1map {

namespace {

constexpr double kGradTol = 1e-8;
constexpr double kStepTol = 1e-10;
constexpr int kMaxIterations = 200;
constexpr double kLambdaInit = 1e-3;
constexpr double kLambdaUp = 10.0;
constexpr double kLambdaDown = 0.1;

Eigen::Vector3d as_vec(const RelaxationParams& p) { return {p.c, p.k, p.t1_star}; }

RelaxationParams as_params(const Eigen::Vector3d& v) {
    return RelaxationParams{v[0], v[1], v[2]};
}

Eigen::VectorXd model_values(const Eigen::Vector3d& p, const Eigen::VectorXd& t) {
    return p[0] * (1.0 - p[1] * (-t.array() / p[2]).exp());
}

Eigen::MatrixXd jacobian_at(const Eigen::Vector3d& p, const Eigen::VectorXd& t) {
    const Eigen::ArrayXd e = (-t.array() / p[2]).exp();
    Eigen::MatrixXd jac(t.size(), 3);
    jac.col(0) = 1.0 - p[1] * e;
    jac.col(1) = -p[0] * e;
    jac.col(2) = -p[0] * p[1] / (p[2] * p[2]) * (t.array() * e);
    return jac;
}

int null_index_of(const RelaxationParams& p, const Eigen::VectorXd& t) {
    if (!(p.k > 0.0) || !(p.t1_star > 0.0)) return 0;
    const double tn = p.t1_star * std::log(p.k);
    int n = 0;
    for (int i = 0; i < t.size(); ++i)
        if (t[i] < tn) ++n;
    return n;
}

void check_series(const VoxelSeries& series) {
    if (series.polarity != Polarity::Signed)
        throw std::invalid_argument("fit expects a signed series");
    if (series.signals.size() != series.times_ms.size())
        throw std::invalid_argument("signals/times length mismatch");
    const std::set<double> distinct(series.times_ms.begin(), series.times_ms.end());
    if (distinct.size() < 3)
        throw std::invalid_argument("fit needs at least 3 distinct inversion times");
}

bool invert_gram(const Eigen::Matrix3d& jtj, Eigen::Matrix3d& inv) {
    Eigen::LDLT<Eigen::Matrix3d> ldlt(jtj);
    if (ldlt.info() != Eigen::Success) return false;
    const Eigen::Vector3d d = ldlt.vectorD();
    if (d.minCoeff() <= 1e-14 * std::max(1.0, d.maxCoeff())) return false;
    inv = ldlt.solve(Eigen::Matrix3d::Identity());
    return inv.allFinite();
}

void finalize(FitResult& fit, const Eigen::Vector3d& p, const Eigen::VectorXd& t,
              const Eigen::VectorXd& s, int iterations, bool converged) {
    fit.params = as_params(p);
    fit.residuals = model_values(p, t) - s;
    fit.rss = fit.residuals.squaredNorm();
    fit.iterations = iterations;
    const Eigen::MatrixXd jac = jacobian_at(p, t);
    const Eigen::Matrix3d jtj = jac.transpose() * jac;
    fit.covariance_ok = invert_gram(jtj, fit.gram_inv);
    fit.rank_deficient = !fit.covariance_ok;
    const int n = static_cast<int>(t.size());
    if (fit.covariance_ok && n > 3)
        fit.covariance = (fit.rss / (n - 3)) * fit.gram_inv;
    fit.converged = converged && !fit.rank_deficient;
    fit.null_index = null_index_of(fit.params, t);
}

using Projector = std::function<Eigen::Vector3d(const Eigen::Vector3d&)>;
using GradMask =
    std::function<Eigen::Vector3d(const Eigen::Vector3d&, const Eigen::Vector3d&)>;

// Damped Gauss-Newton loop shared by the free and the bounded fit.
// `project` maps a trial iterate into the feasible set (identity for the
// free fit); `mask` zeroes gradient components that point out of the
// feasible set at the current iterate.
FitResult damped_least_squares(const Eigen::VectorXd& t, const Eigen::VectorXd& s,
                               Eigen::Vector3d p, const Projector& project,
                               const GradMask& mask) {
    FitResult fit;
    double lambda = kLambdaInit;
    Eigen::VectorXd residual = model_values(p, t) - s;
    double rss = residual.squaredNorm();
    int iter = 0;
    bool converged = false;

    while (iter < kMaxIterations) {
        const Eigen::MatrixXd jac = jacobian_at(p, t);
        const Eigen::Vector3d grad = jac.transpose() * residual;
        if (mask(p, grad).lpNorm<Eigen::Infinity>() < kGradTol) {
            converged = true;
            break;
        }
        const Eigen::Matrix3d jtj = jac.transpose() * jac;
        const Eigen::Vector3d diag = jtj.diagonal().cwiseMax(1e-12);

        bool accepted = false;
        double rel_step = 0.0;
        for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
            Eigen::Matrix3d damped = jtj;
            damped.diagonal() += lambda * diag;
            const Eigen::Vector3d step = damped.ldlt().solve(-grad);
            if (!step.allFinite()) {
                lambda *= kLambdaUp;
                continue;
            }
            const Eigen::Vector3d candidate = project(p + step);
            const Eigen::VectorXd cand_residual = model_values(candidate, t) - s;
            const double cand_rss = cand_residual.squaredNorm();
            if (std::isfinite(cand_rss) && cand_rss <= rss) {
                rel_step = (candidate - p).norm() / std::max(p.norm(), 1e-30);
                p = candidate;
                residual = cand_residual;
                rss = cand_rss;
                lambda = std::max(lambda * kLambdaDown, 1e-12);
                accepted = true;
            } else {
                lambda *= kLambdaUp;
            }
        }
        ++iter;
        if (!accepted) break; // cannot improve: report the best iterate
        if (rel_step < kStepTol) {
            converged = true;
            break;
        }
    }
    finalize(fit, p, t, s, iter, converged);
    return fit;
}

} // namespace

RelaxationParams default_init(const VoxelSeries& series) {
    RelaxationParams init;
    init.c = series.signals.cwiseAbs().maxCoeff();
    if (!(init.c > 0.0)) init.c = 1.0;
    init.k = 2.0;
    init.t1_star = series.normalized ? 1000.0 / series.t_ref : 1000.0;
    return init;
}

Eigen::MatrixXd model_jacobian(const RelaxationParams& p,
                               const Eigen::Ref<const Eigen::VectorXd>& t_ms) {
    return jacobian_at(as_vec(p), t_ms);
}

FitResult lm_fit(const VoxelSeries& series, const RelaxationParams& init) {
    check_series(series);
    auto identity = [](const Eigen::Vector3d& v) { return v; };
    auto free_grad = [](const Eigen::Vector3d&, const Eigen::Vector3d& g) { return g; };
    return damped_least_squares(series.times_ms, series.signals, as_vec(init), identity,
                                free_grad);
}

FitResult lm_fit(const VoxelSeries& series) { return lm_fit(series, default_init(series)); }

FitBounds FitBounds::defaults(const VoxelSeries& series) {
    const double smax = std::max(series.signals.cwiseAbs().maxCoeff(), 1e-12);
    const double tmax = series.normalized ? 5000.0 / series.t_ref : 5000.0;
    const double tmin = series.normalized ? 1.0 / series.t_ref : 1.0;
    FitBounds b;
    b.lo = {0.0, 1.0, tmin};
    b.hi = {10.0 * smax, 5.0, tmax};
    return b;
}

FitResult trf_fit(const VoxelSeries& series, const RelaxationParams& init,
                  const FitBounds& bounds) {
    check_series(series);
    if (!bounds.lo.allFinite() || !bounds.hi.allFinite())
        throw std::invalid_argument("bounds must be finite");
    if ((bounds.lo.array() >= bounds.hi.array()).any())
        throw std::invalid_argument("infeasible bounds (lo >= hi)");
    const Eigen::Vector3d p0 = as_vec(init);
    if ((p0.array() <= bounds.lo.array()).any() || (p0.array() >= bounds.hi.array()).any())
        throw std::invalid_argument("init must be strictly inside the bounds");

    auto project = [bounds](const Eigen::Vector3d& v) {
        return v.cwiseMax(bounds.lo).cwiseMin(bounds.hi);
    };
    auto projected_grad = [bounds](const Eigen::Vector3d& p, const Eigen::Vector3d& g) {
        Eigen::Vector3d pg = g;
        for (int i = 0; i < 3; ++i) {
            const double scale = std::max({std::abs(bounds.lo[i]), std::abs(bounds.hi[i]), 1.0});
            const bool at_lo = p[i] <= bounds.lo[i] + 1e-12 * scale;
            const bool at_hi = p[i] >= bounds.hi[i] - 1e-12 * scale;
            // at a face, only gradients pointing inward count
            if ((at_lo && pg[i] > 0.0) || (at_hi && pg[i] < 0.0)) pg[i] = 0.0;
        }
        return pg;
    };
    return damped_least_squares(series.times_ms, series.signals, p0, project, projected_grad);
}

FitResult polarity_restore_fit(const VoxelSeries& series, const RelaxationParams& init) {
    if (series.polarity != Polarity::Magnitude)
        throw std::invalid_argument("polarity_restore_fit expects a magnitude series");
    for (int i = 1; i < series.times_ms.size(); ++i)
        if (series.times_ms[i] < series.times_ms[i - 1])
            throw std::invalid_argument("samples must be sorted by time");

    const int n = series.size();
    bool have_best = false;
    FitResult best;
    int best_index = 0;
    for (int j = 0; j <= n; ++j) {
        FitResult fit;
        try {
            fit = lm_fit(apply_polarity(series, j), init);
        } catch (const std::exception&) {
            continue;
        }
        if (!std::isfinite(fit.rss)) continue;
        // near-exact ties go to the smaller candidate index
        const bool better =
            !have_best || fit.rss < best.rss - 1e-15 * std::max(1.0, best.rss);
        if (better) {
            best = fit;
            best_index = j;
            have_best = true;
        }
    }
    if (!have_best) throw std::runtime_error("polarity restoration failed on all candidates");
    best.null_index = best_index;
    return best;
}

FitResult polarity_restore_fit(const VoxelSeries& series) {
    RelaxationParams init = default_init(series);
    return polarity_restore_fit(series, init);
}

std::optional<double> fitting_sd(const FitResult& fit, int n) {
    if (n <= 3 || !fit.covariance_ok) return std::nullopt;
    const double sigma2 = fit.rss / (n - 3);
    const Eigen::Vector3d g{0.0, fit.params.t1_star, fit.params.k - 1.0};
    const double var = sigma2 * g.dot(fit.gram_inv * g);
    if (!std::isfinite(var) || var < 0.0) return std::nullopt;
    return std::sqrt(var);
}

std::optional<double> fitting_sd(const RelaxationParams& params,
                                 const Eigen::Ref<const Eigen::VectorXd>& t_ms,
                                 double rss, int n) {
    if (n <= 3) return std::nullopt;
    const Eigen::MatrixXd jac = jacobian_at(as_vec(params), t_ms);
    Eigen::Matrix3d gram_inv;
    if (!invert_gram(jac.transpose() * jac, gram_inv)) return std::nullopt;
    const double sigma2 = rss / (n - 3);
    const Eigen::Vector3d g{0.0, params.t1_star, params.k - 1.0};
    const double var = sigma2 * g.dot(gram_inv * g);
    if (!std::isfinite(var) || var < 0.0) return std::nullopt;
    return std::sqrt(var);
}

} // namespace t1map
