#pragma once

#include "t1map/relaxometry.hpp"

#include <Eigen/Dense>

#include <optional>

namespace t1map {

/// Outcome of one voxel-wise nonlinear least-squares fit.
struct FitResult {
    RelaxationParams params;
    int null_index = 0;           // samples acquired before the fitted null crossing
    Eigen::VectorXd residuals;    // model - data
    double rss = 0.0;
    Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero(); // sigma^2 * (J^T J)^-1
    Eigen::Matrix3d gram_inv = Eigen::Matrix3d::Zero();   // (J^T J)^-1
    bool covariance_ok = false;
    bool converged = false;
    bool rank_deficient = false;
    int iterations = 0;
};

/// Standard MOLLI initialization: c = max|S|, k = 2, t1_star = 1000 ms.
RelaxationParams default_init(const VoxelSeries& series);

/// Jacobian of the 3-parameter model at `p`, one row per time, columns
/// (d/dc, d/dk, d/dt1_star).
Eigen::MatrixXd model_jacobian(const RelaxationParams& p,
                               const Eigen::Ref<const Eigen::VectorXd>& t_ms);

/// Levenberg-Marquardt fit of the signed series. Converges when the
/// gradient infinity-norm drops below 1e-8 or the relative step below
/// 1e-10; at most 200 iterations. Accepted steps never increase the RSS.
FitResult lm_fit(const VoxelSeries& series, const RelaxationParams& init);
FitResult lm_fit(const VoxelSeries& series);

struct FitBounds {
    Eigen::Vector3d lo; // (c, k, t1_star)
    Eigen::Vector3d hi;

    /// Default bounds: c in (0, 10*max|S|], k in (1, 5], t1_star in (1, 5000] ms.
    static FitBounds defaults(const VoxelSeries& series);
};

/// Bounded variant: candidate steps are projected onto the box and
/// accepted only when they do not increase the RSS; convergence is judged
/// on the projected gradient, so boundary optima are detected exactly.
/// init must be strictly interior.
FitResult trf_fit(const VoxelSeries& series, const RelaxationParams& init,
                  const FitBounds& bounds);

/// Magnitude-domain fit with polarity restoration: tries every candidate
/// null index j in {0..N}, negating the first j samples and refitting;
/// returns the candidate with the smallest RSS (ties, within 1e-15, go to
/// the smaller index). Throws std::runtime_error if every candidate fails.
FitResult polarity_restore_fit(const VoxelSeries& series);
FitResult polarity_restore_fit(const VoxelSeries& series, const RelaxationParams& init);

/// Residual-based standard deviation of the T1 estimate:
/// sigma^2 = rss/(n-3), Cov = sigma^2 (J^T J)^-1, SD = sqrt(g^T Cov g)
/// with g = (0, t1_star, k-1). Empty when n <= 3 or J^T J is singular.
std::optional<double> fitting_sd(const FitResult& fit, int n);

/// Same formula with the Jacobian rebuilt at `params`; used for learned
/// estimators where residuals come from the model-implied curve.
std::optional<double> fitting_sd(const RelaxationParams& params,
                                 const Eigen::Ref<const Eigen::VectorXd>& t_ms,
                                 double rss, int n);

} // namespace t1map
