#pragma once

#include "t1map/fit.hpp"
#include "t1map/models.hpp"
#include "t1map/relaxometry.hpp"
#include "t1map/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace t1map {

struct TrainConfig {
    double lambda = 0.01;      // derivative-loss weight
    int grid_points = 1000;
    double grid_knee_ms = 2000.0;
    double grid_frac = 0.75;   // fraction of grid points below the knee
    double t_max_ms = 5000.0;
    double s_ref = 0.0;        // 0 = auto: max |S| over the ROI
    double t_ref = 1000.0;
    double lr = 1e-3;
    int epochs_pretrain = 50;
    int epochs_finetune = 50;
    std::vector<int> subset_sizes = {3, 4, 5};
    std::uint64_t seed = 0;
};

/// Divide signals by s_ref and times by t_ref, recording the scales.
VoxelSeries normalize(const VoxelSeries& series, double s_ref, double t_ref);
/// Undo normalize(); restores raw units.
VoxelSeries denormalize(const VoxelSeries& series);

/// Params expressed in normalized units: c/s_ref, k, t1_star/t_ref.
RelaxationParams normalize_params(const RelaxationParams& p, double s_ref, double t_ref);
RelaxationParams denormalize_params(const RelaxationParams& p, double s_ref, double t_ref);

/// Chain-rule factor gamma = t_ref / s_ref: gamma * dS/dt in raw units
/// equals the slope of the normalized signal against normalized time.
double gamma_factor(double s_ref, double t_ref);

/// Interpolation grid in ms: grid_frac of the points linearly spaced on
/// [0, knee], the rest on (knee, t_max]; strictly increasing.
std::vector<double> dense_time_grid(const TrainConfig& config);

/// Mean squared error between derived T1 values; both batches must be in
/// the same (normalized) units.
double t1_loss(std::span<const RelaxationParams> pred, std::span<const RelaxationParams> truth);

/// Signal-model adherence loss evaluated on the dense grid: mean over
/// voxels and grid points of (S_truth - S_pred)^2 + lambda*(gamma*dS_truth/dt
/// - dS_pred/dt)^2. Predictions are in normalized units; truth params are
/// raw, their targets normalized internally (gamma scales the raw-unit
/// derivative target).
double physics_loss(std::span<const RelaxationParams> pred_norm,
                    std::span<const RelaxationParams> truth_raw,
                    std::span<const double> grid_ms, double lambda, double s_ref,
                    double t_ref);

double total_loss(std::span<const RelaxationParams> pred_norm,
                  std::span<const RelaxationParams> truth_raw,
                  std::span<const double> grid_ms, double lambda, double s_ref,
                  double t_ref);

/// Graph-side per-voxel loss terms (same formulas, differentiable).
struct VoxelLossTerms {
    ad::Var t1;      // squared T1 error, normalized units
    ad::Var physics; // grid mean of signal + lambda*derivative terms
};
VoxelLossTerms voxel_loss_graph(const DecodedVars& pred_norm, const RelaxationParams& truth_raw,
                                const Eigen::VectorXd& grid_ms, double lambda, double s_ref,
                                double t_ref);

/// Draw a sorted n-subset of schedule indices with at least one index in
/// each relaxation phase (early / intermediate / convergence). n >= 3.
std::vector<int> sample_subset(const MolliSchedule& schedule, int n, Rng& rng);

/// Voxel-wise LM fits of the full signed series; ground-truth labels for
/// training. Non-converged voxels are flagged invalid.
struct LabelSet {
    std::vector<RelaxationParams> params;
    std::vector<std::uint8_t> valid; // ROI and converged
    int valid_count() const;
};
LabelSet fit_labels(const PhantomVolume& volume, int threads = 1);

double auto_s_ref(const PhantomVolume& volume);

/// Adam state per parameter entry.
struct AdamState {
    std::vector<Eigen::MatrixXd> m, v;
    long step = 0;
};
void adam_step(ParamStore& params, const std::vector<Eigen::MatrixXd>& grads,
               AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

struct TraceRow {
    int epoch;
    double l_t1;
    double l_physics;
    double l_total;
};

/// Two-phase training: pretrain on full sequences, fine-tune on sampled
/// subsets with sizes drawn from config.subset_sizes. Deterministic per
/// seed for any thread count. Throws on divergence (non-finite loss).
std::vector<TraceRow> train(LstmOdeModel& model, const PhantomVolume& volume,
                            const LabelSet& labels, const TrainConfig& config,
                            int threads = 1);

/// FCNN variants have a fixed input arity, so every epoch samples subsets
/// of that size; runs epochs_pretrain + epochs_finetune epochs in total.
/// The direct-T1 head trains on magnitude inputs with the T1 term only
/// (a data-driven prior); the physics head trains on signed inputs with
/// the full loss.
std::vector<TraceRow> train(FcnnModel& model, const PhantomVolume& volume,
                            const LabelSet& labels, const TrainConfig& config,
                            int threads = 1);

} // namespace t1map
