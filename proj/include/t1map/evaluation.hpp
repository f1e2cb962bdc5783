#pragma once

#include "t1map/inference.hpp"
#include "t1map/io.hpp"
#include "t1map/relaxometry.hpp"
#include "t1map/stats.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace t1map {

/// One voxel's estimate from any method (classical fit or learned model).
struct VoxelEstimate {
    bool valid = false;
    double t1_ms = 0.0;
    RelaxationParams params_raw;
    int null_index = 0;
    std::optional<double> sd_ms; // residual-based fitting SD; empty when n <= 3
};

/// Per-voxel estimator over a raw magnitude series.
using Estimator = std::function<VoxelEstimate(const VoxelSeries& magnitude_raw)>;

Estimator make_lm_estimator();
Estimator make_trf_estimator();
Estimator make_model_estimator(const io::ModelCheckpoint& ckpt);

/// Per-run, per-voxel Monte Carlo estimates. NaN marks failed voxels.
struct MonteCarloResult {
    Eigen::MatrixXd t1;                   // n_runs x nvox
    Eigen::MatrixXd sd;                   // n_runs x nvox, NaN when unavailable
    std::vector<std::vector<int>> subsets; // the drawn subset per run
};

/// Each run draws an independently sub-seeded phase-covering subset and
/// maps the ROI; deterministic per (method, volume, n_runs, subset_size,
/// seed) for any thread count.
MonteCarloResult monte_carlo(const Estimator& method, const PhantomVolume& volume,
                             int n_runs, int subset_size, std::uint64_t seed,
                             int threads = 1);

/// ROI mean and sample std of (estimate - truth); estimates are the
/// per-voxel values already averaged over runs. NaN estimates are skipped.
std::pair<double, double> mean_bias(std::span<const double> estimates,
                                    std::span<const double> truth_t1,
                                    std::span<const std::uint8_t> roi_mask);

/// Per-voxel fitting SD over one subset (empty map entries where the
/// method cannot provide it, e.g. 3 samples for a 3-parameter model).
std::vector<std::optional<double>> fitting_sd_map(const Estimator& method,
                                                  const PhantomVolume& volume,
                                                  const std::vector<int>& subset,
                                                  int threads = 1);

struct ReportRow {
    std::string method;
    std::string regime;
    int subset_size = 0;
    int n_runs = 0;
    double mean_bias_ms = 0.0, bias_std_ms = 0.0;
    double mean_sd_ms = 0.0, sd_std_ms = 0.0;
    bool sd_available = false;
    double t_stat = 0.0, p_value = 1.0;
    bool significant = false; // p <= 0.05
};

struct EvalReport {
    std::vector<ReportRow> rows;
};

/// Full Monte Carlo evaluation of one method at one subset size.
ReportRow evaluate_method(const std::string& name, const Estimator& method,
                          const PhantomVolume& volume, int n_runs, int subset_size,
                          std::uint64_t seed, int threads = 1);

/// "mean(std)" cell with two decimals, e.g. "0.75(8.68)".
std::string format_cell(double mean, double std);

/// Text table grouped by regime, methods as rows, one bias and one SD
/// column per subset size. Best cell per column is bracketed; a '*' after
/// the bias marks p > 0.05.
std::string render_report_table(const EvalReport& report);

void write_report_csv(const io::fs::path& path, const EvalReport& report);
EvalReport read_report_csv(const io::fs::path& path);

} // namespace t1map
