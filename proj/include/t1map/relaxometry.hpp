#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace t1map {

/// Per-voxel triple of the 3-parameter inversion-recovery model
/// S(t) = c * (1 - k * exp(-t / t1_star)). Valid params satisfy
/// c > 0, k > 1, t1_star > 0, so the derived T1 = t1_star * (k - 1)
/// is positive.
struct RelaxationParams {
    double c = 1.0;       // signal-scale amplitude
    double k = 2.0;       // inversion factor (dimensionless)
    double t1_star = 1000.0; // apparent relaxation time (ms)

    bool valid() const {
        return std::isfinite(c) && std::isfinite(k) && std::isfinite(t1_star) &&
               c > 0.0 && k > 1.0 && t1_star > 0.0;
    }
};

double signal(const RelaxationParams& p, double t_ms);
Eigen::VectorXd signal(const RelaxationParams& p,
                       const Eigen::Ref<const Eigen::VectorXd>& t_ms);

double signal_derivative(const RelaxationParams& p, double t_ms);
Eigen::VectorXd signal_derivative(const RelaxationParams& p,
                                  const Eigen::Ref<const Eigen::VectorXd>& t_ms);

/// T1 = t1_star * (k - 1).
double t1_from_params(const RelaxationParams& p);

/// Zero crossing of the recovery curve, t1_star * ln(k).
double null_time(const RelaxationParams& p);

/// Ordered inversion times of a merged MOLLI acquisition. Times are
/// strictly increasing; ll_labels[i] gives the Look-Locker experiment
/// that acquired times_ms[i].
struct MolliSchedule {
    std::vector<double> times_ms;
    std::vector<int> ll_labels;
    std::string scheme;   // e.g. "3(3)3(3)5"
    double rr_ms = 1000.0;
    std::vector<double> ti_offsets_ms; // per-experiment first inversion time

    int size() const { return static_cast<int>(times_ms.size()); }
    Eigen::VectorXd times() const {
        return Eigen::Map<const Eigen::VectorXd>(times_ms.data(),
                                                 static_cast<long>(times_ms.size()));
    }
};

/// Parse a scheme descriptor like "3(3)3(3)5" (image counts with rest
/// heartbeats in parentheses) and lay out inversion times. Experiment g
/// contributes ti_offsets_ms[g] + j*rr_ms for j in [0, count_g). The
/// merged list is sorted ascending. Throws std::invalid_argument on a
/// malformed scheme, non-positive rr, offset count mismatch, or
/// duplicate times.
MolliSchedule build_schedule(const std::string& scheme, double rr_ms,
                             const std::vector<double>& ti_offsets_ms);

enum class Polarity { Signed, Magnitude };

/// One voxel's (signal, inversion time) sequence plus normalization
/// metadata. s_ref/t_ref record the scales divided out by normalize();
/// `normalized` distinguishes a normalized series from a raw one even
/// when the scales are 1.
struct VoxelSeries {
    Eigen::VectorXd signals;
    Eigen::VectorXd times_ms;
    Polarity polarity = Polarity::Signed;
    double s_ref = 1.0;
    double t_ref = 1.0;
    bool normalized = false;

    int size() const { return static_cast<int>(signals.size()); }
};

/// Elementwise absolute value; input must be signed.
VoxelSeries magnitude_view(const VoxelSeries& series);

/// Negate the first null_index samples of a magnitude series, yielding a
/// signed polarity candidate.
VoxelSeries apply_polarity(const VoxelSeries& magnitude, int null_index);

enum class Tissue : std::uint8_t { Background = 0, Myocardium = 1, Blood = 2 };

/// Uniform draw ranges for one tissue's ground-truth parameters. T1 is
/// drawn directly and converted to t1_star via t1_star = T1 / (k - 1).
struct TissueRange {
    double t1_lo = 1100.0, t1_hi = 1400.0;
    double k_lo = 1.7, k_hi = 2.1;
    double c_lo = 0.7, c_hi = 1.3;
};

/// Layout + parameter ranges + noise for synthetic phantom generation.
/// The layout is concentric per slice: blood pool disk inside a
/// myocardial ring, background outside.
struct PhantomSpec {
    std::array<int, 3> dims = {24, 24, 1};
    std::string regime = "native"; // "native" | "post_gd"; selects default ranges
    TissueRange myocardium;
    TissueRange blood;
    double blood_radius_frac = 0.35;
    double myo_radius_frac = 0.85;
    double noise_sigma = 0.0;    // additive Gaussian on the signed signal
    bool noise_relative = false; // sigma is per-voxel noise_sigma * c
    MolliSchedule schedule;

    static PhantomSpec with_regime(const std::string& regime);
};

/// A 3D grid of ground-truth params, tissue labels, ROI mask, and the
/// simulated acquisitions (both signed and magnitude series per voxel).
/// The ROI mask marks myocardium, the region all bias/SD statistics are
/// computed over; mapping still covers every tissue voxel. Voxel linear
/// index is x + dims[0]*(y + dims[1]*z).
struct PhantomVolume {
    std::array<int, 3> dims = {0, 0, 0};
    std::vector<RelaxationParams> truth;
    std::vector<Tissue> tissue;
    std::vector<std::uint8_t> roi_mask;
    MolliSchedule schedule;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    std::string regime = "native";
    Eigen::MatrixXd signed_signals;    // voxel-major rows, time-major cols
    Eigen::MatrixXd magnitude_signals;

    int voxel_count() const { return dims[0] * dims[1] * dims[2]; }
    int roi_count() const;
    int tissue_count() const; // non-background voxels
    VoxelSeries voxel_series(int voxel, Polarity polarity) const;
};

/// Deterministic per (spec, seed); RNG streams are partitioned by voxel
/// index so parallel generation equals serial generation.
PhantomVolume synthesize_phantom(const PhantomSpec& spec, std::uint64_t seed);

} // namespace t1map
