#pragma once

#include "t1map/io.hpp"
#include "t1map/models.hpp"
#include "t1map/relaxometry.hpp"

#include <optional>
#include <vector>

namespace t1map {

/// One voxel's polarity-corrected estimate.
struct VoxelInference {
    bool valid = false;
    int null_index = 0;
    RelaxationParams params_norm; // model output units
    RelaxationParams params_raw;  // denormalized
    double t1_ms = 0.0;
    double residual = 0.0; // signal-reconstruction MSE at the winning candidate
    int candidates = 0;    // trials evaluated (N+1 when all succeed)
};

/// Mean squared error between a normalized signed series and the model
/// curve implied by normalized params at the acquisition times.
double reconstruction_mse(const RelaxationParams& params_norm, const VoxelSeries& normalized);

/// Try every prefix-negation candidate j in {0..N} on a raw magnitude
/// series, run the estimator on the normalized signed trial, and keep the
/// candidate minimizing the signal-reconstruction loss (ties go to the
/// smaller index).
VoxelInference polarity_corrected_infer(const LstmOdeModel& model, const ParamVars& vars,
                                        const VoxelSeries& magnitude_raw);
VoxelInference polarity_corrected_infer(const FcnnModel& model, const ParamVars& vars,
                                        const VoxelSeries& magnitude_raw);

/// Direct-T1 head: consumes the magnitude series as-is (no polarity
/// trials, no reconstruction residual).
VoxelInference direct_infer(const FcnnModel& model, const ParamVars& vars,
                            const VoxelSeries& magnitude_raw);

/// Full field-of-view maps over every tissue voxel. Equal to
/// voxel-at-a-time inference bit-exactly for any thread count; background
/// voxels carry T1 = 0 and invalid.
struct MapResult {
    std::array<int, 3> dims = {0, 0, 0};
    std::vector<double> t1_map;
    std::vector<int> null_index_map;
    std::vector<double> residual_map;
    std::vector<double> c_map, k_map, t1_star_map;
    std::vector<std::uint8_t> valid_mask;

    io::VolumeMaps to_maps(const std::string& source) const;
};

/// subset: schedule indices to feed the model (empty = all). Throws on an
/// empty ROI or out-of-range subset.
MapResult map_volume(const io::ModelCheckpoint& ckpt, const PhantomVolume& volume,
                     const std::vector<int>& subset = {}, int threads = 1);

/// Classical per-voxel mapping over the magnitude data (method "lm" or
/// "trf"), producing the same map layout plus fitting SD and convergence.
io::VolumeMaps classical_map_volume(const PhantomVolume& volume, const std::string& method,
                                    const std::vector<int>& subset = {}, int threads = 1);

} // namespace t1map
