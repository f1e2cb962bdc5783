#pragma once

#include "t1map/relaxometry.hpp"
#include "t1map/training.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace t1map::render {

namespace fs = std::filesystem;

/// Relaxation-curve plot: one circle marker per sample, the fitted curve
/// sampled densely, and a dashed vertical line at the null crossing.
void svg_relaxation_curve(const fs::path& path, const VoxelSeries& series,
                          const RelaxationParams& params, const std::string& title);

/// Loss-trace plot with one polyline per column of the trace.
void svg_loss_trace(const fs::path& path, std::span<const TraceRow> trace);

/// Pseudocolor T1 map (binary PPM) over a z-slice with a fixed display
/// window; invalid voxels are black. Default windows: [0, 2000] ms native,
/// [0, 800] ms post-Gd.
void ppm_t1_map(const fs::path& path, std::span<const double> t1_map,
                std::span<const std::uint8_t> valid_mask, const std::array<int, 3>& dims,
                int z_slice, double window_lo, double window_hi);

/// Grayscale PGM of an arbitrary per-voxel scalar map.
void pgm_scalar_map(const fs::path& path, std::span<const double> values,
                    const std::array<int, 3>& dims, int z_slice, double lo, double hi);

double default_window_hi(const std::string& regime);

} // namespace t1map::render
