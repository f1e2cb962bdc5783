#pragma once

#include "t1map/models.hpp"
#include "t1map/relaxometry.hpp"
#include "t1map/training.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace t1map::io {

namespace fs = std::filesystem;

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::string file_checksum(const fs::path& path); // "crc32:xxxxxxxx"

/// Raw little-endian 32-bit float array files.
void write_f32(const fs::path& path, std::span<const double> values);
std::vector<double> read_f32(const fs::path& path, std::size_t expected_count);
void write_i32(const fs::path& path, std::span<const int> values);
std::vector<int> read_i32(const fs::path& path, std::size_t expected_count);
void write_u8(const fs::path& path, std::span<const std::uint8_t> values);
std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected_count);

/// Volume directory: manifest.json plus one raw array file per field.
/// Acquisition arrays are voxel-major then time-major.
void write_volume(const fs::path& dir, const PhantomVolume& volume, const PhantomSpec& spec);
struct LoadedVolume {
    PhantomVolume volume;
    PhantomSpec spec;
};
LoadedVolume read_volume(const fs::path& dir);

void write_labels(const fs::path& dir, const PhantomVolume& volume, const LabelSet& labels);
LabelSet read_labels(const fs::path& dir, const PhantomVolume& volume);

/// Per-voxel output maps shared by the classical fit and learned mapping.
struct VolumeMaps {
    std::array<int, 3> dims = {0, 0, 0};
    std::vector<double> t1_map;
    std::vector<int> null_index_map;
    std::vector<double> residual_map; // rss for fits, reconstruction loss for models
    std::vector<double> c_map, k_map, t1_star_map;
    std::vector<double> sd_map;       // empty when not applicable
    std::vector<std::uint8_t> valid_mask;
    std::string source;               // "lm" | "trf" | model kind
};
void write_maps(const fs::path& dir, const VolumeMaps& maps);
VolumeMaps read_maps(const fs::path& dir);

using ModelCheckpoint = std::variant<LstmOdeModel, FcnnModel>;
std::string model_kind(const ModelCheckpoint& ckpt);

/// Checkpoint directory: manifest.json (architecture, normalization,
/// seed, training metadata, array table) + weights.f32 with all named
/// arrays concatenated in declaration order.
void write_checkpoint(const fs::path& dir, const ModelCheckpoint& ckpt,
                      const std::string& training_metadata_json = "{}");
ModelCheckpoint read_checkpoint(const fs::path& dir);

void write_loss_csv(const fs::path& path, std::span<const TraceRow> trace);
std::vector<TraceRow> read_loss_csv(const fs::path& path);

/// Round-trip-exact decimal formatting for doubles.
std::string format_double(double v);

} // namespace t1map::io
