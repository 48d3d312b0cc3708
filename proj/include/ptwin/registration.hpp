#pragma once

// Maps camera pixel space onto CT voxel space and derives the two kinds of
// training labels: per-layer pore counts and coarse 16x16 occupancy grids.
//
// Geometry: a raw 80x65 px frame corresponds to a 520x423 voxel window
// (6.5 voxels per pixel); cropping the frame to 64x64 px corresponds to
// cropping the window to 416x416 voxels, which then downsamples by 24 into
// the 16x16 label grid.

#include <cstdint>
#include <string>
#include <vector>

#include "ptwin/common.hpp"
#include "ptwin/ct_volume.hpp"

namespace ptwin {

inline constexpr std::int64_t kRawFrameRows = 80;
inline constexpr std::int64_t kRawFrameCols = 65;
inline constexpr std::int64_t kCropTopRows = 8;   // removed from top and bottom
inline constexpr std::int64_t kCropLeftCols = 1;  // removed from the left only
inline constexpr std::int64_t kModelInput = 64;

inline constexpr std::int64_t kWindowRows = 520;  // voxel window under the raw frame
inline constexpr std::int64_t kWindowCols = 423;
inline constexpr std::int64_t kWindowCropRows = 52;  // voxel image of the 8 px crop
inline constexpr std::int64_t kWindowCropCols = 7;   // voxel image of the 1 px crop
inline constexpr std::int64_t kCroppedWindow = 416;
inline constexpr std::int64_t kLabelGrid = 16;
inline constexpr std::int64_t kDownsampleFactor = 24;

struct AlignmentOffsets {
    SampleKind sample = SampleKind::Spacing;
    std::int64_t oz = 0;  // CT z of build layer 0
    std::int64_t oy = 0;  // CT y of camera row 0
    std::int64_t ox = 0;  // CT x of camera column 0
    double pixel_pitch_um = 21.0;
    double voxel_pitch_um = kDefaultVoxelPitchUm;
};

struct LocalizationLabel {
    Array2D<std::uint8_t> grid;  // 16x16, entries 0/1
    std::int64_t layer_index = 0;
    ThresholdMode mode = ThresholdMode::AllPores;
};

// Pixel extent converted through the pitch ratio (pixels -> microns -> voxels).
std::pair<double, double> px_extent_to_voxels(std::pair<std::int64_t, std::int64_t> px_wh,
                                              double pitch_px_um, double pitch_vox_um);

// 80x65 (or larger) frame -> 64x64: rows [8,72), columns [1,65).
Array2D<float> crop_input(const Array2D<float>& frame);

// 9x520x423 slab -> 9x416x416 (52 voxels off both ends of the 520 axis, 7 off
// the low end of the 423 axis). A slab arriving as 9x423x520 is normalized
// first so the 520 axis is always the row axis.
Array3D<std::uint16_t> crop_label(const Array3D<std::uint16_t>& slab);

// 9x416x416 -> 16x16: symmetric zero-pad to 432, any-occupancy over 24x24x9
// blocks -> 18x18, then drop one border cell per side.
Array2D<std::uint8_t> downsample_label(const Array3D<std::uint16_t>& slab);

// Full label path for one build layer: window extraction under the offsets
// (out-of-volume voxels are background), pore-id thresholding for the
// requested mode, crop, downsample.
LocalizationLabel build_locate_label(const CtVolume& vol, const PoreTable& table,
                                     std::int64_t layer_index, const AlignmentOffsets& offsets,
                                     ThresholdMode mode, std::int64_t min_voxels = 100);

// Distinct pore ids under the cropped in-plane window across the given depth.
std::int64_t build_count_label(const CtVolume& vol, std::int64_t layer_index, int depth_layers,
                               const AlignmentOffsets& offsets);

// Label archive: magic "PTLB", u32 record count, records of
// {u32 layer, u8 mode, 256 grid cells, 3 x i32 depth counts}.
struct LabelRecord {
    std::uint32_t layer_index = 0;
    ThresholdMode mode = ThresholdMode::AllPores;
    Array2D<std::uint8_t> grid;       // 16x16
    std::int32_t counts[3] = {0, 0, 0};  // depths 1..3
};

void save_label_archive(const std::string& path, const std::vector<LabelRecord>& records);
std::vector<LabelRecord> load_label_archive(const std::string& path);

// Builds both label modes and the three count depths for every layer.
std::vector<LabelRecord> build_label_records(const CtVolume& vol, const PoreTable& table,
                                             std::int64_t layer_count,
                                             const AlignmentOffsets& offsets);

// Exhaustive z-alignment search: tries layer shifts in [-range, +range] and
// scores the overlap between each layer's thermal footprint and its pore
// grid, counting pore cells inside the footprint as hits and outside as
// misses. Returns the best shift in whole layers.
std::int64_t search_z_offset(const CtVolume& vol, const PoreTable& table,
                             const std::vector<Array2D<std::uint8_t>>& footprints,
                             const AlignmentOffsets& base, int range_layers = 3);

}  // namespace ptwin
