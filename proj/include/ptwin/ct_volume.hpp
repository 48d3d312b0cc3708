#pragma once

// Voxel volumes of labelled pores: segmentation of binary occupancy into
// uniquely identified pores, per-pore statistics, size thresholding, and
// layer-wise pore counting.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "ptwin/common.hpp"

namespace ptwin {

inline constexpr double kDefaultVoxelPitchUm = 3.63;
inline constexpr std::int64_t kLayerVoxels = 9;  // nominal CT voxels per build layer

struct CtVolume {
    std::int64_t nz = 0, ny = 0, nx = 0;
    double voxel_pitch_um = kDefaultVoxelPitchUm;
    std::vector<std::uint16_t> ids;  // row-major z,y,x; 0 = background

    std::uint16_t at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return ids[static_cast<std::size_t>((z * ny + y) * nx + x)];
    }
    std::uint16_t& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return ids[static_cast<std::size_t>((z * ny + y) * nx + x)];
    }
    bool in_bounds(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return z >= 0 && z < nz && y >= 0 && y < ny && x >= 0 && x < nx;
    }
    std::int64_t voxel_count() const { return nz * ny * nx; }
};

struct PoreRecord {
    std::uint32_t id = 0;
    double cz = 0.0, cy = 0.0, cx = 0.0;  // centroid in voxel coordinates
    std::uint32_t voxel_count = 0;
    double esd_um = 0.0;
};

using PoreTable = std::vector<PoreRecord>;

enum class Connectivity { Six = 6, TwentySix = 26 };

struct LabelResult {
    CtVolume volume;
    PoreTable table;
};

// Labels connected void clusters of a binary occupancy volume. Ids are
// assigned in first-voxel scan order (z, then y, then x), starting at 1.
LabelResult label_components(const Array3D<std::uint8_t>& occupancy, double voxel_pitch_um,
                             Connectivity connectivity);

// Equivalent spherical diameter of a cluster of `voxel_count` cubic voxels.
double esd_um(std::int64_t voxel_count, double pitch_um);

double esd_threshold_um(double mu, double sigma, double sigma_mult);

struct ThresholdResult {
    PoreTable kept;
    std::optional<double> mu;
    std::optional<double> sigma;
    std::optional<double> threshold_um;  // absent when sigma_mult == 0
};

// Drops clusters below min_voxels, then (for sigma_mult > 0) keeps pores with
// ESD >= mu + sigma_mult * sigma where mu/sigma are population statistics of
// the min-voxel-filtered table.
ThresholdResult threshold_pores(const PoreTable& table, std::int64_t min_voxels = 100,
                                double sigma_mult = 1.0);

// Distinct nonzero ids intersecting the slab starting at z_start with depth
// depth_layers * layer_voxels, optionally restricted to an in-plane window
// [y0,y1) x [x0,x1) (window may exceed the volume; out-of-volume voxels are
// background).
std::int64_t count_pores(const CtVolume& vol, std::int64_t z_start, int depth_layers,
                         std::int64_t layer_voxels = kLayerVoxels);
std::int64_t count_pores_window(const CtVolume& vol, std::int64_t z_start, int depth_layers,
                                std::int64_t y0, std::int64_t y1, std::int64_t x0, std::int64_t x1,
                                std::int64_t layer_voxels = kLayerVoxels);

struct LayerSlab {
    CtVolume volume;       // depth <= layer_voxels when partial
    std::int64_t z_start = 0;
    bool partial = false;  // volume ended before a full layer depth
};

LayerSlab layer_slice(const CtVolume& vol, std::int64_t layer_index,
                      std::int64_t layer_voxels = kLayerVoxels);

// CTVX container: magic, u32 version, u32 Z,Y,X, f32 pitch_um, u16 ids (LE).
inline constexpr std::uint32_t kCtvxVersion = 1;
void save_volume(const std::string& path, const CtVolume& vol);
CtVolume load_volume(const std::string& path);

// CSV: id,cz,cy,cx,voxels,esd_um with six-decimal floats.
void save_pore_table(const std::string& path, const PoreTable& table);
PoreTable load_pore_table(const std::string& path);

}  // namespace ptwin
