#include "ptwin/registration.hpp"

#include <algorithm>
#include <bitset>

#include "ptwin/io.hpp"

namespace ptwin {

std::pair<double, double> px_extent_to_voxels(std::pair<std::int64_t, std::int64_t> px_wh,
                                              double pitch_px_um, double pitch_vox_um) {
    if (!(pitch_px_um > 0.0) || !(pitch_vox_um > 0.0))
        throw ConfigError("pixel and voxel pitches must be positive");
    const double scale = pitch_px_um / pitch_vox_um;
    return {static_cast<double>(px_wh.first) * scale, static_cast<double>(px_wh.second) * scale};
}

Array2D<float> crop_input(const Array2D<float>& frame) {
    if (frame.rows() < static_cast<std::size_t>(kRawFrameRows) ||
        frame.cols() < static_cast<std::size_t>(kRawFrameCols))
        throw DimensionError("frame smaller than 80x65");
    Array2D<float> out(kModelInput, kModelInput);
    for (std::int64_t r = 0; r < kModelInput; ++r)
        for (std::int64_t c = 0; c < kModelInput; ++c)
            out.at(r, c) = frame.at(static_cast<std::size_t>(r + kCropTopRows),
                                    static_cast<std::size_t>(c + kCropLeftCols));
    return out;
}

Array3D<std::uint16_t> crop_label(const Array3D<std::uint16_t>& slab) {
    const auto nz = static_cast<std::int64_t>(slab.nz());
    auto ny = static_cast<std::int64_t>(slab.ny());
    auto nx = static_cast<std::int64_t>(slab.nx());
    bool swapped = false;
    if (ny == kWindowCols && nx == kWindowRows) {
        swapped = true;  // normalize so the 520 axis is the row axis
        std::swap(ny, nx);
    }
    if (ny != kWindowRows || nx != kWindowCols)
        throw DimensionError("label slab must be 520x423 in-plane (either order)");
    Array3D<std::uint16_t> out(static_cast<std::size_t>(nz), kCroppedWindow, kCroppedWindow);
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t r = 0; r < kCroppedWindow; ++r)
            for (std::int64_t c = 0; c < kCroppedWindow; ++c) {
                const std::int64_t sr = r + kWindowCropRows;
                const std::int64_t sc = c + kWindowCropCols;
                out.at(static_cast<std::size_t>(z), static_cast<std::size_t>(r),
                       static_cast<std::size_t>(c)) =
                    swapped ? slab.at(static_cast<std::size_t>(z), static_cast<std::size_t>(sc),
                                      static_cast<std::size_t>(sr))
                            : slab.at(static_cast<std::size_t>(z), static_cast<std::size_t>(sr),
                                      static_cast<std::size_t>(sc));
            }
    return out;
}

Array2D<std::uint8_t> downsample_label(const Array3D<std::uint16_t>& slab) {
    if (static_cast<std::int64_t>(slab.ny()) != kCroppedWindow ||
        static_cast<std::int64_t>(slab.nx()) != kCroppedWindow)
        throw DimensionError("downsample expects a 416x416 in-plane slab");
    constexpr std::int64_t kPad = 8;  // 416 -> 432 = 18 * 24
    Array2D<std::uint8_t> out(kLabelGrid, kLabelGrid, 0);
    for (std::int64_t gr = 0; gr < kLabelGrid; ++gr)
        for (std::int64_t gc = 0; gc < kLabelGrid; ++gc) {
            // cell (gr,gc) of the cropped 16x16 is cell (gr+1,gc+1) of the padded 18x18
            const std::int64_t r0 = (gr + 1) * kDownsampleFactor - kPad;
            const std::int64_t c0 = (gc + 1) * kDownsampleFactor - kPad;
            std::uint8_t hit = 0;
            for (std::size_t z = 0; z < slab.nz() && !hit; ++z)
                for (std::int64_t r = std::max<std::int64_t>(0, r0);
                     r < std::min(kCroppedWindow, r0 + kDownsampleFactor) && !hit; ++r)
                    for (std::int64_t c = std::max<std::int64_t>(0, c0);
                         c < std::min(kCroppedWindow, c0 + kDownsampleFactor); ++c)
                        if (slab.at(z, static_cast<std::size_t>(r), static_cast<std::size_t>(c))) {
                            hit = 1;
                            break;
                        }
            out.at(static_cast<std::size_t>(gr), static_cast<std::size_t>(gc)) = hit;
        }
    return out;
}

namespace {

// Window of the volume under the camera for one layer; reads outside the
// scanned volume are background.
Array3D<std::uint16_t> extract_window(const CtVolume& vol, std::int64_t z0,
                                      const AlignmentOffsets& off) {
    Array3D<std::uint16_t> slab(static_cast<std::size_t>(kLayerVoxels),
                                static_cast<std::size_t>(kWindowRows),
                                static_cast<std::size_t>(kWindowCols), 0);
    for (std::int64_t z = 0; z < kLayerVoxels; ++z)
        for (std::int64_t r = 0; r < kWindowRows; ++r) {
            const std::int64_t vy = off.oy + r;
            if (vy < 0 || vy >= vol.ny) continue;
            for (std::int64_t c = 0; c < kWindowCols; ++c) {
                const std::int64_t vx = off.ox + c;
                if (vx < 0 || vx >= vol.nx) continue;
                slab.at(static_cast<std::size_t>(z), static_cast<std::size_t>(r),
                        static_cast<std::size_t>(c)) = vol.at(z0 + z, vy, vx);
            }
        }
    return slab;
}

std::bitset<65536> allowed_ids(const PoreTable& table, ThresholdMode mode,
                               std::int64_t min_voxels) {
    const double sigma_mult = (mode == ThresholdMode::MuPlusSigma) ? 1.0 : 0.0;
    const ThresholdResult thr = threshold_pores(table, min_voxels, sigma_mult);
    std::bitset<65536> keep;
    for (const auto& rec : thr.kept) keep.set(rec.id & 0xffff);
    return keep;
}

}  // namespace

LocalizationLabel build_locate_label(const CtVolume& vol, const PoreTable& table,
                                     std::int64_t layer_index, const AlignmentOffsets& offsets,
                                     ThresholdMode mode, std::int64_t min_voxels) {
    const std::int64_t z0 = offsets.oz + layer_index * kLayerVoxels;
    if (layer_index < 0 || z0 < 0 || z0 + kLayerVoxels > vol.nz)
        throw DimensionError("layer out of range after offset");
    Array3D<std::uint16_t> slab = extract_window(vol, z0, offsets);
    const auto keep = allowed_ids(table, mode, min_voxels);
    for (auto& id : slab.raw())
        if (id && !keep.test(id)) id = 0;
    LocalizationLabel label;
    label.grid = downsample_label(crop_label(slab));
    label.layer_index = layer_index;
    label.mode = mode;
    return label;
}

std::int64_t build_count_label(const CtVolume& vol, std::int64_t layer_index, int depth_layers,
                               const AlignmentOffsets& offsets) {
    const std::int64_t z0 = offsets.oz + layer_index * kLayerVoxels;
    if (layer_index < 0 || z0 < 0) throw DimensionError("layer out of range after offset");
    return count_pores_window(vol, z0, depth_layers, offsets.oy + kWindowCropRows,
                              offsets.oy + kWindowCropRows + kCroppedWindow,
                              offsets.ox + kWindowCropCols,
                              offsets.ox + kWindowCropCols + kCroppedWindow);
}

void save_label_archive(const std::string& path, const std::vector<LabelRecord>& records) {
    io::BinaryWriter w(path);
    w.magic("PTLB");
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& rec : records) {
        if (rec.grid.rows() != static_cast<std::size_t>(kLabelGrid) ||
            rec.grid.cols() != static_cast<std::size_t>(kLabelGrid))
            throw DimensionError("label record grid must be 16x16");
        w.u32(rec.layer_index);
        w.u8(static_cast<std::uint8_t>(rec.mode));
        w.bytes(rec.grid.raw().data(), rec.grid.raw().size());
        for (int d = 0; d < 3; ++d) w.i32(rec.counts[d]);
    }
    w.close();
}

std::vector<LabelRecord> load_label_archive(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_magic("PTLB");
    const std::uint32_t count = r.u32();
    std::vector<LabelRecord> records(count);
    for (auto& rec : records) {
        rec.layer_index = r.u32();
        rec.mode = static_cast<ThresholdMode>(r.u8());
        rec.grid = Array2D<std::uint8_t>(kLabelGrid, kLabelGrid);
        r.bytes(rec.grid.raw().data(), rec.grid.raw().size());
        for (int d = 0; d < 3; ++d) rec.counts[d] = r.i32();
    }
    return records;
}

std::vector<LabelRecord> build_label_records(const CtVolume& vol, const PoreTable& table,
                                             std::int64_t layer_count,
                                             const AlignmentOffsets& offsets) {
    std::vector<LabelRecord> records;
    records.reserve(static_cast<std::size_t>(layer_count * 2));
    for (std::int64_t layer = 0; layer < layer_count; ++layer) {
        std::int32_t counts[3];
        for (int d = 1; d <= 3; ++d) {
            const std::int64_t z0 = offsets.oz + layer * kLayerVoxels;
            const bool fits = z0 >= 0 && z0 + d * kLayerVoxels <= vol.nz;
            counts[d - 1] =
                fits ? static_cast<std::int32_t>(build_count_label(vol, layer, d, offsets)) : -1;
        }
        for (const ThresholdMode mode : {ThresholdMode::AllPores, ThresholdMode::MuPlusSigma}) {
            LabelRecord rec;
            rec.layer_index = static_cast<std::uint32_t>(layer);
            rec.mode = mode;
            rec.grid = build_locate_label(vol, table, layer, offsets, mode).grid;
            for (int d = 0; d < 3; ++d) rec.counts[d] = counts[d];
            records.push_back(std::move(rec));
        }
    }
    return records;
}

std::int64_t search_z_offset(const CtVolume& vol, const PoreTable& table,
                             const std::vector<Array2D<std::uint8_t>>& footprints,
                             const AlignmentOffsets& base, int range_layers) {
    if (footprints.empty()) throw ConfigError("z search needs at least one footprint");
    const std::int64_t layers = static_cast<std::int64_t>(footprints.size());
    std::int64_t best_shift = 0;
    double best_score = -1e300;
    for (std::int64_t shift = -range_layers; shift <= range_layers; ++shift) {
        AlignmentOffsets candidate = base;
        candidate.oz = base.oz + shift * kLayerVoxels;
        double score = 0.0;
        for (std::int64_t layer = 0; layer < layers; ++layer) {
            // evaluate only layers valid across the whole shift range
            const std::int64_t zmin = base.oz - range_layers * kLayerVoxels + layer * kLayerVoxels;
            const std::int64_t zmax =
                base.oz + range_layers * kLayerVoxels + (layer + 1) * kLayerVoxels;
            if (zmin < 0 || zmax > vol.nz) continue;
            const auto grid =
                build_locate_label(vol, table, layer, candidate, ThresholdMode::AllPores).grid;
            const auto& fp = footprints[static_cast<std::size_t>(layer)];
            for (std::size_t i = 0; i < grid.raw().size(); ++i) {
                if (!grid.raw()[i]) continue;
                score += fp.raw()[i] ? 1.0 : -1.0;
            }
        }
        if (score > best_score ||
            (score == best_score &&
             (std::llabs(shift) < std::llabs(best_shift) ||
              (std::llabs(shift) == std::llabs(best_shift) && shift < best_shift)))) {
            best_score = score;
            best_shift = shift;
        }
    }
    return best_shift;
}

}  // namespace ptwin
