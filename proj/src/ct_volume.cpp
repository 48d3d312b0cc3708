#include "ptwin/ct_volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <sstream>

#include "ptwin/io.hpp"

namespace ptwin {

namespace {
constexpr double kPi = 3.14159265358979323846;

struct Offset {
    int dz, dy, dx;
};

std::vector<Offset> neighbor_offsets(Connectivity c) {
    std::vector<Offset> out;
    if (c == Connectivity::Six) {
        out = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    } else {
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if (dz || dy || dx) out.push_back({dz, dy, dx});
    }
    return out;
}
}  // namespace

LabelResult label_components(const Array3D<std::uint8_t>& occ, double voxel_pitch_um,
                             Connectivity connectivity) {
    const auto nz = static_cast<std::int64_t>(occ.nz());
    const auto ny = static_cast<std::int64_t>(occ.ny());
    const auto nx = static_cast<std::int64_t>(occ.nx());
    LabelResult res;
    res.volume.nz = nz;
    res.volume.ny = ny;
    res.volume.nx = nx;
    res.volume.voxel_pitch_um = voxel_pitch_um;
    res.volume.ids.assign(static_cast<std::size_t>(nz * ny * nx), 0);

    const auto offs = neighbor_offsets(connectivity);
    std::uint32_t next_id = 0;
    std::vector<std::int64_t> queue;  // flat voxel indices, vector used as a stack

    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x) {
                const std::int64_t start = (z * ny + y) * nx + x;
                if (!occ.raw()[static_cast<std::size_t>(start)] ||
                    res.volume.ids[static_cast<std::size_t>(start)])
                    continue;
                ++next_id;
                if (next_id > 0xffff)
                    throw ContractError("more than 65535 pores; id field is 16-bit");
                double sz = 0, sy = 0, sx = 0;
                std::uint32_t count = 0;
                queue.clear();
                queue.push_back(start);
                res.volume.ids[static_cast<std::size_t>(start)] =
                    static_cast<std::uint16_t>(next_id);
                while (!queue.empty()) {
                    const std::int64_t cur = queue.back();
                    queue.pop_back();
                    const std::int64_t cz = cur / (ny * nx);
                    const std::int64_t rem = cur % (ny * nx);
                    const std::int64_t cy = rem / nx;
                    const std::int64_t cx = rem % nx;
                    ++count;
                    sz += static_cast<double>(cz);
                    sy += static_cast<double>(cy);
                    sx += static_cast<double>(cx);
                    for (const auto& o : offs) {
                        const std::int64_t pz = cz + o.dz, py = cy + o.dy, px = cx + o.dx;
                        if (pz < 0 || pz >= nz || py < 0 || py >= ny || px < 0 || px >= nx)
                            continue;
                        const std::int64_t ni = (pz * ny + py) * nx + px;
                        if (occ.raw()[static_cast<std::size_t>(ni)] &&
                            !res.volume.ids[static_cast<std::size_t>(ni)]) {
                            res.volume.ids[static_cast<std::size_t>(ni)] =
                                static_cast<std::uint16_t>(next_id);
                            queue.push_back(ni);
                        }
                    }
                }
                PoreRecord rec;
                rec.id = next_id;
                rec.cz = sz / count;
                rec.cy = sy / count;
                rec.cx = sx / count;
                rec.voxel_count = count;
                rec.esd_um = esd_um(count, voxel_pitch_um);
                res.table.push_back(rec);
            }
    return res;
}

double esd_um(std::int64_t voxel_count, double pitch_um) {
    if (voxel_count < 1) throw DomainError("esd of zero-voxel cluster");
    return pitch_um * std::cbrt(6.0 * static_cast<double>(voxel_count) / kPi);
}

double esd_threshold_um(double mu, double sigma, double sigma_mult) {
    return mu + sigma_mult * sigma;
}

ThresholdResult threshold_pores(const PoreTable& table, std::int64_t min_voxels,
                                double sigma_mult) {
    ThresholdResult res;
    PoreTable filtered;
    for (const auto& rec : table)
        if (rec.voxel_count >= min_voxels) filtered.push_back(rec);
    if (filtered.empty()) return res;  // stats reported absent

    double mu = 0.0;
    for (const auto& rec : filtered) mu += rec.esd_um;
    mu /= static_cast<double>(filtered.size());
    double var = 0.0;
    for (const auto& rec : filtered) var += (rec.esd_um - mu) * (rec.esd_um - mu);
    var /= static_cast<double>(filtered.size());
    res.mu = mu;
    res.sigma = std::sqrt(var);

    if (sigma_mult <= 0.0) {
        res.kept = std::move(filtered);
        return res;
    }
    const double threshold = esd_threshold_um(mu, *res.sigma, sigma_mult);
    res.threshold_um = threshold;
    for (const auto& rec : filtered)
        if (rec.esd_um >= threshold) res.kept.push_back(rec);
    return res;
}

namespace {
std::int64_t count_ids_in_slab(const CtVolume& vol, std::int64_t z0, std::int64_t z1,
                               std::int64_t y0, std::int64_t y1, std::int64_t x0,
                               std::int64_t x1) {
    std::vector<bool> seen(65536, false);
    std::int64_t distinct = 0;
    const std::int64_t ya = std::max<std::int64_t>(0, y0), yb = std::min(vol.ny, y1);
    const std::int64_t xa = std::max<std::int64_t>(0, x0), xb = std::min(vol.nx, x1);
    for (std::int64_t z = z0; z < z1; ++z)
        for (std::int64_t y = ya; y < yb; ++y) {
            const std::uint16_t* row = vol.ids.data() + (z * vol.ny + y) * vol.nx;
            for (std::int64_t x = xa; x < xb; ++x) {
                const std::uint16_t id = row[x];
                if (id && !seen[id]) {
                    seen[id] = true;
                    ++distinct;
                }
            }
        }
    return distinct;
}
}  // namespace

std::int64_t count_pores(const CtVolume& vol, std::int64_t z_start, int depth_layers,
                         std::int64_t layer_voxels) {
    return count_pores_window(vol, z_start, depth_layers, 0, vol.ny, 0, vol.nx, layer_voxels);
}

std::int64_t count_pores_window(const CtVolume& vol, std::int64_t z_start, int depth_layers,
                                std::int64_t y0, std::int64_t y1, std::int64_t x0, std::int64_t x1,
                                std::int64_t layer_voxels) {
    if (depth_layers < 1 || depth_layers > 3)
        throw ContractError("pore count depth must be 1, 2 or 3 build layers");
    const std::int64_t z1 = z_start + static_cast<std::int64_t>(depth_layers) * layer_voxels;
    if (z_start < 0 || z1 > vol.nz) throw DimensionError("pore count slab out of bounds");
    return count_ids_in_slab(vol, z_start, z1, y0, y1, x0, x1);
}

LayerSlab layer_slice(const CtVolume& vol, std::int64_t layer_index, std::int64_t layer_voxels) {
    if (layer_index < 0) throw DimensionError("negative layer index");
    const std::int64_t z0 = layer_index * layer_voxels;
    if (z0 >= vol.nz) throw DimensionError("layer index beyond volume");
    const std::int64_t z1 = std::min(vol.nz, z0 + layer_voxels);
    LayerSlab slab;
    slab.z_start = z0;
    slab.partial = (z1 - z0) < layer_voxels;
    slab.volume.nz = z1 - z0;
    slab.volume.ny = vol.ny;
    slab.volume.nx = vol.nx;
    slab.volume.voxel_pitch_um = vol.voxel_pitch_um;
    slab.volume.ids.assign(vol.ids.begin() + z0 * vol.ny * vol.nx,
                           vol.ids.begin() + z1 * vol.ny * vol.nx);
    return slab;
}

void save_volume(const std::string& path, const CtVolume& vol) {
    io::BinaryWriter w(path);
    w.magic("CTVX");
    w.u32(kCtvxVersion);
    w.u32(static_cast<std::uint32_t>(vol.nz));
    w.u32(static_cast<std::uint32_t>(vol.ny));
    w.u32(static_cast<std::uint32_t>(vol.nx));
    w.f32(static_cast<float>(vol.voxel_pitch_um));
    w.u16_array(vol.ids.data(), vol.ids.size());
    w.close();
}

CtVolume load_volume(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_magic("CTVX");
    if (r.u32() != kCtvxVersion) throw IoError("unsupported volume version: " + path);
    CtVolume vol;
    vol.nz = r.u32();
    vol.ny = r.u32();
    vol.nx = r.u32();
    vol.voxel_pitch_um = r.f32();
    vol.ids.resize(static_cast<std::size_t>(vol.voxel_count()));
    r.u16_array(vol.ids.data(), vol.ids.size());
    return vol;
}

void save_pore_table(const std::string& path, const PoreTable& table) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "id,cz,cy,cx,voxels,esd_um\n";
    char buf[256];
    for (const auto& rec : table) {
        std::snprintf(buf, sizeof(buf), "%u,%.6f,%.6f,%.6f,%u,%.6f\n", rec.id, rec.cz, rec.cy,
                      rec.cx, rec.voxel_count, rec.esd_um);
        out << buf;
    }
}

PoreTable load_pore_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("id,", 0) != 0)
        throw IoError("missing pore table header: " + path);
    PoreTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        PoreRecord rec;
        char comma;
        std::istringstream ss(line);
        ss >> rec.id >> comma >> rec.cz >> comma >> rec.cy >> comma >> rec.cx >> comma >>
            rec.voxel_count >> comma >> rec.esd_um;
        if (!ss) throw IoError("malformed pore table row in " + path + ": " + line);
        table.push_back(rec);
    }
    return table;
}

}  // namespace ptwin
