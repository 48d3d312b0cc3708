#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ptwin/registration.hpp"

using namespace ptwin;

TEST_CASE("pixel extents convert through the pitch ratio") {
    auto [w, h] = px_extent_to_voxels({80, 65}, 21.0, 3.63);
    CHECK(w == doctest::Approx(462.81).epsilon(1e-4));
    CHECK(h == doctest::Approx(376.03).epsilon(1e-4));
    auto [z, _] = px_extent_to_voxels({0, 10}, 21.0, 3.63);
    CHECK(z == 0.0);
    CHECK_THROWS_AS(px_extent_to_voxels({1, 1}, -1.0, 3.63), ConfigError);
}

TEST_CASE("crop_input geometry") {
    Array2D<float> frame(80, 65);
    for (std::size_t r = 0; r < 80; ++r)
        for (std::size_t c = 0; c < 65; ++c) frame.at(r, c) = static_cast<float>(r * 1000 + c);
    auto out = crop_input(frame);
    CHECK(out.rows() == 64);
    CHECK(out.cols() == 64);
    CHECK(out.at(0, 0) == frame.at(8, 1));      // (8,1) maps to the origin
    CHECK(out.at(63, 63) == frame.at(71, 64));  // last kept pixel
    CHECK_THROWS_AS(crop_input(Array2D<float>(60, 85)), DimensionError);
}

TEST_CASE("crop_label removes 52/52 and 7 voxels and preserves content") {
    Array3D<std::uint16_t> slab(9, 520, 423, 0);
    slab.at(4, 52, 7) = 11;     // first kept voxel
    slab.at(4, 467, 422) = 22;  // last kept voxel
    slab.at(4, 0, 0) = 33;      // cropped away
    auto out = crop_label(slab);
    CHECK(out.nz() == 9);
    CHECK(out.ny() == 416);
    CHECK(out.nx() == 416);
    CHECK(out.at(4, 0, 0) == 11);
    CHECK(out.at(4, 415, 415) == 22);
    CHECK(520 - 2 * 52 == 416);
    CHECK(423 - 7 == 416);

    // transposed in-plane order is normalized first
    Array3D<std::uint16_t> swapped(9, 423, 520, 0);
    swapped.at(4, 7, 52) = 11;
    auto out2 = crop_label(swapped);
    CHECK(out2.at(4, 0, 0) == 11);

    CHECK_THROWS_AS(crop_label(Array3D<std::uint16_t>(9, 400, 423)), DimensionError);
}

TEST_CASE("downsample_label block mapping") {
    Array3D<std::uint16_t> slab(9, 416, 416, 0);
    auto zero = downsample_label(slab);
    for (auto v : zero.raw()) CHECK(v == 0);

    // single voxel at the slab center activates exactly one cell
    slab.at(4, 208, 208) = 5;
    auto one = downsample_label(slab);
    int active = 0;
    for (auto v : one.raw()) active += v;
    CHECK(active == 1);
    CHECK(one.at(8, 8) == 1);

    // full slab activates the whole grid
    Array3D<std::uint16_t> full(9, 416, 416, 1);
    auto ones = downsample_label(full);
    for (auto v : ones.raw()) CHECK(v == 1);
}

namespace {
// Small synthetic world: one layer worth of volume with a few pores.
struct World {
    CtVolume vol;
    PoreTable table;
    AlignmentOffsets off;
};

World make_world(std::int64_t layers = 3) {
    World w;
    w.off.oz = 9;
    w.off.oy = 4;
    w.off.ox = 6;
    w.vol.nz = w.off.oz + layers * kLayerVoxels + 4;
    w.vol.ny = 560;
    w.vol.nx = 450;
    w.vol.ids.assign(static_cast<std::size_t>(w.vol.voxel_count()), 0);
    return w;
}

// sphere-ish pore: a cube of side s, id, centered in layer `layer`
void add_pore(World& w, std::uint16_t id, std::int64_t layer, std::int64_t wy, std::int64_t wx,
              std::int64_t side) {
    const std::int64_t z0 = w.off.oz + layer * kLayerVoxels + 2;
    std::uint32_t count = 0;
    for (std::int64_t z = z0; z < z0 + side && z < w.vol.nz; ++z)
        for (std::int64_t y = w.off.oy + wy; y < w.off.oy + wy + side && y < w.vol.ny; ++y)
            for (std::int64_t x = w.off.ox + wx; x < w.off.ox + wx + side && x < w.vol.nx; ++x) {
                w.vol.at(z, y, x) = id;
                ++count;
            }
    PoreRecord rec;
    rec.id = id;
    rec.voxel_count = count;
    rec.esd_um = esd_um(count, w.vol.voxel_pitch_um);
    w.table.push_back(rec);
}
}  // namespace

TEST_CASE("locate labels: window mapping, modes, monotonicity") {
    World w = make_world();
    // big pore (above any mu+sigma threshold among these) and a small one
    add_pore(w, 1, 0, 250, 210, 12);  // near window center, dominates the size stats
    add_pore(w, 2, 0, 100, 50, 4);    // small: below mu+sigma cutoff
    add_pore(w, 3, 1, 60, 300, 5);    // different layer, also small

    auto all0 = build_locate_label(w.vol, w.table, 0, w.off, ThresholdMode::AllPores, 1);
    auto mu0 = build_locate_label(w.vol, w.table, 0, w.off, ThresholdMode::MuPlusSigma, 1);
    int n_all = 0, n_mu = 0;
    for (std::size_t i = 0; i < all0.grid.raw().size(); ++i) {
        n_all += all0.grid.raw()[i];
        n_mu += mu0.grid.raw()[i];
        // thresholded labels are a cellwise subset
        CHECK(all0.grid.raw()[i] >= mu0.grid.raw()[i]);
    }
    CHECK(n_all > 0);
    CHECK(n_mu > 0);
    CHECK(n_mu < n_all);

    // the big pore lands where the block mapping says it should:
    // window row = oy_rel 250 -> cropped 198 -> cell (198-16)/24 ... covered by center cell
    bool found = false;
    for (std::size_t r = 0; r < 16 && !found; ++r)
        for (std::size_t c = 0; c < 16 && !found; ++c) found = mu0.grid.at(r, c) != 0;
    CHECK(found);

    // a layer with no above-threshold pores labels empty
    auto mu2 = build_locate_label(w.vol, w.table, 2, w.off, ThresholdMode::MuPlusSigma, 1);
    for (auto v : mu2.grid.raw()) CHECK(v == 0);

    CHECK_THROWS_AS(build_locate_label(w.vol, w.table, 99, w.off, ThresholdMode::AllPores, 1),
                    DimensionError);
}

TEST_CASE("locate label block-index oracle for an injected pore") {
    World w = make_world();
    // put a pore at a known window position: rows [wy, wy+10)
    const std::int64_t wy = 300, wx = 180;
    add_pore(w, 1, 0, wy, wx, 10);
    auto label = build_locate_label(w.vol, w.table, 0, w.off, ThresholdMode::AllPores, 1);
    // oracle: window voxel -> cropped voxel -> padded cell -> cropped cell
    std::set<std::pair<int, int>> expect;
    for (std::int64_t r = wy; r < wy + 10; ++r)
        for (std::int64_t c = wx; c < wx + 10; ++c) {
            const std::int64_t cr = r - kWindowCropRows, cc = c - kWindowCropCols;
            if (cr < 0 || cr >= 416 || cc < 0 || cc >= 416) continue;
            const std::int64_t gr = (cr + 8) / 24 - 1, gc = (cc + 8) / 24 - 1;
            if (gr >= 0 && gr < 16 && gc >= 0 && gc < 16)
                expect.insert({static_cast<int>(gr), static_cast<int>(gc)});
        }
    std::set<std::pair<int, int>> got;
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            if (label.grid.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)))
                got.insert({r, c});
    CHECK(got == expect);
}

TEST_CASE("count labels: delegation, window restriction, monotone depth") {
    World w = make_world();
    add_pore(w, 1, 0, 250, 210, 6);
    add_pore(w, 2, 1, 100, 100, 6);
    // a pore outside the cropped window must not count: place beyond 468 rows
    add_pore(w, 3, 0, 500, 210, 6);

    CHECK(build_count_label(w.vol, 0, 1, w.off) == 1);
    CHECK(build_count_label(w.vol, 0, 2, w.off) == 2);
    CHECK(build_count_label(w.vol, 0, 3, w.off) >= build_count_label(w.vol, 0, 1, w.off));
    CHECK(build_count_label(w.vol, 2, 1, w.off) == 0);  // empty region
}

TEST_CASE("offset application is invertible") {
    World w = make_world();
    add_pore(w, 1, 0, 250, 210, 10);
    add_pore(w, 2, 1, 120, 80, 10);
    auto base0 = build_locate_label(w.vol, w.table, 0, w.off, ThresholdMode::AllPores, 1);
    auto base1 = build_locate_label(w.vol, w.table, 1, w.off, ThresholdMode::AllPores, 1);

    // shift the whole volume by one layer down and +3/+5 in plane
    World shifted = make_world(4);
    shifted.vol.ny = w.vol.ny + 5;
    shifted.vol.nx = w.vol.nx + 3;
    shifted.vol.ids.assign(static_cast<std::size_t>(shifted.vol.voxel_count()), 0);
    for (std::int64_t z = 0; z < w.vol.nz; ++z)
        for (std::int64_t y = 0; y < w.vol.ny; ++y)
            for (std::int64_t x = 0; x < w.vol.nx; ++x)
                if (w.vol.at(z, y, x))
                    shifted.vol.at(z + kLayerVoxels, y + 5, x + 3) = w.vol.at(z, y, x);
    AlignmentOffsets off2 = w.off;
    off2.oz += kLayerVoxels;
    off2.oy += 5;
    off2.ox += 3;
    auto moved0 = build_locate_label(shifted.vol, w.table, 0, off2, ThresholdMode::AllPores, 1);
    auto moved1 = build_locate_label(shifted.vol, w.table, 1, off2, ThresholdMode::AllPores, 1);
    CHECK(moved0.grid.raw() == base0.grid.raw());
    CHECK(moved1.grid.raw() == base1.grid.raw());
}

TEST_CASE("label archive round trip") {
    std::vector<LabelRecord> records;
    LabelRecord rec;
    rec.layer_index = 3;
    rec.mode = ThresholdMode::MuPlusSigma;
    rec.grid = Array2D<std::uint8_t>(16, 16, 0);
    rec.grid.at(2, 5) = 1;
    rec.counts[0] = 4;
    rec.counts[1] = 7;
    rec.counts[2] = -1;
    records.push_back(rec);
    save_label_archive("/tmp/ptwin_labels.ptlb", records);
    auto back = load_label_archive("/tmp/ptwin_labels.ptlb");
    REQUIRE(back.size() == 1);
    CHECK(back[0].layer_index == 3);
    CHECK(back[0].mode == ThresholdMode::MuPlusSigma);
    CHECK(back[0].grid.at(2, 5) == 1);
    CHECK(back[0].counts[1] == 7);
    CHECK(back[0].counts[2] == -1);
}

TEST_CASE("z offset search recovers an induced shift") {
    World w = make_world(8);
    w.vol.nz += 8 * kLayerVoxels;
    w.vol.ids.assign(static_cast<std::size_t>(w.vol.voxel_count()), 0);
    // distinctive pore pattern per layer
    add_pore(w, 1, 2, 100, 100, 10);
    add_pore(w, 2, 3, 300, 250, 10);
    add_pore(w, 3, 4, 200, 50, 10);
    add_pore(w, 4, 5, 380, 300, 10);

    // footprints built from the true labels
    std::vector<Array2D<std::uint8_t>> footprints;
    for (std::int64_t layer = 0; layer < 8; ++layer) {
        auto g = build_locate_label(w.vol, w.table, layer, w.off, ThresholdMode::AllPores, 1).grid;
        // dilate slightly: footprints are wider than pores
        Array2D<std::uint8_t> fp(16, 16, 0);
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c)
                if (g.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)))
                    for (int dr = -1; dr <= 1; ++dr)
                        for (int dc = -1; dc <= 1; ++dc) {
                            const int rr = r + dr, cc = c + dc;
                            if (rr >= 0 && rr < 16 && cc >= 0 && cc < 16)
                                fp.at(static_cast<std::size_t>(rr),
                                      static_cast<std::size_t>(cc)) = 1;
                        }
        footprints.push_back(fp);
    }

    // querying with a miscalibrated base offset: search finds the correction
    for (const int true_shift : {-2, 0, 2}) {
        AlignmentOffsets wrong = w.off;
        wrong.oz = w.off.oz - true_shift * kLayerVoxels;
        const auto found = search_z_offset(w.vol, w.table, footprints, wrong, 3);
        CHECK(found == true_shift);
    }
}
