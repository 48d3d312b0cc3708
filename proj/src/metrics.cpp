#include "ptwin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ptwin/io.hpp"

namespace ptwin {

double rmse(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) throw DimensionError("rmse length mismatch");
    if (pred.empty()) throw DimensionError("rmse of empty vectors");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

std::optional<double> r2(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) throw DimensionError("r2 length mismatch");
    if (pred.empty()) throw DimensionError("r2 of empty vectors");
    double mean = 0.0;
    for (const double t : target) mean += t;
    mean /= static_cast<double>(target.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ss_tot += (target[i] - mean) * (target[i] - mean);
        ss_res += (pred[i] - target[i]) * (pred[i] - target[i]);
    }
    if (ss_tot == 0.0) return std::nullopt;
    return 1.0 - ss_res / ss_tot;
}

double iou(const Array2D<std::uint8_t>& pred, const Array2D<std::uint8_t>& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw DimensionError("iou grid shape mismatch");
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.raw().size(); ++i) {
        const bool p = pred.raw()[i] != 0;
        const bool t = target.raw()[i] != 0;
        inter += (p && t) ? 1 : 0;
        uni += (p || t) ? 1 : 0;
    }
    if (uni == 0) return 1.0;  // both masks empty: exact match
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {
std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}
}  // namespace

void write_count_report_csv(const std::string& path, const std::vector<CountReportRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "dataset,augmentation,depth_or_mode,rmse,r2\n";
    for (const auto& r : rows) {
        out << r.dataset << ',' << r.augmentation << ',' << r.depth_layers << ','
            << fmt(r.rmse_value) << ',' << (r.r2_value ? fmt(*r.r2_value) : std::string("nan"))
            << '\n';
    }
}

void write_locate_report_csv(const std::string& path, const std::vector<LocateReportRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "dataset,augmentation,mode,avg_iou,max_iou\n";
    for (const auto& r : rows)
        out << r.dataset << ',' << r.augmentation << ',' << r.mode << ',' << fmt(r.avg_iou) << ','
            << fmt(r.max_iou) << '\n';
}

void write_per_layer_csv(const std::string& path, const std::vector<PerLayerPoint>& points,
                         bool locate) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << (locate ? "layer,target,prediction,iou\n" : "layer,target,prediction\n");
    for (const auto& p : points) {
        out << p.layer_index << ',' << fmt(p.target) << ',' << fmt(p.prediction);
        if (locate) out << ',' << fmt(p.iou_value);
        out << '\n';
    }
}

std::vector<PerLayerPoint> read_per_layer_csv(const std::string& path, bool locate) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty per-layer csv: " + path);
    std::vector<PerLayerPoint> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        PerLayerPoint p;
        char comma;
        ss >> p.layer_index >> comma >> p.target >> comma >> p.prediction;
        if (locate) ss >> comma >> p.iou_value;
        if (!ss) throw IoError("malformed per-layer csv row in " + path + ": " + line);
        points.push_back(p);
    }
    return points;
}

void write_scatter_pgm(const std::string& path, const std::vector<PerLayerPoint>& points) {
    constexpr std::size_t kSize = 256;
    Array2D<float> img(kSize, kSize, 0.f);
    double hi = 1.0;
    for (const auto& p : points) hi = std::max({hi, p.target, p.prediction});
    auto to_px = [&](double v) {
        const double t = v / hi;
        return static_cast<std::size_t>(
            std::clamp(t * static_cast<double>(kSize - 1), 0.0, static_cast<double>(kSize - 1)));
    };
    // faint identity diagonal for reference
    for (std::size_t i = 0; i < kSize; ++i) img.at(kSize - 1 - i, i) = 0.25f;
    for (const auto& p : points) {
        const std::size_t cx = to_px(p.target);
        const std::size_t cy = kSize - 1 - to_px(p.prediction);
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const std::int64_t y = static_cast<std::int64_t>(cy) + dy;
                const std::int64_t x = static_cast<std::int64_t>(cx) + dx;
                if (y >= 0 && y < static_cast<std::int64_t>(kSize) && x >= 0 &&
                    x < static_cast<std::int64_t>(kSize))
                    img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1.f;
            }
    }
    io::PgmMeta meta;
    meta.units = "scatter";
    io::write_pgm16(path, img, meta);
}

void write_heat_pgm(const std::string& path, const Array2D<float>& grid, int upscale) {
    if (grid.empty()) throw IoError("empty heat grid");
    Array2D<float> img(grid.rows() * upscale, grid.cols() * upscale);
    for (std::size_t r = 0; r < img.rows(); ++r)
        for (std::size_t c = 0; c < img.cols(); ++c)
            img.at(r, c) = grid.at(r / upscale, c / upscale);
    io::PgmMeta meta;
    meta.units = "heat";
    io::write_pgm16(path, img, meta);
}

}  // namespace ptwin
