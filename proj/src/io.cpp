#include "ptwin/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ptwin::io {

void write_pgm16(const std::string& path, const Array2D<float>& img, const PgmMeta& meta) {
    if (img.empty()) throw IoError("refusing to write empty image: " + path);
    float lo = img.raw()[0], hi = img.raw()[0];
    for (const float v : img.raw()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double scale = (hi > lo) ? (static_cast<double>(hi) - lo) / 65535.0 : 1.0;
    const double offset = lo;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << img.cols() << " " << img.rows() << "\n65535\n";
    std::vector<unsigned char> row(img.cols() * 2);
    for (std::size_t r = 0; r < img.rows(); ++r) {
        for (std::size_t c = 0; c < img.cols(); ++c) {
            const double q = (static_cast<double>(img.at(r, c)) - offset) / scale;
            const auto s = static_cast<std::uint16_t>(std::lround(std::clamp(q, 0.0, 65535.0)));
            row[c * 2] = static_cast<unsigned char>(s >> 8);  // PGM samples are big-endian
            row[c * 2 + 1] = static_cast<unsigned char>(s & 0xff);
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    out.close();
    if (!out) throw IoError("write failed: " + path);

    std::ofstream side(path + ".meta");
    if (!side) throw IoError("cannot open for writing: " + path + ".meta");
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "pixel_pitch_um = %.9g\nunits = %s\nscale = %.17g\noffset = %.17g\n",
                  meta.pixel_pitch_um, meta.units.c_str(), scale, offset);
    side << buf;
}

Array2D<float> read_pgm16(const std::string& path, PgmMeta* meta_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string tag;
    std::size_t w = 0, h = 0;
    long maxval = 0;
    in >> tag >> w >> h >> maxval;
    if (tag != "P5" || maxval != 65535) throw IoError("not a 16-bit P5 PGM: " + path);
    in.get();  // single whitespace after header
    PgmMeta meta;
    {
        std::ifstream side(path + ".meta");
        if (side) {
            std::string line;
            while (std::getline(side, line)) {
                const auto eq = line.find('=');
                if (eq == std::string::npos) continue;
                std::string key = line.substr(0, eq);
                std::string val = line.substr(eq + 1);
                auto trim = [](std::string& s) {
                    s.erase(0, s.find_first_not_of(" \t"));
                    s.erase(s.find_last_not_of(" \t") + 1);
                };
                trim(key);
                trim(val);
                if (key == "pixel_pitch_um") meta.pixel_pitch_um = std::stod(val);
                else if (key == "scale") meta.scale = std::stod(val);
                else if (key == "offset") meta.offset = std::stod(val);
                else if (key == "units") meta.units = val;
            }
        }
    }
    Array2D<float> img(h, w);
    std::vector<unsigned char> row(w * 2);
    for (std::size_t r = 0; r < h; ++r) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw IoError("truncated PGM: " + path);
        for (std::size_t c = 0; c < w; ++c) {
            const std::uint16_t s = static_cast<std::uint16_t>((row[c * 2] << 8) | row[c * 2 + 1]);
            img.at(r, c) = static_cast<float>(meta.offset + meta.scale * s);
        }
    }
    if (meta_out) *meta_out = meta;
    return img;
}

std::uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        const auto n = static_cast<std::size_t>(in.gcount());
        if (n) h = fnv1a64(buf, n, h);
    }
    return h;
}

}  // namespace ptwin::io
