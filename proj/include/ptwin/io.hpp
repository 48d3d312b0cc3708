#pragma once

// Little-endian binary file helpers plus the 16-bit PGM image writer used for
// exported rasters. All multi-byte values on disk are little-endian except the
// PGM payload, which is big-endian per the format.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ptwin/common.hpp"

namespace ptwin::io {

class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open for writing: " + path);
    }

    void magic(const char m[4]) { out_.write(m, 4); }
    void u8(std::uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), 1); }
    void u16(std::uint16_t v) { put_le(&v, 2); }
    void u32(std::uint32_t v) { put_le(&v, 4); }
    void i32(std::int32_t v) { put_le(&v, 4); }
    void f32(float v) { put_le(&v, 4); }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

    void u16_array(const std::uint16_t* p, std::size_t n) { put_le_array(p, n, 2); }
    void f32_array(const float* p, std::size_t n) { put_le_array(p, n, 4); }

    void close() {
        out_.close();
        if (!out_) throw IoError("write failed: " + path_);
    }

private:
    void put_le(const void* p, std::size_t n) {
        // host is little-endian on every supported target; write directly
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void put_le_array(const void* p, std::size_t count, std::size_t elem) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(count * elem));
    }
    std::string path_;
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open: " + path);
    }

    void expect_magic(const char m[4]) {
        char buf[4];
        in_.read(buf, 4);
        if (!in_ || std::string(buf, 4) != std::string(m, 4))
            throw IoError("bad magic in " + path_ + " (expected " + std::string(m, 4) + ")");
    }
    std::uint8_t u8() { return get<std::uint8_t>(); }
    std::uint16_t u16() { return get<std::uint16_t>(); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::int32_t i32() { return get<std::int32_t>(); }
    float f32() { return get<float>(); }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in_) throw IoError("truncated file: " + path_);
    }
    void u16_array(std::uint16_t* p, std::size_t n) { bytes(p, n * 2); }
    void f32_array(float* p, std::size_t n) { bytes(p, n * 4); }

    std::string read_string(std::size_t n) {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    template <typename V>
    V get() {
        V v;
        bytes(&v, sizeof(V));
        return v;
    }
    std::string path_;
    std::ifstream in_;
};

// 16-bit binary PGM (P5, maxval 65535, big-endian samples) plus a sidecar
// `<path>.meta` recording pixel pitch and the value <-> sample mapping:
// value = offset + sample * scale.
struct PgmMeta {
    double pixel_pitch_um = 0.0;
    std::string units;
    double scale = 1.0;
    double offset = 0.0;
};

void write_pgm16(const std::string& path, const Array2D<float>& img, const PgmMeta& meta);
Array2D<float> read_pgm16(const std::string& path, PgmMeta* meta_out = nullptr);

std::uint64_t file_digest(const std::string& path);

}  // namespace ptwin::io
