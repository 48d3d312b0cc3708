#pragma once

#include <cstdint>
#include <cstddef>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ptwin {

// ---------------------------------------------------------------------------
// Error hierarchy. CLI maps ConfigError -> exit 2, everything else -> exit 1.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error("dimension: " + msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error("domain: " + msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error("contract: " + msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG: xoshiro256** seeded through splitmix64. Self-contained so
// streams are reproducible across platforms and toolchains.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stable per-purpose substream derivation, e.g. derive_seed(seed, layer, 3).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s ^= a * 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= b * 0xd1b54a32d192ed03ULL;
    h ^= splitmix64(s);
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractError("Rng::below(0)");
        const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
        std::uint64_t v;
        do { v = next_u64(); } while (v >= limit);
        return v % n;
    }

    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }  // [0,1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_cached_) { has_cached_ = false; return cached_; }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    double lognormal(double log_mu, double log_sigma) {
        return std::exp(log_mu + log_sigma * normal());
    }

    // Knuth's product method; fine for the rates used here (lambda < ~1e3).
    int poisson(double lambda) {
        if (lambda < 0) throw ContractError("poisson rate < 0");
        if (lambda == 0) return 0;
        const double limit = std::exp(-lambda);
        double p = 1.0;
        int k = 0;
        do {
            ++k;
            p *= uniform();
        } while (p > limit);
        return k - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t state_[4];
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// ---------------------------------------------------------------------------
// Small owning row-major containers shared by the image/volume modules.
// ---------------------------------------------------------------------------

template <typename T>
class Array2D {
public:
    Array2D() = default;
    Array2D(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<T> data_;
};

template <typename T>
class Array3D {
public:
    Array3D() = default;
    Array3D(std::size_t nz, std::size_t ny, std::size_t nx, T fill = T{})
        : nz_(nz), ny_(ny), nx_(nx), data_(nz * ny * nx, fill) {}

    std::size_t nz() const { return nz_; }
    std::size_t ny() const { return ny_; }
    std::size_t nx() const { return nx_; }
    std::size_t size() const { return data_.size(); }

    T& at(std::size_t z, std::size_t y, std::size_t x) {
        return data_[(z * ny_ + y) * nx_ + x];
    }
    const T& at(std::size_t z, std::size_t y, std::size_t x) const {
        return data_[(z * ny_ + y) * nx_ + x];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

private:
    std::size_t nz_ = 0, ny_ = 0, nx_ = 0;
    std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Pipeline-wide enums
// ---------------------------------------------------------------------------

enum class SampleKind { Spacing, Velocity };
enum class ThresholdMode : std::uint8_t { AllPores = 0, MuPlusSigma = 1 };

inline const char* to_string(SampleKind k) {
    return k == SampleKind::Spacing ? "spacing" : "velocity";
}
inline const char* to_string(ThresholdMode m) {
    return m == ThresholdMode::AllPores ? "all-pores" : "mu-sigma";
}

inline SampleKind sample_kind_from(const std::string& s) {
    if (s == "spacing") return SampleKind::Spacing;
    if (s == "velocity") return SampleKind::Velocity;
    throw ConfigError("unknown sample kind: " + s);
}
inline ThresholdMode threshold_mode_from(const std::string& s) {
    if (s == "all-pores") return ThresholdMode::AllPores;
    if (s == "mu-sigma") return ThresholdMode::MuPlusSigma;
    throw ConfigError("unknown threshold mode: " + s);
}

// FNV-1a, used for run manifests and determinism checks.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ptwin
