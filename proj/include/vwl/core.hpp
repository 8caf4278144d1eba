#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vwl {

// Error categories surfaced by the CLI as distinct exit codes.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error("config error: " + m) {}
};
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error("shape error: " + m) {}
};
struct ParamError : std::runtime_error {
    explicit ParamError(const std::string& m) : std::runtime_error("parameter error: " + m) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& m) : std::runtime_error("format error: " + m) {}
};
struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& m) : std::runtime_error("training error: " + m) {}
};

// Dense row-major tensor over a flat buffer. Rank up to 4 is all this
// project needs; hot loops index the raw pointer directly.
template <class T>
struct Tensor {
    std::vector<int> dims;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
        v.assign(static_cast<size_t>(count(dims)), T(0));
    }

    static long long count(const std::vector<int>& d) {
        long long n = 1;
        for (int x : d) {
            if (x < 0) throw ShapeError("negative dimension");
            n *= x;
        }
        return n;
    }

    long long size() const { return static_cast<long long>(v.size()); }
    int dim(int i) const { return dims[static_cast<size_t>(i)]; }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator()(int i) { return v[static_cast<size_t>(i)]; }
    const T& operator()(int i) const { return v[static_cast<size_t>(i)]; }
    T& operator()(int i, int j) { return v[static_cast<size_t>(i) * dims[1] + j]; }
    const T& operator()(int i, int j) const { return v[static_cast<size_t>(i) * dims[1] + j]; }
    T& operator()(int i, int j, int k) {
        return v[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
    }
    const T& operator()(int i, int j, int k) const {
        return v[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
    }
    T& operator()(int i, int j, int k, int l) {
        return v[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + k) * static_cast<size_t>(dims[3]) + l];
    }
    const T& operator()(int i, int j, int k, int l) const {
        return v[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + k) * static_cast<size_t>(dims[3]) + l];
    }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }
};

inline std::string shape_str(const std::vector<int>& d) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
    os << ")";
    return os.str();
}

// Deterministic RNG with explicitly specified draw algorithms so that a
// (config, seed) pair pins every generated bit. std::mt19937 supplies the
// stream; uniform/normal are derived here rather than via std::*_distribution,
// whose outputs are implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

    // uniform in [0, 1) with 53 random bits
    double uniform() {
        uint64_t hi = gen_();
        uint64_t lo = gen_();
        uint64_t bits = ((hi << 32) | lo) >> 11;
        return static_cast<double>(bits) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes exactly two uniforms per draw
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // uniform integer in [0, n)
    int uniform_int(int n) {
        if (n <= 0) throw ParamError("uniform_int needs n > 0");
        return static_cast<int>(uniform() * n) % n;
    }

    template <class It>
    void shuffle(It first, It last) {
        auto n = static_cast<long long>(last - first);
        for (long long i = n - 1; i > 0; --i) {
            long long j = static_cast<long long>(uniform() * static_cast<double>(i + 1));
            if (j > i) j = i;
            std::swap(first[i], first[j]);
        }
    }

    uint32_t raw() { return gen_(); }

private:
    std::mt19937 gen_;
};

// FNV-1a 64-bit; used for config hashes and checkpoint checksums.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Stable mix of a seed with stream labels (epoch index, sample index, ...)
// so derived streams never collide.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    uint64_t h = fnv1a64(&seed, sizeof seed);
    h = fnv1a64(&a, sizeof a, h);
    h = fnv1a64(&b, sizeof b, h);
    return h;
}

inline std::string hex64(uint64_t h) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

template <class T>
uint64_t checksum_values(const std::vector<T>& v) {
    return fnv1a64(v.data(), v.size() * sizeof(T));
}

}  // namespace vwl
