#pragma once

// Shared plumbing: error types, deterministic RNG helpers, a fixed-order
// parallel_for, and the fast exp used by the attention softmax.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mrt {

// ---------------------------------------------------------------------------
// errors
//
// The CLI maps these onto exit codes: validation/config/parse -> 1,
// numeric failure -> 2, I/O failure -> 3.

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : ValidationError {
    explicit ShapeError(const std::string& msg) : ValidationError(msg) {}
};

struct ConfigError : ValidationError {
    explicit ConfigError(const std::string& msg) : ValidationError(msg) {}
};

struct ParseError : ValidationError {
    explicit ParseError(const std::string& msg) : ValidationError(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// deterministic RNG
//
// mt19937_64 is fully specified by the standard; the distributions below are
// hand-rolled so results are identical across standard libraries.

using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed, e.g. per sample or per epoch.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0) {
    return splitmix64(splitmix64(base ^ (a * 0x9e3779b97f4a7c15ULL)) ^ b);
}

// FNV-1a over raw bytes; used to fingerprint configurations in file headers.
inline uint64_t fnv1a64(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Uniform in [0,1) with 53-bit resolution.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n) by rejection; n > 0.
inline uint64_t uniform_index(Rng& rng, uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = rng();
    while (v >= limit) v = rng();
    return v % n;
}

// Box-Muller without caching (two draws per value; deterministic).
inline double normal01(Rng& rng) {
    double u1 = 1.0 - uniform01(rng);  // (0,1]
    double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Truncated normal at +/-2 sigma, BERT-style init.
inline double trunc_normal(Rng& rng, double stddev) {
    double v = normal01(rng);
    while (std::fabs(v) > 2.0) v = normal01(rng);
    return v * stddev;
}

// Fisher-Yates draw of k distinct indices from [0, n).
inline std::vector<int> sample_distinct(Rng& rng, int n, int k) {
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out(k);
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(uniform_index(rng, static_cast<uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
        out[i] = pool[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// fast exp
//
// exp(x) for x <= 0 via 2^k * 2^f reduction with a degree-9 polynomial on
// |f*ln2| <= ln2/2. Relative error ~1e-12, considerably faster than
// std::exp in the softmax inner loop and trivially deterministic.

inline double fast_exp_neg(double x) {
    if (x < -745.0) return 0.0;
    const double log2e = 1.4426950408889634074;
    const double ln2_hi = 6.93147180369123816490e-01;
    const double ln2_lo = 1.90821492927058770002e-10;
    const double kd = std::nearbyint(x * log2e);
    const double f = (x - kd * ln2_hi) - kd * ln2_lo;
    // exp(f) on |f| <= 0.3466 by Horner-evaluated Taylor series.
    double p = 1.0 / 362880.0;
    p = p * f + 1.0 / 40320.0;
    p = p * f + 1.0 / 5040.0;
    p = p * f + 1.0 / 720.0;
    p = p * f + 1.0 / 120.0;
    p = p * f + 1.0 / 24.0;
    p = p * f + 1.0 / 6.0;
    p = p * f + 0.5;
    p = p * f + 1.0;
    p = p * f + 1.0;
    return std::ldexp(p, static_cast<int>(kd));
}

// ---------------------------------------------------------------------------
// fixed-order parallelism
//
// Work is split into fixed-size chunks; chunk boundaries do not depend on the
// thread count, so any reductions combined in chunk order are bitwise
// reproducible for every thread count.

inline void parallel_for(int64_t n, int threads, const std::function<void(int64_t, int64_t)>& fn,
                         int64_t chunk = 0) {
    if (n <= 0) return;
    if (threads <= 1) {
        fn(0, n);
        return;
    }
    if (chunk <= 0) chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    std::atomic<int64_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const int64_t lo = next.fetch_add(chunk);
            if (lo >= n) break;
            fn(lo, std::min(lo + chunk, n));
        }
    };
    const int nt = static_cast<int>(std::min<int64_t>(threads, (n + chunk - 1) / chunk));
    pool.reserve(static_cast<size_t>(nt));
    for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// little-endian binary file helpers

namespace detail {

struct BinWriter {
    std::ofstream out;
    explicit BinWriter(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw IoError("cannot write " + path);
    }
    void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void f64(double v) { bytes(&v, 8); }
    void f64s(const double* p, size_t n) { bytes(p, n * 8); }
    void f32(float v) { bytes(&v, 4); }
};

struct BinReader {
    std::ifstream in;
    std::string path;
    explicit BinReader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IoError("cannot open " + p);
    }
    void bytes(void* p, size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n))
            throw ParseError(path + ": truncated (wanted " + std::to_string(n) + " bytes)");
    }
    uint8_t u8() { uint8_t v; bytes(&v, 1); return v; }
    uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
    uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
    double f64() { double v; bytes(&v, 8); return v; }
    void f64s(double* p, size_t n) { bytes(p, n * 8); }
    float f32() { float v; bytes(&v, 4); return v; }
};

}  // namespace detail

}  // namespace mrt
