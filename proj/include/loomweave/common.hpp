#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace loomweave {

[[noreturn]] void fail(const char* file, int line, const std::string& msg);

#define LW_CHECK(cond, msg)                                \
    do {                                                   \
        if (!(cond)) ::loomweave::fail(__FILE__, __LINE__, (msg)); \
    } while (0)

constexpr double kPi = 3.14159265358979323846;

/// Seeded random stream with explicit draw primitives so that datasets,
/// initializations and training noise are reproducible bit-for-bit.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : engine_(seed) {}

    double uniform() {  // [0, 1)
        return (engine_() >> 11) * (1.0 / 9007199254740992.0);
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Box-Muller, no cached spare (keeps the draw sequence position-independent).
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }
    int next_int(int n) {  // [0, n)
        return static_cast<int>(uniform() * n) % n;
    }
    uint64_t next_u64() { return engine_(); }

    /// Decorrelated child stream (e.g. one per training step or per scene).
    static uint64_t mix(uint64_t seed, uint64_t salt) {
        uint64_t h = seed ^ (salt + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
        h ^= h >> 33; h *= 0xff51afd7ed558ccdULL;
        h ^= h >> 33; h *= 0xc4ceb9fe1a85ec53ULL;
        h ^= h >> 33;
        return h;
    }

private:
    std::mt19937_64 engine_;
};

/// Global thread configuration. Fixed thread counts keep every reduction
/// order stable, which is what LOOMWEAVE_DETERMINISTIC pins down.
struct Threading {
    static void configure(int threads);  // 0 = auto (hardware), capped at 8
    static int threads();
    static bool deterministic_env();     // LOOMWEAVE_DETERMINISTIC=1
};

}  // namespace loomweave
