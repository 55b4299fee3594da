#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace gcae {

// splitmix64, used to derive independent substream seeds from (run seed, tag).
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Seed for a named substream. Distinct (seed, tag, index) triples give
// decorrelated streams, so per-component RNG ownership stays deterministic
// no matter how work is scheduled across threads.
inline uint64_t derive_seed(uint64_t run_seed, const std::string& tag, uint64_t index = 0) {
    uint64_t h = splitmix64(run_seed ^ fnv1a64(tag));
    return splitmix64(h ^ (0x517cc1b727220a95ULL * (index + 1)));
}

class RngStream {
public:
    RngStream() : engine_(0) {}
    explicit RngStream(uint64_t seed) : engine_(seed) {}

    std::mt19937_64& engine() { return engine_; }

    float uniform(float lo, float hi) {
        std::uniform_real_distribution<float> d(lo, hi);
        return d(engine_);
    }

    float normal(float mean = 0.0f, float stddev = 1.0f) {
        std::normal_distribution<float> d(mean, stddev);
        return d(engine_);
    }

    // Uniform integer in [0, n).
    int64_t index(int64_t n) {
        std::uniform_int_distribution<int64_t> d(0, n - 1);
        return d(engine_);
    }

    void fill_normal(float* out, int64_t n, float mean = 0.0f, float stddev = 1.0f) {
        std::normal_distribution<float> d(mean, stddev);
        for (int64_t i = 0; i < n; ++i) out[i] = d(engine_);
    }

    void fill_uniform(float* out, int64_t n, float lo, float hi) {
        std::uniform_real_distribution<float> d(lo, hi);
        for (int64_t i = 0; i < n; ++i) out[i] = d(engine_);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace gcae
