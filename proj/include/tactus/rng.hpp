#pragma once

#include <cmath>
#include <cstdint>

namespace tactus {

// Counter-based pseudo-random generator: output i is a hash of (key, i),
// so the full state is two u64 words and any draw is reproducible from
// them. Callers own their generator and thread it explicitly; there is
// no global RNG anywhere in this library.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t counter = 0) : key_(mix_(seed ^ 0x9E3779B97F4A7C15ull)), counter_(counter) {}

    uint64_t next_u64() { return mix_(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    // Standard normal via Box-Muller; consumes two draws, returns one, so
    // the state stays a plain counter.
    double normal() {
        double u = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        double v = uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * v);
    }

    // Independent stream derived from this generator's key; does not
    // advance this generator.
    Rng derive(uint64_t stream) const {
        Rng r(0);
        r.key_ = mix_(key_ ^ mix_(stream + 0x6A09E667F3BCC909ull));
        r.counter_ = 0;
        return r;
    }

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }
    void restore(uint64_t key, uint64_t counter) {
        key_ = key;
        counter_ = counter;
    }

private:
    // splitmix64 finalizer
    static uint64_t mix_(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_;
};

}  // namespace tactus
