#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "pedgen/common.hpp"

namespace pedgen {

// Counter-based splittable generator. A stream is a 64-bit key plus a draw
// counter; draw i is a hash of (key, i), so streams never share state and a
// child stream derived with split() is independent of its parent's position.
// Every stochastic operation in the project takes an explicit stream, which
// makes training and sampling bit-reproducible.
class RngStream {
public:
    RngStream() : RngStream(0) {}
    explicit RngStream(std::uint64_t seed) : key_(finalize(seed ^ 0x5bf0'3635'd1f6'2b11ULL)) {}

    // Independent child stream; the parent is left untouched.
    [[nodiscard]] RngStream split(std::uint64_t lane) const {
        RngStream child;
        child.key_ = finalize(key_ ^ finalize(lane + 0x9e37'79b9'7f4a'7c15ULL));
        child.counter_ = 0;
        return child;
    }

    [[nodiscard]] RngStream split(std::string_view name) const {
        // FNV-1a over the name, then the usual key derivation.
        std::uint64_t h = 0xcbf2'9ce4'8422'2325ULL;
        for (unsigned char c : name) {
            h ^= c;
            h *= 0x0000'0100'0000'01b3ULL;
        }
        return split(h);
    }

    std::uint64_t next_u64() {
        std::uint64_t v = key_ + (++counter_) * 0x9e37'79b9'7f4a'7c15ULL;
        return finalize(v);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; two uniforms per draw, no cached spare,
    // so the draw count per call is fixed.
    double normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // Uniform integer in [0, n), rejection sampled.
    std::uint64_t below(std::uint64_t n) {
        require(n > 0, "RngStream::below: n must be positive");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

private:
    static std::uint64_t finalize(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58'476d'1ce4'e5b9ULL;
        z ^= z >> 27;
        z *= 0x94d0'49bb'1331'11ebULL;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace pedgen
