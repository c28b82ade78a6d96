#include "icl/rng.hpp"

#include <cmath>

namespace icl {
namespace {

constexpr std::uint64_t kWeyl = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : key_(seed), state_(seed) {}

RngStream RngStream::substream(std::uint64_t index) const {
    // Fold the index into the key through two mixing rounds.
    return RngStream(mix64(mix64(key_ ^ kWeyl) + (index + 1) * 0xD1B54A32D192ED03ULL));
}

std::uint64_t RngStream::next_u64() {
    state_ += kWeyl;
    return mix64(state_);
}

double RngStream::next_uniform() {
    // 53-bit mantissa, offset by half an ulp so 0 and 1 are excluded.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * next_uniform() - 1.0;
        v = 2.0 * next_uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

}  // namespace icl
