// Splittable deterministic random stream.
//
// A SplitMix64 generator (Weyl counter + avalanche mix) with substreams
// derived by hashing the stream key. Substream derivation depends only on
// the key and the index, never on how many values the parent has produced,
// so sharded sampling is reproducible regardless of scheduling.
//
// Gaussian variates use the Marsaglia polar method on our own uniforms;
// std::normal_distribution is implementation-defined and would break the
// bitwise determinism contract.
#pragma once

#include <cstdint>

namespace icl {

class RngStream {
  public:
    explicit RngStream(std::uint64_t seed);

    // Disjoint child stream; stable under any draw history of the parent.
    RngStream substream(std::uint64_t index) const;

    std::uint64_t next_u64();
    double next_uniform();   // strictly inside (0, 1)
    double next_gaussian();  // standard normal

  private:
    std::uint64_t key_;    // immutable stream identity
    std::uint64_t state_;  // advances with each draw
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace icl
