#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace subsel {

std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based random stream (Philox 4x32-10, Salmon et al. SC'11).
///
/// A stream is a pure function of its 64-bit key and an internal counter,
/// so streams derived from distinct id tuples are independent and can be
/// consumed in parallel without any cross-thread state. Used everywhere
/// randomness must be reproducible under concurrency.
class RngStream {
public:
    explicit RngStream(std::uint64_t key);

    /// Derives a stream key by hashing `seed` together with a tuple of
    /// stream ids (e.g. {pass, layer} or {image_index}).
    static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids);

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    /// Uniform double in the open interval (0, 1).
    double uniform();

    /// Standard normal via Box-Muller.
    double normal();

    /// Uniform integer in [0, bound), bound >= 1. Unbiased (rejection).
    std::uint64_t uniform_int(std::uint64_t bound);

private:
    void refill();

    std::array<std::uint32_t, 2> key_{};
    std::array<std::uint32_t, 4> counter_{};
    std::array<std::uint32_t, 4> block_{};
    int block_pos_ = 4;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace subsel
