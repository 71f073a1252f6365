#include "subsel/rng.hpp"

#include <cmath>

#include "subsel/errors.hpp"

namespace subsel {

namespace {

constexpr std::uint32_t kPhiloxW32A = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW32B = 0xBB67AE85u;
constexpr std::uint32_t kPhiloxM4x32A = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM4x32B = 0xCD9E8D57u;

inline void mul_hi_lo(std::uint32_t a, std::uint32_t b, std::uint32_t* lo, std::uint32_t* hi) {
    const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
    *lo = static_cast<std::uint32_t>(product);
    *hi = static_cast<std::uint32_t>(product >> 32);
}

inline void philox_round(std::array<std::uint32_t, 4>& ctr, const std::array<std::uint32_t, 2>& key) {
    std::uint32_t lo0, hi0, lo1, hi1;
    mul_hi_lo(kPhiloxM4x32A, ctr[0], &lo0, &hi0);
    mul_hi_lo(kPhiloxM4x32B, ctr[2], &lo1, &hi1);
    const std::array<std::uint32_t, 4> out = {
        hi1 ^ ctr[1] ^ key[0],
        lo1,
        hi0 ^ ctr[3] ^ key[1],
        lo0,
    };
    ctr = out;
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t key) {
    key_[0] = static_cast<std::uint32_t>(key);
    key_[1] = static_cast<std::uint32_t>(key >> 32);
}

RngStream RngStream::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t key = splitmix64(seed);
    for (std::uint64_t id : ids) {
        key = splitmix64(key ^ splitmix64(id + 0x51ED2701A42C9D6Bull));
    }
    return RngStream(key);
}

void RngStream::refill() {
    std::array<std::uint32_t, 4> ctr = counter_;
    std::array<std::uint32_t, 2> key = key_;
    for (int round = 0; round < 10; ++round) {
        philox_round(ctr, key);
        key[0] += kPhiloxW32A;
        key[1] += kPhiloxW32B;
    }
    block_ = ctr;
    block_pos_ = 0;
    // 128-bit counter increment
    if (++counter_[0] == 0u) {
        if (++counter_[1] == 0u) {
            if (++counter_[2] == 0u) {
                ++counter_[3];
            }
        }
    }
}

std::uint32_t RngStream::next_u32() {
    if (block_pos_ >= 4) {
        refill();
    }
    return block_[block_pos_++];
}

std::uint64_t RngStream::next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
}

double RngStream::uniform() {
    // (x + 0.5) / 2^32 lies strictly inside (0, 1); safe under log().
    return (static_cast<double>(next_u32()) + 0.5) * 0x1.0p-32;
}

double RngStream::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

std::uint64_t RngStream::uniform_int(std::uint64_t bound) {
    if (bound == 0) {
        throw ConfigError("uniform_int: bound must be >= 1");
    }
    // Reject the low 2^64 mod bound values; what remains splits evenly.
    const std::uint64_t rem = (0 - bound) % bound;
    std::uint64_t draw;
    do {
        draw = next_u64();
    } while (draw < rem);
    return draw % bound;
}

}  // namespace subsel
