#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace pricetree {

// SplitMix64 finalizer. Used both as the stream generator and to derive
// independent substreams from (seed, key) pairs.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a; stable across platforms and runs, unlike std::hash.
constexpr std::uint64_t hash_label(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Small-state deterministic stream (8 bytes), cheap enough to keep one per
// tree node. Satisfies UniformRandomBitGenerator.
class Stream {
public:
    using result_type = std::uint64_t;

    constexpr Stream() noexcept = default;
    constexpr explicit Stream(std::uint64_t state) noexcept : state_(state) {}

    // Substream for `key` under run seed `seed`.
    static constexpr Stream derive(std::uint64_t seed, std::uint64_t key) noexcept {
        return Stream(mix64(mix64(seed) ^ mix64(key ^ 0x5851f42d4c957f2dULL)));
    }
    static constexpr Stream derive(std::uint64_t seed, std::string_view label) noexcept {
        return derive(seed, hash_label(label));
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept {
        return std::numeric_limits<result_type>::max();
    }

    constexpr result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform on [0, 1) with 53 random bits; bit-reproducible everywhere.
    constexpr double uniform() noexcept {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n), n > 0 (Lemire's multiply-shift, unbiased
    // enough for n far below 2^32).
    constexpr std::uint64_t below(std::uint64_t n) noexcept {
        __extension__ using wide = unsigned __int128;
        return static_cast<std::uint64_t>((static_cast<wide>((*this)()) * n) >> 64);
    }

    constexpr std::uint64_t state() const noexcept { return state_; }

    friend constexpr bool operator==(const Stream&, const Stream&) = default;

private:
    std::uint64_t state_ = 0;
};

} // namespace pricetree
