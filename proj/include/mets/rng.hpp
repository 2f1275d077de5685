#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

namespace mets {

/// xoshiro256** generator seeded through splitmix64.
///
/// A stream is identified by (seed, stream_id); stream k starts k jumps of
/// 2^128 steps past stream 0, so streams never overlap in practice.
/// Satisfies UniformRandomBitGenerator.
class RngStream
{
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return next(); }
    result_type next();

    /// Uniform on the open interval (0, 1).
    double uniform();

    /// Standard normal (Box-Muller, second variate cached).
    double normal();

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

private:
    void jump();

    std::array<std::uint64_t, 4> s_{};
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Stable 64-bit FNV-1a hash, used to derive per-request seeds.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace mets
