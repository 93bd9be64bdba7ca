#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

namespace noprop {

// Counter-based pseudo-random stream. A stream is fully identified by a
// 64-bit key derived from (seed, name, indices...); drawing the n-th value
// never depends on execution order, so independent workers that derive the
// same keys reproduce each other exactly.
class RngStream {
  public:
    RngStream() = default;
    explicit RngStream(std::uint64_t key, std::uint64_t cursor = 0) : key_(key), cursor_(cursor) {}

    std::uint64_t key() const { return key_; }
    std::uint64_t cursor() const { return cursor_; }

    std::uint64_t next_u64() {
        std::uint64_t x = key_ + (++cursor_) * 0x9e3779b97f4a7c15ull;
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebull;
        x ^= x >> 31;
        return x;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal, Box-Muller. Draws two uniforms per value so the
    // stream has no hidden cache state; the cursor alone is the state.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  private:
    std::uint64_t key_ = 0;
    std::uint64_t cursor_ = 0;
};

namespace detail {
inline std::uint64_t mix64(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return h;
}
}  // namespace detail

// Derive a stream from a master seed, a purpose name, and integer indices.
inline RngStream make_stream(std::uint64_t seed, std::string_view name,
                             std::initializer_list<std::uint64_t> idx = {}) {
    std::uint64_t h = detail::mix64(0x2545f4914f6cdd1dull, seed);
    for (char c : name) h = detail::mix64(h, static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    for (std::uint64_t v : idx) h = detail::mix64(h, v);
    return RngStream(h);
}

}  // namespace noprop
