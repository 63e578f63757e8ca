#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace demf {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Independent substream seed for (base, stream). Used wherever a component
// needs its own reproducible randomness derived from a named seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes) noexcept;

// Small, portable PRNG (xoshiro256**). All distributions are implemented
// here so results do not depend on the standard library vendor.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept;

    std::uint64_t next() noexcept;
    double uniform() noexcept;                      // [0, 1)
    double uniform(double lo, double hi) noexcept;  // [lo, hi)
    double normal() noexcept;                       // N(0, 1)
    std::uint64_t below(std::uint64_t n) noexcept;  // [0, n)
    bool bernoulli(double p) noexcept { return uniform() < p; }

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace demf
