#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

namespace grd {

/// splitmix64 finalizer; used to expand seeds and to derive child streams.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives a child seed from a parent seed and a purpose label.
///
/// Seeding tree: every random stream in the project is obtained by walking
/// labels down from the master seed, e.g.
/// `derive_seed(derive_seed(master, "trial/3"), "covariates/in")`.
/// The derivation is a pure function of (parent, label), so streams are
/// stable across platforms and independent of evaluation order.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

/// xoshiro256** generator. Satisfies UniformRandomBitGenerator, but all
/// distributions used by the project are implemented as member functions so
/// that sampled values do not depend on the standard library vendor.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()();

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n);
    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi);
    /// Standard normal via Box-Muller (second variate cached).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    /// Draws an index from unnormalized non-negative weights.
    std::size_t categorical(std::span<const double> probabilities);

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::array<std::uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace grd
