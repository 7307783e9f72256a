#include "cortex3d/random.hpp"

#include <cmath>
#include <numbers>

namespace cortex3d {

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("Rng::below needs n >= 1");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

template <typename T>
BasicTensor<T> glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    if (fan_in + fan_out == 0) throw ArgumentError("glorot_uniform: zero fan");
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    BasicTensor<T> out(shape);
    for (auto& v : out.data()) v = static_cast<T>(rng.uniform(-a, a));
    return out;
}

template BasicTensor<float> glorot_uniform(const Shape&, std::size_t, std::size_t, Rng&);
template BasicTensor<double> glorot_uniform(const Shape&, std::size_t, std::size_t, Rng&);

}  // namespace cortex3d
