#include "facor/rng.hpp"

#include <cmath>

namespace facor {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

std::uint64_t Rng::next_u64() { return gen_(); }

double Rng::uniform() {
    // 53 random bits -> [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

double Rng::clipped_normal(double lo, double hi) {
    const double mid = 0.5 * (lo + hi);
    const double sigma = (hi - lo) / 4.0;
    const double v = mid + sigma * normal();
    if (v < lo) return lo;
    if (v > hi) return hi;
    return v;
}

std::size_t Rng::index(std::size_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % n);
}

Rng Rng::child(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x51ed2701ULL)));
}

}  // namespace facor
