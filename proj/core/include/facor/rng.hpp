#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace facor {

// Deterministic RNG used wherever a seed appears. Wraps mt19937_64 with
// explicit uniform/normal transforms because std::*_distribution output is
// implementation-defined and would break cross-platform reproducibility.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform();                   // [0, 1)
    double uniform(double lo, double hi);
    double normal();                    // standard normal (Box-Muller)
    // Normal centered on the range midpoint with sigma = (hi-lo)/4,
    // clipped to [lo, hi].
    double clipped_normal(double lo, double hi);
    std::size_t index(std::size_t n);   // uniform in [0, n), n > 0

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    // Independent stream derived from the construction seed (not from the
    // current state), so child(k) is stable no matter how much of the
    // parent stream was consumed.
    Rng child(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace facor
