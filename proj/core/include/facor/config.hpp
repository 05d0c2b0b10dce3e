#pragma once

#include <cstddef>

namespace facor {

enum class InitMode { Standard, BoundedNormal };

// Dimensions and switches of the pair-fusion model. `embed_dim` is the
// backbone final-layer width; it must equal `channels` so the fused output
// (pooled attention vector concatenated with r) has length 2C.
struct FaCoRConfig {
    std::size_t height = 7;
    std::size_t width = 7;
    std::size_t channels = 512;
    std::size_t embed_dim = 512;
    std::size_t ci_reduction = 4;       // bottleneck ratio of the channel gates
    double gamma_init = 0.0;
    InitMode init_mode = InitMode::BoundedNormal;
    double bounded_lo = -0.05;
    double bounded_hi = 0.05;
    bool transpose_beta_for_b = false;  // attend the b branch with beta^T
    bool share_projection = true;       // one 1x1 projection for both branches
    bool bypass_ci = false;             // identity instead of the channel gates
                                        // (diagnostic mode, keeps the model linear)

    std::size_t positions() const { return height * width; }
    std::size_t fused_dim() const { return channels + embed_dim; }

    void validate() const;

    // Desk-scale dims used throughout the tests.
    static FaCoRConfig toy();
};

}  // namespace facor
