#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "facor/config.hpp"
#include "facor/tensor.hpp"

namespace facor {

// One 1x1 convolution: weight [out, in] applied per position, plus bias.
struct LinearParam {
    Tensor weight;
    Tensor bias;
};

// Channel Interaction gate: x -> sigmoid(expand(relu(reduce(x)))) * x.
struct CiParams {
    LinearParam reduce;  // in -> in / reduction
    LinearParam expand;  // in / reduction -> in
};

struct FaCoRParams {
    LinearParam proj_a;                 // projection of the middle-layer map
    std::optional<LinearParam> proj_b;  // engaged when projections are unshared
    CiParams ci_inner;                  // C-gate on the pooled attention output
    CiParams ci_outer;                  // 2C-gate on the fused vector
    Tensor gamma;                       // scalar residual gate, shape {1}

    double gamma_value() const { return gamma[0]; }

    // Stable enumeration used by the optimizer, checkpointing and the
    // gradient checker.
    std::vector<NamedTensor> named_tensors();
    std::vector<ConstNamedTensor> named_tensors() const;
};

FaCoRParams init_params(const FaCoRConfig& config, std::uint64_t seed);

// Same shapes, all zeros; gradient and momentum buffers.
FaCoRParams zeros_like(const FaCoRParams& params);
void zero_all(FaCoRParams& params);

}  // namespace facor
