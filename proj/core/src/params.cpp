#include "facor/params.hpp"

#include <cmath>

#include "facor/errors.hpp"
#include "facor/rng.hpp"

namespace facor {

namespace {

void init_linear(LinearParam& p, std::size_t out, std::size_t in,
                 const FaCoRConfig& config, Rng& rng) {
    p.weight = Tensor({out, in});
    p.bias = Tensor({out});
    if (config.init_mode == InitMode::BoundedNormal) {
        for (std::size_t i = 0; i < p.weight.size(); ++i) {
            p.weight[i] = rng.clipped_normal(config.bounded_lo, config.bounded_hi);
        }
        for (std::size_t i = 0; i < p.bias.size(); ++i) {
            p.bias[i] = rng.clipped_normal(config.bounded_lo, config.bounded_hi);
        }
    } else {
        // Glorot-uniform weights, zero bias.
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (std::size_t i = 0; i < p.weight.size(); ++i) {
            p.weight[i] = rng.uniform(-bound, bound);
        }
    }
}

void init_ci(CiParams& ci, std::size_t dim, std::size_t reduction,
             const FaCoRConfig& config, Rng& rng) {
    const std::size_t bottleneck = dim / reduction;
    init_linear(ci.reduce, bottleneck, dim, config, rng);
    init_linear(ci.expand, dim, bottleneck, config, rng);
}

void collect(FaCoRParams& p, std::vector<NamedTensor>& out) {
    out.push_back({"proj_a.weight", &p.proj_a.weight});
    out.push_back({"proj_a.bias", &p.proj_a.bias});
    if (p.proj_b) {
        out.push_back({"proj_b.weight", &p.proj_b->weight});
        out.push_back({"proj_b.bias", &p.proj_b->bias});
    }
    out.push_back({"ci_inner.reduce.weight", &p.ci_inner.reduce.weight});
    out.push_back({"ci_inner.reduce.bias", &p.ci_inner.reduce.bias});
    out.push_back({"ci_inner.expand.weight", &p.ci_inner.expand.weight});
    out.push_back({"ci_inner.expand.bias", &p.ci_inner.expand.bias});
    out.push_back({"ci_outer.reduce.weight", &p.ci_outer.reduce.weight});
    out.push_back({"ci_outer.reduce.bias", &p.ci_outer.reduce.bias});
    out.push_back({"ci_outer.expand.weight", &p.ci_outer.expand.weight});
    out.push_back({"ci_outer.expand.bias", &p.ci_outer.expand.bias});
    out.push_back({"gamma", &p.gamma});
}

}  // namespace

std::vector<NamedTensor> FaCoRParams::named_tensors() {
    std::vector<NamedTensor> out;
    collect(*this, out);
    return out;
}

std::vector<ConstNamedTensor> FaCoRParams::named_tensors() const {
    std::vector<NamedTensor> mut;
    collect(const_cast<FaCoRParams&>(*this), mut);
    std::vector<ConstNamedTensor> out;
    out.reserve(mut.size());
    for (const auto& nt : mut) out.push_back({nt.name, nt.tensor});
    return out;
}

FaCoRParams init_params(const FaCoRConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    FaCoRParams p;
    const std::size_t c = config.channels;
    init_linear(p.proj_a, c, c, config, rng);
    if (!config.share_projection) {
        p.proj_b.emplace();
        init_linear(*p.proj_b, c, c, config, rng);
    }
    init_ci(p.ci_inner, c, config.ci_reduction, config, rng);
    init_ci(p.ci_outer, config.fused_dim(), config.ci_reduction, config, rng);
    p.gamma = Tensor({1}, config.gamma_init);
    return p;
}

FaCoRParams zeros_like(const FaCoRParams& params) {
    FaCoRParams z = params;
    zero_all(z);
    return z;
}

void zero_all(FaCoRParams& params) {
    for (auto& nt : params.named_tensors()) nt.tensor->fill(0.0);
}

}  // namespace facor
