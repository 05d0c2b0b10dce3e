#pragma once

#include <vector>

#include "facor/config.hpp"
#include "facor/params.hpp"

namespace facor {

using Vec = std::vector<double>;

// H x W x C activation grid; positions flatten row-major over (h, w).
struct FeatureMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> values;  // [(h * W + w) * C + c]

    FeatureMap() = default;
    FeatureMap(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
        : height(h), width(w), channels(c), values(h * w * c, fill) {}

    std::size_t positions() const { return height * width; }
    double& at(std::size_t pos, std::size_t c) { return values[pos * channels + c]; }
    double at(std::size_t pos, std::size_t c) const { return values[pos * channels + c]; }
    bool same_dims(const FeatureMap& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    void validate() const;  // dims >= 1, finite entries
};

// Row-stochastic attention beta[j][i]: weight the j-th target position puts
// on the i-th source position. `score` keeps the raw pre-softmax matrix
// s[i][j] (empty when dropped).
struct AttentionMap {
    std::size_t n = 0;
    std::vector<double> beta;   // [j * n + i]
    std::vector<double> score;  // [i * n + j]

    bool has_score() const { return !score.empty(); }
    void validate(double row_tol = 1e-6) const;
};

struct PairEmbedding {
    Vec x_out_a;
    Vec x_out_b;
    AttentionMap attention;
};

// --- the four stage operations -------------------------------------------

// 1x1 convolution over positions: F[n] = W * X[n] + b.
FeatureMap project_features(const FeatureMap& x, const LinearParam& proj);

// s_ij = <Fa_i, Fb_j>; beta[j][i] = softmax over i for each fixed j,
// stabilized by subtracting the per-column maximum.
AttentionMap cross_attention(const FeatureMap& fa, const FeatureMap& fb);

// O_j = X_j + gamma * sum_i beta[j][i] X_i (beta^T instead when transposed).
FeatureMap attend(const FeatureMap& x, const AttentionMap& attention, double gamma,
                  bool transpose_beta = false);

// sigmoid(expand(relu(reduce(x)))) * x, elementwise.
Vec channel_interaction(const Vec& x_hat, const CiParams& ci);

// --- the fused pair forward -----------------------------------------------

PairEmbedding facor_forward(const FeatureMap& xa, const FeatureMap& xb, const Vec& ra,
                            const Vec& rb, const FaCoRParams& params,
                            const FaCoRConfig& config);

// Forward with every intermediate kept for the hand-written backward.
struct CiTrace {
    Vec input;
    Vec pre_reduce;  // reduce(x) before relu
    Vec hidden;      // relu output
    Vec gate;        // sigmoid output; empty when the gate is bypassed
    Vec output;
};

struct FacorTrace {
    FeatureMap xa, xb;
    FeatureMap fa, fb;
    AttentionMap attention;
    FeatureMap attended_a, attended_b;  // beta (or beta^T) times X, pre-residual
    FeatureMap oa, ob;
    Vec ra, rb;
    Vec pooled_a, pooled_b;
    CiTrace inner_a, inner_b;
    Vec fused_a, fused_b;  // concat(inner output, r)
    CiTrace outer_a, outer_b;

    PairEmbedding out() const;
};

FacorTrace facor_forward_trace(const FeatureMap& xa, const FeatureMap& xb, const Vec& ra,
                               const Vec& rb, const FaCoRParams& params,
                               const FaCoRConfig& config);

// Upstream gradients entering the pair. d_beta / d_score may be empty (zero).
struct FacorCotangents {
    Vec d_x_out_a;
    Vec d_x_out_b;
    std::vector<double> d_beta;   // [j * n + i]
    std::vector<double> d_score;  // [i * n + j]
};

struct FacorInputGrads {
    FeatureMap d_xa, d_xb;
    Vec d_ra, d_rb;
};

// Accumulates parameter gradients into `grads` (zeros_like(params) layout)
// and returns gradients with respect to the four inputs.
FacorInputGrads facor_backward(const FacorTrace& trace, const FaCoRParams& params,
                               const FaCoRConfig& config, const FacorCotangents& cot,
                               FaCoRParams& grads);

}  // namespace facor
