#include "facor/facor.hpp"

#include <algorithm>
#include <cmath>

#include "facor/errors.hpp"

namespace facor {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_linear_shapes(const LinearParam& p, std::size_t out, std::size_t in,
                         const char* what) {
    if (p.weight.shape() != std::vector<std::size_t>{out, in} ||
        p.bias.shape() != std::vector<std::size_t>{out}) {
        throw ConfigError(std::string(what) + ": weight/bias shapes do not match input");
    }
}

// y = W x + b
Vec apply_linear(const LinearParam& p, const Vec& x) {
    const std::size_t out = p.weight.dim(0);
    const std::size_t in = p.weight.dim(1);
    Vec y(out);
    for (std::size_t o = 0; o < out; ++o) {
        double acc = p.bias[o];
        const double* w = p.weight.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
        y[o] = acc;
    }
    return y;
}

}  // namespace

void FeatureMap::validate() const {
    if (height < 1 || width < 1 || channels < 1) {
        throw ConfigError("feature map dims must all be >= 1");
    }
    if (values.size() != height * width * channels) {
        throw ConfigError("feature map storage does not match dims");
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("feature map contains non-finite values");
    }
}

void AttentionMap::validate(double row_tol) const {
    if (beta.size() != n * n) throw ConfigError("attention map storage does not match n");
    for (std::size_t j = 0; j < n; ++j) {
        double row_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double b = beta[j * n + i];
            if (!std::isfinite(b)) throw NumericError("attention map contains non-finite values");
            if (b <= 0.0 || b >= 1.0) {
                throw NumericError("attention entries must lie strictly in (0,1)");
            }
            row_sum += b;
        }
        if (std::abs(row_sum - 1.0) > row_tol) {
            throw NumericError("attention row does not sum to 1");
        }
    }
}

FeatureMap project_features(const FeatureMap& x, const LinearParam& proj) {
    const std::size_t c = x.channels;
    check_linear_shapes(proj, c, c, "project_features");
    FeatureMap f(x.height, x.width, c);
    const std::size_t n = x.positions();
    for (std::size_t pos = 0; pos < n; ++pos) {
        const double* xp = x.values.data() + pos * c;
        double* fp = f.values.data() + pos * c;
        for (std::size_t o = 0; o < c; ++o) {
            double acc = proj.bias[o];
            const double* w = proj.weight.data() + o * c;
            for (std::size_t i = 0; i < c; ++i) acc += w[i] * xp[i];
            fp[o] = acc;
        }
    }
    return f;
}

AttentionMap cross_attention(const FeatureMap& fa, const FeatureMap& fb) {
    if (!fa.same_dims(fb)) throw ConfigError("cross_attention: feature maps disagree in dims");
    for (double v : fa.values) {
        if (!std::isfinite(v)) throw NumericError("cross_attention: non-finite input");
    }
    for (double v : fb.values) {
        if (!std::isfinite(v)) throw NumericError("cross_attention: non-finite input");
    }

    const std::size_t n = fa.positions();
    const std::size_t c = fa.channels;
    AttentionMap map;
    map.n = n;
    map.score.assign(n * n, 0.0);
    map.beta.assign(n * n, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = fa.values.data() + i * c;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = fb.values.data() + j * c;
            double dot = 0.0;
            for (std::size_t k = 0; k < c; ++k) dot += ai[k] * bj[k];
            map.score[i * n + j] = dot;
        }
    }

    // Column-wise softmax over i, stabilized with the column max.
    for (std::size_t j = 0; j < n; ++j) {
        double col_max = map.score[j];  // i = 0
        for (std::size_t i = 1; i < n; ++i) {
            col_max = std::max(col_max, map.score[i * n + j]);
        }
        double denom = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = std::exp(map.score[i * n + j] - col_max);
            map.beta[j * n + i] = e;
            denom += e;
        }
        for (std::size_t i = 0; i < n; ++i) map.beta[j * n + i] /= denom;
    }
    return map;
}

FeatureMap attend(const FeatureMap& x, const AttentionMap& attention, double gamma,
                  bool transpose_beta) {
    const std::size_t n = x.positions();
    const std::size_t c = x.channels;
    if (attention.n != n) throw ConfigError("attend: attention size does not match positions");

    FeatureMap o = x;
    for (std::size_t j = 0; j < n; ++j) {
        double* oj = o.values.data() + j * c;
        for (std::size_t i = 0; i < n; ++i) {
            const double b = transpose_beta ? attention.beta[i * n + j]
                                            : attention.beta[j * n + i];
            const double* xi = x.values.data() + i * c;
            for (std::size_t k = 0; k < c; ++k) oj[k] += gamma * b * xi[k];
        }
    }
    return o;
}

Vec channel_interaction(const Vec& x_hat, const CiParams& ci) {
    const std::size_t dim = x_hat.size();
    const std::size_t bottleneck = ci.reduce.weight.dim(0);
    check_linear_shapes(ci.reduce, bottleneck, dim, "channel_interaction reduce");
    check_linear_shapes(ci.expand, dim, bottleneck, "channel_interaction expand");

    Vec hidden = apply_linear(ci.reduce, x_hat);
    for (double& h : hidden) h = std::max(h, 0.0);
    Vec gate = apply_linear(ci.expand, hidden);
    Vec out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = sigmoid(gate[i]) * x_hat[i];
    return out;
}

namespace {

CiTrace ci_forward_trace(const Vec& input, const CiParams& ci, bool bypass) {
    CiTrace t;
    t.input = input;
    if (bypass) {
        t.output = input;
        return t;
    }
    const std::size_t dim = input.size();
    const std::size_t bottleneck = ci.reduce.weight.dim(0);
    check_linear_shapes(ci.reduce, bottleneck, dim, "channel_interaction reduce");
    check_linear_shapes(ci.expand, dim, bottleneck, "channel_interaction expand");
    t.pre_reduce = apply_linear(ci.reduce, input);
    t.hidden = t.pre_reduce;
    for (double& h : t.hidden) h = std::max(h, 0.0);
    Vec pre_gate = apply_linear(ci.expand, t.hidden);
    t.gate.resize(dim);
    t.output.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        t.gate[i] = sigmoid(pre_gate[i]);
        t.output[i] = t.gate[i] * input[i];
    }
    return t;
}

// Returns d input; accumulates parameter gradients.
Vec ci_backward(const CiTrace& t, const CiParams& ci, const Vec& d_out, CiParams& grads) {
    if (t.gate.empty()) return d_out;  // bypassed gate

    const std::size_t dim = t.input.size();
    const std::size_t bottleneck = ci.reduce.weight.dim(0);
    Vec d_in(dim);
    Vec d_pre_gate(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        d_in[i] = d_out[i] * t.gate[i];
        const double d_gate = d_out[i] * t.input[i];
        d_pre_gate[i] = d_gate * t.gate[i] * (1.0 - t.gate[i]);
    }
    Vec d_hidden(bottleneck, 0.0);
    for (std::size_t o = 0; o < dim; ++o) {
        grads.expand.bias[o] += d_pre_gate[o];
        for (std::size_t k = 0; k < bottleneck; ++k) {
            grads.expand.weight.at(o, k) += d_pre_gate[o] * t.hidden[k];
            d_hidden[k] += ci.expand.weight.at(o, k) * d_pre_gate[o];
        }
    }
    for (std::size_t k = 0; k < bottleneck; ++k) {
        const double d_pre = t.pre_reduce[k] > 0.0 ? d_hidden[k] : 0.0;
        grads.reduce.bias[k] += d_pre;
        for (std::size_t c = 0; c < dim; ++c) {
            grads.reduce.weight.at(k, c) += d_pre * t.input[c];
            d_in[c] += ci.reduce.weight.at(k, c) * d_pre;
        }
    }
    return d_in;
}

Vec average_pool(const FeatureMap& m) {
    Vec pooled(m.channels, 0.0);
    const std::size_t n = m.positions();
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t c = 0; c < m.channels; ++c) pooled[c] += m.at(pos, c);
    }
    for (double& v : pooled) v /= static_cast<double>(n);
    return pooled;
}

Vec concat(const Vec& a, const Vec& b) {
    Vec out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

// attended = B * X with B = beta (or beta^T); separated from attend() so the
// trace can keep the pre-residual product for the gamma gradient.
FeatureMap attention_product(const FeatureMap& x, const AttentionMap& attention,
                             bool transpose_beta) {
    const std::size_t n = x.positions();
    const std::size_t c = x.channels;
    FeatureMap prod(x.height, x.width, c);
    for (std::size_t j = 0; j < n; ++j) {
        double* pj = prod.values.data() + j * c;
        for (std::size_t i = 0; i < n; ++i) {
            const double b = transpose_beta ? attention.beta[i * n + j]
                                            : attention.beta[j * n + i];
            const double* xi = x.values.data() + i * c;
            for (std::size_t k = 0; k < c; ++k) pj[k] += b * xi[k];
        }
    }
    return prod;
}

void check_forward_inputs(const FeatureMap& xa, const FeatureMap& xb, const Vec& ra,
                          const Vec& rb, const FaCoRConfig& config) {
    config.validate();
    if (xa.height != config.height || xa.width != config.width ||
        xa.channels != config.channels || !xa.same_dims(xb)) {
        throw ConfigError("facor_forward: feature maps do not match config dims");
    }
    if (ra.size() != config.embed_dim || rb.size() != config.embed_dim) {
        throw ConfigError("facor_forward: embedding length does not match embed_dim");
    }
}

}  // namespace

PairEmbedding FacorTrace::out() const {
    return PairEmbedding{outer_a.output, outer_b.output, attention};
}

FacorTrace facor_forward_trace(const FeatureMap& xa, const FeatureMap& xb, const Vec& ra,
                               const Vec& rb, const FaCoRParams& params,
                               const FaCoRConfig& config) {
    check_forward_inputs(xa, xb, ra, rb, config);
    const LinearParam& proj_b =
        config.share_projection ? params.proj_a
                                : (params.proj_b ? *params.proj_b
                                                 : throw ConfigError(
                                                       "unshared projection configured but "
                                                       "proj_b parameters are absent"));

    FacorTrace t;
    t.xa = xa;
    t.xb = xb;
    t.ra = ra;
    t.rb = rb;
    t.fa = project_features(xa, params.proj_a);
    t.fb = project_features(xb, proj_b);
    t.attention = cross_attention(t.fa, t.fb);

    const double gamma = params.gamma_value();
    t.attended_a = attention_product(xa, t.attention, false);
    t.attended_b = attention_product(xb, t.attention, config.transpose_beta_for_b);
    t.oa = xa;
    t.ob = xb;
    for (std::size_t i = 0; i < t.oa.values.size(); ++i) {
        t.oa.values[i] += gamma * t.attended_a.values[i];
        t.ob.values[i] += gamma * t.attended_b.values[i];
    }

    t.pooled_a = average_pool(t.oa);
    t.pooled_b = average_pool(t.ob);
    t.inner_a = ci_forward_trace(t.pooled_a, params.ci_inner, config.bypass_ci);
    t.inner_b = ci_forward_trace(t.pooled_b, params.ci_inner, config.bypass_ci);
    t.fused_a = concat(t.inner_a.output, ra);
    t.fused_b = concat(t.inner_b.output, rb);
    t.outer_a = ci_forward_trace(t.fused_a, params.ci_outer, config.bypass_ci);
    t.outer_b = ci_forward_trace(t.fused_b, params.ci_outer, config.bypass_ci);
    return t;
}

PairEmbedding facor_forward(const FeatureMap& xa, const FeatureMap& xb, const Vec& ra,
                            const Vec& rb, const FaCoRParams& params,
                            const FaCoRConfig& config) {
    return facor_forward_trace(xa, xb, ra, rb, params, config).out();
}

FacorInputGrads facor_backward(const FacorTrace& trace, const FaCoRParams& params,
                               const FaCoRConfig& config, const FacorCotangents& cot,
                               FaCoRParams& grads) {
    const std::size_t n = trace.xa.positions();
    const std::size_t c = trace.xa.channels;
    const double gamma = params.gamma_value();

    // Outer gate, then split the fused gradient into (inner output, r).
    const Vec d_fused_a = ci_backward(trace.outer_a, params.ci_outer, cot.d_x_out_a,
                                      grads.ci_outer);
    const Vec d_fused_b = ci_backward(trace.outer_b, params.ci_outer, cot.d_x_out_b,
                                      grads.ci_outer);
    const Vec d_inner_out_a(d_fused_a.begin(), d_fused_a.begin() + static_cast<long>(c));
    const Vec d_inner_out_b(d_fused_b.begin(), d_fused_b.begin() + static_cast<long>(c));
    FacorInputGrads ig;
    ig.d_ra.assign(d_fused_a.begin() + static_cast<long>(c), d_fused_a.end());
    ig.d_rb.assign(d_fused_b.begin() + static_cast<long>(c), d_fused_b.end());

    const Vec d_pooled_a = ci_backward(trace.inner_a, params.ci_inner, d_inner_out_a,
                                       grads.ci_inner);
    const Vec d_pooled_b = ci_backward(trace.inner_b, params.ci_inner, d_inner_out_b,
                                       grads.ci_inner);

    // Average pool spreads the gradient uniformly over positions.
    FeatureMap d_oa(trace.xa.height, trace.xa.width, c);
    FeatureMap d_ob(trace.xa.height, trace.xa.width, c);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t k = 0; k < c; ++k) {
            d_oa.at(pos, k) = d_pooled_a[k] * inv_n;
            d_ob.at(pos, k) = d_pooled_b[k] * inv_n;
        }
    }

    // Residual attention: O = X + gamma * (B X).
    ig.d_xa = d_oa;
    ig.d_xb = d_ob;
    double d_gamma = 0.0;
    for (std::size_t i = 0; i < d_oa.values.size(); ++i) {
        d_gamma += d_oa.values[i] * trace.attended_a.values[i];
        d_gamma += d_ob.values[i] * trace.attended_b.values[i];
    }
    grads.gamma[0] += d_gamma;

    std::vector<double> d_beta(n * n, 0.0);
    if (!cot.d_beta.empty()) {
        if (cot.d_beta.size() != n * n) throw ConfigError("facor_backward: d_beta size mismatch");
        d_beta = cot.d_beta;
    }
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            // a branch always uses beta as stored.
            double acc = 0.0;
            const double* doj = d_oa.values.data() + j * c;
            const double* xi = trace.xa.values.data() + i * c;
            for (std::size_t k = 0; k < c; ++k) acc += doj[k] * xi[k];
            d_beta[j * n + i] += gamma * acc;
            // X gradient through the product: d_X += gamma * B^T dO.
            double* dxi = ig.d_xa.values.data() + i * c;
            const double b = trace.attention.beta[j * n + i];
            for (std::size_t k = 0; k < c; ++k) dxi[k] += gamma * b * doj[k];
        }
    }
    const bool tb = config.transpose_beta_for_b;
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* xi = trace.xb.values.data() + i * c;
            if (!tb) {
                const double* doj = d_ob.values.data() + j * c;
                double acc = 0.0;
                for (std::size_t k = 0; k < c; ++k) acc += doj[k] * xi[k];
                d_beta[j * n + i] += gamma * acc;
                double* dxi = ig.d_xb.values.data() + i * c;
                const double b = trace.attention.beta[j * n + i];
                for (std::size_t k = 0; k < c; ++k) dxi[k] += gamma * b * doj[k];
            } else {
                // O_b uses beta^T: entry beta[j][i] weighs source j for target i.
                const double* doi = d_ob.values.data() + i * c;
                const double* xj = trace.xb.values.data() + j * c;
                double acc = 0.0;
                for (std::size_t k = 0; k < c; ++k) acc += doi[k] * xj[k];
                d_beta[j * n + i] += gamma * acc;
                double* dxj = ig.d_xb.values.data() + j * c;
                const double b = trace.attention.beta[j * n + i];
                for (std::size_t k = 0; k < c; ++k) dxj[k] += gamma * b * doi[k];
            }
        }
    }

    // Softmax backward, column-wise: beta[j][i] = A[i][j] with A the
    // column softmax of the score matrix.
    std::vector<double> d_score(n * n, 0.0);
    if (!cot.d_score.empty()) {
        if (cot.d_score.size() != n * n) {
            throw ConfigError("facor_backward: d_score size mismatch");
        }
        d_score = cot.d_score;
    }
    for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dot += d_beta[j * n + i] * trace.attention.beta[j * n + i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double a = trace.attention.beta[j * n + i];
            d_score[i * n + j] += a * (d_beta[j * n + i] - dot);
        }
    }

    // Scores: s_ij = <Fa_i, Fb_j>.
    FeatureMap d_fa(trace.fa.height, trace.fa.width, c);
    FeatureMap d_fb(trace.fa.height, trace.fa.width, c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double ds = d_score[i * n + j];
            if (ds == 0.0) continue;
            const double* fbj = trace.fb.values.data() + j * c;
            const double* fai = trace.fa.values.data() + i * c;
            double* dfi = d_fa.values.data() + i * c;
            double* dfj = d_fb.values.data() + j * c;
            for (std::size_t k = 0; k < c; ++k) {
                dfi[k] += ds * fbj[k];
                dfj[k] += ds * fai[k];
            }
        }
    }

    // Projection: F[n] = W X[n] + b.
    const bool shared = config.share_projection;
    if (!shared && (!params.proj_b || !grads.proj_b)) {
        throw ConfigError("unshared projection configured but proj_b parameters are absent");
    }
    LinearParam& gp_a = grads.proj_a;
    LinearParam& gp_b = shared ? grads.proj_a : *grads.proj_b;
    const LinearParam& proj_b = shared ? params.proj_a : *params.proj_b;
    for (std::size_t pos = 0; pos < n; ++pos) {
        const double* dfa = d_fa.values.data() + pos * c;
        const double* dfb = d_fb.values.data() + pos * c;
        const double* xa = trace.xa.values.data() + pos * c;
        const double* xb = trace.xb.values.data() + pos * c;
        double* dxa = ig.d_xa.values.data() + pos * c;
        double* dxb = ig.d_xb.values.data() + pos * c;
        for (std::size_t o = 0; o < c; ++o) {
            gp_a.bias[o] += dfa[o];
            gp_b.bias[o] += dfb[o];
            const double* wa = params.proj_a.weight.data() + o * c;
            const double* wb = proj_b.weight.data() + o * c;
            double* gwa = gp_a.weight.data() + o * c;
            double* gwb = gp_b.weight.data() + o * c;
            for (std::size_t k = 0; k < c; ++k) {
                gwa[k] += dfa[o] * xa[k];
                gwb[k] += dfb[o] * xb[k];
                dxa[k] += dfa[o] * wa[k];
                dxb[k] += dfb[o] * wb[k];
            }
        }
    }

    return ig;
}

}  // namespace facor
