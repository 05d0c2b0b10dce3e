#include <doctest.h>

#include <cmath>
#include <numeric>

#include "facor/errors.hpp"
#include "facor/facor.hpp"
#include "facor/rng.hpp"
#include "oracles.hpp"

using namespace facor;

namespace {

FeatureMap random_map(const FaCoRConfig& config, Rng& rng, double scale = 1.0) {
    FeatureMap m(config.height, config.width, config.channels);
    for (double& v : m.values) v = scale * rng.normal();
    return m;
}

Vec random_vec(std::size_t n, Rng& rng) {
    Vec v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

LinearParam identity_projection(std::size_t c) {
    LinearParam p;
    p.weight = Tensor({c, c});
    p.bias = Tensor({c});
    for (std::size_t i = 0; i < c; ++i) p.weight.at(i, i) = 1.0;
    return p;
}

}  // namespace

TEST_CASE("project_features identity and zero weights") {
    FaCoRConfig config = FaCoRConfig::toy();
    Rng rng(11);
    const FeatureMap x = random_map(config, rng);

    const FeatureMap ident = project_features(x, identity_projection(config.channels));
    for (std::size_t i = 0; i < x.values.size(); ++i) CHECK(ident.values[i] == x.values[i]);

    LinearParam zero;
    zero.weight = Tensor({config.channels, config.channels});
    zero.bias = Tensor({config.channels});
    const FeatureMap zeros = project_features(x, zero);
    for (double v : zeros.values) CHECK(v == 0.0);
}

TEST_CASE("project_features 1x1 hand example") {
    // H=W=1, C=2, W=[[1,1],[0,1]], X=(3,4) -> (7,4)
    FeatureMap x(1, 1, 2);
    x.values = {3.0, 4.0};
    LinearParam p;
    p.weight = Tensor({2, 2}, {1.0, 1.0, 0.0, 1.0});
    p.bias = Tensor({2});
    const FeatureMap f = project_features(x, p);
    CHECK(f.values[0] == doctest::Approx(7.0).epsilon(1e-15));
    CHECK(f.values[1] == doctest::Approx(4.0).epsilon(1e-15));

    // Confirmed by the dense-matmul oracle.
    const auto w = oracles::weight_of(p.weight);
    const auto out = oracles::dense_linear(w, oracles::vec_of(p.bias), {3.0, 4.0});
    CHECK(f.values[0] == out[0]);
    CHECK(f.values[1] == out[1]);
}

TEST_CASE("cross_attention uniform when all positions equal") {
    FaCoRConfig config = FaCoRConfig::toy();
    FeatureMap fa(config.height, config.width, config.channels);
    for (std::size_t pos = 0; pos < fa.positions(); ++pos) {
        for (std::size_t c = 0; c < fa.channels; ++c) fa.at(pos, c) = 0.25 * (double)c;
    }
    const AttentionMap map = cross_attention(fa, fa);
    const double uniform = 1.0 / (double)fa.positions();
    for (double b : map.beta) CHECK(b == doctest::Approx(uniform).epsilon(1e-12));
}

TEST_CASE("cross_attention N=2 hand example") {
    FeatureMap fa(2, 1, 1), fb(2, 1, 1);
    fa.values = {1.0, 2.0};
    fb.values = {3.0, 4.0};
    const AttentionMap map = cross_attention(fa, fb);
    CHECK(map.score[0 * 2 + 0] == 3.0);  // s_11
    CHECK(map.score[0 * 2 + 1] == 4.0);  // s_12
    CHECK(map.score[1 * 2 + 0] == 6.0);  // s_21
    CHECK(map.score[1 * 2 + 1] == 8.0);  // s_22

    const double e3 = std::exp(3.0);
    CHECK(map.beta[0 * 2 + 0] == doctest::Approx(1.0 / (1.0 + e3)).epsilon(1e-12));
    CHECK(map.beta[0 * 2 + 1] == doctest::Approx(e3 / (1.0 + e3)).epsilon(1e-12));
    CHECK(map.beta[0 * 2 + 0] == doctest::Approx(0.0474).epsilon(1e-2));
    CHECK(map.beta[0 * 2 + 1] == doctest::Approx(0.9526).epsilon(1e-3));
    CHECK(map.beta[1 * 2 + 0] == doctest::Approx(0.0180).epsilon(1e-2));
    CHECK(map.beta[1 * 2 + 1] == doctest::Approx(0.9820).epsilon(1e-3));

    // Brute-force softmax oracle agrees.
    const auto beta = oracles::beta_oracle(oracles::scores_oracle(fa, fb));
    for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(map.beta[j * 2 + i] == doctest::Approx(beta[j][i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("cross_attention rejects non-finite input") {
    FeatureMap fa(1, 2, 1), fb(1, 2, 1);
    fa.values = {1.0, std::nan("")};
    fb.values = {0.0, 0.0};
    CHECK_THROWS_AS(cross_attention(fa, fb), NumericError);
}

TEST_CASE("attention row stochasticity over random inputs") {
    FaCoRConfig config = FaCoRConfig::toy();
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const FeatureMap fa = random_map(config, rng);
        const FeatureMap fb = random_map(config, rng);
        const AttentionMap map = cross_attention(fa, fb);
        map.validate(1e-6);  // row sums, entries strictly inside (0,1), finite
    }
}

TEST_CASE("attend gamma=0 is the identity bit for bit") {
    FaCoRConfig config = FaCoRConfig::toy();
    Rng rng(3);
    const FeatureMap x = random_map(config, rng);
    const AttentionMap map = cross_attention(x, x);
    const FeatureMap o = attend(x, map, 0.0);
    for (std::size_t i = 0; i < x.values.size(); ++i) CHECK(o.values[i] == x.values[i]);
}

TEST_CASE("attend uniform beta on a constant map") {
    FaCoRConfig config = FaCoRConfig::toy();
    const double v = 1.7, gamma = 0.35;
    FeatureMap x(config.height, config.width, config.channels, v);
    AttentionMap map;
    map.n = x.positions();
    map.beta.assign(map.n * map.n, 1.0 / (double)map.n);
    const FeatureMap o = attend(x, map, gamma);
    for (double val : o.values) CHECK(val == doctest::Approx((1.0 + gamma) * v).epsilon(1e-12));
}

TEST_CASE("attend N=2 hand example") {
    FeatureMap x(2, 1, 1);
    x.values = {10.0, 20.0};
    AttentionMap map;
    map.n = 2;
    map.beta = {0.25, 0.75, 0.5, 0.5};
    const FeatureMap o = attend(x, map, 1.0);
    CHECK(o.values[0] == doctest::Approx(27.5).epsilon(1e-15));
    CHECK(o.values[1] == doctest::Approx(35.0).epsilon(1e-15));

    const auto oracle = oracles::attend_oracle(x, {{0.25, 0.75}, {0.5, 0.5}}, 1.0);
    CHECK(o.values[0] == oracle.values[0]);
    CHECK(o.values[1] == oracle.values[1]);
}

TEST_CASE("channel_interaction zero weights and zero input") {
    CiParams ci;
    ci.reduce.weight = Tensor({2, 4});
    ci.reduce.bias = Tensor({2});
    ci.expand.weight = Tensor({4, 2});
    ci.expand.bias = Tensor({4});

    const Vec x = {1.0, -2.0, 3.0, 0.5};
    const Vec out = channel_interaction(x, ci);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(out[i] == doctest::Approx(0.5 * x[i]).epsilon(1e-15));
    }
    const Vec zeros = channel_interaction(Vec(4, 0.0), ci);
    for (double v : zeros) CHECK(v == 0.0);
}

TEST_CASE("channel_interaction hand example len 2, reduction 1") {
    CiParams ci;
    ci.reduce.weight = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    ci.reduce.bias = Tensor({2});
    ci.expand.weight = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    ci.expand.bias = Tensor({2});
    const Vec out = channel_interaction({1.0, -1.0}, ci);
    const double sig1 = 1.0 / (1.0 + std::exp(-1.0));
    CHECK(out[0] == doctest::Approx(sig1).epsilon(1e-12));
    CHECK(out[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(out[1] == doctest::Approx(-0.5).epsilon(1e-12));

    const Vec oracle = oracles::ci_oracle({1.0, -1.0}, ci);
    CHECK(out[0] == doctest::Approx(oracle[0]).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(oracle[1]).epsilon(1e-15));
}

TEST_CASE("channel_interaction shape mismatch is a configuration error") {
    CiParams ci;
    ci.reduce.weight = Tensor({2, 4});
    ci.reduce.bias = Tensor({2});
    ci.expand.weight = Tensor({4, 2});
    ci.expand.bias = Tensor({4});
    CHECK_THROWS_AS(channel_interaction(Vec(5, 1.0), ci), ConfigError);
}

TEST_CASE("facor_forward composition of trivial cases") {
    // gamma=0, identity projections, all CI weights zero:
    // x_out = 0.5 * (0.5 * pooled(X) || r).
    FaCoRConfig config = FaCoRConfig::toy();
    config.gamma_init = 0.0;
    FaCoRParams params = init_params(config, 1);
    zero_all(params);
    params.proj_a = identity_projection(config.channels);

    Rng rng(5);
    const FeatureMap xa = random_map(config, rng);
    const FeatureMap xb = random_map(config, rng);
    const Vec ra = random_vec(config.embed_dim, rng);
    const Vec rb = random_vec(config.embed_dim, rng);
    const PairEmbedding out = facor_forward(xa, xb, ra, rb, params, config);

    CHECK(out.x_out_a.size() == 2 * config.channels);
    CHECK(out.x_out_b.size() == 2 * config.channels);

    Vec pooled(config.channels, 0.0);
    for (std::size_t pos = 0; pos < xa.positions(); ++pos) {
        for (std::size_t c = 0; c < config.channels; ++c) pooled[c] += xa.at(pos, c);
    }
    for (double& v : pooled) v /= (double)xa.positions();
    for (std::size_t c = 0; c < config.channels; ++c) {
        CHECK(out.x_out_a[c] == doctest::Approx(0.25 * pooled[c]).epsilon(1e-12));
        CHECK(out.x_out_a[config.channels + c] ==
              doctest::Approx(0.5 * ra[c]).epsilon(1e-12));
    }
}

TEST_CASE("facor_forward output length is 2C for random configs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        FaCoRConfig config;
        config.height = 1 + rng.index(3);
        config.width = 1 + rng.index(3);
        config.channels = 4 * (1 + rng.index(3));
        config.embed_dim = config.channels;
        config.ci_reduction = 4;
        const FaCoRParams params = init_params(config, seed);
        const FeatureMap xa = random_map(config, rng);
        const FeatureMap xb = random_map(config, rng);
        const PairEmbedding out = facor_forward(xa, xb, random_vec(config.embed_dim, rng),
                                                random_vec(config.embed_dim, rng), params,
                                                config);
        CHECK(out.x_out_a.size() == 2 * config.channels);
        CHECK(out.x_out_b.size() == out.x_out_a.size());
        out.attention.validate();
    }
}

TEST_CASE("facor_forward matches the staged dense oracle") {
    FaCoRConfig config;
    config.height = 2;
    config.width = 2;
    config.channels = 2;
    config.embed_dim = 2;
    config.ci_reduction = 1;
    config.gamma_init = 0.5;

    const FaCoRParams params = init_params(config, 7);
    Rng rng(7);
    const FeatureMap xa = random_map(config, rng);
    const FeatureMap xb = random_map(config, rng);
    const Vec ra = random_vec(config.embed_dim, rng);
    const Vec rb = random_vec(config.embed_dim, rng);

    const PairEmbedding out = facor_forward(xa, xb, ra, rb, params, config);
    const oracles::PairOracle oracle = oracles::facor_oracle(xa, xb, ra, rb, params, config);

    const std::size_t n = config.positions();
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(out.attention.beta[j * n + i] ==
                  doctest::Approx(oracle.beta[j][i]).epsilon(1e-12));
        }
    }
    for (std::size_t k = 0; k < out.x_out_a.size(); ++k) {
        CHECK(out.x_out_a[k] == doctest::Approx(oracle.x_out_a[k]).epsilon(1e-12));
        CHECK(out.x_out_b[k] == doctest::Approx(oracle.x_out_b[k]).epsilon(1e-12));
    }
}

TEST_CASE("facor_forward with unshared projections and transposed beta") {
    FaCoRConfig config = FaCoRConfig::toy();
    config.share_projection = false;
    config.transpose_beta_for_b = true;
    config.gamma_init = 0.3;
    const FaCoRParams params = init_params(config, 21);
    REQUIRE(params.proj_b.has_value());

    Rng rng(22);
    const FeatureMap xa = random_map(config, rng);
    const FeatureMap xb = random_map(config, rng);
    const Vec ra = random_vec(config.embed_dim, rng);
    const Vec rb = random_vec(config.embed_dim, rng);
    const PairEmbedding out = facor_forward(xa, xb, ra, rb, params, config);
    const oracles::PairOracle oracle = oracles::facor_oracle(xa, xb, ra, rb, params, config);
    for (std::size_t k = 0; k < out.x_out_a.size(); ++k) {
        CHECK(out.x_out_a[k] == doctest::Approx(oracle.x_out_a[k]).epsilon(1e-12));
        CHECK(out.x_out_b[k] == doctest::Approx(oracle.x_out_b[k]).epsilon(1e-12));
    }
}

TEST_CASE("init_params determinism and bounded-normal range") {
    FaCoRConfig config = FaCoRConfig::toy();
    FaCoRParams a = init_params(config, 42);
    FaCoRParams b = init_params(config, 42);
    auto na = a.named_tensors();
    auto nb = b.named_tensors();
    REQUIRE(na.size() == nb.size());
    for (std::size_t t = 0; t < na.size(); ++t) {
        REQUIRE(na[t].tensor->size() == nb[t].tensor->size());
        for (std::size_t i = 0; i < na[t].tensor->size(); ++i) {
            CHECK((*na[t].tensor)[i] == (*nb[t].tensor)[i]);
        }
    }
    for (const auto& nt : na) {
        if (nt.name == "gamma") continue;
        for (std::size_t i = 0; i < nt.tensor->size(); ++i) {
            CHECK((*nt.tensor)[i] >= -0.05);
            CHECK((*nt.tensor)[i] <= 0.05);
        }
    }
    CHECK(a.gamma_value() == 0.0);
}

TEST_CASE("permutation equivariance of attention and attend") {
    FaCoRConfig config = FaCoRConfig::toy();
    Rng rng(77);
    const FeatureMap fa = random_map(config, rng);
    const FeatureMap fb = random_map(config, rng);
    const std::size_t n = fa.positions();

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);

    auto permute = [&](const FeatureMap& m) {
        FeatureMap p = m;
        for (std::size_t pos = 0; pos < n; ++pos) {
            for (std::size_t c = 0; c < m.channels; ++c) {
                p.at(pos, c) = m.at(perm[pos], c);
            }
        }
        return p;
    };

    const AttentionMap base = cross_attention(fa, fb);
    const AttentionMap permuted = cross_attention(permute(fa), permute(fb));
    // cross_attention(P Fa, P Fb) == P beta P^T
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(permuted.beta[j * n + i] ==
                  doctest::Approx(base.beta[perm[j] * n + perm[i]]).epsilon(1e-12));
        }
    }

    const double gamma = 0.8;
    const FeatureMap attended = attend(fa, base, gamma);
    const FeatureMap attended_perm = attend(permute(fa), permuted, gamma);
    const FeatureMap expected = permute(attended);
    for (std::size_t i = 0; i < attended_perm.values.size(); ++i) {
        CHECK(attended_perm.values[i] == doctest::Approx(expected.values[i]).epsilon(1e-12));
    }
}

TEST_CASE("softmax shift invariance per column") {
    FeatureMap fa(2, 2, 3), fb(2, 2, 3);
    Rng rng(15);
    for (double& v : fa.values) v = rng.normal();
    for (double& v : fb.values) v = rng.normal();
    const AttentionMap base = cross_attention(fa, fb);
    const std::size_t n = base.n;

    // Shift one score column by a constant and re-apply the column softmax.
    AttentionMap shifted = base;
    const std::size_t column = 2;
    for (std::size_t i = 0; i < n; ++i) shifted.score[i * n + column] += 13.5;
    // Recompute beta from the shifted scores with the library's rule.
    for (std::size_t j = 0; j < n; ++j) {
        double col_max = shifted.score[j];
        for (std::size_t i = 1; i < n; ++i) {
            col_max = std::max(col_max, shifted.score[i * n + j]);
        }
        double denom = 0.0;
        std::vector<double> e(n);
        for (std::size_t i = 0; i < n; ++i) {
            e[i] = std::exp(shifted.score[i * n + j] - col_max);
            denom += e[i];
        }
        for (std::size_t i = 0; i < n; ++i) shifted.beta[j * n + i] = e[i] / denom;
    }
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(shifted.beta[column * n + i] ==
              doctest::Approx(base.beta[column * n + i]).epsilon(1e-9));
    }
}

TEST_CASE("facor_backward matches finite differences for params and inputs") {
    FaCoRConfig config = FaCoRConfig::toy();
    config.gamma_init = 0.4;  // keep the attention path live
    FaCoRParams params = init_params(config, 33);
    Rng rng(34);
    FeatureMap xa = random_map(config, rng, 0.5);
    FeatureMap xb = random_map(config, rng, 0.5);
    Vec ra = random_vec(config.embed_dim, rng);
    Vec rb = random_vec(config.embed_dim, rng);

    // Scalar head: fixed random weights over both embeddings plus a term on
    // beta, exercising the d_beta cotangent path.
    Rng head_rng(35);
    const Vec wa = random_vec(2 * config.channels, head_rng);
    const Vec wb = random_vec(2 * config.channels, head_rng);
    std::vector<double> wbeta(config.positions() * config.positions());
    for (double& v : wbeta) v = head_rng.normal();

    auto scalar_head = [&]() {
        const PairEmbedding out = facor_forward(xa, xb, ra, rb, params, config);
        double f = 0.0;
        for (std::size_t k = 0; k < wa.size(); ++k) {
            f += wa[k] * out.x_out_a[k] + wb[k] * out.x_out_b[k];
        }
        for (std::size_t k = 0; k < wbeta.size(); ++k) {
            f += wbeta[k] * out.attention.beta[k];
        }
        return f;
    };

    FaCoRParams grads = zeros_like(params);
    const FacorTrace trace = facor_forward_trace(xa, xb, ra, rb, params, config);
    FacorCotangents cot;
    cot.d_x_out_a = wa;
    cot.d_x_out_b = wb;
    cot.d_beta = wbeta;
    const FacorInputGrads ig = facor_backward(trace, params, config, cot, grads);

    const double step = 1e-5;
    auto check_tensor = [&](Tensor& theta, const Tensor& g, const std::string& name) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double numeric = oracles::central_difference(theta.values()[i], scalar_head, step);
            const double rel = std::abs(g[i] - numeric) /
                               std::max({std::abs(g[i]), std::abs(numeric), 1e-4});
            INFO(name << "[" << i << "] analytic=" << g[i] << " numeric=" << numeric);
            CHECK(rel < 1e-4);
        }
    };
    auto pn = params.named_tensors();
    auto gn = grads.named_tensors();
    for (std::size_t t = 0; t < pn.size(); ++t) {
        check_tensor(*pn[t].tensor, *gn[t].tensor, pn[t].name);
    }

    // Input gradients.
    for (std::size_t i = 0; i < xa.values.size(); i += 7) {
        const double numeric = oracles::central_difference(xa.values[i], scalar_head, step);
        const double rel = std::abs(ig.d_xa.values[i] - numeric) /
                           std::max({std::abs(ig.d_xa.values[i]), std::abs(numeric), 1e-4});
        CHECK(rel < 1e-4);
    }
    for (std::size_t i = 0; i < xb.values.size(); i += 7) {
        const double numeric = oracles::central_difference(xb.values[i], scalar_head, step);
        const double rel = std::abs(ig.d_xb.values[i] - numeric) /
                           std::max({std::abs(ig.d_xb.values[i]), std::abs(numeric), 1e-4});
        CHECK(rel < 1e-4);
    }
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double numeric = oracles::central_difference(ra[i], scalar_head, step);
        const double rel = std::abs(ig.d_ra[i] - numeric) /
                           std::max({std::abs(ig.d_ra[i]), std::abs(numeric), 1e-4});
        CHECK(rel < 1e-4);
    }
    for (std::size_t i = 0; i < rb.size(); ++i) {
        const double numeric = oracles::central_difference(rb[i], scalar_head, step);
        const double rel = std::abs(ig.d_rb[i] - numeric) /
                           std::max({std::abs(ig.d_rb[i]), std::abs(numeric), 1e-4});
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("invalid configurations are rejected") {
    FaCoRConfig config = FaCoRConfig::toy();
    config.ci_reduction = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(config.validate(), ConfigError);

    config = FaCoRConfig::toy();
    config.embed_dim = 16;
    CHECK_THROWS_AS(config.validate(), ConfigError);

    config = FaCoRConfig::toy();
    const FaCoRParams params = init_params(config, 1);
    FeatureMap wrong(config.height + 1, config.width, config.channels);
    FeatureMap ok(config.height, config.width, config.channels);
    CHECK_THROWS_AS(facor_forward(wrong, ok, Vec(config.embed_dim, 1.0),
                                  Vec(config.embed_dim, 1.0), params, config),
                    ConfigError);
}
