#include "facor/loss.hpp"

#include <algorithm>
#include <cmath>

#include "facor/errors.hpp"

namespace facor {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("loss tau must be > 0");
    if (!(scale_s > 0.0)) throw ConfigError("loss scale_s must be > 0");
}

double cosine_similarity(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw ConfigError("cosine_similarity: length mismatch");
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
    }
    if (nx == 0.0 || ny == 0.0) {
        throw NumericError("cosine_similarity: zero-norm vector");
    }
    return dot / (std::sqrt(nx) * std::sqrt(ny));
}

Vec l2_normalized(const Vec& x) {
    double n = 0.0;
    for (double v : x) n += v * v;
    if (n == 0.0) throw NumericError("l2_normalized: zero-norm vector");
    const double inv = 1.0 / std::sqrt(n);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
    return out;
}

double relation_temperature(const AttentionMap& attention, const LossConfig& config) {
    config.validate();
    double pooled = 0.0;
    switch (config.indicator) {
        case RelationIndicator::GlobalSum:
            for (double b : attention.beta) pooled += b;
            break;
        case RelationIndicator::GlobalMaxPerRowSum:
            for (std::size_t j = 0; j < attention.n; ++j) {
                double row_max = attention.beta[j * attention.n];
                for (std::size_t i = 1; i < attention.n; ++i) {
                    row_max = std::max(row_max, attention.beta[j * attention.n + i]);
                }
                pooled += row_max;
            }
            break;
        case RelationIndicator::PresoftmaxSum:
            if (!attention.has_score()) {
                throw ConfigError("presoftmax-sum indicator needs the pre-softmax scores, "
                                  "which this attention map does not carry");
            }
            for (double s : attention.score) pooled += s;
            break;
    }
    const double psi = pooled / config.scale_s;
    if (!std::isfinite(psi)) throw NumericError("relation temperature is non-finite");
    if (!(psi > 0.0)) {
        throw ConfigError("relation temperature must be positive (indicator pooled to " +
                          std::to_string(pooled) + ")");
    }
    return psi;
}

namespace {

void check_batch(const LossBatch& batch) {
    if (batch.pairs.size() < 2) {
        throw ProtocolError("contrastive loss needs at least 2 positive pairs");
    }
    const std::size_t len = batch.pairs.front().x_out_a.size();
    for (const auto& p : batch.pairs) {
        if (p.x_out_a.size() != len || p.x_out_b.size() != len) {
            throw ConfigError("loss batch embeddings disagree in length");
        }
    }
}

// -log [ exp(z_pos) / sum_k exp(z_k) ] = -z_pos + logsumexp(z_k)
double stabilized_term(double z_pos, const std::vector<double>& z_neg) {
    const double m = *std::max_element(z_neg.begin(), z_neg.end());
    double sum = 0.0;
    for (double z : z_neg) sum += std::exp(z - m);
    return -z_pos + std::log(sum) + m;
}

double per_pair_psi(const LossBatch& batch, std::size_t i, const LossConfig& config) {
    if (config.mode == TemperatureMode::FixedTau) return config.tau;
    return relation_temperature(batch.pairs[i].attention, config);
}

}  // namespace

double contrastive_pair_term(const LossBatch& batch, std::size_t i, double psi,
                             bool swap_roles) {
    check_batch(batch);
    if (!(psi > 0.0)) throw ConfigError("temperature must be positive");
    const std::size_t n = batch.pairs.size();

    auto anchor_of = [&](std::size_t k) -> const Vec& {
        return swap_roles ? batch.pairs[k].x_out_b : batch.pairs[k].x_out_a;
    };
    auto partner_of = [&](std::size_t k) -> const Vec& {
        return swap_roles ? batch.pairs[k].x_out_a : batch.pairs[k].x_out_b;
    };

    const Vec& anchor = anchor_of(i);
    const double z_pos = cosine_similarity(anchor, partner_of(i)) / psi;
    std::vector<double> z_neg;
    z_neg.reserve(2 * (n - 1));
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        z_neg.push_back(cosine_similarity(anchor, anchor_of(j)) / psi);
        z_neg.push_back(cosine_similarity(anchor, partner_of(j)) / psi);
    }
    return stabilized_term(z_pos, z_neg);
}

double batch_loss(const LossBatch& batch, const LossConfig& config) {
    check_batch(batch);
    config.validate();
    const std::size_t n = batch.pairs.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double psi = per_pair_psi(batch, i, config);
        total += contrastive_pair_term(batch, i, psi, false);
        total += contrastive_pair_term(batch, i, psi, true);
    }
    return total / (2.0 * static_cast<double>(n));
}

double LossValue::psi_mean() const {
    if (psi.empty()) return 0.0;
    double s = 0.0;
    for (double p : psi) s += p;
    return s / static_cast<double>(psi.size());
}

LossValue batch_loss_with_grads(const LossBatch& batch, const LossConfig& config) {
    check_batch(batch);
    config.validate();
    const std::size_t n = batch.pairs.size();
    const std::size_t len = batch.pairs.front().x_out_a.size();

    // Working embeddings (optionally normalized) and their norms.
    std::vector<Vec> xs(n), ys(n);
    std::vector<double> nx(n), ny(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (config.l2_normalize) {
            xs[i] = l2_normalized(batch.pairs[i].x_out_a);
            ys[i] = l2_normalized(batch.pairs[i].x_out_b);
            nx[i] = ny[i] = 1.0;
        } else {
            xs[i] = batch.pairs[i].x_out_a;
            ys[i] = batch.pairs[i].x_out_b;
            double sx = 0.0, sy = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                sx += xs[i][k] * xs[i][k];
                sy += ys[i][k] * ys[i][k];
            }
            if (sx == 0.0 || sy == 0.0) throw NumericError("loss: zero-norm embedding");
            nx[i] = std::sqrt(sx);
            ny[i] = std::sqrt(sy);
        }
    }

    auto cos_of = [&](const Vec& u, const Vec& v, double norm_u, double norm_v) {
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += u[k] * v[k];
        return dot / (norm_u * norm_v);
    };

    // Similarity caches: sxy covers all (i, j); sxx / syy only need i != j.
    std::vector<double> sxy(n * n), sxx(n * n, 0.0), syy(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            sxy[i * n + j] = cos_of(xs[i], ys[j], nx[i], ny[j]);
            if (i < j) {
                sxx[i * n + j] = sxx[j * n + i] = cos_of(xs[i], xs[j], nx[i], nx[j]);
                syy[i * n + j] = syy[j * n + i] = cos_of(ys[i], ys[j], ny[i], ny[j]);
            }
        }
    }

    LossValue lv;
    lv.psi.resize(n);
    lv.d_psi.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) lv.psi[i] = per_pair_psi(batch, i, config);

    // Gradients with respect to the similarity entries.
    std::vector<double> gxy(n * n, 0.0), gxx(n * n, 0.0), gyy(n * n, 0.0);
    const double w = 1.0 / (2.0 * static_cast<double>(n));
    double total = 0.0;

    struct NegRef {
        bool cross;       // true: anchor-vs-partner matrix, false: anchor-vs-anchor
        std::size_t j;
        double sim;
    };

    for (std::size_t i = 0; i < n; ++i) {
        const double psi = lv.psi[i];
        for (int swap = 0; swap < 2; ++swap) {
            const double s_pos = sxy[i * n + i];
            std::vector<NegRef> negs;
            negs.reserve(2 * (n - 1));
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                if (swap == 0) {
                    negs.push_back({false, j, sxx[i * n + j]});
                    negs.push_back({true, j, sxy[i * n + j]});
                } else {
                    negs.push_back({false, j, syy[i * n + j]});
                    negs.push_back({true, j, sxy[j * n + i]});  // sim(y_i, x_j)
                }
            }
            double m = negs.front().sim;
            for (const auto& neg : negs) m = std::max(m, neg.sim);
            m /= psi;
            double sum_exp = 0.0;
            for (const auto& neg : negs) sum_exp += std::exp(neg.sim / psi - m);
            total += -s_pos / psi + std::log(sum_exp) + m;

            // d term / d sims and d term / d psi.
            gxy[i * n + i] -= w / psi;
            double weighted_sims = 0.0;
            for (const auto& neg : negs) {
                const double p = std::exp(neg.sim / psi - m) / sum_exp;
                weighted_sims += p * neg.sim;
                const double g = w * p / psi;
                if (swap == 0) {
                    if (neg.cross) {
                        gxy[i * n + neg.j] += g;
                    } else {
                        gxx[i * n + neg.j] += g;
                    }
                } else {
                    if (neg.cross) {
                        gxy[neg.j * n + i] += g;
                    } else {
                        gyy[i * n + neg.j] += g;
                    }
                }
            }
            lv.d_psi[i] += w * (s_pos - weighted_sims) / (psi * psi);
        }
    }
    lv.value = total * w;

    // Chain similarity gradients into the working embeddings.
    std::vector<Vec> dxs(n, Vec(len, 0.0)), dys(n, Vec(len, 0.0));
    auto add_cos_grad = [&](const Vec& u, const Vec& v, double norm_u, double norm_v,
                            double sim, double g, Vec& du, Vec& dv) {
        const double inv = 1.0 / (norm_u * norm_v);
        const double cu = sim / (norm_u * norm_u);
        const double cv = sim / (norm_v * norm_v);
        for (std::size_t k = 0; k < len; ++k) {
            du[k] += g * (v[k] * inv - cu * u[k]);
            dv[k] += g * (u[k] * inv - cv * v[k]);
        }
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (gxy[i * n + j] != 0.0) {
                add_cos_grad(xs[i], ys[j], nx[i], ny[j], sxy[i * n + j], gxy[i * n + j],
                             dxs[i], dys[j]);
            }
            if (i != j && gxx[i * n + j] != 0.0) {
                add_cos_grad(xs[i], xs[j], nx[i], nx[j], sxx[i * n + j], gxx[i * n + j],
                             dxs[i], dxs[j]);
            }
            if (i != j && gyy[i * n + j] != 0.0) {
                add_cos_grad(ys[i], ys[j], ny[i], ny[j], syy[i * n + j], gyy[i * n + j],
                             dys[i], dys[j]);
            }
        }
    }

    // Back through the optional normalization to the original embeddings.
    lv.d_x.resize(n);
    lv.d_y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!config.l2_normalize) {
            lv.d_x[i] = std::move(dxs[i]);
            lv.d_y[i] = std::move(dys[i]);
            continue;
        }
        auto chain = [&](const Vec& unit, const Vec& original, const Vec& d_unit) {
            double orig_norm = 0.0;
            for (double v : original) orig_norm += v * v;
            orig_norm = std::sqrt(orig_norm);
            double dot = 0.0;
            for (std::size_t k = 0; k < len; ++k) dot += d_unit[k] * unit[k];
            Vec out(len);
            for (std::size_t k = 0; k < len; ++k) {
                out[k] = (d_unit[k] - dot * unit[k]) / orig_norm;
            }
            return out;
        };
        lv.d_x[i] = chain(xs[i], batch.pairs[i].x_out_a, dxs[i]);
        lv.d_y[i] = chain(ys[i], batch.pairs[i].x_out_b, dys[i]);
    }
    return lv;
}

void temperature_backward(const AttentionMap& attention, const LossConfig& config,
                          double d_psi, std::vector<double>& d_beta,
                          std::vector<double>& d_score) {
    if (config.mode != TemperatureMode::RelGuided || d_psi == 0.0) return;
    const std::size_t n = attention.n;
    const double g = d_psi / config.scale_s;
    switch (config.indicator) {
        case RelationIndicator::GlobalSum:
            if (d_beta.empty()) d_beta.assign(n * n, 0.0);
            for (double& v : d_beta) v += g;
            break;
        case RelationIndicator::GlobalMaxPerRowSum:
            if (d_beta.empty()) d_beta.assign(n * n, 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                std::size_t arg = 0;
                for (std::size_t i = 1; i < n; ++i) {
                    if (attention.beta[j * n + i] > attention.beta[j * n + arg]) arg = i;
                }
                d_beta[j * n + arg] += g;
            }
            break;
        case RelationIndicator::PresoftmaxSum:
            if (d_score.empty()) d_score.assign(n * n, 0.0);
            for (double& v : d_score) v += g;
            break;
    }
}

}  // namespace facor
