#pragma once

#include <string>
#include <vector>

#include "facor/facor.hpp"

namespace facor {

enum class TemperatureMode { FixedTau, RelGuided };

// Pooling that reduces the attention map to the relation indicator M(beta).
// GlobalSum is the printed rule; note that summing a row-stochastic matrix is
// always HW, so the two alternatives give content-dependent temperatures.
enum class RelationIndicator { GlobalSum, GlobalMaxPerRowSum, PresoftmaxSum };

struct LossConfig {
    TemperatureMode mode = TemperatureMode::RelGuided;
    double tau = 0.08;        // fixed-mode temperature
    double scale_s = 500.0;   // rel-guided divisor
    RelationIndicator indicator = RelationIndicator::GlobalSum;
    bool l2_normalize = true;

    void validate() const;
};

// One positive (kin) pair per slot; negatives come from the other slots.
struct LossBatch {
    std::vector<PairEmbedding> pairs;
    std::vector<std::string> kin_types;  // optional tags, parallel to pairs
};

double cosine_similarity(const Vec& x, const Vec& y);

// psi = M(beta) / s, always > 0.
double relation_temperature(const AttentionMap& attention, const LossConfig& config);

// L_c(x_i, y_i); swap_roles computes L_c(y_i, x_i). Log-sum-exp stabilized.
double contrastive_pair_term(const LossBatch& batch, std::size_t i, double psi,
                             bool swap_roles = false);

// (1/2N) sum_i [L_c(x_i,y_i) + L_c(y_i,x_i)] with per-pair temperatures.
double batch_loss(const LossBatch& batch, const LossConfig& config);

struct LossValue {
    double value = 0.0;
    std::vector<double> psi;    // per-pair temperature actually used
    std::vector<Vec> d_x, d_y;  // d loss / d embeddings, at the original scale
    std::vector<double> d_psi;  // d loss / d psi_i

    double psi_mean() const;
};

LossValue batch_loss_with_grads(const LossBatch& batch, const LossConfig& config);

// Routes d psi_i into the pair's attention map: onto beta for the pooled
// indicators, onto the raw scores for PresoftmaxSum. No-op in fixed mode.
void temperature_backward(const AttentionMap& attention, const LossConfig& config,
                          double d_psi, std::vector<double>& d_beta,
                          std::vector<double>& d_score);

// x / ||x||; NumericError on a zero vector.
Vec l2_normalized(const Vec& x);

}  // namespace facor
