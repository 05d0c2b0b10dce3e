#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "facor/data.hpp"
#include "facor/loss.hpp"
#include "facor/training.hpp"

namespace facor {

struct ScoredPair {
    KinPair pair;
    double score = 0.0;  // cosine similarity of the fused pair embeddings
};

enum class ThresholdMode { Fixed, BestOnValidation, BestOnTest };

struct ThresholdPolicy {
    ThresholdMode mode = ThresholdMode::BestOnValidation;
    double value = 0.0;  // fixed mode only
};

enum class Fusion { Mean, Max, Min };

// Joint pair scoring: the embeddings depend on the pair, so both images go
// through the fusion module together.
double score_pair(const FaCoRParams& params, const FaCoRConfig& config,
                  FeatureProvider& provider, const std::string& img_a,
                  const std::string& img_b);

using PairScorer = std::function<double(const std::string&, const std::string&)>;
PairScorer make_joint_scorer(const FaCoRParams& params, const FaCoRConfig& config,
                             FeatureProvider& provider);
// Smoke-test fallback: cosine on the backbone r vectors only.
PairScorer make_vec_scorer(FeatureProvider& provider);

std::vector<ScoredPair> score_pairs(const std::vector<KinPair>& pairs,
                                    const PairScorer& scorer);

// Classification rule: kin iff score >= threshold. The sweep considers the
// midpoints of adjacent distinct scores plus one threshold below and above
// all scores; ties resolve to the smallest candidate.
double accuracy_at(const std::vector<ScoredPair>& scored, double threshold);
double best_threshold(const std::vector<ScoredPair>& scored);

struct TypeAccuracy {
    KinType type = KinType::BB;
    std::size_t count = 0;
    double accuracy = 0.0;
    bool included = true;  // false when only one label class is present
};

struct VerificationReport {
    double threshold = 0.0;
    std::string threshold_source;
    std::vector<TypeAccuracy> per_type;
    double average = 0.0;          // unweighted mean over included types
    double overall_accuracy = 0.0;
    std::vector<std::string> warnings;

    std::string to_csv() const;
    std::string to_text() const;
};

VerificationReport verification_eval(const std::vector<ScoredPair>& test,
                                     const ThresholdPolicy& policy,
                                     const std::vector<ScoredPair>* validation = nullptr);

struct TriSubjectReport {
    double threshold = 0.0;
    std::string threshold_source;
    std::map<std::string, double> per_type;  // FMD / FMS
    std::map<std::string, std::size_t> per_type_count;
    double average = 0.0;
    std::vector<std::string> warnings;

    std::string to_csv() const;
    std::string to_text() const;
};

TriSubjectReport tri_subject_eval(const std::vector<TriSubject>& test,
                                  const PairScorer& scorer, Fusion fusion,
                                  const ThresholdPolicy& policy,
                                  const std::vector<TriSubject>* validation = nullptr);

struct ProbeResult {
    std::string probe;
    std::vector<std::string> ranked_gallery;
    double average_precision = 0.0;
    std::size_t first_hit_rank = 0;  // 1-based rank of the first relative
};

struct RetrievalResult {
    std::vector<ProbeResult> probes;
    std::map<std::size_t, double> rank_at_k;
    double mean_average_precision = 0.0;
    std::vector<std::string> warnings;

    std::string to_csv() const;
    std::string to_text() const;
};

// probes / gallery: (image id, family id). Gallery order for equal scores is
// ascending id.
RetrievalResult retrieval_eval(const std::vector<std::pair<std::string, std::string>>& probes,
                               const std::vector<std::pair<std::string, std::string>>& gallery,
                               const PairScorer& scorer, const std::vector<std::size_t>& ks);

// Mann-Whitney AUC with midranks for ties.
double roc_auc(const std::vector<ScoredPair>& scored);

struct FoldOutcome {
    std::map<std::string, double> per_type;
    double average = 0.0;
};

using FoldClosure = std::function<FoldOutcome(const std::vector<KinPair>& train,
                                              const std::vector<KinPair>& test)>;

struct KfoldReport {
    std::vector<FoldOutcome> folds;
    std::map<std::string, double> mean_per_type;
    double mean_average = 0.0;

    std::string to_csv() const;
    std::string to_text() const;
};

KfoldReport kfold_eval(const FoldSpec& folds, const std::vector<KinPair>& pairs,
                       const FoldClosure& closure);

struct QualityBin {
    double lo = 0.0, hi = 0.0;
    std::size_t count = 0;
    double accuracy = 0.0;
};

struct QualityBinnedReport {
    double threshold = 0.0;
    std::vector<QualityBin> bins;

    std::string to_csv() const;
    std::string to_text() const;
};

// Pairs are assigned to bins by the lower of the two image quality scores;
// edges must start at 0, end at 1 and increase. Bins are [lo, hi), the last
// one closed at 1.
QualityBinnedReport quality_binned_eval(const std::vector<ScoredPair>& scored,
                                        const QualityTable& quality,
                                        const std::vector<double>& bin_edges,
                                        const ThresholdPolicy& policy,
                                        const std::vector<ScoredPair>* validation = nullptr);

void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ScoredPair>& scored);

}  // namespace facor
