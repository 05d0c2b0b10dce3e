#include "facor/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "facor/errors.hpp"

namespace facor {

double score_pair(const FaCoRParams& params, const FaCoRConfig& config,
                  FeatureProvider& provider, const std::string& img_a,
                  const std::string& img_b) {
    const BackboneOutput a = provider.features(img_a);
    const BackboneOutput b = provider.features(img_b);
    const PairEmbedding out = facor_forward(a.map, b.map, a.vec, b.vec, params, config);
    return cosine_similarity(out.x_out_a, out.x_out_b);
}

PairScorer make_joint_scorer(const FaCoRParams& params, const FaCoRConfig& config,
                             FeatureProvider& provider) {
    return [&params, &config, &provider](const std::string& a, const std::string& b) {
        return score_pair(params, config, provider, a, b);
    };
}

PairScorer make_vec_scorer(FeatureProvider& provider) {
    return [&provider](const std::string& a, const std::string& b) {
        return cosine_similarity(provider.features(a).vec, provider.features(b).vec);
    };
}

std::vector<ScoredPair> score_pairs(const std::vector<KinPair>& pairs,
                                    const PairScorer& scorer) {
    std::vector<ScoredPair> scored;
    scored.reserve(pairs.size());
    for (const auto& p : pairs) {
        const double s = scorer(p.img_a, p.img_b);
        if (!std::isfinite(s)) throw NumericError("non-finite pair score");
        scored.push_back({p, s});
    }
    return scored;
}

double accuracy_at(const std::vector<ScoredPair>& scored, double threshold) {
    if (scored.empty()) throw ProtocolError("cannot evaluate an empty score set");
    std::size_t correct = 0;
    for (const auto& sp : scored) {
        const bool predicted = sp.score >= threshold;
        correct += predicted == sp.pair.is_kin ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(scored.size());
}

double best_threshold(const std::vector<ScoredPair>& scored) {
    if (scored.empty()) throw ProtocolError("cannot sweep an empty score set");
    std::vector<double> values;
    values.reserve(scored.size());
    for (const auto& sp : scored) values.push_back(sp.score);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());

    std::vector<double> candidates;
    candidates.push_back(values.front() - 1.0);
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        candidates.push_back(0.5 * (values[i] + values[i + 1]));
    }
    candidates.push_back(values.back() + 1.0);

    // Counting sweep: walking the candidates in ascending order, pairs whose
    // score falls below the threshold flip their predicted label.
    std::vector<ScoredPair> sorted = scored;
    std::sort(sorted.begin(), sorted.end(), [](const ScoredPair& a, const ScoredPair& b) {
        return a.score < b.score;
    });
    long kin_total = 0;
    for (const auto& sp : sorted) kin_total += sp.pair.is_kin ? 1 : 0;

    // At the lowest candidate everything is predicted kin.
    long correct = kin_total;
    double best_acc = static_cast<double>(correct) / static_cast<double>(sorted.size());
    double best = candidates.front();
    std::size_t consumed = 0;
    for (std::size_t c = 1; c < candidates.size(); ++c) {
        const double t = candidates[c];
        while (consumed < sorted.size() && sorted[consumed].score < t) {
            correct += sorted[consumed].pair.is_kin ? -1 : 1;
            ++consumed;
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(sorted.size());
        if (acc > best_acc) {
            best_acc = acc;
            best = t;
        }
    }
    return best;
}

namespace {

struct ResolvedThreshold {
    double value = 0.0;
    std::string source;
    std::vector<std::string> warnings;
};

ResolvedThreshold resolve_threshold(const ThresholdPolicy& policy,
                                    const std::vector<ScoredPair>& test,
                                    const std::vector<ScoredPair>* validation) {
    ResolvedThreshold r;
    switch (policy.mode) {
        case ThresholdMode::Fixed:
            if (policy.value < -1.0 || policy.value > 1.0) {
                throw ConfigError("fixed threshold must lie in [-1, 1]");
            }
            r.value = policy.value;
            r.source = "fixed";
            break;
        case ThresholdMode::BestOnValidation:
            if (validation && !validation->empty()) {
                r.value = best_threshold(*validation);
                r.source = "best-on-validation";
            } else {
                r.value = best_threshold(test);
                r.source = "best-on-test";
                r.warnings.push_back(
                    "no validation split available; threshold was selected on the "
                    "evaluation set itself");
            }
            break;
        case ThresholdMode::BestOnTest:
            r.value = best_threshold(test);
            r.source = "best-on-test";
            r.warnings.push_back("threshold selected on the evaluation set");
            break;
    }
    return r;
}

}  // namespace

VerificationReport verification_eval(const std::vector<ScoredPair>& test,
                                     const ThresholdPolicy& policy,
                                     const std::vector<ScoredPair>* validation) {
    if (test.empty()) throw ProtocolError("verification needs a non-empty score set");
    const ResolvedThreshold rt = resolve_threshold(policy, test, validation);

    VerificationReport report;
    report.threshold = rt.value;
    report.threshold_source = rt.source;
    report.warnings = rt.warnings;
    report.overall_accuracy = accuracy_at(test, rt.value);

    std::map<KinType, std::vector<ScoredPair>> by_type;
    for (const auto& sp : test) by_type[sp.pair.kin_type].push_back(sp);

    double sum = 0.0;
    std::size_t included = 0;
    for (const auto& [type, members] : by_type) {
        TypeAccuracy ta;
        ta.type = type;
        ta.count = members.size();
        bool has_kin = false, has_nonkin = false;
        for (const auto& sp : members) (sp.pair.is_kin ? has_kin : has_nonkin) = true;
        if (!has_kin || !has_nonkin) {
            ta.included = false;
            ta.accuracy = accuracy_at(members, rt.value);
            report.warnings.push_back("kin type " + to_string(type) +
                                      " has a single label class; excluded from the average");
        } else {
            ta.accuracy = accuracy_at(members, rt.value);
            sum += ta.accuracy;
            ++included;
        }
        report.per_type.push_back(ta);
    }
    report.average = included ? sum / static_cast<double>(included) : 0.0;
    return report;
}

std::string VerificationReport::to_csv() const {
    std::ostringstream out;
    out.precision(6);
    out << "kin_type,count,accuracy,included\n";
    for (const auto& ta : per_type) {
        out << to_string(ta.type) << ',' << ta.count << ',' << std::fixed << ta.accuracy
            << ',' << (ta.included ? 1 : 0) << "\n";
    }
    out << "AVG," << std::accumulate(per_type.begin(), per_type.end(), std::size_t{0},
                                     [](std::size_t acc, const TypeAccuracy& ta) {
                                         return acc + ta.count;
                                     })
        << ',' << std::fixed << average << ",1\n";
    return out.str();
}

std::string VerificationReport::to_text() const {
    std::ostringstream out;
    out.precision(3);
    out << "verification  threshold=" << std::fixed << threshold << " (" << threshold_source
        << ")\n";
    out << "  type   count  accuracy\n";
    for (const auto& ta : per_type) {
        out << "  " << to_string(ta.type) << (to_string(ta.type).size() < 4 ? "    " : "  ")
            << ta.count << "  " << std::fixed << ta.accuracy
            << (ta.included ? "" : "  (excluded)") << "\n";
    }
    out << "  AVG " << std::fixed << average << "   overall " << overall_accuracy << "\n";
    for (const auto& w : warnings) out << "  warning: " << w << "\n";
    return out.str();
}

TriSubjectReport tri_subject_eval(const std::vector<TriSubject>& test,
                                  const PairScorer& scorer, Fusion fusion,
                                  const ThresholdPolicy& policy,
                                  const std::vector<TriSubject>* validation) {
    if (test.empty()) throw ProtocolError("tri-subject evaluation needs records");

    auto fused_scores = [&](const std::vector<TriSubject>& records) {
        std::vector<ScoredPair> scored;
        scored.reserve(records.size());
        for (const auto& t : records) {
            const double father = scorer(t.img_child, t.img_father);
            const double mother = scorer(t.img_child, t.img_mother);
            double fused = 0.0;
            switch (fusion) {
                case Fusion::Mean: fused = 0.5 * (father + mother); break;
                case Fusion::Max: fused = std::max(father, mother); break;
                case Fusion::Min: fused = std::min(father, mother); break;
            }
            ScoredPair sp;
            sp.pair.img_a = t.img_child;
            sp.pair.img_b = t.img_father + "+" + t.img_mother;
            sp.pair.is_kin = t.is_kin;
            // Reuse the pair container; the tri type rides along as a tag.
            sp.pair.kin_type = t.type == TriType::FMD ? KinType::FD : KinType::FS;
            sp.score = fused;
            scored.push_back(sp);
        }
        return scored;
    };

    const std::vector<ScoredPair> scored = fused_scores(test);
    std::vector<ScoredPair> scored_validation;
    if (validation && !validation->empty()) scored_validation = fused_scores(*validation);

    const ResolvedThreshold rt = resolve_threshold(
        policy, scored, scored_validation.empty() ? nullptr : &scored_validation);

    TriSubjectReport report;
    report.threshold = rt.value;
    report.threshold_source = rt.source;
    report.warnings = rt.warnings;

    std::map<std::string, std::vector<ScoredPair>> by_type;
    for (std::size_t i = 0; i < test.size(); ++i) {
        by_type[to_string(test[i].type)].push_back(scored[i]);
    }
    double sum = 0.0;
    for (const auto& [type, members] : by_type) {
        report.per_type[type] = accuracy_at(members, rt.value);
        report.per_type_count[type] = members.size();
        sum += report.per_type[type];
    }
    report.average = sum / static_cast<double>(by_type.size());
    return report;
}

std::string TriSubjectReport::to_csv() const {
    std::ostringstream out;
    out.precision(6);
    out << "type,count,accuracy\n";
    for (const auto& [type, acc] : per_type) {
        out << type << ',' << per_type_count.at(type) << ',' << std::fixed << acc << "\n";
    }
    out << "AVG,," << std::fixed << average << "\n";
    return out.str();
}

std::string TriSubjectReport::to_text() const {
    std::ostringstream out;
    out.precision(3);
    out << "tri-subject  threshold=" << std::fixed << threshold << " (" << threshold_source
        << ")\n";
    for (const auto& [type, acc] : per_type) {
        out << "  " << type << "  " << per_type_count.at(type) << "  " << std::fixed << acc
            << "\n";
    }
    out << "  AVG " << std::fixed << average << "\n";
    for (const auto& w : warnings) out << "  warning: " << w << "\n";
    return out.str();
}

RetrievalResult retrieval_eval(const std::vector<std::pair<std::string, std::string>>& probes,
                               const std::vector<std::pair<std::string, std::string>>& gallery,
                               const PairScorer& scorer, const std::vector<std::size_t>& ks) {
    if (gallery.empty()) throw ProtocolError("retrieval needs a non-empty gallery");
    if (probes.empty()) throw ProtocolError("retrieval needs probes");

    RetrievalResult result;
    std::map<std::size_t, std::size_t> hits;
    for (std::size_t k : ks) hits[k] = 0;

    for (const auto& [probe_id, probe_family] : probes) {
        std::size_t relevant_total = 0;
        for (const auto& [gid, gfam] : gallery) relevant_total += gfam == probe_family ? 1 : 0;
        if (relevant_total == 0) {
            result.warnings.push_back("probe " + probe_id +
                                      " has no relative in the gallery; excluded");
            continue;
        }

        struct Entry {
            std::string id;
            std::string family;
            double score;
        };
        std::vector<Entry> entries;
        entries.reserve(gallery.size());
        for (const auto& [gid, gfam] : gallery) {
            entries.push_back({gid, gfam, scorer(probe_id, gid)});
        }
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.id < b.id;
        });

        ProbeResult pr;
        pr.probe = probe_id;
        double ap = 0.0;
        std::size_t found = 0;
        for (std::size_t rank = 0; rank < entries.size(); ++rank) {
            pr.ranked_gallery.push_back(entries[rank].id);
            if (entries[rank].family == probe_family) {
                ++found;
                ap += static_cast<double>(found) / static_cast<double>(rank + 1);
                if (pr.first_hit_rank == 0) pr.first_hit_rank = rank + 1;
            }
        }
        pr.average_precision = ap / static_cast<double>(relevant_total);
        for (std::size_t k : ks) {
            if (pr.first_hit_rank >= 1 && pr.first_hit_rank <= k) hits[k] += 1;
        }
        result.probes.push_back(std::move(pr));
    }

    if (result.probes.empty()) {
        throw ProtocolError("every probe was excluded; no family overlaps the gallery");
    }
    const double denom = static_cast<double>(result.probes.size());
    double ap_sum = 0.0;
    for (const auto& pr : result.probes) ap_sum += pr.average_precision;
    result.mean_average_precision = ap_sum / denom;
    for (std::size_t k : ks) {
        result.rank_at_k[k] = static_cast<double>(hits[k]) / denom;
    }
    return result;
}

std::string RetrievalResult::to_csv() const {
    std::ostringstream out;
    out.precision(6);
    out << "metric,value\n";
    for (const auto& [k, rate] : rank_at_k) {
        out << "rank@" << k << ',' << std::fixed << rate << "\n";
    }
    out << "mAP," << std::fixed << mean_average_precision << "\n";
    return out.str();
}

std::string RetrievalResult::to_text() const {
    std::ostringstream out;
    out.precision(3);
    out << "retrieval over " << probes.size() << " probes\n";
    for (const auto& [k, rate] : rank_at_k) {
        out << "  Rank@" << k << "  " << std::fixed << rate << "\n";
    }
    out << "  mAP     " << std::fixed << mean_average_precision << "\n";
    for (const auto& w : warnings) out << "  warning: " << w << "\n";
    return out.str();
}

double roc_auc(const std::vector<ScoredPair>& scored) {
    std::size_t pos = 0, neg = 0;
    for (const auto& sp : scored) (sp.pair.is_kin ? pos : neg) += 1;
    if (pos == 0 || neg == 0) {
        throw ProtocolError("AUC needs both classes present");
    }
    std::vector<const ScoredPair*> sorted;
    sorted.reserve(scored.size());
    for (const auto& sp : scored) sorted.push_back(&sp);
    std::sort(sorted.begin(), sorted.end(), [](const ScoredPair* a, const ScoredPair* b) {
        return a->score < b->score;
    });

    // Midranks over tied scores.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j]->score == sorted[i]->score) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of i+1 .. j
        for (std::size_t k = i; k < j; ++k) {
            if (sorted[k]->pair.is_kin) rank_sum_pos += midrank;
        }
        i = j;
    }
    const double p = static_cast<double>(pos);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

KfoldReport kfold_eval(const FoldSpec& folds, const std::vector<KinPair>& pairs,
                       const FoldClosure& closure) {
    if (folds.fold_count < 2) throw ProtocolError("k-fold evaluation needs >= 2 folds");
    folds.validate(pairs.size());

    KfoldReport report;
    std::map<std::string, double> type_sums;
    std::map<std::string, std::size_t> type_counts;
    double avg_sum = 0.0;
    for (std::size_t f = 0; f < folds.fold_count; ++f) {
        std::vector<KinPair> test, train;
        std::vector<bool> in_test(pairs.size(), false);
        for (std::size_t idx : folds.fold_members[f]) in_test[idx] = true;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            (in_test[i] ? test : train).push_back(pairs[i]);
        }
        FoldOutcome outcome = closure(train, test);
        avg_sum += outcome.average;
        for (const auto& [type, acc] : outcome.per_type) {
            type_sums[type] += acc;
            type_counts[type] += 1;
        }
        report.folds.push_back(std::move(outcome));
    }
    report.mean_average = avg_sum / static_cast<double>(folds.fold_count);
    for (const auto& [type, sum] : type_sums) {
        if (type_counts[type] == folds.fold_count) {
            report.mean_per_type[type] = sum / static_cast<double>(folds.fold_count);
        }
    }
    return report;
}

std::string KfoldReport::to_csv() const {
    std::ostringstream out;
    out.precision(6);
    out << "fold,type,accuracy\n";
    for (std::size_t f = 0; f < folds.size(); ++f) {
        for (const auto& [type, acc] : folds[f].per_type) {
            out << f << ',' << type << ',' << std::fixed << acc << "\n";
        }
        out << f << ",AVG," << std::fixed << folds[f].average << "\n";
    }
    for (const auto& [type, acc] : mean_per_type) {
        out << "mean," << type << ',' << std::fixed << acc << "\n";
    }
    out << "mean,AVG," << std::fixed << mean_average << "\n";
    return out.str();
}

std::string KfoldReport::to_text() const {
    std::ostringstream out;
    out.precision(3);
    out << "k-fold over " << folds.size() << " folds\n";
    for (std::size_t f = 0; f < folds.size(); ++f) {
        out << "  fold " << f << ":";
        for (const auto& [type, acc] : folds[f].per_type) {
            out << "  " << type << "=" << std::fixed << acc;
        }
        out << "  AVG=" << std::fixed << folds[f].average << "\n";
    }
    out << "  mean:";
    for (const auto& [type, acc] : mean_per_type) {
        out << "  " << type << "=" << std::fixed << acc;
    }
    out << "  AVG=" << std::fixed << mean_average << "\n";
    return out.str();
}

QualityBinnedReport quality_binned_eval(const std::vector<ScoredPair>& scored,
                                        const QualityTable& quality,
                                        const std::vector<double>& bin_edges,
                                        const ThresholdPolicy& policy,
                                        const std::vector<ScoredPair>* validation) {
    if (bin_edges.size() < 2 || bin_edges.front() != 0.0 || bin_edges.back() != 1.0) {
        throw ConfigError("bin edges must run from 0 to 1");
    }
    for (std::size_t i = 0; i + 1 < bin_edges.size(); ++i) {
        if (!(bin_edges[i] < bin_edges[i + 1])) {
            throw ConfigError("bin edges must strictly increase");
        }
    }
    if (scored.empty()) throw ProtocolError("quality binning needs scores");

    const ResolvedThreshold rt = resolve_threshold(policy, scored, validation);
    QualityBinnedReport report;
    report.threshold = rt.value;

    const std::size_t n_bins = bin_edges.size() - 1;
    std::vector<std::vector<ScoredPair>> buckets(n_bins);
    for (const auto& sp : scored) {
        const double lower =
            std::min(quality.score_for(sp.pair.img_a), quality.score_for(sp.pair.img_b));
        std::size_t bin = n_bins - 1;
        for (std::size_t b = 0; b < n_bins; ++b) {
            if (lower >= bin_edges[b] && (lower < bin_edges[b + 1] || b == n_bins - 1)) {
                bin = b;
                break;
            }
        }
        buckets[bin].push_back(sp);
    }
    for (std::size_t b = 0; b < n_bins; ++b) {
        QualityBin qb;
        qb.lo = bin_edges[b];
        qb.hi = bin_edges[b + 1];
        qb.count = buckets[b].size();
        qb.accuracy = buckets[b].empty() ? 0.0 : accuracy_at(buckets[b], rt.value);
        report.bins.push_back(qb);
    }
    return report;
}

std::string QualityBinnedReport::to_csv() const {
    std::ostringstream out;
    out.precision(6);
    out << "bin_lo,bin_hi,count,accuracy\n";
    for (const auto& b : bins) {
        out << b.lo << ',' << b.hi << ',' << b.count << ',' << std::fixed << b.accuracy
            << "\n";
    }
    return out.str();
}

std::string QualityBinnedReport::to_text() const {
    std::ostringstream out;
    out.precision(3);
    out << "quality-binned verification (threshold " << std::fixed << threshold << ")\n";
    for (const auto& b : bins) {
        out << "  " << std::fixed << b.lo << "-" << b.hi << "  n=" << b.count
            << "  acc=" << b.accuracy << "\n";
    }
    return out.str();
}

void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ScoredPair>& scored) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "img_a,img_b,kin_type,label,score\n";
    out.precision(17);
    for (const auto& sp : scored) {
        out << sp.pair.img_a << ',' << sp.pair.img_b << ',' << to_string(sp.pair.kin_type)
            << ',' << (sp.pair.is_kin ? "kin" : "non-kin") << ',' << sp.score << "\n";
    }
}

}  // namespace facor
