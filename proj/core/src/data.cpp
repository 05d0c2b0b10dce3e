#include "facor/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "facor/errors.hpp"

namespace facor {

namespace {

const std::array<KinType, 7> kKinTypes = {KinType::BB, KinType::SS, KinType::SIBS,
                                          KinType::FD, KinType::MD, KinType::FS,
                                          KinType::MS};

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = line.find(',', pos);
        if (next == std::string::npos) {
            fields.push_back(line.substr(pos));
            break;
        }
        fields.push_back(line.substr(pos, next - pos));
        pos = next + 1;
    }
    return fields;
}

bool parse_label(const std::string& text, const std::string& where) {
    if (text == "kin") return true;
    if (text == "non-kin") return false;
    throw ParseError(where + ": label must be 'kin' or 'non-kin', got '" + text + "'");
}

std::string location(const std::filesystem::path& path, std::size_t line_no) {
    return path.string() + ":" + std::to_string(line_no);
}

}  // namespace

const std::array<KinType, 7>& all_kin_types() { return kKinTypes; }

std::string to_string(KinType t) {
    switch (t) {
        case KinType::BB: return "BB";
        case KinType::SS: return "SS";
        case KinType::SIBS: return "SIBS";
        case KinType::FD: return "FD";
        case KinType::MD: return "MD";
        case KinType::FS: return "FS";
        case KinType::MS: return "MS";
    }
    return "?";
}

std::string to_string(TriType t) { return t == TriType::FMD ? "FMD" : "FMS"; }

KinType parse_kin_type(const std::string& text) {
    for (KinType t : kKinTypes) {
        if (to_string(t) == text) return t;
    }
    throw DataError("unknown or out-of-scope kin type '" + text + "'");
}

TriType parse_tri_type(const std::string& text) {
    if (text == "FMD") return TriType::FMD;
    if (text == "FMS") return TriType::FMS;
    throw DataError("unknown tri-subject type '" + text + "'");
}

double QualityTable::score_for(const std::string& id) const {
    auto it = scores.find(id);
    if (it == scores.end()) throw DataError("no quality score for image '" + id + "'");
    return it->second;
}

QualityTable QualityTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line != "img,score") {
        throw ParseError(location(path, 1) + ": expected header 'img,score'");
    }
    QualityTable qt;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        if (fields.size() != 2) {
            throw ParseError(location(path, line_no) + ": expected 2 fields");
        }
        double score = 0.0;
        try {
            score = std::stod(fields[1]);
        } catch (const std::exception&) {
            throw ParseError(location(path, line_no) + ": bad score '" + fields[1] + "'");
        }
        if (!(score >= 0.0 && score <= 1.0)) {
            throw DataError(location(path, line_no) + ": score out of [0,1]");
        }
        qt.scores[fields[0]] = score;
    }
    return qt;
}

void QualityTable::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "img,score\n";
    out.precision(17);
    for (const auto& [id, score] : scores) out << id << ',' << score << "\n";
}

void FoldSpec::validate(std::size_t pair_count) const {
    std::vector<bool> seen(pair_count, false);
    std::size_t total = 0;
    for (const auto& fold : fold_members) {
        for (std::size_t idx : fold) {
            if (idx >= pair_count || seen[idx]) {
                throw ProtocolError("folds must be disjoint and within range");
            }
            seen[idx] = true;
            ++total;
        }
    }
    if (total != pair_count) throw ProtocolError("folds must cover every pair");
}

std::vector<KinPair> load_pair_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(location(path, 1) + ": empty file, expected header");
    }
    bool with_fold = false;
    if (line == "img_a,img_b,kin_type,label,family_a,family_b,fold") {
        with_fold = true;
    } else if (line != "img_a,img_b,kin_type,label,family_a,family_b") {
        throw ParseError(location(path, 1) + ": unexpected header '" + line + "'");
    }

    std::vector<KinPair> pairs;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        const std::size_t expected = with_fold ? 7 : 6;
        if (fields.size() != expected) {
            throw ParseError(location(path, line_no) + ": expected " +
                             std::to_string(expected) + " fields, got " +
                             std::to_string(fields.size()));
        }
        KinPair p;
        p.img_a = fields[0];
        p.img_b = fields[1];
        try {
            p.kin_type = parse_kin_type(fields[2]);
        } catch (const DataError& e) {
            throw DataError(location(path, line_no) + ": " + e.what());
        }
        p.is_kin = parse_label(fields[3], location(path, line_no));
        p.family_a = fields[4];
        p.family_b = fields[5];
        if (with_fold) {
            try {
                p.fold = std::stoi(fields[6]);
            } catch (const std::exception&) {
                throw ParseError(location(path, line_no) + ": bad fold '" + fields[6] + "'");
            }
            if (p.fold < 0) {
                throw ParseError(location(path, line_no) + ": fold must be >= 0");
            }
        }
        if (p.img_a.empty() || p.img_b.empty()) {
            throw ParseError(location(path, line_no) + ": empty image id");
        }
        if (p.is_kin && p.family_a != p.family_b) {
            throw DataError(location(path, line_no) +
                            ": kin pair must share a family id");
        }
        if (!seen.insert({p.img_a, p.img_b, fields[2]}).second) {
            throw DataError(location(path, line_no) + ": duplicate pair (" + p.img_a + "," +
                            p.img_b + "," + fields[2] + ")");
        }
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void save_pair_list(const std::filesystem::path& path, const std::vector<KinPair>& pairs) {
    const bool with_fold =
        std::any_of(pairs.begin(), pairs.end(), [](const KinPair& p) { return p.fold >= 0; });
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "img_a,img_b,kin_type,label,family_a,family_b" << (with_fold ? ",fold" : "")
        << "\n";
    for (const auto& p : pairs) {
        out << p.img_a << ',' << p.img_b << ',' << to_string(p.kin_type) << ','
            << (p.is_kin ? "kin" : "non-kin") << ',' << p.family_a << ',' << p.family_b;
        if (with_fold) out << ',' << p.fold;
        out << "\n";
    }
}

std::vector<TriSubject> load_triplet_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "img_father,img_mother,img_child,type,label") {
        throw ParseError(location(path, 1) +
                         ": expected header 'img_father,img_mother,img_child,type,label'");
    }
    std::vector<TriSubject> triplets;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        if (fields.size() != 5) {
            throw ParseError(location(path, line_no) + ": expected 5 fields");
        }
        TriSubject t;
        t.img_father = fields[0];
        t.img_mother = fields[1];
        t.img_child = fields[2];
        try {
            t.type = parse_tri_type(fields[3]);
        } catch (const DataError& e) {
            throw DataError(location(path, line_no) + ": " + e.what());
        }
        t.is_kin = parse_label(fields[4], location(path, line_no));
        triplets.push_back(std::move(t));
    }
    return triplets;
}

void save_triplet_list(const std::filesystem::path& path,
                       const std::vector<TriSubject>& triplets) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "img_father,img_mother,img_child,type,label\n";
    for (const auto& t : triplets) {
        out << t.img_father << ',' << t.img_mother << ',' << t.img_child << ','
            << to_string(t.type) << ',' << (t.is_kin ? "kin" : "non-kin") << "\n";
    }
}

std::vector<std::size_t> sample_training_batch(const std::vector<KinPair>& pairs,
                                               std::size_t n, Rng& rng) {
    // Family-disjoint positives: every within-batch negative is then a true
    // non-kin combination.
    std::map<std::string, std::vector<std::size_t>> by_family;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].is_kin) by_family[pairs[i].family_a].push_back(i);
    }
    if (by_family.size() < 2 || by_family.size() < n) {
        throw ProtocolError("need positive pairs from at least max(2, batch) = " +
                            std::to_string(std::max<std::size_t>(2, n)) +
                            " distinct families, have " + std::to_string(by_family.size()));
    }
    std::vector<std::string> families;
    families.reserve(by_family.size());
    for (const auto& [fam, members] : by_family) families.push_back(fam);
    rng.shuffle(families);

    std::vector<std::size_t> batch;
    batch.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& candidates = by_family[families[k]];
        batch.push_back(candidates[rng.index(candidates.size())]);
    }
    return batch;
}

std::vector<KinPair> quality_filter(const std::vector<KinPair>& pairs,
                                    const QualityTable& quality, double threshold) {
    std::vector<KinPair> kept;
    for (const auto& p : pairs) {
        const double lower = std::min(quality.score_for(p.img_a), quality.score_for(p.img_b));
        if (lower > threshold) kept.push_back(p);
    }
    return kept;
}

FoldSpec make_folds(const std::vector<KinPair>& pairs, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ProtocolError("fold count must be >= 2");

    const bool any_predef =
        std::any_of(pairs.begin(), pairs.end(), [](const KinPair& p) { return p.fold >= 0; });
    if (any_predef) {
        const bool all_predef = std::all_of(pairs.begin(), pairs.end(),
                                            [](const KinPair& p) { return p.fold >= 0; });
        if (!all_predef) {
            throw DataError("some pairs carry a predefined fold and some do not");
        }
        int max_fold = 0;
        for (const auto& p : pairs) max_fold = std::max(max_fold, p.fold);
        FoldSpec spec;
        spec.fold_count = static_cast<std::size_t>(max_fold) + 1;
        spec.fold_members.resize(spec.fold_count);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            spec.fold_members[static_cast<std::size_t>(pairs[i].fold)].push_back(i);
        }
        spec.validate(pairs.size());
        return spec;
    }

    // Seeded family-disjoint split: pairs follow family_a, heaviest families
    // placed first onto the lightest fold.
    std::map<std::string, std::vector<std::size_t>> by_family;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        by_family[pairs[i].family_a].push_back(i);
    }
    if (by_family.size() < k) {
        throw ProtocolError("fewer families (" + std::to_string(by_family.size()) +
                            ") than folds (" + std::to_string(k) + ")");
    }
    std::vector<std::string> families;
    for (const auto& [fam, members] : by_family) families.push_back(fam);
    Rng rng(seed);
    rng.shuffle(families);
    std::stable_sort(families.begin(), families.end(),
                     [&](const std::string& a, const std::string& b) {
                         return by_family[a].size() > by_family[b].size();
                     });

    FoldSpec spec;
    spec.fold_count = k;
    spec.fold_members.resize(k);
    for (const auto& fam : families) {
        std::size_t lightest = 0;
        for (std::size_t f = 1; f < k; ++f) {
            if (spec.fold_members[f].size() < spec.fold_members[lightest].size()) lightest = f;
        }
        for (std::size_t idx : by_family[fam]) spec.fold_members[lightest].push_back(idx);
    }
    spec.validate(pairs.size());
    return spec;
}

// --- synthetic data ----------------------------------------------------------

namespace {

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::string family_name(std::size_t f) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "f%03zu", f);
    return buf;
}

std::string member_name(std::size_t f, std::size_t m) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "f%03zu_m%02zu", f, m);
    return buf;
}

KinType random_kin_type(Rng& rng) {
    return all_kin_types()[rng.index(all_kin_types().size())];
}

std::vector<KinPair> sample_negatives(const std::vector<std::string>& families,
                                      std::size_t members, std::size_t count, Rng& rng) {
    std::vector<KinPair> negatives;
    std::set<std::pair<std::string, std::string>> seen;
    std::size_t guard = 0;
    while (negatives.size() < count && guard < count * 50 + 100) {
        ++guard;
        const std::size_t fa = rng.index(families.size());
        std::size_t fb = rng.index(families.size());
        if (fa == fb) continue;
        KinPair p;
        p.family_a = families[fa];
        p.family_b = families[fb];
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%s_m%02zu", p.family_a.c_str(), rng.index(members));
        p.img_a = buf;
        std::snprintf(buf, sizeof(buf), "%s_m%02zu", p.family_b.c_str(), rng.index(members));
        p.img_b = buf;
        p.kin_type = random_kin_type(rng);
        p.is_kin = false;
        if (!seen.insert({p.img_a, p.img_b}).second) continue;
        negatives.push_back(std::move(p));
    }
    return negatives;
}

}  // namespace

SyntheticDataset gen_synthetic(const SyntheticConfig& config, const FaCoRConfig& model,
                               std::uint64_t seed) {
    model.validate();
    if (config.families < 2 || config.members_per_family < 2) {
        throw ConfigError("synthetic data needs >= 2 families with >= 2 members each");
    }
    if (config.orthogonal_latents && config.families > model.channels) {
        throw ConfigError("orthogonal latents need families <= channels");
    }

    const std::size_t c = model.channels;
    const std::size_t n = model.positions();
    Rng rng(seed);

    // Family latents: unit vectors, optionally orthonormalized.
    std::vector<std::vector<double>> latents(config.families, std::vector<double>(c));
    for (auto& z : latents) {
        for (double& v : z) v = rng.normal();
    }
    if (config.orthogonal_latents) {
        for (std::size_t f = 0; f < config.families; ++f) {
            for (std::size_t g = 0; g < f; ++g) {
                double dot = 0.0;
                for (std::size_t k = 0; k < c; ++k) dot += latents[f][k] * latents[g][k];
                for (std::size_t k = 0; k < c; ++k) latents[f][k] -= dot * latents[g][k];
            }
            double norm = 0.0;
            for (double v : latents[f]) norm += v * v;
            norm = std::sqrt(norm);
            if (norm < 1e-9) throw NumericError("degenerate latent during orthogonalization");
            for (double& v : latents[f]) v /= norm;
        }
    } else {
        for (auto& z : latents) {
            double norm = 0.0;
            for (double v : z) norm += v * v;
            norm = std::sqrt(norm);
            for (double& v : z) v /= norm;
        }
    }

    SyntheticDataset ds;
    Rng member_rng = rng.child(1);
    Rng quality_rng = rng.child(2);
    for (std::size_t f = 0; f < config.families; ++f) {
        for (std::size_t m = 0; m < config.members_per_family; ++m) {
            std::vector<double> base(c);
            for (std::size_t k = 0; k < c; ++k) {
                base[k] = latents[f][k] + config.noise * member_rng.normal();
            }
            BackboneOutput out;
            out.vec.resize(c);
            for (std::size_t k = 0; k < c; ++k) out.vec[k] = quantize_f32(base[k]);
            out.map = FeatureMap(model.height, model.width, c);
            for (std::size_t pos = 0; pos < n; ++pos) {
                // Deterministic per-position modulation shared by every image
                // gives the cross-attention scores spatial structure.
                for (std::size_t k = 0; k < c; ++k) {
                    const double mod =
                        1.0 + 0.3 * std::sin(0.7 * static_cast<double>(pos + 1) +
                                             0.9 * static_cast<double>(k + 1));
                    const double jitter = 0.5 * config.noise * member_rng.normal();
                    out.map.at(pos, k) = quantize_f32(base[k] * mod + jitter);
                }
            }
            const std::string id = member_name(f, m);
            ds.quality.scores[id] = quantize_f32(quality_rng.uniform(0.05, 1.0));
            ds.image_families.emplace_back(id, family_name(f));
            ds.features.emplace_back(id, std::move(out));
        }
    }

    // Positives: every within-family member pair.
    Rng pair_rng = rng.child(3);
    for (std::size_t f = 0; f < config.families; ++f) {
        for (std::size_t m1 = 0; m1 < config.members_per_family; ++m1) {
            for (std::size_t m2 = m1 + 1; m2 < config.members_per_family; ++m2) {
                KinPair p;
                p.img_a = member_name(f, m1);
                p.img_b = member_name(f, m2);
                p.family_a = p.family_b = family_name(f);
                p.kin_type = random_kin_type(pair_rng);
                p.is_kin = true;
                ds.pairs.push_back(std::move(p));
            }
        }
    }
    const std::size_t positive_count = ds.pairs.size();
    std::vector<std::string> families;
    for (std::size_t f = 0; f < config.families; ++f) families.push_back(family_name(f));
    auto negatives = sample_negatives(families, config.members_per_family,
                                      positive_count * config.negatives_per_positive,
                                      pair_rng);
    ds.pairs.insert(ds.pairs.end(), negatives.begin(), negatives.end());

    // Tri-subjects: members 0/1 act as the parents, the rest as children.
    if (config.members_per_family >= 3) {
        for (std::size_t f = 0; f < config.families; ++f) {
            for (std::size_t m = 2; m < config.members_per_family; ++m) {
                TriSubject t;
                t.img_father = member_name(f, 0);
                t.img_mother = member_name(f, 1);
                t.img_child = member_name(f, m);
                t.type = (m % 2 == 0) ? TriType::FMS : TriType::FMD;
                t.is_kin = true;
                ds.triplets.push_back(t);

                TriSubject neg = t;
                neg.img_child = member_name((f + 1) % config.families, m);
                neg.is_kin = false;
                ds.triplets.push_back(neg);
            }
        }
    }
    return ds;
}

SyntheticSplits synthetic_splits(const SyntheticDataset& dataset, double train_frac,
                                 double val_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0)) {
        throw ConfigError("split fractions must be positive and sum below 1");
    }
    std::set<std::string> family_set;
    std::map<std::string, std::size_t> members_per_family;
    for (const auto& [id, fam] : dataset.image_families) {
        family_set.insert(fam);
        members_per_family[fam] += 1;
    }
    std::vector<std::string> families(family_set.begin(), family_set.end());
    if (families.size() < 3) throw ProtocolError("need at least 3 families to split");
    Rng rng(seed);
    rng.shuffle(families);

    std::size_t n_train = static_cast<std::size_t>(
        std::round(train_frac * static_cast<double>(families.size())));
    std::size_t n_val = static_cast<std::size_t>(
        std::round(val_frac * static_cast<double>(families.size())));
    n_train = std::max<std::size_t>(1, std::min(n_train, families.size() - 2));
    n_val = std::max<std::size_t>(1, std::min(n_val, families.size() - n_train - 1));

    std::map<std::string, int> split_of;  // 0 train, 1 val, 2 test
    for (std::size_t i = 0; i < families.size(); ++i) {
        split_of[families[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    }

    SyntheticSplits out;
    std::array<std::vector<KinPair>*, 3> buckets = {&out.train, &out.val, &out.test};
    std::array<std::vector<std::string>, 3> split_families;
    for (const auto& [fam, split] : split_of) {
        split_families[static_cast<std::size_t>(split)].push_back(fam);
    }
    std::array<std::size_t, 3> positive_counts = {0, 0, 0};
    for (const auto& p : dataset.pairs) {
        if (!p.is_kin) continue;  // negatives are re-sampled per split below
        const std::size_t s = static_cast<std::size_t>(split_of.at(p.family_a));
        buckets[s]->push_back(p);
        positive_counts[s] += 1;
    }
    const std::size_t members = members_per_family.begin()->second;
    for (std::size_t s = 0; s < 3; ++s) {
        Rng split_rng = rng.child(10 + s);
        auto negatives =
            sample_negatives(split_families[s], members, positive_counts[s], split_rng);
        buckets[s]->insert(buckets[s]->end(), negatives.begin(), negatives.end());
    }
    return out;
}

}  // namespace facor
