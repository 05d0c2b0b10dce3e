#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "facor/backbone.hpp"
#include "facor/rng.hpp"

namespace facor {

// The seven in-scope relationship types. Grandparent-grandchild types are
// rejected at parse time.
enum class KinType { BB, SS, SIBS, FD, MD, FS, MS };
enum class TriType { FMD, FMS };

std::string to_string(KinType t);
std::string to_string(TriType t);
KinType parse_kin_type(const std::string& text);  // DataError on unknown types
TriType parse_tri_type(const std::string& text);
const std::array<KinType, 7>& all_kin_types();

struct KinPair {
    std::string img_a, img_b;
    KinType kin_type = KinType::BB;
    bool is_kin = false;
    std::string family_a, family_b;
    int fold = -1;  // predefined fold, -1 when the source has none
};

struct TriSubject {
    std::string img_father, img_mother, img_child;
    TriType type = TriType::FMD;
    bool is_kin = false;
};

struct QualityTable {
    std::map<std::string, double> scores;  // image id -> score in [0, 1]

    double score_for(const std::string& id) const;  // DataError naming the id
    static QualityTable load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

struct FoldSpec {
    std::size_t fold_count = 0;
    std::vector<std::vector<std::size_t>> fold_members;  // pair indices per fold

    void validate(std::size_t pair_count) const;  // disjoint and covering
};

// CSV with header img_a,img_b,kin_type,label,family_a,family_b[,fold].
std::vector<KinPair> load_pair_list(const std::filesystem::path& path);
void save_pair_list(const std::filesystem::path& path, const std::vector<KinPair>& pairs);

// CSV with header img_father,img_mother,img_child,type,label.
std::vector<TriSubject> load_triplet_list(const std::filesystem::path& path);
void save_triplet_list(const std::filesystem::path& path,
                       const std::vector<TriSubject>& triplets);

// Samples n positive pairs, no two from the same family, without
// replacement; returns indices into `pairs`. Deterministic given the rng.
std::vector<std::size_t> sample_training_batch(const std::vector<KinPair>& pairs,
                                               std::size_t n, Rng& rng);

// Keeps pairs whose lower per-image quality score exceeds the threshold.
std::vector<KinPair> quality_filter(const std::vector<KinPair>& pairs,
                                    const QualityTable& quality, double threshold);

// Family-disjoint folds. Honors a predefined fold column when every pair
// carries one; pairs are otherwise assigned by family_a with a seeded
// balanced split.
FoldSpec make_folds(const std::vector<KinPair>& pairs, std::size_t k, std::uint64_t seed);

// --- synthetic desk-scale data ---------------------------------------------

struct SyntheticConfig {
    std::size_t families = 20;
    std::size_t members_per_family = 4;
    double noise = 0.1;
    std::size_t negatives_per_positive = 1;
    bool orthogonal_latents = false;  // requires families <= channels
};

struct SyntheticDataset {
    std::vector<std::pair<std::string, BackboneOutput>> features;
    std::vector<std::pair<std::string, std::string>> image_families;  // id -> family
    std::vector<KinPair> pairs;      // positives plus sampled negatives
    std::vector<TriSubject> triplets;
    QualityTable quality;
};

// Family latent + per-member noise; features are quantized through f32 so a
// store round trip is bit-exact. Deterministic given the seed.
SyntheticDataset gen_synthetic(const SyntheticConfig& config, const FaCoRConfig& model,
                               std::uint64_t seed);

// Family-disjoint train/val/test split of the positives, with fresh
// split-local negatives so no negative straddles two splits.
struct SyntheticSplits {
    std::vector<KinPair> train, val, test;
};
SyntheticSplits synthetic_splits(const SyntheticDataset& dataset, double train_frac,
                                 double val_frac, std::uint64_t seed);

}  // namespace facor
