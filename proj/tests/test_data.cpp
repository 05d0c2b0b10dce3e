#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "facor/data.hpp"
#include "facor/errors.hpp"
#include "facor/evaluation.hpp"
#include "facor/loss.hpp"

using namespace facor;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("facor_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    out << content;
    return path;
}

const char* kHeader = "img_a,img_b,kin_type,label,family_a,family_b\n";

}  // namespace

TEST_CASE("pair list: header-only file yields an empty list") {
    const fs::path dir = temp_dir("pairs_empty");
    const auto pairs = load_pair_list(write_file(dir / "pairs.csv", kHeader));
    CHECK(pairs.empty());
}

TEST_CASE("pair list: four-row fixture parses field for field") {
    const fs::path dir = temp_dir("pairs_fixture");
    const std::string body = std::string(kHeader) +
                             "a1,a2,FD,kin,f1,f1\n"
                             "b1,b2,SS,kin,f2,f2\n"
                             "a1,b2,MD,non-kin,f1,f2\n"
                             "b1,a2,BB,non-kin,f2,f1\n";
    const auto pairs = load_pair_list(write_file(dir / "pairs.csv", body));
    REQUIRE(pairs.size() == 4);
    CHECK(pairs[0].img_a == "a1");
    CHECK(pairs[0].img_b == "a2");
    CHECK(pairs[0].kin_type == KinType::FD);
    CHECK(pairs[0].is_kin);
    CHECK(pairs[0].family_a == "f1");
    CHECK(pairs[0].family_b == "f1");
    CHECK(pairs[0].fold == -1);
    CHECK(pairs[1].kin_type == KinType::SS);
    CHECK_FALSE(pairs[2].is_kin);
    CHECK(pairs[3].kin_type == KinType::BB);

    save_pair_list(dir / "roundtrip.csv", pairs);
    const auto again = load_pair_list(dir / "roundtrip.csv");
    REQUIRE(again.size() == 4);
    CHECK(again[2].img_b == "b2");
}

TEST_CASE("pair list: grandparent types are rejected as out of scope") {
    const fs::path dir = temp_dir("pairs_gfgd");
    const std::string body = std::string(kHeader) + "a,b,GFGD,kin,f1,f1\n";
    CHECK_THROWS_AS(load_pair_list(write_file(dir / "pairs.csv", body)), DataError);
}

TEST_CASE("pair list: duplicates and malformed rows carry line numbers") {
    const fs::path dir = temp_dir("pairs_bad");
    const std::string dup = std::string(kHeader) +
                            "a,b,FD,kin,f1,f1\n"
                            "a,b,FD,non-kin,f1,f2\n";
    try {
        load_pair_list(write_file(dir / "dup.csv", dup));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }

    const std::string malformed = std::string(kHeader) + "a,b,FD,kin,f1\n";
    try {
        load_pair_list(write_file(dir / "short.csv", malformed));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }

    const std::string mismatch = std::string(kHeader) + "a,b,FD,kin,f1,f2\n";
    CHECK_THROWS_AS(load_pair_list(write_file(dir / "mismatch.csv", mismatch)), DataError);
}

TEST_CASE("triplet list round trip") {
    const fs::path dir = temp_dir("triplets");
    std::vector<TriSubject> triplets = {
        {"dad", "mom", "kid", TriType::FMD, true},
        {"dad", "mom", "other", TriType::FMS, false},
    };
    save_triplet_list(dir / "t.csv", triplets);
    const auto loaded = load_triplet_list(dir / "t.csv");
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].img_child == "kid");
    CHECK(loaded[0].type == TriType::FMD);
    CHECK(loaded[1].is_kin == false);
}

TEST_CASE("sample_training_batch: one pair per family at the pigeonhole limit") {
    std::vector<KinPair> pairs;
    for (int f = 0; f < 6; ++f) {
        for (int m = 0; m < 3; ++m) {
            KinPair p;
            p.img_a = "f" + std::to_string(f) + "_a" + std::to_string(m);
            p.img_b = "f" + std::to_string(f) + "_b" + std::to_string(m);
            p.family_a = p.family_b = "f" + std::to_string(f);
            p.is_kin = true;
            pairs.push_back(p);
        }
    }
    Rng rng(5);
    const auto batch = sample_training_batch(pairs, 6, rng);
    REQUIRE(batch.size() == 6);
    std::set<std::string> families;
    for (std::size_t idx : batch) families.insert(pairs[idx].family_a);
    CHECK(families.size() == 6);

    Rng rng_a(9), rng_b(9);
    CHECK(sample_training_batch(pairs, 4, rng_a) == sample_training_batch(pairs, 4, rng_b));

    Rng rng_c(10);
    CHECK_THROWS_AS(sample_training_batch(pairs, 7, rng_c), ProtocolError);
}

TEST_CASE("sample_training_batch: no same-family collisions over 1000 batches") {
    std::vector<KinPair> pairs;
    for (int f = 0; f < 12; ++f) {
        for (int m = 0; m < 4; ++m) {
            KinPair p;
            p.img_a = "f" + std::to_string(f) + "_x" + std::to_string(m);
            p.img_b = "f" + std::to_string(f) + "_y" + std::to_string(m);
            p.family_a = p.family_b = "f" + std::to_string(f);
            p.is_kin = true;
            pairs.push_back(p);
        }
    }
    // Add cross-family negatives that the sampler must skip.
    for (int f = 0; f < 11; ++f) {
        KinPair p;
        p.img_a = "f" + std::to_string(f) + "_x0";
        p.img_b = "f" + std::to_string(f + 1) + "_x0";
        p.family_a = "f" + std::to_string(f);
        p.family_b = "f" + std::to_string(f + 1);
        p.is_kin = false;
        pairs.push_back(p);
    }

    Rng rng(77);
    for (int rep = 0; rep < 1000; ++rep) {
        const auto batch = sample_training_batch(pairs, 8, rng);
        std::set<std::string> families;
        for (std::size_t idx : batch) {
            CHECK(pairs[idx].is_kin);
            families.insert(pairs[idx].family_a);
        }
        CHECK(families.size() == batch.size());
    }
}

TEST_CASE("quality_filter applies the lower-of-pair rule") {
    QualityTable qt;
    qt.scores = {{"a", 0.9}, {"b", 0.4}, {"c", 0.8}, {"d", 0.7}};
    std::vector<KinPair> pairs(2);
    pairs[0].img_a = "a";
    pairs[0].img_b = "b";  // min 0.4
    pairs[1].img_a = "c";
    pairs[1].img_b = "d";  // min 0.7

    const auto kept = quality_filter(pairs, qt, 0.5);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].img_a == "c");

    CHECK(quality_filter(pairs, qt, 0.0).size() == 2);

    std::vector<KinPair> missing(1);
    missing[0].img_a = "a";
    missing[0].img_b = "nope";
    try {
        quality_filter(missing, qt, 0.5);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("nope") != std::string::npos);
    }
}

TEST_CASE("quality_filter fixture and monotonicity") {
    QualityTable qt;
    std::vector<KinPair> pairs;
    const double scores_a[10] = {0.95, 0.30, 0.55, 0.80, 0.20, 0.61, 0.99, 0.45, 0.52, 0.71};
    const double scores_b[10] = {0.90, 0.85, 0.51, 0.40, 0.90, 0.77, 0.53, 0.49, 0.95, 0.05};
    for (int i = 0; i < 10; ++i) {
        const std::string a = "a" + std::to_string(i), b = "b" + std::to_string(i);
        qt.scores[a] = scores_a[i];
        qt.scores[b] = scores_b[i];
        KinPair p;
        p.img_a = a;
        p.img_b = b;
        pairs.push_back(p);
    }
    // min scores: .90 .30 .51 .40 .20 .61 .53 .45 .52 .05 -> above 0.5:
    // indices 0, 2, 5, 6, 8.
    const auto kept = quality_filter(pairs, qt, 0.5);
    REQUIRE(kept.size() == 5);
    CHECK(kept[0].img_a == "a0");
    CHECK(kept[1].img_a == "a2");
    CHECK(kept[2].img_a == "a5");
    CHECK(kept[3].img_a == "a6");
    CHECK(kept[4].img_a == "a8");

    // Raising the threshold never adds a pair.
    std::size_t previous = pairs.size();
    for (double threshold : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        const auto filtered = quality_filter(pairs, qt, threshold);
        CHECK(filtered.size() <= previous);
        previous = filtered.size();
        for (const auto& p : filtered) {
            CHECK(std::min(qt.score_for(p.img_a), qt.score_for(p.img_b)) > threshold);
        }
    }
}

TEST_CASE("make_folds honors predefined folds") {
    std::vector<KinPair> pairs(4);
    for (int i = 0; i < 4; ++i) {
        pairs[i].img_a = "a" + std::to_string(i);
        pairs[i].img_b = "b" + std::to_string(i);
        pairs[i].family_a = pairs[i].family_b = "f" + std::to_string(i);
        pairs[i].fold = i % 2;
    }
    const FoldSpec spec = make_folds(pairs, 5, 1);  // k is ignored for predefined folds
    CHECK(spec.fold_count == 2);
    CHECK(spec.fold_members[0] == std::vector<std::size_t>{0, 2});
    CHECK(spec.fold_members[1] == std::vector<std::size_t>{1, 3});

    pairs[2].fold = -1;
    CHECK_THROWS_AS(make_folds(pairs, 2, 1), DataError);
}

TEST_CASE("make_folds partitions families across folds") {
    std::vector<KinPair> pairs;
    for (int f = 0; f < 50; ++f) {
        for (int m = 0; m < 1 + f % 3; ++m) {
            KinPair p;
            p.img_a = "f" + std::to_string(f) + "_a" + std::to_string(m);
            p.img_b = "f" + std::to_string(f) + "_b" + std::to_string(m);
            p.family_a = p.family_b = "f" + std::to_string(f);
            p.is_kin = true;
            pairs.push_back(p);
        }
    }
    const FoldSpec spec = make_folds(pairs, 5, 123);
    CHECK(spec.fold_count == 5);
    spec.validate(pairs.size());

    std::map<std::string, std::set<std::size_t>> family_folds;
    for (std::size_t f = 0; f < 5; ++f) {
        for (std::size_t idx : spec.fold_members[f]) {
            family_folds[pairs[idx].family_a].insert(f);
        }
    }
    CHECK(family_folds.size() == 50);
    for (const auto& [family, folds] : family_folds) CHECK(folds.size() == 1);

    const FoldSpec again = make_folds(pairs, 5, 123);
    for (std::size_t f = 0; f < 5; ++f) CHECK(spec.fold_members[f] == again.fold_members[f]);

    std::vector<KinPair> tiny(pairs.begin(), pairs.begin() + 3);
    CHECK_THROWS_AS(make_folds(tiny, 5, 1), ProtocolError);
}

TEST_CASE("gen_synthetic: zero noise gives within-family similarity 1") {
    SyntheticConfig sc;
    sc.families = 4;
    sc.members_per_family = 3;
    sc.noise = 0.0;
    const FaCoRConfig model = FaCoRConfig::toy();
    const SyntheticDataset ds = gen_synthetic(sc, model, 99);

    std::map<std::string, BackboneOutput> by_id;
    for (const auto& [id, out] : ds.features) by_id[id] = out;
    for (const auto& p : ds.pairs) {
        if (!p.is_kin) continue;
        const double sim = cosine_similarity(by_id[p.img_a].vec, by_id[p.img_b].vec);
        CHECK(sim == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gen_synthetic: orthogonal latents give zero cross-family similarity") {
    SyntheticConfig sc;
    sc.families = 2;
    sc.members_per_family = 2;
    sc.noise = 0.0;
    sc.orthogonal_latents = true;
    const SyntheticDataset ds = gen_synthetic(sc, FaCoRConfig::toy(), 7);
    std::map<std::string, BackboneOutput> by_id;
    for (const auto& [id, out] : ds.features) by_id[id] = out;
    const double sim =
        cosine_similarity(by_id["f000_m00"].vec, by_id["f001_m00"].vec);
    CHECK(std::abs(sim) < 1e-6);  // f32 quantization leaves a small residue
}

TEST_CASE("gen_synthetic: positive sims dominate negative sims at noise 0.1") {
    SyntheticConfig sc;
    sc.families = 20;
    sc.members_per_family = 4;
    sc.noise = 0.1;
    const SyntheticDataset ds = gen_synthetic(sc, FaCoRConfig::toy(), 17);
    std::map<std::string, BackboneOutput> by_id;
    for (const auto& [id, out] : ds.features) by_id[id] = out;

    std::vector<ScoredPair> scored;
    for (const auto& p : ds.pairs) {
        ScoredPair sp;
        sp.pair = p;
        sp.score = cosine_similarity(by_id[p.img_a].vec, by_id[p.img_b].vec);
        scored.push_back(sp);
    }
    // Rank-sum (Mann-Whitney) dominance of the positive distribution.
    CHECK(roc_auc(scored) > 0.95);
    // Quality scores all land in (0, 1].
    for (const auto& [id, score] : ds.quality.scores) {
        CHECK(score > 0.0);
        CHECK(score <= 1.0);
    }
}

TEST_CASE("synthetic_splits are family-disjoint with split-local negatives") {
    SyntheticConfig sc;
    sc.families = 10;
    sc.members_per_family = 3;
    const SyntheticDataset ds = gen_synthetic(sc, FaCoRConfig::toy(), 3);
    const SyntheticSplits splits = synthetic_splits(ds, 0.6, 0.2, 3);

    auto families_of = [](const std::vector<KinPair>& pairs) {
        std::set<std::string> fams;
        for (const auto& p : pairs) {
            fams.insert(p.family_a);
            fams.insert(p.family_b);
        }
        return fams;
    };
    const auto train_f = families_of(splits.train);
    const auto val_f = families_of(splits.val);
    const auto test_f = families_of(splits.test);
    for (const auto& f : train_f) {
        CHECK(val_f.count(f) == 0);
        CHECK(test_f.count(f) == 0);
    }
    for (const auto& f : val_f) CHECK(test_f.count(f) == 0);

    CHECK(!splits.train.empty());
    CHECK(!splits.val.empty());
    CHECK(!splits.test.empty());

    const SyntheticSplits again = synthetic_splits(ds, 0.6, 0.2, 3);
    CHECK(again.train.size() == splits.train.size());
    for (std::size_t i = 0; i < splits.train.size(); ++i) {
        CHECK(again.train[i].img_a == splits.train[i].img_a);
    }
}

TEST_CASE("quality table round trip and validation") {
    const fs::path dir = temp_dir("quality");
    QualityTable qt;
    qt.scores = {{"x", 0.25}, {"y", 1.0}};
    qt.save(dir / "q.csv");
    const QualityTable loaded = QualityTable::load(dir / "q.csv");
    CHECK(loaded.score_for("x") == doctest::Approx(0.25));
    CHECK(loaded.score_for("y") == doctest::Approx(1.0));

    write_file(dir / "bad.csv", "img,score\nz,1.5\n");
    CHECK_THROWS_AS(QualityTable::load(dir / "bad.csv"), DataError);
}
