// Command-line front end: training, the three evaluation protocols,
// synthetic data generation and attention/embedding export.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "facor/checkpoint.hpp"
#include "facor/data.hpp"
#include "facor/errors.hpp"
#include "facor/evaluation.hpp"
#include "facor/loss.hpp"
#include "facor/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
    return json{
        {"seed", 1},
        {"out", ""},
        {"run_name", ""},
        {"checkpoint", ""},
        {"model",
         {{"height", 4},
          {"width", 4},
          {"channels", 8},
          {"embed_dim", 8},
          {"ci_reduction", 4},
          {"gamma_init", 0.0},
          {"init_mode", "bounded-normal"},
          {"bounded_range", {-0.05, 0.05}},
          {"transpose_beta_for_b", false},
          {"share_projection", true},
          {"bypass_ci", false}}},
        {"loss",
         {{"mode", "rel-guided"},
          {"tau", 0.08},
          {"scale_s", 500.0},
          {"indicator", "global-sum"},
          {"l2_normalize", true}}},
        {"train",
         {{"lr", 1e-4},
          {"momentum", 0.9},
          {"batch_size", 50},
          {"epochs", 50},
          {"freeze_backbone", true},
          {"resume", ""}}},
        {"data",
         {{"features", ""},
          {"train_pairs", ""},
          {"val_pairs", ""},
          {"test_pairs", ""},
          {"triplets", ""},
          {"val_triplets", ""},
          {"quality", ""},
          {"probes", ""},
          {"gallery", ""}}},
        {"synthetic",
         {{"families", 20},
          {"members", 4},
          {"noise", 0.1},
          {"negatives_per_positive", 1},
          {"orthogonal_latents", false},
          {"train_frac", 0.6},
          {"val_frac", 0.2}}},
        {"eval",
         {{"threshold_mode", "best-on-validation"},
          {"threshold", 0.0},
          {"fusion", "mean"},
          {"rank_k", {1, 5, 10}},
          {"bins", {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}},
          {"folds", 5},
          {"kfold_epochs", 2},
          {"scoring", "joint"},
          {"quality_threshold", -1.0},
          {"export_limit", 8}}}};
}

facor::FaCoRConfig model_config_from(const json& j) {
    const json& m = j.at("model");
    facor::FaCoRConfig c;
    c.height = m.value("height", c.height);
    c.width = m.value("width", c.width);
    c.channels = m.value("channels", c.channels);
    c.embed_dim = m.value("embed_dim", c.embed_dim);
    c.ci_reduction = m.value("ci_reduction", c.ci_reduction);
    c.gamma_init = m.value("gamma_init", c.gamma_init);
    const std::string init = m.value("init_mode", std::string("bounded-normal"));
    if (init == "standard") {
        c.init_mode = facor::InitMode::Standard;
    } else if (init == "bounded-normal") {
        c.init_mode = facor::InitMode::BoundedNormal;
    } else {
        throw facor::ConfigError("unknown init_mode '" + init + "'");
    }
    if (m.contains("bounded_range")) {
        c.bounded_lo = m["bounded_range"].at(0).get<double>();
        c.bounded_hi = m["bounded_range"].at(1).get<double>();
    }
    c.transpose_beta_for_b = m.value("transpose_beta_for_b", c.transpose_beta_for_b);
    c.share_projection = m.value("share_projection", c.share_projection);
    c.bypass_ci = m.value("bypass_ci", c.bypass_ci);
    c.validate();
    return c;
}

facor::LossConfig loss_config_from(const json& j) {
    const json& l = j.at("loss");
    facor::LossConfig c;
    const std::string mode = l.value("mode", std::string("rel-guided"));
    if (mode == "fixed-tau") {
        c.mode = facor::TemperatureMode::FixedTau;
    } else if (mode == "rel-guided") {
        c.mode = facor::TemperatureMode::RelGuided;
    } else {
        throw facor::ConfigError("unknown loss mode '" + mode + "'");
    }
    c.tau = l.value("tau", c.tau);
    c.scale_s = l.value("scale_s", c.scale_s);
    const std::string ind = l.value("indicator", std::string("global-sum"));
    if (ind == "global-sum") {
        c.indicator = facor::RelationIndicator::GlobalSum;
    } else if (ind == "global-max-per-row-sum") {
        c.indicator = facor::RelationIndicator::GlobalMaxPerRowSum;
    } else if (ind == "presoftmax-sum") {
        c.indicator = facor::RelationIndicator::PresoftmaxSum;
    } else {
        throw facor::ConfigError("unknown relation indicator '" + ind + "'");
    }
    c.l2_normalize = l.value("l2_normalize", c.l2_normalize);
    c.validate();
    return c;
}

facor::TrainConfig train_config_from(const json& j) {
    facor::TrainConfig c;
    const json& t = j.at("train");
    c.lr = t.value("lr", c.lr);
    c.momentum = t.value("momentum", c.momentum);
    c.batch_size = t.value("batch_size", c.batch_size);
    c.epochs = t.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.freeze_backbone = t.value("freeze_backbone", c.freeze_backbone);
    c.loss = loss_config_from(j);
    c.validate();
    return c;
}

facor::ThresholdPolicy policy_from(const json& j) {
    const json& e = j.at("eval");
    facor::ThresholdPolicy p;
    const std::string mode = e.value("threshold_mode", std::string("best-on-validation"));
    if (mode == "fixed") {
        p.mode = facor::ThresholdMode::Fixed;
    } else if (mode == "best-on-validation") {
        p.mode = facor::ThresholdMode::BestOnValidation;
    } else if (mode == "best-on-test") {
        p.mode = facor::ThresholdMode::BestOnTest;
    } else {
        throw facor::ConfigError("unknown threshold_mode '" + mode + "'");
    }
    p.value = e.value("threshold", 0.0);
    return p;
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_buf{};
    localtime_r(&t, &tm_buf);
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm_buf);
    return buf;
}

void apply_override(json& config, const std::string& spec) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw facor::ConfigError("--override expects key=value, got '" + spec + "'");
    }
    std::string key = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);
    std::string pointer = "/";
    for (char ch : key) pointer += ch == '.' ? '/' : ch;
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::parse_error&) {
        parsed = value;  // plain string
    }
    config[json::json_pointer(pointer)] = parsed;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw facor::DataError("cannot write " + path.string());
    out << text;
}

std::vector<std::pair<std::string, std::string>> load_image_family_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw facor::DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "img,family") {
        throw facor::ParseError(path.string() + ": expected header 'img,family'");
    }
    std::vector<std::pair<std::string, std::string>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw facor::ParseError(path.string() + ":" + std::to_string(line_no) +
                                    ": expected 2 fields");
        }
        rows.emplace_back(line.substr(0, comma), line.substr(comma + 1));
    }
    return rows;
}

void write_image_family_csv(const fs::path& path,
                            const std::vector<std::pair<std::string, std::string>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    out << "img,family\n";
    for (const auto& [img, family] : rows) out << img << ',' << family << "\n";
}

fs::path required_path(const json& config, const std::string& key) {
    const std::string value = config.at("data").value(key, std::string());
    if (value.empty()) {
        throw facor::ConfigError("config data." + key + " is required for this command");
    }
    if (!fs::exists(value)) {
        throw facor::DataError("data." + key + " path does not exist: " + value);
    }
    return value;
}

facor::FaCoRParams load_model_params(const json& config, const facor::FaCoRConfig& model,
                                     std::uint64_t seed) {
    const std::string checkpoint = config.value("checkpoint", std::string());
    facor::FaCoRParams params = facor::init_params(model, seed);
    if (checkpoint.empty()) {
        std::cerr << "note: no checkpoint configured, using seeded initial parameters\n";
        return params;
    }
    const facor::TensorBundle bundle = facor::load_bundle(checkpoint);
    for (auto& nt : params.named_tensors()) {
        const facor::Tensor& stored = bundle.at("param." + nt.name);
        if (!stored.same_shape(*nt.tensor)) {
            throw facor::DataError("checkpoint tensor param." + nt.name +
                                   " does not match the configured model dims");
        }
        *nt.tensor = stored;
    }
    return params;
}

// Mass heatmap as an ASCII portable graymap, row-major H x W.
void write_pgm(const fs::path& path, const std::vector<double>& mass, std::size_t height,
               std::size_t width) {
    double max_mass = 0.0;
    for (double m : mass) max_mass = std::max(max_mass, m);
    std::ostringstream out;
    out << "P2\n# attention mass, max=" << max_mass << "\n" << width << ' ' << height
        << "\n255\n";
    for (std::size_t h = 0; h < height; ++h) {
        for (std::size_t w = 0; w < width; ++w) {
            const double v = mass[h * width + w];
            const int pixel =
                max_mass > 0.0 ? static_cast<int>(std::lround(255.0 * v / max_mass)) : 0;
            out << pixel << (w + 1 < width ? " " : "\n");
        }
    }
    write_text(path, out.str());
}

// --- commands ----------------------------------------------------------------

int cmd_gen_synthetic(const json& config, const fs::path& run_dir) {
    const facor::FaCoRConfig model = model_config_from(config);
    const json& s = config.at("synthetic");
    facor::SyntheticConfig sc;
    sc.families = s.value("families", sc.families);
    sc.members_per_family = s.value("members", sc.members_per_family);
    sc.noise = s.value("noise", sc.noise);
    sc.negatives_per_positive = s.value("negatives_per_positive", sc.negatives_per_positive);
    sc.orthogonal_latents = s.value("orthogonal_latents", sc.orthogonal_latents);
    const std::uint64_t seed = config.at("seed").get<std::uint64_t>();

    const facor::SyntheticDataset ds = facor::gen_synthetic(sc, model, seed);
    facor::write_feature_store(run_dir / "features.manifest", ds.features);
    facor::save_pair_list(run_dir / "pairs_all.csv", ds.pairs);
    const auto splits = facor::synthetic_splits(ds, s.value("train_frac", 0.6),
                                                s.value("val_frac", 0.2), seed);
    facor::save_pair_list(run_dir / "pairs_train.csv", splits.train);
    facor::save_pair_list(run_dir / "pairs_val.csv", splits.val);
    facor::save_pair_list(run_dir / "pairs_test.csv", splits.test);
    facor::save_triplet_list(run_dir / "triplets.csv", ds.triplets);
    ds.quality.save(run_dir / "quality.csv");

    // Retrieval protocol files: first member of every family probes the rest.
    std::vector<std::pair<std::string, std::string>> probes, gallery;
    std::string last_family;
    for (const auto& [id, family] : ds.image_families) {
        if (family != last_family) {
            probes.emplace_back(id, family);
            last_family = family;
        } else {
            gallery.emplace_back(id, family);
        }
    }
    write_image_family_csv(run_dir / "probes.csv", probes);
    write_image_family_csv(run_dir / "gallery.csv", gallery);

    std::cout << "synthetic dataset: " << ds.features.size() << " images, " << ds.pairs.size()
              << " pairs (" << splits.train.size() << "/" << splits.val.size() << "/"
              << splits.test.size() << " train/val/test), " << ds.triplets.size()
              << " triplets\nwrote " << (run_dir / "features.manifest").string() << "\n";
    return 0;
}

int cmd_train(const json& config, const fs::path& run_dir) {
    const facor::FaCoRConfig model = model_config_from(config);
    const facor::TrainConfig tc = train_config_from(config);
    facor::ManifestFeatureProvider provider(
        facor::FeatureManifest::load(required_path(config, "features")));
    const auto pairs = facor::load_pair_list(required_path(config, "train_pairs"));

    facor::FaCoRParams params = facor::init_params(model, tc.seed);
    const std::string resume = config.at("train").value("resume", std::string());
    const facor::TrainResult result =
        facor::train(tc, pairs, provider, params, model, run_dir, resume);

    std::cout << "trained " << tc.epochs << " epochs; mean loss "
              << result.epoch_mean_loss.front() << " -> " << result.epoch_mean_loss.back()
              << "\ncheckpoint: " << result.final_checkpoint.string() << "\n";
    return 0;
}

int cmd_eval_verification(const json& config, const fs::path& run_dir) {
    const facor::FaCoRConfig model = model_config_from(config);
    const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
    facor::ManifestFeatureProvider provider(
        facor::FeatureManifest::load(required_path(config, "features")));
    facor::FaCoRParams params = load_model_params(config, model, seed);

    auto pairs = facor::load_pair_list(required_path(config, "test_pairs"));
    const double quality_threshold = config.at("eval").value("quality_threshold", -1.0);
    facor::QualityTable quality;
    const std::string quality_path = config.at("data").value("quality", std::string());
    if (!quality_path.empty()) quality = facor::QualityTable::load(quality_path);
    if (quality_threshold >= 0.0) {
        if (quality_path.empty()) {
            throw facor::ConfigError("quality_threshold set but data.quality missing");
        }
        pairs = facor::quality_filter(pairs, quality, quality_threshold);
    }

    const std::string scoring = config.at("eval").value("scoring", std::string("joint"));
    const facor::PairScorer scorer = scoring == "vec"
                                         ? facor::make_vec_scorer(provider)
                                         : facor::make_joint_scorer(params, model, provider);

    const auto scored = facor::score_pairs(pairs, scorer);
    std::vector<facor::ScoredPair> scored_val;
    const std::string val_path = config.at("data").value("val_pairs", std::string());
    if (!val_path.empty()) {
        scored_val = facor::score_pairs(facor::load_pair_list(val_path), scorer);
    }

    const facor::VerificationReport report = facor::verification_eval(
        scored, policy_from(config), scored_val.empty() ? nullptr : &scored_val);

    facor::write_scores_csv(run_dir / "scores.csv", scored);
    write_text(run_dir / "report_verification.csv", report.to_csv());
    write_text(run_dir / "report_verification.txt", report.to_text());
    std::cout << report.to_text();

    if (!quality_path.empty()) {
        const auto bins = config.at("eval").value("bins", std::vector<double>());
        const facor::QualityBinnedReport qreport = facor::quality_binned_eval(
            scored, quality, bins, policy_from(config),
            scored_val.empty() ? nullptr : &scored_val);
        write_text(run_dir / "report_quality_bins.csv", qreport.to_csv());
        write_text(run_dir / "report_quality_bins.txt", qreport.to_text());
        std::cout << qreport.to_text();
    }
    return 0;
}

int cmd_eval_trisubject(const json& config, const fs::path& run_dir) {
    const facor::FaCoRConfig model = model_config_from(config);
    const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
    facor::ManifestFeatureProvider provider(
        facor::FeatureManifest::load(required_path(config, "features")));
    facor::FaCoRParams params = load_model_params(config, model, seed);

    const auto triplets = facor::load_triplet_list(required_path(config, "triplets"));
    std::vector<facor::TriSubject> val_triplets;
    const std::string val_path = config.at("data").value("val_triplets", std::string());
    if (!val_path.empty()) val_triplets = facor::load_triplet_list(val_path);

    const std::string fusion_name = config.at("eval").value("fusion", std::string("mean"));
    facor::Fusion fusion = facor::Fusion::Mean;
    if (fusion_name == "max") fusion = facor::Fusion::Max;
    else if (fusion_name == "min") fusion = facor::Fusion::Min;
    else if (fusion_name != "mean") {
        throw facor::ConfigError("unknown fusion '" + fusion_name + "'");
    }

    const facor::PairScorer scorer = facor::make_joint_scorer(params, model, provider);
    const facor::TriSubjectReport report =
        facor::tri_subject_eval(triplets, scorer, fusion, policy_from(config),
                                val_triplets.empty() ? nullptr : &val_triplets);
    write_text(run_dir / "report_trisubject.csv", report.to_csv());
    write_text(run_dir / "report_trisubject.txt", report.to_text());
    std::cout << report.to_text();
    return 0;
}

int cmd_eval_retrieval(const json& config, const fs::path& run_dir) {
    const facor::FaCoRConfig model = model_config_from(config);
    const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
    facor::ManifestFeatureProvider provider(
        facor::FeatureManifest::load(required_path(config, "features")));
    facor::FaCoRParams params = load_model_params(config, model, seed);

    const auto probes = load_image_family_csv(required_path(config, "probes"));
    const auto gallery = load_image_family_csv(required_path(config, "gallery"));
    const auto ks = config.at("eval").value("rank_k", std::vector<std::size_t>{1, 5, 10});

    const std::string scoring = config.at("eval").value("scoring", std::string("joint"));
    const facor::PairScorer scorer = scoring == "vec"
                                         ? facor::make_vec_scorer(provider)
                                         : facor::make_joint_scorer(params, model, provider);

    const facor::RetrievalResult result = facor::retrieval_eval(probes, gallery, scorer, ks);
    write_text(run_dir / "report_retrieval.csv", result.to_csv());
    write_text(run_dir / "report_retrieval.txt", result.to_text());

    std::ostringstream ranked;
    ranked << "probe,rank,gallery,average_precision\n";
    ranked.precision(17);
    for (const auto& pr : result.probes) {
        for (std::size_t r = 0; r < pr.ranked_gallery.size(); ++r) {
            ranked << pr.probe << ',' << r + 1 << ',' << pr.ranked_gallery[r] << ','
                   << pr.average_precision << "\n";
        }
    }
    write_text(run_dir / "rankings.csv", ranked.str());
    std::cout << result.to_text();
    return 0;
}

int cmd_eval_kfold(const json& config, const fs::path& run_dir) {
    const facor::FaCoRConfig model = model_config_from(config);
    facor::TrainConfig tc = train_config_from(config);
    tc.epochs = config.at("eval").value("kfold_epochs", std::size_t{2});
    facor::ManifestFeatureProvider provider(
        facor::FeatureManifest::load(required_path(config, "features")));
    const auto pairs = facor::load_pair_list(required_path(config, "train_pairs"));
    const std::size_t k = config.at("eval").value("folds", std::size_t{5});
    const std::uint64_t seed = config.at("seed").get<std::uint64_t>();

    const facor::FoldSpec folds = facor::make_folds(pairs, k, seed);
    std::size_t fold_index = 0;
    const facor::FoldClosure closure = [&](const std::vector<facor::KinPair>& train_pairs,
                                           const std::vector<facor::KinPair>& test_pairs) {
        facor::FaCoRParams params = facor::init_params(model, seed);
        if (tc.epochs > 0) {
            facor::train(tc, train_pairs, provider, params, model,
                         run_dir / ("fold_" + std::to_string(fold_index)));
        }
        ++fold_index;
        const auto scored =
            facor::score_pairs(test_pairs, facor::make_joint_scorer(params, model, provider));
        facor::ThresholdPolicy policy;
        policy.mode = facor::ThresholdMode::BestOnTest;
        const facor::VerificationReport vr = facor::verification_eval(scored, policy);
        facor::FoldOutcome outcome;
        outcome.average = vr.average;
        for (const auto& ta : vr.per_type) {
            if (ta.included) outcome.per_type[facor::to_string(ta.type)] = ta.accuracy;
        }
        return outcome;
    };

    const facor::KfoldReport report = facor::kfold_eval(folds, pairs, closure);
    write_text(run_dir / "report_kfold.csv", report.to_csv());
    write_text(run_dir / "report_kfold.txt", report.to_text());
    std::cout << report.to_text();
    return 0;
}

int cmd_export_attention(const json& config, const fs::path& run_dir) {
    const facor::FaCoRConfig model = model_config_from(config);
    const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
    facor::ManifestFeatureProvider provider(
        facor::FeatureManifest::load(required_path(config, "features")));
    facor::FaCoRParams params = load_model_params(config, model, seed);
    const auto pairs = facor::load_pair_list(required_path(config, "test_pairs"));
    const std::size_t limit = config.at("eval").value("export_limit", std::size_t{8});

    const fs::path dir = run_dir / "attention";
    fs::create_directories(dir);
    std::ostringstream index;
    index << "pair,img_a,img_b,kin_type,label\n";
    const std::size_t n = model.positions();
    for (std::size_t i = 0; i < pairs.size() && i < limit; ++i) {
        const facor::KinPair& p = pairs[i];
        const facor::BackboneOutput a = provider.features(p.img_a);
        const facor::BackboneOutput b = provider.features(p.img_b);
        const facor::PairEmbedding out =
            facor::facor_forward(a.map, b.map, a.vec, b.vec, params, model);

        std::ostringstream beta_csv;
        beta_csv.precision(17);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t s = 0; s < n; ++s) {
                beta_csv << out.attention.beta[j * n + s] << (s + 1 < n ? "," : "\n");
            }
        }
        const std::string stem = "pair_" + std::to_string(i);
        write_text(dir / (stem + "_beta.csv"), beta_csv.str());

        // Image a: column mass (attention received per source position).
        // Image b: row mass (a row-stochastic map, so this is flat by
        // construction).
        std::vector<double> col_mass(n, 0.0), row_mass(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t s = 0; s < n; ++s) {
                col_mass[s] += out.attention.beta[j * n + s];
                row_mass[j] += out.attention.beta[j * n + s];
            }
        }
        write_pgm(dir / (stem + "_a.pgm"), col_mass, model.height, model.width);
        write_pgm(dir / (stem + "_b.pgm"), row_mass, model.height, model.width);
        index << i << ',' << p.img_a << ',' << p.img_b << ',' << to_string(p.kin_type) << ','
              << (p.is_kin ? "kin" : "non-kin") << "\n";
    }
    write_text(dir / "index.csv", index.str());
    std::cout << "wrote attention exports to " << dir.string() << "\n";
    return 0;
}

int cmd_export_embeddings(const json& config, const fs::path& run_dir) {
    const facor::FaCoRConfig model = model_config_from(config);
    const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
    facor::ManifestFeatureProvider provider(
        facor::FeatureManifest::load(required_path(config, "features")));
    facor::FaCoRParams params = load_model_params(config, model, seed);
    const auto pairs = facor::load_pair_list(required_path(config, "test_pairs"));

    facor::TensorBundle bundle;
    std::ostringstream index;
    index << "pair,img_a,img_b,kin_type,label\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const facor::KinPair& p = pairs[i];
        const facor::BackboneOutput a = provider.features(p.img_a);
        const facor::BackboneOutput b = provider.features(p.img_b);
        const facor::PairEmbedding out =
            facor::facor_forward(a.map, b.map, a.vec, b.vec, params, model);
        const std::string stem = "p" + std::to_string(i);
        bundle.put(stem + ".a", facor::Tensor({out.x_out_a.size()}, out.x_out_a));
        bundle.put(stem + ".b", facor::Tensor({out.x_out_b.size()}, out.x_out_b));
        index << i << ',' << p.img_a << ',' << p.img_b << ',' << to_string(p.kin_type) << ','
              << (p.is_kin ? "kin" : "non-kin") << "\n";
    }
    facor::save_bundle(run_dir / "embeddings.manifest", bundle, facor::Dtype::F32);
    write_text(run_dir / "embeddings_index.csv", index.str());
    std::cout << "wrote " << pairs.size() << " pair embeddings to "
              << (run_dir / "embeddings.manifest").string() << "\n";
    return 0;
}

int cmd_gradcheck(const json& config, const fs::path& run_dir) {
    const facor::FaCoRConfig model = model_config_from(config);
    const facor::LossConfig loss = loss_config_from(config);
    const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
    const facor::GradCheckReport report =
        facor::full_model_grad_check(model, loss, 3, seed, 1e-5);
    write_text(run_dir / "gradcheck.txt", report.to_text());
    std::cout << report.to_text();
    if (report.max_rel_error >= 1e-4) {
        std::cerr << "gradient check FAILED (>= 1e-4)\n";
        return 1;
    }
    std::cout << "gradient check passed (< 1e-4)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"facornet: cross-attention kinship recognition at desk scale"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_flag;
    long long seed_flag = -1;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed_flag, "seed override");
    app.add_option("--out", out_flag, "output directory (or env FACOR_OUT; default ./runs)");
    app.add_option("--override", overrides, "config override key=value (repeatable)");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"train", "train the fusion module with the configured contrastive loss"},
        {"eval-verification", "one-to-one kinship verification over scored pairs"},
        {"eval-trisubject", "one-to-two verification with parent score fusion"},
        {"eval-retrieval", "many-to-many search & retrieval (Rank@K, mAP)"},
        {"eval-kfold", "k-fold cross-validation (train + evaluate per fold)"},
        {"gen-synthetic", "generate the synthetic desk-scale dataset"},
        {"export-attention", "dump attention maps as CSV + PGM heatmaps"},
        {"export-embeddings", "dump fused pair embeddings for external projection"},
        {"gradcheck", "finite-difference check of the full toy model"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        json config = default_config();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw facor::DataError("cannot open config " + config_path);
            json from_file = json::parse(in);
            config.merge_patch(from_file);
        }
        for (const auto& o : overrides) apply_override(config, o);
        if (seed_flag >= 0) config["seed"] = seed_flag;

        std::string out_dir = config.value("out", std::string());
        if (!out_flag.empty()) out_dir = out_flag;
        if (out_dir.empty()) {
            const char* env = std::getenv("FACOR_OUT");
            out_dir = env ? env : "runs";
        }
        config["out"] = out_dir;

        const std::string command = app.get_subcommands().front()->get_name();
        std::string run_name = config.value("run_name", std::string());
        if (run_name.empty()) run_name = command + "-" + timestamp();
        config["run_name"] = run_name;

        const fs::path run_dir = fs::path(out_dir) / run_name;
        fs::create_directories(run_dir);
        write_text(run_dir / "config.resolved.json", config.dump(2) + "\n");

        if (command == "train") return cmd_train(config, run_dir);
        if (command == "eval-verification") return cmd_eval_verification(config, run_dir);
        if (command == "eval-trisubject") return cmd_eval_trisubject(config, run_dir);
        if (command == "eval-retrieval") return cmd_eval_retrieval(config, run_dir);
        if (command == "eval-kfold") return cmd_eval_kfold(config, run_dir);
        if (command == "gen-synthetic") return cmd_gen_synthetic(config, run_dir);
        if (command == "export-attention") return cmd_export_attention(config, run_dir);
        if (command == "export-embeddings") return cmd_export_embeddings(config, run_dir);
        if (command == "gradcheck") return cmd_gradcheck(config, run_dir);
        std::cerr << "unknown command " << command << "\n";
        return 2;
    } catch (const facor::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
