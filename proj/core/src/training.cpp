#include "facor/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "facor/checkpoint.hpp"
#include "facor/errors.hpp"

namespace facor {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!std::isfinite(lr) || lr < 0.0) throw ConfigError("learning rate must be >= 0 and finite");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    loss.validate();
}

namespace {

TemperatureMode parse_mode(const std::string& text) {
    if (text == "fixed-tau") return TemperatureMode::FixedTau;
    if (text == "rel-guided") return TemperatureMode::RelGuided;
    throw ConfigError("unknown loss mode '" + text + "'");
}

RelationIndicator parse_indicator(const std::string& text) {
    if (text == "global-sum") return RelationIndicator::GlobalSum;
    if (text == "global-max-per-row-sum") return RelationIndicator::GlobalMaxPerRowSum;
    if (text == "presoftmax-sum") return RelationIndicator::PresoftmaxSum;
    throw ConfigError("unknown relation indicator '" + text + "'");
}

}  // namespace

TrainConfig train_config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.freeze_backbone = j.value("freeze_backbone", c.freeze_backbone);
    if (j.contains("loss")) {
        const json& l = j["loss"];
        if (l.contains("mode")) c.loss.mode = parse_mode(l["mode"].get<std::string>());
        c.loss.tau = l.value("tau", c.loss.tau);
        c.loss.scale_s = l.value("scale_s", c.loss.scale_s);
        if (l.contains("indicator")) {
            c.loss.indicator = parse_indicator(l["indicator"].get<std::string>());
        }
        c.loss.l2_normalize = l.value("l2_normalize", c.loss.l2_normalize);
    }
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return train_config_from_json(buffer.str());
}

ManifestFeatureProvider::ManifestFeatureProvider(FeatureManifest manifest)
    : manifest_(std::move(manifest)) {}

BackboneOutput ManifestFeatureProvider::features(const std::string& image_id) {
    auto it = cache_.find(image_id);
    if (it != cache_.end()) return it->second;
    BackboneOutput out = load_precomputed(manifest_, image_id);
    cache_[image_id] = out;
    return out;
}

MemoryFeatureProvider::MemoryFeatureProvider(
    const std::vector<std::pair<std::string, BackboneOutput>>& features) {
    for (const auto& [id, out] : features) features_[id] = out;
}

BackboneOutput MemoryFeatureProvider::features(const std::string& image_id) {
    auto it = features_.find(image_id);
    if (it == features_.end()) throw LookupError("no features for image '" + image_id + "'");
    return it->second;
}

ToyBackboneProvider::ToyBackboneProvider(std::map<std::string, ImageTensor> images,
                                         ToyBackboneParams params, FaCoRConfig config)
    : images_(std::move(images)),
      params_(std::move(params)),
      grads_(zeros_like(params_)),
      config_(config) {}

BackboneOutput ToyBackboneProvider::features(const std::string& image_id) {
    auto it = images_.find(image_id);
    if (it == images_.end()) throw LookupError("no image '" + image_id + "'");
    ToyBackboneTrace trace = toy_backbone_forward_trace(it->second, params_, config_);
    BackboneOutput out{trace.map, trace.vec};
    traces_[image_id] = std::move(trace);
    return out;
}

std::vector<NamedTensor> ToyBackboneProvider::parameters() { return params_.named_tensors(); }
std::vector<NamedTensor> ToyBackboneProvider::gradients() { return grads_.named_tensors(); }

void ToyBackboneProvider::zero_gradients() {
    zero_all(grads_);
    traces_.clear();
}

void ToyBackboneProvider::backward(const std::string& image_id, const FeatureMap& d_map,
                                   const Vec& d_vec) {
    auto it = traces_.find(image_id);
    if (it == traces_.end()) {
        throw ProtocolError("backward for '" + image_id + "' without a cached forward");
    }
    toy_backbone_backward(it->second, params_, config_, d_map, d_vec, grads_);
}

void sgd_step(const std::vector<NamedTensor>& params, const std::vector<NamedTensor>& grads,
              std::vector<Tensor>& momentum, double lr, double mu) {
    if (params.size() != grads.size() || params.size() != momentum.size()) {
        throw ConfigError("sgd_step: parameter/gradient/momentum counts disagree");
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& theta = *params[t].tensor;
        const Tensor& g = *grads[t].tensor;
        Tensor& v = momentum[t];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            v[i] = mu * v[i] - lr * g[i];
            theta[i] += v[i];
        }
    }
}

void save_train_checkpoint(const std::filesystem::path& manifest_path, FaCoRParams& params,
                           FeatureProvider& provider, const std::vector<Tensor>& momentum,
                           std::size_t next_epoch) {
    TensorBundle bundle;
    std::vector<NamedTensor> all = params.named_tensors();
    for (auto& nt : provider.parameters()) all.push_back(nt);
    for (const auto& nt : all) bundle.put("param." + nt.name, *nt.tensor);
    for (std::size_t t = 0; t < momentum.size() && t < all.size(); ++t) {
        bundle.put("momentum." + all[t].name, momentum[t]);
    }
    bundle.put("meta.next_epoch", Tensor({1}, static_cast<double>(next_epoch)));
    save_bundle(manifest_path, bundle, Dtype::F64);
}

namespace {

std::size_t restore_train_checkpoint(const std::filesystem::path& manifest_path,
                                     FaCoRParams& params, FeatureProvider& provider,
                                     std::vector<Tensor>& momentum) {
    const TensorBundle bundle = load_bundle(manifest_path);
    std::vector<NamedTensor> all = params.named_tensors();
    for (auto& nt : provider.parameters()) all.push_back(nt);
    for (std::size_t t = 0; t < all.size(); ++t) {
        const Tensor& stored = bundle.at("param." + all[t].name);
        if (!stored.same_shape(*all[t].tensor)) {
            throw DataError("checkpoint tensor 'param." + all[t].name +
                            "' has shape " + stored.shape_string());
        }
        *all[t].tensor = stored;
        if (const Tensor* m = bundle.find("momentum." + all[t].name)) {
            if (t < momentum.size()) momentum[t] = *m;
        }
    }
    return static_cast<std::size_t>(bundle.at("meta.next_epoch")[0]);
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<KinPair>& pairs,
                  FeatureProvider& provider, FaCoRParams& params,
                  const FaCoRConfig& model_config, const std::filesystem::path& out_dir,
                  const std::filesystem::path& resume_checkpoint) {
    config.validate();
    model_config.validate();
    std::filesystem::create_directories(out_dir);

    std::size_t positive_count = 0;
    for (const auto& p : pairs) positive_count += p.is_kin ? 1 : 0;
    const std::size_t batches_per_epoch =
        std::max<std::size_t>(1, positive_count / config.batch_size);

    const bool train_backbone = provider.trainable() && !config.freeze_backbone;

    // Optimizer state covers the fusion parameters plus, when unfrozen, the
    // backbone's. Frozen backbone parameters are still checkpointed so an
    // evaluation run restores the complete model.
    std::vector<NamedTensor> opt_params = params.named_tensors();
    if (train_backbone) {
        for (auto& nt : provider.parameters()) opt_params.push_back(nt);
    }
    std::vector<Tensor> momentum;
    momentum.reserve(opt_params.size());
    for (const auto& nt : opt_params) {
        momentum.emplace_back(nt.tensor->shape(), 0.0);
    }

    std::size_t start_epoch = 0;
    if (!resume_checkpoint.empty()) {
        start_epoch = restore_train_checkpoint(resume_checkpoint, params, provider, momentum);
    }

    FaCoRParams grads = zeros_like(params);
    TrainResult result;

    for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t batch = 0; batch < batches_per_epoch; ++batch) {
            Rng batch_rng =
                Rng(config.seed).child(1 + epoch * batches_per_epoch + batch);
            const std::vector<std::size_t> chosen =
                sample_training_batch(pairs, config.batch_size, batch_rng);

            provider.zero_gradients();
            std::vector<FacorTrace> traces;
            traces.reserve(chosen.size());
            LossBatch lb;
            for (std::size_t idx : chosen) {
                const KinPair& p = pairs[idx];
                const BackboneOutput a = provider.features(p.img_a);
                const BackboneOutput b = provider.features(p.img_b);
                traces.push_back(
                    facor_forward_trace(a.map, b.map, a.vec, b.vec, params, model_config));
                lb.pairs.push_back(traces.back().out());
                lb.kin_types.push_back(to_string(p.kin_type));
            }

            const LossValue lv = batch_loss_with_grads(lb, config.loss);
            if (!std::isfinite(lv.value)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << " batch " << batch
                    << "; psi values:";
                for (double p : lv.psi) msg << ' ' << p;
                throw NumericError(msg.str());
            }

            zero_all(grads);
            for (std::size_t i = 0; i < chosen.size(); ++i) {
                FacorCotangents cot;
                cot.d_x_out_a = lv.d_x[i];
                cot.d_x_out_b = lv.d_y[i];
                temperature_backward(lb.pairs[i].attention, config.loss, lv.d_psi[i],
                                     cot.d_beta, cot.d_score);
                const FacorInputGrads ig =
                    facor_backward(traces[i], params, model_config, cot, grads);
                if (train_backbone) {
                    const KinPair& p = pairs[chosen[i]];
                    provider.backward(p.img_a, ig.d_xa, ig.d_ra);
                    provider.backward(p.img_b, ig.d_xb, ig.d_rb);
                }
            }

            std::vector<NamedTensor> opt_grads = grads.named_tensors();
            if (train_backbone) {
                for (auto& nt : provider.gradients()) opt_grads.push_back(nt);
            }
            sgd_step(opt_params, opt_grads, momentum, config.lr, config.momentum);

            epoch_loss += lv.value;
            result.history.push_back({epoch, batch, lv.value, lv.psi_mean()});
        }
        result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(batches_per_epoch));

        char name[48];
        std::snprintf(name, sizeof(name), "checkpoint_epoch_%04zu.manifest", epoch);
        save_train_checkpoint(out_dir / name, params, provider, momentum, epoch + 1);
    }

    result.final_checkpoint = out_dir / "checkpoint_final.manifest";
    save_train_checkpoint(result.final_checkpoint, params, provider, momentum, config.epochs);

    std::ofstream history(out_dir / "loss_history.csv", std::ios::trunc);
    history << "epoch,batch,loss,psi_mean\n";
    history.precision(17);
    for (const auto& row : result.history) {
        history << row.epoch << ',' << row.batch << ',' << row.loss << ',' << row.psi_mean
                << "\n";
    }
    return result;
}

// --- gradient verification ----------------------------------------------------

std::string GradCheckReport::to_text() const {
    std::ostringstream out;
    out.precision(3);
    for (const auto& e : tensors) {
        out << e.name << "  max_rel_error=" << std::scientific << e.max_rel_error
            << "  (analytic=" << e.analytic << ", numeric=" << e.numeric << " at index "
            << e.worst_index << ")\n";
    }
    out << "worst: " << worst_tensor << " with max_rel_error=" << std::scientific
        << max_rel_error << "\n";
    return out.str();
}

GradCheckReport grad_check(const std::vector<NamedTensor>& params,
                           const std::vector<ConstNamedTensor>& analytic,
                           const std::function<double()>& loss_fn, double step) {
    if (params.size() != analytic.size()) {
        throw ConfigError("grad_check: parameter/gradient tensor counts disagree");
    }
    GradCheckReport report;
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& theta = *params[t].tensor;
        const Tensor& g = *analytic[t].tensor;
        if (!theta.same_shape(g)) {
            throw ConfigError("grad_check: shape mismatch for " + params[t].name);
        }
        GradCheckEntry entry;
        entry.name = params[t].name;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + step;
            const double up = loss_fn();
            theta[i] = saved - step;
            const double down = loss_fn();
            theta[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            // The floor keeps finite-difference noise on near-zero gradients
            // from dominating the ratio.
            const double rel = std::abs(g[i] - numeric) /
                               std::max({std::abs(g[i]), std::abs(numeric), 1e-4});
            if (rel >= entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = i;
                entry.analytic = g[i];
                entry.numeric = numeric;
            }
        }
        if (entry.max_rel_error >= report.max_rel_error) {
            report.max_rel_error = entry.max_rel_error;
            report.worst_tensor = entry.name;
        }
        report.tensors.push_back(std::move(entry));
    }
    return report;
}

GradCheckReport full_model_grad_check(const FaCoRConfig& model_config,
                                      const LossConfig& loss_config, std::size_t n_pairs,
                                      std::uint64_t seed, double step) {
    model_config.validate();
    if (n_pairs < 2) throw ProtocolError("gradient check needs at least 2 pairs");

    const std::size_t image_edge = model_config.height * 2;
    Rng rng(seed);
    std::vector<std::pair<ImageTensor, ImageTensor>> images;
    for (std::size_t p = 0; p < n_pairs; ++p) {
        ImageTensor a(image_edge, image_edge), b(image_edge, image_edge);
        for (double& v : a.values) v = rng.uniform(-1.0, 1.0);
        for (double& v : b.values) v = rng.uniform(-1.0, 1.0);
        images.emplace_back(std::move(a), std::move(b));
    }

    ToyBackboneParams backbone = init_toy_backbone(model_config, seed + 1);
    FaCoRParams params = init_params(model_config, seed + 2);

    auto loss_fn = [&]() {
        LossBatch lb;
        for (const auto& [img_a, img_b] : images) {
            const BackboneOutput a = toy_backbone_forward(img_a, backbone, model_config);
            const BackboneOutput b = toy_backbone_forward(img_b, backbone, model_config);
            lb.pairs.push_back(
                facor_forward(a.map, b.map, a.vec, b.vec, params, model_config));
        }
        return batch_loss(lb, loss_config);
    };

    // Analytic gradients through the whole stack.
    FaCoRParams facor_grads = zeros_like(params);
    ToyBackboneParams backbone_grads = zeros_like(backbone);
    {
        std::vector<ToyBackboneTrace> traces_a, traces_b;
        std::vector<FacorTrace> fusion_traces;
        LossBatch lb;
        for (const auto& [img_a, img_b] : images) {
            traces_a.push_back(toy_backbone_forward_trace(img_a, backbone, model_config));
            traces_b.push_back(toy_backbone_forward_trace(img_b, backbone, model_config));
            fusion_traces.push_back(facor_forward_trace(traces_a.back().map,
                                                        traces_b.back().map,
                                                        traces_a.back().vec,
                                                        traces_b.back().vec, params,
                                                        model_config));
            lb.pairs.push_back(fusion_traces.back().out());
        }
        const LossValue lv = batch_loss_with_grads(lb, loss_config);
        for (std::size_t i = 0; i < images.size(); ++i) {
            FacorCotangents cot;
            cot.d_x_out_a = lv.d_x[i];
            cot.d_x_out_b = lv.d_y[i];
            temperature_backward(lb.pairs[i].attention, loss_config, lv.d_psi[i], cot.d_beta,
                                 cot.d_score);
            const FacorInputGrads ig =
                facor_backward(fusion_traces[i], params, model_config, cot, facor_grads);
            toy_backbone_backward(traces_a[i], backbone, model_config, ig.d_xa, ig.d_ra,
                                  backbone_grads);
            toy_backbone_backward(traces_b[i], backbone, model_config, ig.d_xb, ig.d_rb,
                                  backbone_grads);
        }
    }

    std::vector<NamedTensor> all_params = params.named_tensors();
    for (auto& nt : backbone.named_tensors()) all_params.push_back(nt);
    std::vector<ConstNamedTensor> all_grads;
    for (const auto& nt : std::as_const(facor_grads).named_tensors()) all_grads.push_back(nt);
    for (const auto& nt : std::as_const(backbone_grads).named_tensors()) all_grads.push_back(nt);
    return grad_check(all_params, all_grads, loss_fn, step);
}

}  // namespace facor
