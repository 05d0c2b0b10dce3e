#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "facor/backbone.hpp"
#include "facor/data.hpp"
#include "facor/loss.hpp"

namespace facor {

struct TrainConfig {
    double lr = 1e-4;
    double momentum = 0.9;
    std::size_t batch_size = 50;
    std::size_t epochs = 50;
    std::uint64_t seed = 1;
    LossConfig loss;
    bool freeze_backbone = true;

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& json_text);
TrainConfig load_train_config(const std::filesystem::path& path);

// Source of (X, r) per image id. Trainable providers additionally expose
// their parameters and accumulate gradients during backward.
class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    virtual BackboneOutput features(const std::string& image_id) = 0;
    virtual bool trainable() const { return false; }
    virtual std::vector<NamedTensor> parameters() { return {}; }
    virtual std::vector<NamedTensor> gradients() { return {}; }
    virtual void zero_gradients() {}
    virtual void backward(const std::string&, const FeatureMap&, const Vec&) {}
};

class ManifestFeatureProvider final : public FeatureProvider {
public:
    explicit ManifestFeatureProvider(FeatureManifest manifest);
    BackboneOutput features(const std::string& image_id) override;

private:
    FeatureManifest manifest_;
    std::map<std::string, BackboneOutput> cache_;
};

class MemoryFeatureProvider final : public FeatureProvider {
public:
    explicit MemoryFeatureProvider(
        const std::vector<std::pair<std::string, BackboneOutput>>& features);
    BackboneOutput features(const std::string& image_id) override;

private:
    std::map<std::string, BackboneOutput> features_;
};

// Runs the toy backbone over stored images; trainable.
class ToyBackboneProvider final : public FeatureProvider {
public:
    ToyBackboneProvider(std::map<std::string, ImageTensor> images, ToyBackboneParams params,
                        FaCoRConfig config);
    BackboneOutput features(const std::string& image_id) override;
    bool trainable() const override { return true; }
    std::vector<NamedTensor> parameters() override;
    std::vector<NamedTensor> gradients() override;
    void zero_gradients() override;
    void backward(const std::string& image_id, const FeatureMap& d_map,
                  const Vec& d_vec) override;

    ToyBackboneParams& params() { return params_; }

private:
    std::map<std::string, ImageTensor> images_;
    ToyBackboneParams params_;
    ToyBackboneParams grads_;
    FaCoRConfig config_;
    std::map<std::string, ToyBackboneTrace> traces_;
};

struct LossHistoryRow {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    double loss = 0.0;
    double psi_mean = 0.0;
};

struct TrainResult {
    std::vector<double> epoch_mean_loss;
    std::vector<LossHistoryRow> history;
    std::filesystem::path final_checkpoint;
};

// SGD with momentum against the configured contrastive loss. Writes a
// checkpoint per epoch plus loss_history.csv under out_dir; fully
// deterministic given the seed. Resuming from a written checkpoint replays
// the identical trajectory because batches are derived statelessly from
// (seed, epoch, batch) and the optimizer state is stored at f64.
TrainResult train(const TrainConfig& config, const std::vector<KinPair>& pairs,
                  FeatureProvider& provider, FaCoRParams& params,
                  const FaCoRConfig& model_config, const std::filesystem::path& out_dir,
                  const std::filesystem::path& resume_checkpoint = {});

// v <- mu * v - lr * g ; theta <- theta + v
void sgd_step(const std::vector<NamedTensor>& params, const std::vector<NamedTensor>& grads,
              std::vector<Tensor>& momentum, double lr, double mu);

void save_train_checkpoint(const std::filesystem::path& manifest_path, FaCoRParams& params,
                           FeatureProvider& provider, const std::vector<Tensor>& momentum,
                           std::size_t next_epoch);

// --- gradient verification ---------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> tensors;
    double max_rel_error = 0.0;
    std::string worst_tensor;

    std::string to_text() const;
};

// Central finite differences of loss_fn against the provided analytic
// gradients, perturbing every element of every parameter tensor.
GradCheckReport grad_check(const std::vector<NamedTensor>& params,
                           const std::vector<ConstNamedTensor>& analytic,
                           const std::function<double()>& loss_fn, double step);

// Builds a seeded toy model (toy backbone + fusion + configured loss over
// n_pairs synthetic image pairs) and checks every parameter gradient.
GradCheckReport full_model_grad_check(const FaCoRConfig& model_config,
                                      const LossConfig& loss_config, std::size_t n_pairs,
                                      std::uint64_t seed, double step);

}  // namespace facor
