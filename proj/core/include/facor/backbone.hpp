#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "facor/config.hpp"
#include "facor/facor.hpp"
#include "facor/tensor.hpp"

namespace facor {

// Square RGB image, values [(y * width + x) * 3 + ch].
struct ImageTensor {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    ImageTensor() = default;
    ImageTensor(std::size_t h, std::size_t w, double fill = 0.0)
        : height(h), width(w), values(h * w * 3, fill) {}
    void validate() const;  // square, finite
};

// (X, r): middle-layer grid plus final-layer embedding for one image.
struct BackboneOutput {
    FeatureMap map;
    Vec vec;
};

// Small conv + pool stack standing in for a pretrained face backbone at desk
// scale: 3x3 conv (3 -> C, zero padding) -> tanh -> block average pool to
// H x W -> X; r = linear head on the global average of X. Differentiable end
// to end; weights are shared across the two images of a pair by construction
// (the caller runs the same parameters on both).
struct ToyBackboneParams {
    Tensor conv_weight;  // [C, 3, 3, 3] (out, in, kh, kw)
    Tensor conv_bias;    // [C]
    Tensor head_weight;  // [D, C]
    Tensor head_bias;    // [D]

    std::vector<NamedTensor> named_tensors();
    std::vector<ConstNamedTensor> named_tensors() const;
};

ToyBackboneParams init_toy_backbone(const FaCoRConfig& config, std::uint64_t seed);
ToyBackboneParams zeros_like(const ToyBackboneParams& params);
void zero_all(ToyBackboneParams& params);

BackboneOutput toy_backbone_forward(const ImageTensor& img, const ToyBackboneParams& params,
                                    const FaCoRConfig& config);

struct ToyBackboneTrace {
    ImageTensor img;
    std::vector<double> conv_act;  // tanh output, [(y * w + x) * C + c]
    FeatureMap map;
    Vec gap;
    Vec vec;
};

ToyBackboneTrace toy_backbone_forward_trace(const ImageTensor& img,
                                            const ToyBackboneParams& params,
                                            const FaCoRConfig& config);

// Accumulates parameter gradients given upstream gradients on (X, r).
void toy_backbone_backward(const ToyBackboneTrace& trace, const ToyBackboneParams& params,
                           const FaCoRConfig& config, const FeatureMap& d_map,
                           const Vec& d_vec, ToyBackboneParams& grads);

// --- precomputed feature store ---------------------------------------------
//
// Manifest (UTF-8 text), one image per line:
//   facor-features 1
//   image <id> <HxWxC> <dtype> <payload> <map offset> <D> <dtype> <payload> <vec offset>
// Payload files are raw little-endian f32, one file per image, relative to
// the manifest directory.

struct FeatureEntry {
    std::vector<std::size_t> map_shape;  // {H, W, C}
    std::size_t vec_len = 0;
    std::string map_payload, vec_payload;
    std::size_t map_offset = 0, vec_offset = 0;
    std::string map_dtype = "f32", vec_dtype = "f32";
};

struct FeatureManifest {
    std::filesystem::path dir;
    std::map<std::string, FeatureEntry> entries;

    static FeatureManifest load(const std::filesystem::path& manifest_path);
    std::vector<std::string> ids() const;
};

BackboneOutput load_precomputed(const FeatureManifest& manifest, const std::string& image_id);

// Writes the manifest plus one payload file per image under
// <manifest dir>/payloads/. Values are stored as f32, the interchange dtype.
void write_feature_store(const std::filesystem::path& manifest_path,
                         const std::vector<std::pair<std::string, BackboneOutput>>& features);

}  // namespace facor
