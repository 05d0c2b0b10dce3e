#include "facor/backbone.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "facor/checkpoint.hpp"
#include "facor/errors.hpp"
#include "facor/rng.hpp"

namespace facor {

void ImageTensor::validate() const {
    if (height < 1 || width < 1 || height != width) {
        throw ConfigError("image must be square and non-empty");
    }
    if (values.size() != height * width * 3) {
        throw ConfigError("image storage does not match dims");
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("image contains non-finite values");
    }
}

std::vector<NamedTensor> ToyBackboneParams::named_tensors() {
    return {{"backbone.conv.weight", &conv_weight},
            {"backbone.conv.bias", &conv_bias},
            {"backbone.head.weight", &head_weight},
            {"backbone.head.bias", &head_bias}};
}

std::vector<ConstNamedTensor> ToyBackboneParams::named_tensors() const {
    auto mut = const_cast<ToyBackboneParams*>(this)->named_tensors();
    std::vector<ConstNamedTensor> out;
    for (const auto& nt : mut) out.push_back({nt.name, nt.tensor});
    return out;
}

ToyBackboneParams init_toy_backbone(const FaCoRConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ToyBackboneParams p;
    p.conv_weight = Tensor({config.channels, 3, 3, 3});
    p.conv_bias = Tensor({config.channels});
    p.head_weight = Tensor({config.embed_dim, config.channels});
    p.head_bias = Tensor({config.embed_dim});
    if (config.init_mode == InitMode::BoundedNormal) {
        for (auto& nt : p.named_tensors()) {
            for (std::size_t i = 0; i < nt.tensor->size(); ++i) {
                (*nt.tensor)[i] = rng.clipped_normal(config.bounded_lo, config.bounded_hi);
            }
        }
    } else {
        const double conv_bound = std::sqrt(6.0 / (3.0 * 9.0 + config.channels * 9.0));
        for (std::size_t i = 0; i < p.conv_weight.size(); ++i) {
            p.conv_weight[i] = rng.uniform(-conv_bound, conv_bound);
        }
        const double head_bound =
            std::sqrt(6.0 / static_cast<double>(config.channels + config.embed_dim));
        for (std::size_t i = 0; i < p.head_weight.size(); ++i) {
            p.head_weight[i] = rng.uniform(-head_bound, head_bound);
        }
    }
    return p;
}

ToyBackboneParams zeros_like(const ToyBackboneParams& params) {
    ToyBackboneParams z = params;
    zero_all(z);
    return z;
}

void zero_all(ToyBackboneParams& params) {
    for (auto& nt : params.named_tensors()) nt.tensor->fill(0.0);
}

namespace {

void check_image(const ImageTensor& img, const FaCoRConfig& config) {
    img.validate();
    if (img.height % config.height != 0 || img.width % config.width != 0) {
        throw ConfigError("image edge must be a multiple of the feature-map edge");
    }
}

}  // namespace

ToyBackboneTrace toy_backbone_forward_trace(const ImageTensor& img,
                                            const ToyBackboneParams& params,
                                            const FaCoRConfig& config) {
    check_image(img, config);
    const std::size_t h = img.height, w = img.width;
    const std::size_t c = config.channels;

    ToyBackboneTrace t;
    t.img = img;
    t.conv_act.assign(h * w * c, 0.0);

    // 3x3 conv, zero padding, then tanh.
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t co = 0; co < c; ++co) {
                double acc = params.conv_bias[co];
                for (std::size_t ci = 0; ci < 3; ++ci) {
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        const long yy = static_cast<long>(y) + static_cast<long>(ky) - 1;
                        if (yy < 0 || yy >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const long xx = static_cast<long>(x) + static_cast<long>(kx) - 1;
                            if (xx < 0 || xx >= static_cast<long>(w)) continue;
                            acc += params.conv_weight[((co * 3 + ci) * 3 + ky) * 3 + kx] *
                                   img.values[(static_cast<std::size_t>(yy) * w +
                                               static_cast<std::size_t>(xx)) * 3 + ci];
                        }
                    }
                }
                t.conv_act[(y * w + x) * c + co] = std::tanh(acc);
            }
        }
    }

    // Block average pool down to the configured grid.
    const std::size_t bh = h / config.height, bw = w / config.width;
    t.map = FeatureMap(config.height, config.width, c);
    for (std::size_t hy = 0; hy < config.height; ++hy) {
        for (std::size_t hx = 0; hx < config.width; ++hx) {
            for (std::size_t co = 0; co < c; ++co) {
                double acc = 0.0;
                for (std::size_t by = 0; by < bh; ++by) {
                    for (std::size_t bx = 0; bx < bw; ++bx) {
                        acc += t.conv_act[((hy * bh + by) * w + hx * bw + bx) * c + co];
                    }
                }
                t.map.at(hy * config.width + hx, co) =
                    acc / static_cast<double>(bh * bw);
            }
        }
    }

    // Global average + linear head -> r.
    t.gap.assign(c, 0.0);
    const std::size_t n = t.map.positions();
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t co = 0; co < c; ++co) t.gap[co] += t.map.at(pos, co);
    }
    for (double& v : t.gap) v /= static_cast<double>(n);
    t.vec.assign(config.embed_dim, 0.0);
    for (std::size_t d = 0; d < config.embed_dim; ++d) {
        double acc = params.head_bias[d];
        for (std::size_t co = 0; co < c; ++co) acc += params.head_weight.at(d, co) * t.gap[co];
        t.vec[d] = acc;
    }
    return t;
}

BackboneOutput toy_backbone_forward(const ImageTensor& img, const ToyBackboneParams& params,
                                    const FaCoRConfig& config) {
    ToyBackboneTrace t = toy_backbone_forward_trace(img, params, config);
    return BackboneOutput{std::move(t.map), std::move(t.vec)};
}

void toy_backbone_backward(const ToyBackboneTrace& trace, const ToyBackboneParams& params,
                           const FaCoRConfig& config, const FeatureMap& d_map,
                           const Vec& d_vec, ToyBackboneParams& grads) {
    const std::size_t h = trace.img.height, w = trace.img.width;
    const std::size_t c = config.channels;
    const std::size_t n = config.positions();

    // Head and global average.
    Vec d_gap(c, 0.0);
    for (std::size_t d = 0; d < config.embed_dim; ++d) {
        grads.head_bias[d] += d_vec[d];
        for (std::size_t co = 0; co < c; ++co) {
            grads.head_weight.at(d, co) += d_vec[d] * trace.gap[co];
            d_gap[co] += params.head_weight.at(d, co) * d_vec[d];
        }
    }
    FeatureMap d_x = d_map;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t co = 0; co < c; ++co) d_x.at(pos, co) += d_gap[co] * inv_n;
    }

    // Un-pool, tanh, conv.
    const std::size_t bh = h / config.height, bw = w / config.width;
    const double inv_block = 1.0 / static_cast<double>(bh * bw);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t pos = (y / bh) * config.width + (x / bw);
            for (std::size_t co = 0; co < c; ++co) {
                const double act = trace.conv_act[(y * w + x) * c + co];
                const double d_pre = d_x.at(pos, co) * inv_block * (1.0 - act * act);
                if (d_pre == 0.0) continue;
                grads.conv_bias[co] += d_pre;
                for (std::size_t ci = 0; ci < 3; ++ci) {
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        const long yy = static_cast<long>(y) + static_cast<long>(ky) - 1;
                        if (yy < 0 || yy >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const long xx = static_cast<long>(x) + static_cast<long>(kx) - 1;
                            if (xx < 0 || xx >= static_cast<long>(w)) continue;
                            grads.conv_weight[((co * 3 + ci) * 3 + ky) * 3 + kx] +=
                                d_pre * trace.img.values[(static_cast<std::size_t>(yy) * w +
                                                          static_cast<std::size_t>(xx)) * 3 + ci];
                        }
                    }
                }
            }
        }
    }
}

// --- feature store ----------------------------------------------------------

FeatureManifest FeatureManifest::load(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open " + manifest_path.string());
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line) || line != "facor-features 1") {
        throw ParseError(manifest_path.string() + ": missing 'facor-features 1' header");
    }
    ++line_no;

    FeatureManifest m;
    m.dir = manifest_path.parent_path();
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string tag, id, map_shape, vec_len;
        FeatureEntry e;
        row >> tag;
        if (tag != "image") {
            throw ParseError(manifest_path.string() + ":" + std::to_string(line_no) +
                             ": unknown tag '" + tag + "'");
        }
        if (!(row >> id >> map_shape >> e.map_dtype >> e.map_payload >> e.map_offset >>
              vec_len >> e.vec_dtype >> e.vec_payload >> e.vec_offset)) {
            throw ParseError(manifest_path.string() + ":" + std::to_string(line_no) +
                             ": malformed image line");
        }
        e.map_shape = parse_shape(map_shape);
        if (e.map_shape.size() != 3) {
            throw ParseError(manifest_path.string() + ":" + std::to_string(line_no) +
                             ": map shape must be HxWxC");
        }
        e.vec_len = parse_shape(vec_len).at(0);
        if (m.entries.count(id)) {
            throw DataError(manifest_path.string() + ": duplicate image id '" + id + "'");
        }
        m.entries[id] = std::move(e);
    }
    return m;
}

std::vector<std::string> FeatureManifest::ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& [id, entry] : entries) out.push_back(id);
    return out;
}

BackboneOutput load_precomputed(const FeatureManifest& manifest, const std::string& image_id) {
    auto it = manifest.entries.find(image_id);
    if (it == manifest.entries.end()) {
        throw LookupError("feature manifest has no image '" + image_id + "'");
    }
    const FeatureEntry& e = it->second;

    auto read_payload = [&](const std::string& rel) {
        const std::filesystem::path p = manifest.dir / rel;
        std::ifstream f(p, std::ios::binary);
        if (!f) throw DataError("cannot open payload " + p.string() + " for '" + image_id + "'");
        return std::vector<char>((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
    };

    const std::vector<char> map_payload = read_payload(e.map_payload);
    BackboneOutput out;
    out.map.height = e.map_shape[0];
    out.map.width = e.map_shape[1];
    out.map.channels = e.map_shape[2];
    out.map.values = read_raw(map_payload, e.map_offset, shape_volume(e.map_shape),
                              parse_dtype(e.map_dtype), "map of image '" + image_id + "'");
    const std::vector<char>& vec_payload =
        e.vec_payload == e.map_payload ? map_payload : read_payload(e.vec_payload);
    out.vec = read_raw(vec_payload, e.vec_offset, e.vec_len, parse_dtype(e.vec_dtype),
                       "vec of image '" + image_id + "'");
    return out;
}

void write_feature_store(const std::filesystem::path& manifest_path,
                         const std::vector<std::pair<std::string, BackboneOutput>>& features) {
    const std::filesystem::path dir = manifest_path.parent_path();
    const std::filesystem::path payload_dir = dir / "payloads";
    std::filesystem::create_directories(payload_dir);

    std::ostringstream manifest;
    manifest << "facor-features 1\n";
    for (const auto& [id, out] : features) {
        if (id.empty() || id.find_first_of(" \t\n/") != std::string::npos) {
            throw DataError("image id '" + id + "' is empty or contains reserved characters");
        }
        const std::string rel = "payloads/" + id + ".bin";
        std::ofstream payload(dir / rel, std::ios::binary | std::ios::trunc);
        if (!payload) throw DataError("cannot write payload for '" + id + "'");
        write_raw_f32(payload, out.map.values);
        write_raw_f32(payload, out.vec);
        const std::size_t vec_offset = out.map.values.size() * 4;
        manifest << "image " << id << ' ' << out.map.height << 'x' << out.map.width << 'x'
                 << out.map.channels << " f32 " << rel << " 0 " << out.vec.size() << " f32 "
                 << rel << ' ' << vec_offset << "\n";
    }
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + manifest_path.string());
    out << manifest.str();
}

}  // namespace facor
