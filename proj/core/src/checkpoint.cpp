#include "facor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "facor/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "payload files are little-endian; big-endian hosts need byte swaps");

namespace facor {

const Tensor* TensorBundle::find(const std::string& key) const {
    for (const auto& e : entries) {
        if (e.key == key) return &e.tensor;
    }
    return nullptr;
}

const Tensor& TensorBundle::at(const std::string& key) const {
    const Tensor* t = find(key);
    if (!t) throw LookupError("bundle has no tensor '" + key + "'");
    return *t;
}

void TensorBundle::put(std::string key, Tensor tensor) {
    entries.push_back({std::move(key), std::move(tensor)});
}

Dtype parse_dtype(const std::string& text) {
    if (text == "f32") return Dtype::F32;
    if (text == "f64") return Dtype::F64;
    throw ParseError("unknown dtype '" + text + "'");
}

std::string dtype_name(Dtype dtype) { return dtype == Dtype::F32 ? "f32" : "f64"; }

std::size_t dtype_size(Dtype dtype) { return dtype == Dtype::F32 ? 4 : 8; }

void write_raw_f32(std::ostream& out, const std::vector<double>& values) {
    for (double v : values) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    }
}

void write_raw_f64(std::ostream& out, const std::vector<double>& values) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::vector<double> read_raw(const std::vector<char>& payload, std::size_t offset,
                             std::size_t count, Dtype dtype, const std::string& what) {
    const std::size_t bytes = count * dtype_size(dtype);
    if (offset + bytes > payload.size()) {
        throw DataError("payload too short for " + what);
    }
    std::vector<double> values(count);
    if (dtype == Dtype::F32) {
        for (std::size_t i = 0; i < count; ++i) {
            float f;
            std::memcpy(&f, payload.data() + offset + i * 4, 4);
            values[i] = static_cast<double>(f);
        }
    } else {
        std::memcpy(values.data(), payload.data() + offset, bytes);
    }
    return values;
}

void save_bundle(const std::filesystem::path& manifest_path, const TensorBundle& bundle,
                 Dtype dtype) {
    std::filesystem::path payload_path = manifest_path;
    payload_path.replace_extension(".bin");

    std::ofstream payload(payload_path, std::ios::binary | std::ios::trunc);
    if (!payload) throw DataError("cannot write " + payload_path.string());

    std::ostringstream manifest;
    manifest << "facor-tensors 1\n";
    manifest << "payload " << payload_path.filename().string() << "\n";
    std::size_t offset = 0;
    for (const auto& e : bundle.entries) {
        if (e.key.find_first_of(" \t\n") != std::string::npos) {
            throw DataError("tensor key '" + e.key + "' contains whitespace");
        }
        manifest << "tensor " << e.key << ' ' << e.tensor.shape_string() << ' '
                 << dtype_name(dtype) << ' ' << offset << "\n";
        if (dtype == Dtype::F32) {
            write_raw_f32(payload, e.tensor.values());
        } else {
            write_raw_f64(payload, e.tensor.values());
        }
        offset += e.tensor.size() * dtype_size(dtype);
    }
    payload.close();

    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + manifest_path.string());
    out << manifest.str();
}

TensorBundle load_bundle(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open " + manifest_path.string());

    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line) || line != "facor-tensors 1") {
        throw ParseError(manifest_path.string() + ": missing 'facor-tensors 1' header");
    }
    ++line_no;

    std::filesystem::path payload_path;
    struct PendingEntry {
        std::string key;
        std::vector<std::size_t> shape;
        Dtype dtype;
        std::size_t offset;
    };
    std::vector<PendingEntry> pending;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string tag;
        row >> tag;
        if (tag == "payload") {
            std::string file;
            row >> file;
            payload_path = manifest_path.parent_path() / file;
        } else if (tag == "tensor") {
            PendingEntry e;
            std::string shape_text, dtype_text;
            if (!(row >> e.key >> shape_text >> dtype_text >> e.offset)) {
                throw ParseError(manifest_path.string() + ":" + std::to_string(line_no) +
                                 ": malformed tensor line");
            }
            e.shape = parse_shape(shape_text);
            e.dtype = parse_dtype(dtype_text);
            pending.push_back(std::move(e));
        } else {
            throw ParseError(manifest_path.string() + ":" + std::to_string(line_no) +
                             ": unknown tag '" + tag + "'");
        }
    }
    if (payload_path.empty()) {
        throw ParseError(manifest_path.string() + ": missing payload line");
    }

    std::ifstream pf(payload_path, std::ios::binary);
    if (!pf) throw DataError("cannot open payload " + payload_path.string());
    std::vector<char> payload((std::istreambuf_iterator<char>(pf)),
                              std::istreambuf_iterator<char>());

    TensorBundle bundle;
    for (auto& e : pending) {
        const std::size_t count = shape_volume(e.shape);
        std::vector<double> values =
            read_raw(payload, e.offset, count, e.dtype, "tensor '" + e.key + "'");
        bundle.put(e.key, Tensor(e.shape, std::move(values)));
    }
    return bundle;
}

}  // namespace facor
