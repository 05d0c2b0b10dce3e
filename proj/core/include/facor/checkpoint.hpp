#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "facor/tensor.hpp"

namespace facor {

// Tensor bundle on disk: a text manifest next to one raw little-endian
// payload file. Manifest lines:
//
//   facor-tensors 1
//   payload <file.bin>
//   tensor <key> <shape> <f32|f64> <byte offset>
//
// Model/feature interchange uses f32 payloads; training checkpoints store
// f64 so a resumed run replays the exact trajectory.
enum class Dtype { F32, F64 };

struct BundleEntry {
    std::string key;
    Tensor tensor;
};

struct TensorBundle {
    std::vector<BundleEntry> entries;

    const Tensor* find(const std::string& key) const;
    const Tensor& at(const std::string& key) const;  // LookupError if absent
    void put(std::string key, Tensor tensor);
};

void save_bundle(const std::filesystem::path& manifest_path, const TensorBundle& bundle,
                 Dtype dtype);
TensorBundle load_bundle(const std::filesystem::path& manifest_path);

// Raw payload helpers shared with the feature store.
void write_raw_f32(std::ostream& out, const std::vector<double>& values);
void write_raw_f64(std::ostream& out, const std::vector<double>& values);
std::vector<double> read_raw(const std::vector<char>& payload, std::size_t offset,
                             std::size_t count, Dtype dtype, const std::string& what);
Dtype parse_dtype(const std::string& text);
std::string dtype_name(Dtype dtype);
std::size_t dtype_size(Dtype dtype);

}  // namespace facor
