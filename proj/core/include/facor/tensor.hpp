#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace facor {

// Dense row-major tensor of doubles. Parameters, gradients and serialized
// payloads all go through this type; feature grids and attention maps keep
// their own structs and convert at the boundary.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-d accessors; weight matrices are laid out [out, in].
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool all_finite() const;
    void fill(double v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_string() const;  // e.g. "4x4x8"

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_volume(const std::vector<std::size_t>& shape);
std::vector<std::size_t> parse_shape(const std::string& text);  // inverse of shape_string

// Borrowed view used to enumerate parameter tensors by name for the
// optimizer, the gradient checker and checkpoint serialization.
struct NamedTensor {
    std::string name;
    Tensor* tensor = nullptr;
};

struct ConstNamedTensor {
    std::string name;
    const Tensor* tensor = nullptr;
};

}  // namespace facor
