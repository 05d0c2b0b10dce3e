#include "facor/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "facor/errors.hpp"

namespace facor {

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_volume(shape_)) {
        throw ConfigError("tensor values do not match shape " + shape_string());
    }
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

std::string Tensor::shape_string() const {
    if (shape_.empty()) return "0";
    std::ostringstream out;
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) out << 'x';
        out << shape_[i];
    }
    return out.str();
}

std::size_t shape_volume(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return 0;
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::vector<std::size_t> parse_shape(const std::string& text) {
    std::vector<std::size_t> shape;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t next = text.find('x', pos);
        if (next == std::string::npos) next = text.size();
        const std::string token = text.substr(pos, next - pos);
        if (token.empty()) throw ParseError("bad shape string '" + text + "'");
        std::size_t parsed = 0;
        try {
            parsed = std::stoull(token);
        } catch (const std::exception&) {
            throw ParseError("bad shape string '" + text + "'");
        }
        shape.push_back(parsed);
        pos = next + 1;
    }
    if (shape.empty()) throw ParseError("empty shape string");
    return shape;
}

}  // namespace facor
