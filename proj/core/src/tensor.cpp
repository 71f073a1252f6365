#include "subsel/tensor.hpp"

#include <cmath>
#include <cstring>

#include "subsel/errors.hpp"

namespace subsel {

std::int64_t shape_size(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d < 0) {
            throw ConfigError("tensor shape has negative dimension");
        }
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_size(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ConfigError("tensor data length does not match shape");
    }
}

Tensor Tensor::scalar(double value) {
    return Tensor(Shape{}, std::vector<double>{value});
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) {
        v = value;
    }
    return t;
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ConfigError("item() requires a single-element tensor");
    }
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

bool Tensor::same_bits(const Tensor& other) const {
    if (shape_ != other.shape_) {
        return false;
    }
    return data_.size() == other.data_.size() &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

double l2_norm(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) {
        acc += x * x;
    }
    return std::sqrt(acc);
}

double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ConfigError("l2_distance: dimension mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace subsel
