#pragma once

#include <cstdint>
#include <vector>

namespace subsel {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& shape);

/// Dense row-major tensor of doubles. Value-semantic and immutable by
/// convention once handed to a graph.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor full(Shape shape, double value);

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double item() const;  // rank-0 or single-element tensors

    bool all_finite() const;
    bool same_bits(const Tensor& other) const;

private:
    Shape shape_;
    std::vector<double> data_;
};

double l2_norm(const std::vector<double>& v);
double l2_distance(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace subsel
