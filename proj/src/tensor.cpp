#include "defront/tensor.hpp"

#include <cmath>
#include <sstream>

namespace defront {

long shape_numel(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<long>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<long> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<long> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(std::vector<long> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<long>(data_.size()) != shape_numel(shape_))
        throw ShapeMismatch("tensor data size does not match shape " + shape_str(shape_));
}

Tensor Tensor::randn(std::vector<long> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.normal() * stddev;
    return t;
}

Tensor Tensor::uniform(std::vector<long> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.uniform(lo, hi);
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeMismatch("item() on tensor of size " + std::to_string(size()));
    return data_[0];
}

Tensor Tensor::reshaped(std::vector<long> new_shape) const {
    if (shape_numel(new_shape) != size())
        throw ShapeMismatch("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape));
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
}

void Tensor::add_(const Tensor& o) {
    if (!same_shape(o)) throw ShapeMismatch("add_: " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
}

void Tensor::scale_(double s) {
    for (auto& x : data_) x *= s;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace defront
