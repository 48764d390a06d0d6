#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "defront/errors.hpp"
#include "defront/rng.hpp"

namespace defront {

// Dense row-major double tensor. Double throughout: the gradient checks in
// the test suite need float64 accuracy and desk-scale models are small
// enough that precision beats speed.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<long> shape);
    Tensor(std::vector<long> shape, double fill);
    Tensor(std::vector<long> shape, std::vector<double> data);

    static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<long> shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor randn(std::vector<long> shape, Rng& rng, double stddev = 1.0);
    static Tensor uniform(std::vector<long> shape, Rng& rng, double lo, double hi);
    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    bool defined() const { return !shape_.empty(); }
    long size() const { return static_cast<long>(data_.size()); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    long dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    const std::vector<long>& shape() const { return shape_; }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](long i) { return data_[static_cast<size_t>(i)]; }
    double operator[](long i) const { return data_[static_cast<size_t>(i)]; }

    // NCHW accessor
    double& at4(long n, long c, long h, long w) {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double at4(long n, long c, long h, long w) const {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double& at2(long i, long j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double at2(long i, long j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

    double item() const;

    Tensor reshaped(std::vector<long> new_shape) const;

    void fill(double v) { for (auto& x : data_) x = v; }
    void add_(const Tensor& o);
    void scale_(double s);

    bool all_finite() const;

private:
    std::vector<long> shape_;
    std::vector<double> data_;
};

long shape_numel(const std::vector<long>& shape);
std::string shape_str(const std::vector<long>& shape);

}  // namespace defront
