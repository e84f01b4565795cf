#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "loomweave/common.hpp"

namespace loomweave {

/// Dense row-major double tensor. Value semantics; shapes are small int vectors.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0);
    }
    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }
    static Tensor from(std::vector<int> shape, std::vector<double> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        LW_CHECK(static_cast<int64_t>(t.data_.size()) == count(t.shape_),
                 "tensor data size does not match shape");
        return t;
    }
    static Tensor scalar(double v) { return from({1}, {v}); }

    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    Tensor reshaped(std::vector<int> shape) const {
        LW_CHECK(count(shape) == numel(), "reshape element count mismatch");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    void fill(double v) { for (auto& x : data_) x = v; }
    void add_scaled(const Tensor& o, double s) {
        LW_CHECK(same_shape(o), "add_scaled shape mismatch");
        const double* p = o.data();
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * p[i];
    }
    double max_abs() const {
        double m = 0.0;
        for (double x : data_) m = std::max(m, std::abs(x));
        return m;
    }
    bool all_finite() const {
        for (double x : data_) if (!std::isfinite(x)) return false;
        return true;
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            LW_CHECK(d >= 0, "negative tensor dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// Random fills (used by parameter init and tests).
Tensor randn(std::vector<int> shape, RandomStream& rng, double std_dev = 1.0);
Tensor rand_uniform(std::vector<int> shape, RandomStream& rng, double lo, double hi);

}  // namespace loomweave
