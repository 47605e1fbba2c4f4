#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfdon {

/// Dense row-major tensor of doubles. Rank is arbitrary, but most of the
/// library works with rank-2 (rows x cols) views; rank-3 appears only in
/// dataset storage (samples x points x components).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}
    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
    static Tensor row(std::vector<double> v) {
        std::size_t n = v.size();
        return Tensor({1, n}, std::move(v));
    }
    static Tensor col(std::vector<double> v) {
        std::size_t n = v.size();
        return Tensor({n, 1}, std::move(v));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const {
        assert(rank() == 2);
        return shape_[0];
    }
    std::size_t cols() const {
        assert(rank() == 2);
        return shape_[1];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) {
        assert(rank() == 2 && r < shape_[0] && c < shape_[1]);
        return data_[r * shape_[1] + c];
    }
    double at(std::size_t r, std::size_t c) const {
        assert(rank() == 2 && r < shape_[0] && c < shape_[1]);
        return data_[r * shape_[1] + c];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return s.empty() ? 0 : n;
    }

    static std::string shape_str(const std::vector<std::size_t>& s) {
        std::string out = "(";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += "x";
            out += std::to_string(s[i]);
        }
        return out + ")";
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

}  // namespace mfdon
