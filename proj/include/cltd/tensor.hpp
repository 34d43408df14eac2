#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cltd/error.hpp"

namespace cltd {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ')';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major double tensor of rank 1..4 (last axis fastest).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != shape_numel(shape_))
            throw dimension_error("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    template <class Rng>
    static Tensor normal(Shape shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : t.data_) v = dist(rng);
        return t;
    }

    template <class Rng>
    static Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& v : t.data_) v = dist(rng);
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> span() noexcept { return data_; }
    std::span<const double> span() const noexcept { return data_; }
    std::vector<double>& vec() noexcept { return data_; }
    const std::vector<double>& vec() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    template <class... Idx>
    double& operator()(Idx... idx) noexcept {
        return data_[offset(idx...)];
    }
    template <class... Idx>
    double operator()(Idx... idx) const noexcept {
        return data_[offset(idx...)];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != data_.size())
            throw dimension_error("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    /// this += alpha * o
    void axpy(double alpha, const Tensor& o) {
        require_same_shape(o, "axpy");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * o.data_[i];
    }

    Tensor& operator*=(double s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    void require_finite(const std::string& what) const {
        if (!all_finite()) throw numerical_error("non-finite values in " + what);
    }

    void require_same_shape(const Tensor& o, const std::string& what) const {
        if (shape_ != o.shape_)
            throw dimension_error(what + ": shape " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    }

    void require_rank(std::size_t r, const std::string& what) const {
        if (rank() != r)
            throw dimension_error(what + ": expected rank " + std::to_string(r) + ", got " +
                                  shape_str(shape_));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void validate_shape() const {
        if (shape_.empty() || shape_.size() > 4)
            throw dimension_error("tensor rank must be 1..4, got " + shape_str(shape_));
        for (auto e : shape_)
            if (e == 0) throw dimension_error("zero extent in shape " + shape_str(shape_));
    }

    template <class... Idx>
    std::size_t offset(Idx... idx) const noexcept {
        const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
        std::size_t off = 0;
        for (std::size_t a = 0; a < sizeof...(Idx); ++a) off = off * shape_[a] + ids[a];
        return off;
    }

    Shape shape_;
    std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    a.require_same_shape(b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// A learnable tensor together with its gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad.fill(0.0); }
};

}  // namespace cltd
