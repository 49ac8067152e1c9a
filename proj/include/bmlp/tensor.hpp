#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "bmlp/common.hpp"
#include "bmlp/rng.hpp"

namespace bmlp {

/// Dense row-major tensor. Everything in the library runs on rank-2 tensors
/// (the auxiliary-behavior input is kept as a list of rank-2 slices).
/// Templated on the scalar so the scaling benchmark can run in float while
/// training and all gradient checks stay in double.
template <class T>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    TensorT() = default;
    TensorT(std::size_t r, std::size_t c) : shape{r, c}, data(r * c, T(0)) {}

    static TensorT zeros(std::size_t r, std::size_t c) { return TensorT(r, c); }

    static TensorT full(std::size_t r, std::size_t c, T v) {
        TensorT t(r, c);
        t.data.assign(r * c, v);
        return t;
    }

    static TensorT from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        TensorT t(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t i = 0;
        for (const auto& row : rows) {
            std::size_t j = 0;
            for (T v : row) t(i, j++) = v;
            ++i;
        }
        return t;
    }

    static TensorT random_uniform(std::size_t r, std::size_t c, T lo, T hi, RngStream& rng) {
        TensorT t(r, c);
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
        return t;
    }

    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 0 : shape[1]; }
    std::size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    T& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    T* row_ptr(std::size_t i) { return data.data() + i * shape[1]; }
    const T* row_ptr(std::size_t i) const { return data.data() + i * shape[1]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    void set_zero() { std::fill(data.begin(), data.end(), T(0)); }

    void add_(const TensorT& o) {
        require_same_shape(o, "add");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    }

    void scale_(T k) {
        for (auto& v : data) v *= k;
    }

    void axpy_(T k, const TensorT& o) {
        require_same_shape(o, "axpy");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += k * o.data[i];
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    void require_same_shape(const TensorT& o, const char* what) const {
        if (!same_shape(o))
            throw DimensionError(detail::cat(what, ": shape mismatch ", shape_str(), " vs ", o.shape_str()));
    }
};

using Tensor = TensorT<double>;

template <class T>
TensorT<T> transpose(const TensorT<T>& x) {
    TensorT<T> y(x.cols(), x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
            y(j, i) = x(i, j);
    return y;
}

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    a.require_same_shape(b, "max_abs_diff");
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

} // namespace bmlp
