#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tactus/errors.hpp"
#include "tactus/rng.hpp"

namespace tactus {

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor. Rank 0 (shape {}) is a scalar with one element.
// Data is shared and treated as immutable once the tensor is handed out;
// operations always produce fresh tensors.
template <typename Real>
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<Real>> data;

    Tensor() : shape{}, data(std::make_shared<std::vector<Real>>(1, Real(0))) {}

    Tensor(std::vector<int> s, std::shared_ptr<std::vector<Real>> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape(shape);
        if (static_cast<int64_t>(data->size()) != shape_numel(shape))
            throw ShapeError("tensor: data size " + std::to_string(data->size()) + " does not match shape " + shape_str(shape));
    }

    static void validate_shape(const std::vector<int>& s) {
        for (int d : s)
            if (d <= 0) throw ShapeError("tensor: non-positive dimension in shape " + shape_str(s));
    }

    static Tensor zeros(std::vector<int> s) {
        validate_shape(s);
        auto d = std::make_shared<std::vector<Real>>(shape_numel(s), Real(0));
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor full(std::vector<int> s, Real v) {
        validate_shape(s);
        auto d = std::make_shared<std::vector<Real>>(shape_numel(s), v);
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor scalar(Real v) { return full({}, v); }

    static Tensor from(std::vector<int> s, std::vector<Real> values) {
        auto d = std::make_shared<std::vector<Real>>(std::move(values));
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor randn(std::vector<int> s, Rng& rng, Real stddev = Real(1)) {
        validate_shape(s);
        auto d = std::make_shared<std::vector<Real>>(shape_numel(s));
        for (auto& v : *d) v = static_cast<Real>(rng.normal()) * stddev;
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor rand_uniform(std::vector<int> s, Rng& rng, Real lo, Real hi) {
        validate_shape(s);
        auto d = std::make_shared<std::vector<Real>>(shape_numel(s));
        for (auto& v : *d) v = static_cast<Real>(rng.uniform(lo, hi));
        return Tensor(std::move(s), std::move(d));
    }

    int64_t numel() const { return static_cast<int64_t>(data->size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    // size of the last axis (1 for scalars)
    int last_dim() const { return shape.empty() ? 1 : shape.back(); }

    const Real* ptr() const { return data->data(); }
    Real at(int64_t i) const { return (*data)[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// Throws NumericError naming the producing operation and the first bad index.
template <typename Real>
inline void check_finite(const char* op, const std::vector<Real>& v) {
    for (size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i]))
            throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
}

template <typename Real>
inline void check_finite(const char* op, const Tensor<Real>& t) {
    check_finite(op, *t.data);
}

// Right-aligned broadcast: trailing dims must match or be 1 on one side;
// missing leading dims act as 1. Returns the broadcast shape.
inline std::vector<int> broadcast_shapes(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
    size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    std::vector<int> out(r);
    for (size_t i = 0; i < r; ++i) {
        int da = i < ra ? a[ra - 1 - i] : 1;
        int db = i < rb ? b[rb - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[r - 1 - i] = std::max(da, db);
    }
    return out;
}

}  // namespace tactus
