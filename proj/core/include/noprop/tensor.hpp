#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "noprop/errors.hpp"
#include "noprop/rng.hpp"

namespace noprop {

#ifdef NOPROP_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

// Dense row-major n-dimensional array. Rank 0 (empty shape) is a scalar
// with one element. Treated as immutable once handed out of an operation.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, real fill = real(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        validate_extents();
    }

    Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_extents();
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(real v) { return Tensor(Shape{}, std::vector<real>{v}); }

    static Tensor vector1d(std::initializer_list<real> vals) {
        return Tensor(Shape{vals.size()}, std::vector<real>(vals));
    }

    static Tensor randn(Shape shape, RngStream& stream, real scale = real(1)) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<real>(stream.normal()) * scale;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    const real* data() const { return data_.data(); }
    real* data() { return data_.data(); }
    const std::vector<real>& vec() const { return data_; }
    std::vector<real>& vec() { return data_; }

    real operator[](std::size_t i) const { return data_[i]; }
    real& operator[](std::size_t i) { return data_[i]; }

    // Single element of a rank-0/rank-1-of-1 tensor.
    real item() const {
        if (data_.size() != 1)
            throw ContractError("item() on non-scalar tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (real v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void require_finite(const std::string& where) const {
        if (!all_finite()) throw NumericError("non-finite value produced by " + where);
    }

  private:
    void validate_extents() const {
        for (std::size_t e : shape_)
            if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<real> data_;
};

inline real dot(const Tensor& a, const Tensor& b) {
    real s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

inline real sq_l2(const Tensor& a) { return dot(a, a); }

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff on shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    real m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace noprop
