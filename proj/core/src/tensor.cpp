#include "magskin/tensor.hpp"

#include <cmath>
#include <string>

#include "magskin/errors.hpp"

namespace magskin {

std::int64_t Tensor::numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int> s)
    : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), 0.0) {}

void Tensor::fill(double value) {
    for (auto& v : data) v = value;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
    if (t.shape != shape)
        throw ShapeError(std::string(what) + ": expected shape " + shape_string(shape) +
                         ", got " + shape_string(t.shape));
}

void require_finite(const Tensor& t, const char* what) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw DivergenceError(std::string("non-finite value in ") + what);
}

std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

} // namespace magskin
