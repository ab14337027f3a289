#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace magskin {

// Dense row-major tensor of 64-bit floats.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);

    static std::int64_t numel_of(const std::vector<int>& shape);
    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    void fill(double value);

    // Index helpers for tests and cold paths; hot loops index data directly.
    double& at(int i) { return data[static_cast<std::size_t>(i)]; }
    double at(int i) const { return data[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    double& at(int i, int j, int k) {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double at(int i, int j, int k) const {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double& at(int i, int j, int k, int l) {
        return data[static_cast<std::size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }
    double at(int i, int j, int k, int l) const {
        return data[static_cast<std::size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }
};

bool same_shape(const Tensor& a, const Tensor& b);

// Throws ShapeError unless the tensor has the given shape.
void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what);

// Throws DivergenceError naming `what` if any value is NaN or infinite.
void require_finite(const Tensor& t, const char* what);

std::string shape_string(const std::vector<int>& shape);

} // namespace magskin
