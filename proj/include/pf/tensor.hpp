#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace pf {

// Dense row-major f32 tensor. Reductions accumulate in double.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s);
    Tensor(std::vector<std::size_t> s, std::vector<float> d);

    std::size_t numel() const;
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    float& operator[](std::size_t i) { return data[i]; }
    float operator[](std::size_t i) const { return data[i]; }

    // 2-D / 3-D / 4-D row-major accessors.
    float& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    float at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    float& at3(std::size_t c, std::size_t i, std::size_t j) {
        return data[(c * shape[1] + i) * shape[2] + j];
    }
    float at3(std::size_t c, std::size_t i, std::size_t j) const {
        return data[(c * shape[1] + i) * shape[2] + j];
    }
    float& at4(std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
        return data[((n * shape[1] + c) * shape[2] + i) * shape[3] + j];
    }
    float at4(std::size_t n, std::size_t c, std::size_t i, std::size_t j) const {
        return data[((n * shape[1] + c) * shape[2] + i) * shape[3] + j];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::size_t> s, float v);
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Throws std::invalid_argument naming `what` on mismatch.
void require_shape(const Tensor& t, const std::vector<std::size_t>& expect,
                   const std::string& what);

}  // namespace pf
