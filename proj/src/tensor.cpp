#include "pf/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pf {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> s)
    : shape(std::move(s)), data(shape_numel(shape), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
        throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
}

std::size_t Tensor::numel() const { return shape_numel(shape); }

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::full(std::vector<std::size_t> s, float v) {
    Tensor t(std::move(s));
    for (float& x : t.data) x = v;
    return t;
}

void require_shape(const Tensor& t, const std::vector<std::size_t>& expect,
                   const std::string& what) {
    if (t.shape != expect)
        throw std::invalid_argument(what + ": expected shape " + shape_str(expect) +
                                    ", got " + shape_str(t.shape));
}

}  // namespace pf
