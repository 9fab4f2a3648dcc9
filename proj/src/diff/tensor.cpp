#include "ranktower/diff/tensor.hpp"

#include <cmath>
#include <numeric>

#include "ranktower/errors.hpp"

namespace ranktower::diff {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor shape " + shape_to_string(shape) + " has a zero extent");
    }
    if (shape.empty() || shape_size(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_to_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
}

Tensor Tensor::zeros(Shape s) { return filled(std::move(s), 0.0); }

Tensor Tensor::filled(Shape s, double value) {
    const auto n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, value));
}

Tensor Tensor::vector(std::vector<double> v) {
    const auto n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
}

bool Tensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace ranktower::diff
