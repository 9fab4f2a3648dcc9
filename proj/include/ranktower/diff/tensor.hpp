#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ranktower::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles. Scalars use shape {1}.
struct Tensor {
    Shape shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v);

    static Tensor zeros(Shape s);
    static Tensor filled(Shape s, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
    std::size_t rows() const { return size() / last_dim(); }

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
    double& at(std::size_t r, std::size_t c) { return values[r * last_dim() + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * last_dim() + c]; }

    std::span<double> span() { return values; }
    std::span<const double> span() const { return values; }

    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

} // namespace ranktower::diff
