#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ranktower/diff/graph.hpp"

// Differentiable operations on Graph values. "Last axis" ops treat a tensor as a stack of
// rows of length shape.back(). All shape errors throw DimensionError.
namespace ranktower::diff {

// Elementwise
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard product
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var sigmoid(Var x);
Var silu(Var x);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
Var softplus(Var x);
// |x|^power; exact x*x for power 2.
Var abs_pow(Var x, double power);

enum class Activation { silu, relu };
Var activate(Var x, Activation act);
std::string to_string(Activation act);
Activation activation_from_string(const std::string& s);  // "silu" | "relu"

// Broadcasting
Var add_bias(Var x, Var bias);     // bias has shape {last_dim(x)}
Var mul_scalar(Var x, Var s);      // s holds one value
Var broadcast_batch(Var x, std::size_t batch);  // prepends a leading axis of size `batch`

// Structure
Var reshape(Var x, Shape shape);
Var concat_last(std::span<const Var> parts);
Var gather_rows(Var table, std::span<const std::size_t> rows);  // table (V, d) -> (n, d)
Var select(Var x, std::span<const std::size_t> indices);         // 1-D gather
// Identity forward, no gradient backward.
Var stop_gradient(Var x);

// Linear algebra
// a (..., n) x b (n, p) -> (..., p)
Var matmul(Var a, Var b);
// a (B, m, n) x b (B, n, p) -> (B, m, p); with transpose_b, b is (B, p, n).
Var bmm(Var a, Var b, bool transpose_b = false);

// Reductions
Var sum(Var x);       // -> {1}
Var sum_last(Var x);  // drops the last axis
struct MaxResult {
    Var value;
    std::vector<std::size_t> argmax;  // per row, lowest index on ties
};
// Max over the last axis; gradient flows only to the argmax entry.
MaxResult reduce_max_last(Var x);

// Row operations over the last axis
Var row_softmax(Var x);
Var log_softmax(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps);
// x / max(||x||, eps) per row.
Var l2_normalize_last(Var x, double eps = 1e-12);
// (m) and (n) -> (m, n) with out[r][c] = a[r] - b[c].
Var outer_sub(Var a, Var b);

// Cosine similarity of matching rows: a, b (..., k) -> (...). Zero rows yield 0.
Var cosine_similarity(Var a, Var b, double eps = 1e-12);
// Pairwise cosines: a (B, m, k), b (B, n, k) -> (B, m, n).
Var cosine_matrix(Var a, Var b, double eps = 1e-12);

} // namespace ranktower::diff
