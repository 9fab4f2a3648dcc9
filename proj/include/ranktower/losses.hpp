#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ranktower/dataset.hpp"
#include "ranktower/diff/ops.hpp"

namespace ranktower::losses {

using diff::Var;
using features::Stage;

// Row-stochastic n x n matrix, row-major.
struct PermutationMatrix {
    std::size_t n = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * n + c]; }
};

// Indices of s in descending order; ties keep their original order.
std::vector<std::size_t> descending_order(std::span<const double> s);

// Row r = softmax(-|sort_desc(s)_r - s|^power / tau). Throws ConfigError for tau <= 0.
Var softsort(Var s, double tau, double power);
PermutationMatrix softsort(std::span<const double> s, double tau, double power);

// -sum_{r,c} SoftSort(y)_{rc} log SoftSort(z)_{rc}; lists shorter than 2 contribute 0.
Var sorting_loss(Var z, std::span<const double> y, double tau, double power);

// -sum_i p~_i log softmax(z)_i with p~ = p / sum(p); sum(p) == 0 contributes 0.
Var distillation_loss(Var z, std::span<const double> p);

// sum_{j: y_j > 0} log sum_i (z_i - z_j + 1)_+ over all i, including i = j.
Var rankmax_loss(Var z, std::span<const double> y);

enum class MarginMetric { constant, scaled_power };

struct MarginParams {
    double alpha = 3.0;
    MarginMetric metric = MarginMetric::constant;
    double beta = 1.0;   // scaled_power: beta * |y_i - y_j|^power
    double power = 1.0;
};

// m(i, j) = alpha * [y_i == 0] + delta(y_i, y_j); delta is 1 or beta |y_i - y_j|^power.
double adaptive_margin(double y_i, double y_j, const MarginParams& params);

// sum_{j: y_j > 0} log(1 + sum_{i: y_i < y_j} (z_i - z_j + m(i, j))_+).
// The constant 1 keeps the self-comparison term of Rankmax, so the loss floor is 0.
Var am_rankmax_loss(Var z, std::span<const double> y, const MarginParams& params);

struct HybridWeights {
    double distillation = 1.0;
    double sorting = 1.0;
    double am_rankmax = 1.0;
    double sort_tau = 1.0;
    double sort_power = 2.0;
    MarginParams margin;

    void validate() const;
};

// Logits and labels of one list group. teacher is set on impression items only.
struct ListScores {
    Var z;
    std::vector<double> y;
    std::vector<std::optional<double>> teacher;
    std::vector<Stage> stage;
};

// lambda1 * distillation on impressions + lambda2 * sorting on impressions and candidates
// + lambda3 * AM-Rankmax on all items.
Var hybrid_loss(const ListScores& group, const HybridWeights& weights);

// Baselines used for ablations.
// Cross entropy of softmax(z) against y / sum(y).
Var listwise_softmax_loss(Var z, std::span<const double> y);
// Mean over pairs with label_i > label_j of log(1 + exp(-(z_i - z_j))).
Var pairwise_logistic_loss(Var z, std::span<const double> labels);
// sum_i w_i * CE(sigmoid(logit_i), target_i) / sum_i w_i.
Var weighted_logloss(Var logits, std::span<const double> targets, std::span<const double> weights);

} // namespace ranktower::losses
