#include "ranktower/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ranktower/errors.hpp"

namespace ranktower::losses {
namespace {

Var zero(diff::Graph& g) { return g.constant(diff::Tensor::scalar(0.0)); }

void require_length(Var z, std::size_t n, const char* what) {
    if (z.size() != n) {
        throw DimensionError(std::string(what) + ": " + std::to_string(z.size()) + " logits for " + std::to_string(n) +
                             " labels");
    }
}

// Pre-softmax SoftSort matrix -|sort_desc(s)_r - s_c|^power / tau.
Var softsort_logits(Var s, double tau, double power) {
    if (!(tau > 0)) throw ConfigError("softsort temperature must be positive");
    const auto order = descending_order(s.values());
    Var sorted = diff::select(s, order);
    return diff::scale(diff::abs_pow(diff::outer_sub(sorted, s), power), -1.0 / tau);
}

std::vector<std::size_t> where(std::span<const Stage> stage, std::initializer_list<Stage> keep) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < stage.size(); ++i)
        if (std::find(keep.begin(), keep.end(), stage[i]) != keep.end()) idx.push_back(i);
    return idx;
}

template <class T>
std::vector<T> pick(std::span<const T> v, std::span<const std::size_t> idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

// sum over rows j in `rows` of log(offset + sum_i mask_ji * (z_i - z_j + margin_ji)_+)
Var hinge_log_sum(Var z, const std::vector<double>& margin, const std::vector<double>& mask,
                  std::span<const std::size_t> rows, double offset) {
    auto& g = z.graph();
    const auto n = z.size();
    Var diff_ji = diff::scale(diff::outer_sub(z, z), -1.0);  // [j][i] = z_i - z_j
    Var hinge = diff::relu(diff::add(diff_ji, g.constant(diff::Tensor({n, n}, margin))));
    Var inner = diff::sum_last(diff::mul(hinge, g.constant(diff::Tensor({n, n}, mask))));
    if (offset != 0.0) inner = diff::add_scalar(inner, offset);
    return diff::sum(diff::select(diff::log(inner), rows));
}

} // namespace

std::vector<std::size_t> descending_order(std::span<const double> s) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&s](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    return order;
}

Var softsort(Var s, double tau, double power) { return diff::row_softmax(softsort_logits(s, tau, power)); }

PermutationMatrix softsort(std::span<const double> s, double tau, double power) {
    diff::Graph g(false);
    Var out = softsort(g.constant(diff::Tensor::vector({s.begin(), s.end()})), tau, power);
    auto v = out.values();
    return {s.size(), {v.begin(), v.end()}};
}

Var sorting_loss(Var z, std::span<const double> y, double tau, double power) {
    require_length(z, y.size(), "sorting_loss");
    auto& g = z.graph();
    if (y.size() < 2) return zero(g);
    const auto target = softsort(y, tau, power);
    Var log_pz = diff::log_softmax(softsort_logits(z, tau, power));
    return diff::scale(diff::sum(diff::mul(g.constant(diff::Tensor({y.size(), y.size()}, target.values)), log_pz)), -1.0);
}

Var distillation_loss(Var z, std::span<const double> p) {
    require_length(z, p.size(), "distillation_loss");
    auto& g = z.graph();
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (p.empty() || total <= 0.0) return zero(g);
    std::vector<double> target(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) target[i] = p[i] / total;
    return diff::scale(diff::sum(diff::mul(g.constant(diff::Tensor::vector(std::move(target))), diff::log_softmax(z))), -1.0);
}

Var rankmax_loss(Var z, std::span<const double> y) {
    require_length(z, y.size(), "rankmax_loss");
    const auto n = y.size();
    std::vector<std::size_t> positives;
    for (std::size_t j = 0; j < n; ++j)
        if (y[j] > 0) positives.push_back(j);
    if (positives.empty()) return zero(z.graph());
    return hinge_log_sum(z, std::vector<double>(n * n, 1.0), std::vector<double>(n * n, 1.0), positives, 0.0);
}

double adaptive_margin(double y_i, double y_j, const MarginParams& params) {
    const double delta = params.metric == MarginMetric::constant
                             ? 1.0
                             : params.beta * std::pow(std::abs(y_i - y_j), params.power);
    return (y_i == 0.0 ? params.alpha : 0.0) + delta;
}

Var am_rankmax_loss(Var z, std::span<const double> y, const MarginParams& params) {
    require_length(z, y.size(), "am_rankmax_loss");
    const auto n = y.size();
    std::vector<std::size_t> positives;
    std::vector<double> margin(n * n, 0.0), mask(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (y[j] <= 0) continue;
        positives.push_back(j);
        for (std::size_t i = 0; i < n; ++i) {
            if (y[i] < y[j]) {
                margin[j * n + i] = adaptive_margin(y[i], y[j], params);
                mask[j * n + i] = 1.0;
            }
        }
    }
    if (positives.empty()) return zero(z.graph());
    return hinge_log_sum(z, margin, mask, positives, 1.0);
}

void HybridWeights::validate() const {
    if (distillation < 0 || sorting < 0 || am_rankmax < 0) throw ConfigError("loss weights must be nonnegative");
    if (distillation == 0 && sorting == 0 && am_rankmax == 0) throw ConfigError("at least one loss weight must be positive");
    if (!(sort_tau > 0)) throw ConfigError("sort temperature must be positive");
    if (!(sort_power > 0)) throw ConfigError("sort distance power must be positive");
    if (margin.alpha < 0) throw ConfigError("margin alpha must be nonnegative");
}

Var hybrid_loss(const ListScores& group, const HybridWeights& weights) {
    const auto n = group.y.size();
    if (group.stage.size() != n || group.teacher.size() != n) {
        throw DimensionError("hybrid_loss: labels, teacher and stage tags must have equal length");
    }
    require_length(group.z, n, "hybrid_loss");
    auto& g = group.z.graph();
    Var total = zero(g);
    std::span<const double> y(group.y);

    if (weights.distillation > 0) {
        auto idx = where(group.stage, {Stage::impression});
        std::vector<double> p;
        for (auto i : idx) {
            if (!group.teacher[i]) throw ConfigError("impression item without a teacher probability");
            p.push_back(*group.teacher[i]);
        }
        if (!idx.empty()) {
            total = diff::add(total, diff::scale(distillation_loss(diff::select(group.z, idx), p), weights.distillation));
        }
    }
    if (weights.sorting > 0) {
        auto idx = where(group.stage, {Stage::impression, Stage::candidate});
        if (idx.size() >= 2) {
            const auto ys = pick(y, idx);
            total = diff::add(total, diff::scale(sorting_loss(diff::select(group.z, idx), ys, weights.sort_tau,
                                                              weights.sort_power),
                                                 weights.sorting));
        }
    }
    if (weights.am_rankmax > 0) {
        total = diff::add(total, diff::scale(am_rankmax_loss(group.z, y, weights.margin), weights.am_rankmax));
    }
    return total;
}

Var listwise_softmax_loss(Var z, std::span<const double> y) {
    require_length(z, y.size(), "listwise_softmax_loss");
    return distillation_loss(z, y);
}

Var pairwise_logistic_loss(Var z, std::span<const double> labels) {
    require_length(z, labels.size(), "pairwise_logistic_loss");
    auto& g = z.graph();
    const auto n = labels.size();
    std::vector<double> mask(n * n, 0.0);
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (labels[i] > labels[j]) {
                mask[i * n + j] = 1.0;
                ++pairs;
            }
    if (pairs == 0) return zero(g);
    Var loss = diff::softplus(diff::scale(diff::outer_sub(z, z), -1.0));
    return diff::scale(diff::sum(diff::mul(loss, g.constant(diff::Tensor({n, n}, mask)))), 1.0 / static_cast<double>(pairs));
}

Var weighted_logloss(Var logits, std::span<const double> targets, std::span<const double> weights) {
    require_length(logits, targets.size(), "weighted_logloss");
    if (weights.size() != targets.size()) throw DimensionError("weighted_logloss: weights and targets differ in length");
    auto& g = logits.graph();
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (targets.empty() || total <= 0) return zero(g);
    std::vector<double> w(weights.begin(), weights.end());
    Var ce = diff::sub(diff::softplus(logits), diff::mul(logits, g.constant(diff::Tensor::vector({targets.begin(), targets.end()}))));
    return diff::scale(diff::sum(diff::mul(ce, g.constant(diff::Tensor::vector(std::move(w))))), 1.0 / total);
}

} // namespace ranktower::losses
