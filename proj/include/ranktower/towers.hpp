#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "ranktower/diff/ops.hpp"
#include "ranktower/params.hpp"

namespace ranktower::towers {

// Affine layer y = x W + b.
struct Dense {
    ParamId weight;
    ParamId bias;

    static Dense create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                        std::mt19937_64& rng);
    diff::Var forward(Binding& bind, diff::Var x) const;
};

struct TowerConfig {
    std::size_t heads = 4;           // sub-space count H
    std::size_t subspace = 32;       // sub-space size k
    std::vector<std::size_t> hidden{64};  // main MLP hidden widths; depth = hidden.size() + 1
    std::size_t reduction = 2;       // gating MLP reduction ratio r
};

// Multi-head gated tower: out^h = MLP(X)^h * sigmoid(gMLP(stop_gradient(X)))^h, shaped (n, H, k).
class GatedTower {
public:
    GatedTower() = default;
    static GatedTower create(ParameterSet& params, const std::string& prefix, std::size_t input_width,
                             const TowerConfig& config, std::mt19937_64& rng);

    // x is (n, input_width); returns (n, H, k).
    diff::Var forward(Binding& bind, diff::Var x) const;
    // Same computation with an explicit gating input; forward() passes stop_gradient(x).
    diff::Var forward_with_gate_input(Binding& bind, diff::Var x, diff::Var gate_input) const;

    std::size_t heads() const { return config_.heads; }
    std::size_t subspace() const { return config_.subspace; }
    std::size_t input_width() const { return input_width_; }
    std::size_t gate_hidden_width() const;

    const std::vector<Dense>& main_layers() const { return main_; }
    const Dense& gate_hidden() const { return gate_hidden_; }
    const Dense& gate_output() const { return gate_out_; }

private:
    TowerConfig config_;
    std::size_t input_width_ = 0;
    std::vector<Dense> main_;
    Dense gate_hidden_;
    Dense gate_out_;
};

} // namespace ranktower::towers
