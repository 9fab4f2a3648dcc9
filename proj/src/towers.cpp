#include "ranktower/towers.hpp"

#include "ranktower/errors.hpp"

namespace ranktower::towers {

using diff::Var;

Dense Dense::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                    std::mt19937_64& rng) {
    Dense d;
    d.weight = params.add(name + "/w", init::glorot_uniform(rng, in, out));
    d.bias = params.add(name + "/b", diff::Tensor::zeros({out}));
    return d;
}

Var Dense::forward(Binding& bind, Var x) const { return diff::add_bias(diff::matmul(x, bind(weight)), bind(bias)); }

GatedTower GatedTower::create(ParameterSet& params, const std::string& prefix, std::size_t input_width,
                              const TowerConfig& config, std::mt19937_64& rng) {
    if (config.heads == 0 || config.subspace == 0) throw ConfigError(prefix + ": heads and subspace must be positive");
    if (config.reduction == 0) throw ConfigError(prefix + ": reduction ratio must be at least 1");
    if (config.hidden.size() > 3) throw ConfigError(prefix + ": main MLP depth is limited to 4 layers");
    if (input_width == 0) throw ConfigError(prefix + ": empty input");
    GatedTower t;
    t.config_ = config;
    t.input_width_ = input_width;
    const std::size_t out = config.heads * config.subspace;
    std::size_t width = input_width;
    for (std::size_t i = 0; i < config.hidden.size(); ++i) {
        t.main_.push_back(Dense::create(params, prefix + "/mlp" + std::to_string(i), width, config.hidden[i], rng));
        width = config.hidden[i];
    }
    t.main_.push_back(Dense::create(params, prefix + "/mlp" + std::to_string(config.hidden.size()), width, out, rng));
    t.gate_hidden_ = Dense::create(params, prefix + "/gate0", input_width, t.gate_hidden_width(), rng);
    t.gate_out_ = Dense::create(params, prefix + "/gate1", t.gate_hidden_width(), out, rng);
    return t;
}

std::size_t GatedTower::gate_hidden_width() const {
    return (input_width_ + config_.reduction - 1) / config_.reduction;
}

Var GatedTower::forward(Binding& bind, Var x) const { return forward_with_gate_input(bind, x, diff::stop_gradient(x)); }

Var GatedTower::forward_with_gate_input(Binding& bind, Var x, Var gate_input) const {
    if (x.shape().size() != 2 || x.last_dim() != input_width_) {
        throw DimensionError("tower input " + diff::shape_to_string(x.shape()) + " does not match width " +
                             std::to_string(input_width_));
    }
    Var h = x;
    for (std::size_t i = 0; i < main_.size(); ++i) {
        h = main_[i].forward(bind, h);
        if (i + 1 < main_.size()) h = diff::silu(h);
    }
    Var gate = diff::sigmoid(gate_out_.forward(bind, diff::silu(gate_hidden_.forward(bind, gate_input))));
    const auto n = x.shape()[0];
    return diff::reshape(diff::mul(h, gate), {n, config_.heads, config_.subspace});
}

} // namespace ranktower::towers
