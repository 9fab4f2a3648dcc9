#include "ranktower/interaction.hpp"

#include <cmath>

#include "ranktower/errors.hpp"

namespace ranktower::interaction {

using diff::Var;

GAU GAU::create(ParameterSet& params, const std::string& prefix, std::size_t width, diff::Activation phi,
                std::mt19937_64& rng) {
    GAU g;
    g.width = width;
    g.phi = phi;
    g.wq = params.add(prefix + "/wq", init::glorot_uniform(rng, width, width));
    g.wk = params.add(prefix + "/wk", init::glorot_uniform(rng, width, width));
    g.wv = params.add(prefix + "/wv", init::glorot_uniform(rng, width, width));
    g.wu = params.add(prefix + "/wu", init::glorot_uniform(rng, width, width));
    g.wo = params.add(prefix + "/wo", init::glorot_uniform(rng, width, width));
    return g;
}

GAU::Output GAU::forward(Binding& bind, Var q_in, Var kv_in) const {
    if (q_in.shape().size() != 3 || kv_in.shape().size() != 3 || q_in.last_dim() != width ||
        kv_in.last_dim() != width || q_in.shape()[0] != kv_in.shape()[0]) {
        throw DimensionError("GAU inputs " + diff::shape_to_string(q_in.shape()) + " / " +
                             diff::shape_to_string(kv_in.shape()) + " do not match width " + std::to_string(width));
    }
    Var q = diff::activate(diff::matmul(q_in, bind(wq)), phi);
    Var k = diff::activate(diff::matmul(kv_in, bind(wk)), phi);
    Var v = diff::activate(diff::matmul(kv_in, bind(wv)), phi);
    Var u = diff::sigmoid(diff::matmul(q_in, bind(wu)));
    Var a = diff::row_softmax(diff::scale(diff::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(width))));
    Var o = diff::matmul(diff::mul(u, diff::bmm(a, v)), bind(wo));
    return {o, a};
}

Var CrossBranch::forward(Binding& bind, Var self, Var other) const {
    return diff::layer_norm(diff::add(self, gau.forward(bind, self, other).out), bind(ln_gain), bind(ln_bias), ln_eps);
}

CrossAttention CrossAttention::create(ParameterSet& params, const CrossAttentionConfig& config, std::mt19937_64& rng) {
    if (config.width == 0 || config.layers == 0) throw ConfigError("cross attention needs positive width and depth");
    CrossAttention ca;
    ca.config_ = config;
    for (std::size_t l = 0; l < config.layers; ++l) {
        Block b;
        for (auto [branch, side] : {std::pair{&b.user, "user"}, std::pair{&b.item, "item"}}) {
            const std::string prefix = "cross" + std::to_string(l) + "/" + side;
            branch->gau = GAU::create(params, prefix + "/gau", config.width, config.phi, rng);
            branch->ln_gain = params.add(prefix + "/ln_gain", diff::Tensor::filled({config.width}, 1.0));
            branch->ln_bias = params.add(prefix + "/ln_bias", diff::Tensor::zeros({config.width}));
            branch->ln_eps = config.ln_eps;
        }
        ca.blocks_.push_back(b);
    }
    return ca;
}

AttendedEmbeddings CrossAttention::forward(Binding& bind, Var user, Var item) const {
    for (const auto& b : blocks_) {
        Var next_user = b.user.forward(bind, user, item);
        Var next_item = b.item.forward(bind, item, user);
        user = next_user;
        item = next_item;
    }
    return {user, item};
}

MaxSimHead MaxSimHead::create(ParameterSet& params, double initial_tau) {
    if (!(initial_tau > 0)) throw ConfigError("MaxSim temperature must be positive");
    return {params.add("maxsim/log_tau", diff::Tensor::scalar(std::log(initial_tau)))};
}

Var MaxSimHead::score(Binding& bind, Var user, Var item) const {
    Var best = diff::reduce_max_last(diff::cosine_matrix(user, item)).value;  // (B, H_u)
    Var inv_tau = diff::exp(diff::scale(bind(log_tau), -1.0));
    return diff::mul_scalar(diff::sum_last(best), inv_tau);
}

} // namespace ranktower::interaction
