#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "ranktower/diff/ops.hpp"
#include "ranktower/params.hpp"

namespace ranktower::interaction {

// Gated attention unit over sub-space rows:
//   Q = phi(Xq Wq), K = phi(Xkv Wk), V = phi(Xkv Wv), U = sigmoid(Xq Wu)
//   A = softmax(Q K^T / sqrt(d_k)), O = (U * A V) Wo
// All projections are k x k (d_k = k) and bias-free.
struct GAU {
    ParamId wq, wk, wv, wu, wo;
    std::size_t width = 0;
    diff::Activation phi = diff::Activation::silu;

    static GAU create(ParameterSet& params, const std::string& prefix, std::size_t width, diff::Activation phi,
                      std::mt19937_64& rng);

    struct Output {
        diff::Var out;        // (B, m, k)
        diff::Var attention;  // (B, m, n)
    };
    // q_in (B, m, k), kv_in (B, n, k).
    Output forward(Binding& bind, diff::Var q_in, diff::Var kv_in) const;
};

// One direction of the cross attention: LayerNorm(X + GAU(Q=X, K=V=other)).
struct CrossBranch {
    GAU gau;
    ParamId ln_gain, ln_bias;
    double ln_eps = 1e-5;

    diff::Var forward(Binding& bind, diff::Var self, diff::Var other) const;
};

struct AttendedEmbeddings {
    diff::Var user;  // (B, H_u, k)
    diff::Var item;  // (B, H_i, k)
};

struct CrossAttentionConfig {
    std::size_t width = 32;
    std::size_t layers = 1;
    diff::Activation phi = diff::Activation::silu;
    double ln_eps = 1e-5;
};

// Bi-directional gated cross attention with separate user- and item-branch parameters.
class CrossAttention {
public:
    CrossAttention() = default;
    static CrossAttention create(ParameterSet& params, const CrossAttentionConfig& config, std::mt19937_64& rng);

    AttendedEmbeddings forward(Binding& bind, diff::Var user, diff::Var item) const;

    struct Block {
        CrossBranch user;
        CrossBranch item;
    };
    const std::vector<Block>& blocks() const { return blocks_; }
    std::size_t width() const { return config_.width; }

private:
    CrossAttentionConfig config_;
    std::vector<Block> blocks_;
};

// Sum over user rows of the best cosine against any item row, divided by a learnable
// temperature stored as log(tau).
struct MaxSimHead {
    ParamId log_tau;

    static MaxSimHead create(ParameterSet& params, double initial_tau = 1.0);
    // user (B, H_u, k), item (B, H_i, k) -> logits (B)
    diff::Var score(Binding& bind, diff::Var user, diff::Var item) const;
};

} // namespace ranktower::interaction
