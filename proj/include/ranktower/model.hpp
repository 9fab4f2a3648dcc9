#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ranktower/features.hpp"
#include "ranktower/interaction.hpp"
#include "ranktower/params.hpp"
#include "ranktower/towers.hpp"

namespace ranktower {

struct ModelConfig {
    towers::TowerConfig user_tower;
    towers::TowerConfig item_tower;
    std::size_t cross_layers = 1;
    diff::Activation phi = diff::Activation::silu;
    double ln_eps = 1e-5;
    double initial_tau = 1.0;

    std::size_t subspace() const { return user_tower.subspace; }
    interaction::CrossAttentionConfig cross_config() const;
    void validate() const;
};

using EncodedRows = std::vector<std::size_t>;

// Embedding layer + gated towers + gated cross attention + MaxSim, over one ParameterSet.
class RankTower {
public:
    static RankTower create(features::FeatureEncoder encoder, ModelConfig config, std::uint64_t seed);

    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    const features::FeatureEncoder& encoder() const { return encoder_; }
    const ModelConfig& config() const { return config_; }
    const features::EmbeddingTables& tables() const { return tables_; }
    const towers::GatedTower& user_tower() const { return user_tower_; }
    const towers::GatedTower& item_tower() const { return item_tower_; }
    const interaction::CrossAttention& cross() const { return cross_; }
    const interaction::MaxSimHead& head() const { return head_; }

    // Tower outputs E for encoded entities: (n, H, k).
    diff::Var user_embeddings(Binding& bind, std::span<const EncodedRows> users) const;
    diff::Var item_embeddings(Binding& bind, std::span<const EncodedRows> items) const;

    // Logits for one user against n items from tower outputs. user is (H_u, k) or (1, H_u, k);
    // items is (n, H_i, k). Touches only cross-attention and MaxSim parameters.
    diff::Var score_embeddings(Binding& bind, diff::Var user, diff::Var items) const;

    // Row-paired logits: users (n, H_u, k) against items (n, H_i, k).
    diff::Var score_pairs(Binding& bind, diff::Var users, diff::Var items) const;

    // End-to-end logits for one user and n items.
    diff::Var forward(Binding& bind, const EncodedRows& user, std::span<const EncodedRows> items) const;
    diff::Var forward(Binding& bind, const features::FeatureMap& user, std::span<const features::FeatureMap> items) const;

private:
    features::FeatureEncoder encoder_;
    ModelConfig config_;
    ParameterSet params_;
    features::EmbeddingTables tables_;
    towers::GatedTower user_tower_;
    towers::GatedTower item_tower_;
    interaction::CrossAttention cross_;
    interaction::MaxSimHead head_;
};

// Scoring-only half of the model: cross attention + MaxSim with their own parameters.
struct InteractionModel {
    ParameterSet params;
    interaction::CrossAttention cross;
    interaction::MaxSimHead head;
    std::size_t user_heads = 0;
    std::size_t item_heads = 0;

    // Builds the layout for `config` and copies values by name from `source`.
    static InteractionModel from(const ModelConfig& config, const std::vector<NamedTensor>& source);

    diff::Var score(Binding& bind, diff::Var user, diff::Var items) const;
};

} // namespace ranktower
