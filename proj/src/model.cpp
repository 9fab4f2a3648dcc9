#include "ranktower/model.hpp"

#include <random>

#include "ranktower/errors.hpp"

namespace ranktower {

using diff::Var;
using features::Side;

interaction::CrossAttentionConfig ModelConfig::cross_config() const {
    return {subspace(), cross_layers, phi, ln_eps};
}

void ModelConfig::validate() const {
    if (user_tower.subspace != item_tower.subspace) {
        throw ConfigError("user and item sub-space sizes must match (" + std::to_string(user_tower.subspace) + " vs " +
                          std::to_string(item_tower.subspace) + ")");
    }
    if (user_tower.heads == 0 || item_tower.heads == 0) throw ConfigError("sub-space counts must be positive");
    if (cross_layers == 0) throw ConfigError("cross attention needs at least one layer");
    if (!(ln_eps > 0)) throw ConfigError("layer norm epsilon must be positive");
}

RankTower RankTower::create(features::FeatureEncoder encoder, ModelConfig config, std::uint64_t seed) {
    config.validate();
    RankTower m;
    m.encoder_ = std::move(encoder);
    m.config_ = config;
    std::mt19937_64 rng(seed);
    const auto& schema = m.encoder_.schema();
    m.tables_ = features::EmbeddingTables::create(schema, m.params_, rng);
    m.user_tower_ = towers::GatedTower::create(m.params_, "user_tower", schema.input_width(Side::user), config.user_tower, rng);
    m.item_tower_ = towers::GatedTower::create(m.params_, "item_tower", schema.input_width(Side::item), config.item_tower, rng);
    m.cross_ = interaction::CrossAttention::create(m.params_, config.cross_config(), rng);
    m.head_ = interaction::MaxSimHead::create(m.params_, config.initial_tau);
    return m;
}

Var RankTower::user_embeddings(Binding& bind, std::span<const EncodedRows> users) const {
    return user_tower_.forward(bind, tables_.embed(bind, users, Side::user));
}

Var RankTower::item_embeddings(Binding& bind, std::span<const EncodedRows> items) const {
    return item_tower_.forward(bind, tables_.embed(bind, items, Side::item));
}

namespace {

Var score_with(Binding& bind, const interaction::CrossAttention& cross, const interaction::MaxSimHead& head,
               Var user, Var items) {
    if (items.shape().size() != 3) throw DimensionError("item embeddings must be (n, H, k)");
    const auto n = items.shape()[0];
    if (user.shape().size() == 3) {
        if (user.shape()[0] != 1) throw DimensionError("score expects a single user");
        user = diff::reshape(user, {user.shape()[1], user.shape()[2]});
    }
    if (user.shape().size() != 2) throw DimensionError("user embedding must be (H, k)");
    auto attended = cross.forward(bind, diff::broadcast_batch(user, n), items);
    return head.score(bind, attended.user, attended.item);
}

} // namespace

Var RankTower::score_embeddings(Binding& bind, Var user, Var items) const {
    return score_with(bind, cross_, head_, user, items);
}

Var RankTower::score_pairs(Binding& bind, Var users, Var items) const {
    if (users.shape().size() != 3 || items.shape().size() != 3 || users.shape()[0] != items.shape()[0])
        throw DimensionError("score_pairs expects (n, H_u, k) and (n, H_i, k)");
    auto attended = cross_.forward(bind, users, items);
    return head_.score(bind, attended.user, attended.item);
}

Var RankTower::forward(Binding& bind, const EncodedRows& user, std::span<const EncodedRows> items) const {
    return score_embeddings(bind, user_embeddings(bind, std::span(&user, 1)), item_embeddings(bind, items));
}

Var RankTower::forward(Binding& bind, const features::FeatureMap& user,
                       std::span<const features::FeatureMap> items) const {
    std::vector<EncodedRows> encoded;
    encoded.reserve(items.size());
    for (const auto& f : items) encoded.push_back(encoder_.encode(f, Side::item));
    return forward(bind, encoder_.encode(user, Side::user), encoded);
}

InteractionModel InteractionModel::from(const ModelConfig& config, const std::vector<NamedTensor>& source) {
    config.validate();
    InteractionModel m;
    std::mt19937_64 rng(0);
    m.cross = interaction::CrossAttention::create(m.params, config.cross_config(), rng);
    m.head = interaction::MaxSimHead::create(m.params, config.initial_tau);
    m.params.assign_from(source);
    m.user_heads = config.user_tower.heads;
    m.item_heads = config.item_tower.heads;
    return m;
}

Var InteractionModel::score(Binding& bind, Var user, Var items) const {
    return score_with(bind, cross, head, user, items);
}

} // namespace ranktower
