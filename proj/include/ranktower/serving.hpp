#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ranktower/dataset.hpp"
#include "ranktower/model.hpp"

namespace ranktower::serving {

// Precomputed tower outputs for one side. Binary layout, little-endian:
//   "RKTWEMB\0" | u32 version | u32 side | u32 H | u32 k | u64 count
//   count x (u64 id | H*k f64)
class EmbeddingStore {
public:
    static constexpr std::uint32_t version = 1;
    static constexpr std::size_t header_bytes = 32;

    EmbeddingStore() = default;
    EmbeddingStore(features::Side side, std::size_t heads, std::size_t subspace);

    // Throws ConfigError on a duplicate id and DimensionError on a wrong-size vector.
    void add(std::uint64_t id, std::span<const double> values);

    features::Side side() const { return side_; }
    std::size_t heads() const { return heads_; }
    std::size_t subspace() const { return subspace_; }
    std::size_t count() const { return ids_.size(); }
    std::size_t record_width() const { return heads_ * subspace_; }
    const std::vector<std::uint64_t>& ids() const { return ids_; }
    bool contains(std::uint64_t id) const { return index_.count(id) > 0; }

    // H*k values of `id`; throws NotFoundError naming the id.
    std::span<const double> find(std::uint64_t id) const;
    // (n, H, k) tensor for the given ids.
    diff::Tensor gather(std::span<const std::uint64_t> ids) const;

    void save(const std::filesystem::path& path) const;
    static EmbeddingStore load(const std::filesystem::path& path);
    std::size_t file_size() const { return header_bytes + count() * (8 + 8 * record_width()); }

private:
    features::Side side_ = features::Side::user;
    std::size_t heads_ = 0;
    std::size_t subspace_ = 0;
    std::vector<std::uint64_t> ids_;
    std::vector<double> values_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
};

// Runs embedding tables and the side's tower over every entity, in batches.
EmbeddingStore export_embeddings(const RankTower& model, std::span<const features::Entity> entities,
                                 features::Side side, std::size_t batch_size = 256);

// Scores from stored tower outputs using only cross attention and MaxSim.
class OnlineScorer {
public:
    OnlineScorer(InteractionModel model, EmbeddingStore users, EmbeddingStore items);

    // One logit per item id; throws NotFoundError for unknown ids.
    std::vector<double> score(std::uint64_t user_id, std::span<const std::uint64_t> item_ids,
                              std::size_t batch_size = 512) const;

    const EmbeddingStore& users() const { return users_; }
    const EmbeddingStore& items() const { return items_; }

private:
    InteractionModel model_;
    EmbeddingStore users_;
    EmbeddingStore items_;
};

// {"user_id": ..., "item_id": ..., "logit": ...}
std::string score_json_line(std::uint64_t user_id, std::uint64_t item_id, double logit);

} // namespace ranktower::serving
