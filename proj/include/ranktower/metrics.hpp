#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ranktower/cascade.hpp"

namespace ranktower::metrics {

using ItemId = std::uint64_t;

// Item ids by descending score; equal scores keep ascending id order.
std::vector<ItemId> rank_items(std::span<const ItemId> ids, std::span<const double> scores);

// |top-K intersect relevant| / |relevant|; nullopt when nothing is relevant.
std::optional<double> recall_at_k(std::span<const ItemId> ranked, const std::set<ItemId>& relevant, std::size_t k);

// DCG@K / IDCG@K with linear gain and discount 1 / log2(rank + 1); 0 when IDCG is 0.
double ndcg_at_k(std::span<const ItemId> ranked, const std::map<ItemId, double>& gains, std::size_t k);
// Whether any gain is positive, i.e. the user counts toward the NDCG average.
bool has_gain(const std::map<ItemId, double>& gains);

// Relevance judgments of one user from one data split.
struct Judgments {
    std::set<ItemId> relevant;           // impressions with a positive behavior
    std::map<ItemId, double> gains;      // hard labels
};

std::map<std::uint64_t, Judgments> judgments_from(std::span<const features::Record> records,
                                                  const cascade::LabelWeights& weights);

struct UserMetrics {
    std::uint64_t user_id = 0;
    std::optional<double> recall;
    std::optional<double> ndcg;
};

struct EvalReport {
    std::size_t k = 0;
    std::size_t corpus_size = 0;
    double recall = 0.0;  // mean over users with a relevant item
    double ndcg = 0.0;    // mean over users with a positive gain
    std::size_t recall_users = 0;
    std::size_t ndcg_users = 0;
    std::vector<UserMetrics> users;

    std::string to_json() const;
    std::string to_table() const;
    // FNV-1a over the JSON text.
    std::uint64_t checksum() const;
};

// scores(user_id) returns one score per corpus id, in corpus order.
using ScoreFn = std::function<std::vector<double>(std::uint64_t user_id)>;

EvalReport evaluate(const std::map<std::uint64_t, Judgments>& judgments, std::span<const ItemId> corpus,
                    const ScoreFn& scores, std::size_t k);

// Probability that a random positive outscores a random negative; ties count one half.
double auc(std::span<const double> scores, std::span<const int> labels);

} // namespace ranktower::metrics
