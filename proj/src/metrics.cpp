#include "ranktower/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ranktower/errors.hpp"

namespace ranktower::metrics {

std::vector<ItemId> rank_items(std::span<const ItemId> ids, std::span<const double> scores) {
    if (ids.size() != scores.size()) throw DimensionError("rank_items: id and score counts differ");
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    });
    std::vector<ItemId> out;
    out.reserve(ids.size());
    for (auto o : order) out.push_back(ids[o]);
    return out;
}

std::optional<double> recall_at_k(std::span<const ItemId> ranked, const std::set<ItemId>& relevant, std::size_t k) {
    if (relevant.empty()) return std::nullopt;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += relevant.count(ranked[r]);
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

namespace {

double discount(std::size_t position) { return 1.0 / std::log2(static_cast<double>(position) + 2.0); }

} // namespace

double ndcg_at_k(std::span<const ItemId> ranked, const std::map<ItemId, double>& gains, std::size_t k) {
    double dcg = 0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
        auto it = gains.find(ranked[r]);
        if (it != gains.end()) {
            if (it->second < 0) throw ConfigError("ndcg: negative gain");
            dcg += it->second * discount(r);
        }
    }
    std::vector<double> ideal;
    for (const auto& [id, g] : gains) ideal.push_back(g);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0;
    for (std::size_t r = 0; r < std::min(k, ideal.size()); ++r) idcg += ideal[r] * discount(r);
    return idcg > 0 ? dcg / idcg : 0.0;
}

bool has_gain(const std::map<ItemId, double>& gains) {
    return std::any_of(gains.begin(), gains.end(), [](const auto& kv) { return kv.second > 0; });
}

std::map<std::uint64_t, Judgments> judgments_from(std::span<const features::Record> records,
                                                  const cascade::LabelWeights& weights) {
    std::map<std::uint64_t, Judgments> out;
    for (const auto& r : records) {
        auto& j = out[r.user_id];
        const double y = cascade::hard_label(r, weights);
        auto [it, inserted] = j.gains.emplace(r.item_id, y);
        if (!inserted) it->second = std::max(it->second, y);
        if (r.stage == features::Stage::impression && cascade::has_positive_behavior(r)) j.relevant.insert(r.item_id);
    }
    return out;
}

EvalReport evaluate(const std::map<std::uint64_t, Judgments>& judgments, std::span<const ItemId> corpus,
                    const ScoreFn& scores, std::size_t k) {
    if (k == 0) throw ConfigError("evaluate: k must be positive");
    EvalReport report;
    report.k = k;
    report.corpus_size = corpus.size();
    double recall_sum = 0, ndcg_sum = 0;
    for (const auto& [user, j] : judgments) {
        UserMetrics m{user, std::nullopt, std::nullopt};
        const bool wants_recall = !j.relevant.empty();
        const bool wants_ndcg = has_gain(j.gains);
        if (wants_recall || wants_ndcg) {
            auto s = scores(user);
            auto ranked = rank_items(corpus, s);
            if (wants_recall) {
                m.recall = recall_at_k(ranked, j.relevant, k);
                recall_sum += *m.recall;
                ++report.recall_users;
            }
            if (wants_ndcg) {
                m.ndcg = ndcg_at_k(ranked, j.gains, k);
                ndcg_sum += *m.ndcg;
                ++report.ndcg_users;
            }
        }
        report.users.push_back(m);
    }
    report.recall = report.recall_users ? recall_sum / static_cast<double>(report.recall_users) : 0.0;
    report.ndcg = report.ndcg_users ? ndcg_sum / static_cast<double>(report.ndcg_users) : 0.0;
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["k"] = k;
    j["corpus_size"] = corpus_size;
    j["recall_at_k"] = recall;
    j["ndcg_at_k"] = ndcg;
    j["recall_users"] = recall_users;
    j["ndcg_users"] = ndcg_users;
    auto& per_user = j["users"] = nlohmann::ordered_json::array();
    for (const auto& u : users) {
        nlohmann::ordered_json row;
        row["user_id"] = u.user_id;
        row["recall"] = u.recall ? nlohmann::ordered_json(*u.recall) : nlohmann::ordered_json(nullptr);
        row["ndcg"] = u.ndcg ? nlohmann::ordered_json(*u.ndcg) : nlohmann::ordered_json(nullptr);
        per_user.push_back(std::move(row));
    }
    return j.dump(2);
}

std::string EvalReport::to_table() const {
    char buf[256];
    std::ostringstream out;
    std::snprintf(buf, sizeof buf, "%-12s %10s %8s\n", "metric", "value", "users");
    out << buf;
    std::snprintf(buf, sizeof buf, "%-12s %10.6f %8zu\n", ("Recall@" + std::to_string(k)).c_str(), recall, recall_users);
    out << buf;
    std::snprintf(buf, sizeof buf, "%-12s %10.6f %8zu\n", ("NDCG@" + std::to_string(k)).c_str(), ndcg, ndcg_users);
    out << buf;
    return out.str();
}

std::uint64_t EvalReport::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : to_json()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("auc: score and label counts differ");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U with average ranks for ties.
    double rank_sum = 0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]]) rank_sum += avg_rank;
        i = j;
    }
    for (auto l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) throw EvaluationError("auc: needs both positive and negative labels");
    const double p = static_cast<double>(pos);
    return (rank_sum - p * (p + 1) / 2.0) / (p * static_cast<double>(neg));
}

} // namespace ranktower::metrics
