#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ranktower/cascade.hpp"
#include "ranktower/config.hpp"
#include "ranktower/metrics.hpp"
#include "ranktower/model.hpp"
#include "ranktower/optim.hpp"

namespace ranktower::trainer {

// Named-tensor container. Binary layout, little-endian:
//   "RKTWCKPT" | u32 version | u32 n_tensors | u32 n_meta
//   n_tensors x (u32 name_len | name | u32 rank | rank x u64 dim | f64 values)
//   n_meta x (u32 key_len | key | u64 value_len | value)
struct Checkpoint {
    static constexpr std::uint32_t version = 1;

    std::vector<NamedTensor> tensors;
    std::map<std::string, std::string> meta;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    // Tensors under "<prefix>/", with the prefix stripped.
    std::vector<NamedTensor> group(const std::string& prefix) const;
    const std::string& get(const std::string& key) const;  // NotFoundError when absent
    RunConfig config() const;
    features::FeatureEncoder encoder() const;
};

struct HistoryEntry {
    std::size_t step = 0;
    double train_loss = 0.0;  // mean batch loss since the previous evaluation
    double recall = 0.0;
    double ndcg = 0.0;
};

struct TrainingData {
    std::vector<features::Record> train;
    std::vector<features::Record> valid;
    std::vector<features::Entity> users;
    std::vector<features::Entity> items;
};

// Scores every (user, corpus item) pair through exported stores and the online scorer.
metrics::EvalReport evaluate(const RankTower& model, std::span<const features::Record> records,
                             std::span<const features::Entity> users, std::span<const features::Entity> items,
                             const cascade::LabelWeights& weights, std::size_t k, std::size_t batch_size = 512);

// Same protocol with the generator's true utility as the score.
metrics::EvalReport evaluate_oracle(std::span<const features::Record> records, std::span<const features::Entity> users,
                                    std::span<const features::Entity> items, const cascade::LabelWeights& weights,
                                    std::size_t latent_dim, std::size_t k);

// Model from a checkpoint: the best snapshot when present, otherwise the current parameters.
RankTower model_from_checkpoint(const Checkpoint& checkpoint);

// Adam over mean per-group loss, periodic validation NDCG@K and early stopping.
// `data` must outlive the trainer.
class Trainer {
public:
    Trainer(RunConfig config, features::FeatureEncoder encoder, const TrainingData& data);
    static Trainer resume(const Checkpoint& checkpoint, const TrainingData& data);

    // One update on a fresh batch; returns the mean group loss.
    double step();
    // Steps until max_steps or early stopping; evaluates every eval_interval steps and once
    // more at the end when the last step was not an evaluation step.
    void train(const std::function<void(const HistoryEntry&)>& on_eval = {});
    HistoryEntry evaluate_now();

    // Loss of an explicit batch of groups, recorded on `graph` through `bind`.
    diff::Var batch_loss(Binding& bind, std::span<const cascade::ListGroup> groups) const;
    std::vector<cascade::ListGroup> sample_batch();

    bool stopped() const { return stopped_; }
    std::size_t steps() const { return step_; }
    const RankTower& model() const { return model_; }
    RankTower& model() { return model_; }
    RankTower best_model() const;
    double best_ndcg() const { return best_ndcg_; }
    std::size_t best_step() const { return best_step_; }
    const std::vector<HistoryEntry>& history() const { return history_; }
    const RunConfig& config() const { return config_; }

    Checkpoint checkpoint() const;

private:
    Trainer(RunConfig config, RankTower model, const TrainingData& data);
    void prepare();

    RunConfig config_;
    RankTower model_;
    const TrainingData* data_;
    Adam adam_;
    std::mt19937_64 rng_;
    std::size_t step_ = 0;
    double best_ndcg_ = -1.0;
    std::size_t best_step_ = 0;
    std::size_t evals_since_best_ = 0;
    bool stopped_ = false;
    std::vector<NamedTensor> best_params_;
    std::vector<HistoryEntry> history_;
    double loss_sum_ = 0.0;
    std::size_t loss_count_ = 0;

    std::vector<cascade::UserPool> pools_;
    std::vector<EncodedRows> user_rows_;
    std::vector<EncodedRows> item_rows_;
};

} // namespace ranktower::trainer
