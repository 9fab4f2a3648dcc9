#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ranktower/dataset.hpp"
#include "ranktower/features.hpp"
#include "ranktower/params.hpp"
#include "ranktower/towers.hpp"

namespace ranktower::cascade {

using features::Entity;
using features::FeatureMap;
using features::Record;
using features::Stage;

// Per-behavior weights for the hard label; behaviors without an entry weigh 1.
struct LabelWeights {
    std::map<std::string, double> weights;

    double weight(const std::string& behavior) const;
};

// y = sum_b w_b * label_b + [exposed].
double aggregate_hard_label(const std::map<std::string, int>& behaviors, bool exposed, const LabelWeights& weights);
double hard_label(const Record& r, const LabelWeights& weights);
bool has_positive_behavior(const Record& r);

struct CascadeConfig {
    std::size_t n_impression_pos = 2;
    std::size_t n_impression_neg = 2;
    std::size_t n_candidate = 4;
    std::size_t n_random = 4;
    LabelWeights labels;
};

struct ListItem {
    std::size_t record = 0;  // index into the record span the group was built from
    std::uint64_t item_id = 0;
    Stage stage = Stage::impression;
    double y = 0.0;
    std::optional<double> teacher;
};

struct ListGroup {
    std::uint64_t user_id = 0;
    std::vector<ListItem> items;
};

// Record indices of one user, split by stage and impression feedback.
struct UserPool {
    std::uint64_t user_id = 0;
    std::vector<std::size_t> positive;
    std::vector<std::size_t> negative;
    std::vector<std::size_t> candidate;
    std::vector<std::size_t> random;
};

// Pools ordered by user id; indices keep record order. Candidates the user interacted
// with are dropped.
std::vector<UserPool> build_pools(std::span<const Record> records);

// Draws the configured counts per stage without replacement, taking everything when a pool
// is short. Returns nullopt for users without impressions or lists shorter than 2.
std::optional<ListGroup> assemble_list_group(const UserPool& pool, std::span<const Record> records,
                                             const CascadeConfig& config, std::mt19937_64& rng);

struct WorldConfig {
    std::size_t n_users = 200;
    std::size_t n_items = 2000;
    std::size_t latent_dim = 4;
    std::size_t recall_size = 400;
    std::size_t prerank_size = 100;
    std::size_t rank_size = 40;
    std::size_t impressions = 20;
    std::size_t randoms_per_user = 40;
    // Global noise multiplier; 0 makes the funnel and the labels deterministic.
    double noise = 0.0;
    double recall_noise = 1.0;
    double prerank_noise = 0.3;
    double rank_noise = 0.1;
    double label_temperature = 0.05;
    // Behavior thresholds are these quantiles of the impression utilities.
    double click_quantile = 0.5;
    double convert_quantile = 0.8;
    std::size_t segment_bits = 3;
    std::size_t category_bits = 4;
    std::size_t buckets = 32;
    double train_fraction = 0.7;
    double valid_fraction = 0.1;

    void validate() const;
};

struct SyntheticWorld {
    WorldConfig config;
    std::uint64_t seed = 0;
    features::FeatureSchema schema;
    std::vector<Entity> users;
    std::vector<Entity> items;
    std::vector<Record> train;
    std::vector<Record> valid;
    std::vector<Record> test;
};

// Unit latent vectors for users and items, a recall -> pre-rank -> rank -> impression funnel
// ranked by noisy true utility, nested click/convert labels, and a random 70/10/20 row split.
SyntheticWorld generate_synthetic_world(const WorldConfig& config, std::uint64_t seed);

// Cosine of the latent feature vectors; the generator's true utility.
double oracle_utility(const FeatureMap& user, const FeatureMap& item, std::size_t latent_dim);
std::string user_latent_feature(std::size_t d);
std::string item_latent_feature(std::size_t d);

// Writes schema.txt, users.jsonl, items.jsonl, train.jsonl, valid.jsonl, test.jsonl.
void save_world(const SyntheticWorld& world, const std::filesystem::path& dir);

struct DatasetFiles {
    features::FeatureSchema schema;
    std::vector<Entity> users;
    std::vector<Entity> items;
    std::vector<Record> train;
    std::vector<Record> valid;
    std::vector<Record> test;

    static DatasetFiles load(const std::filesystem::path& dir);
};

struct TeacherConfig {
    std::size_t hidden = 32;
    std::size_t steps = 2000;
    std::size_t batch_size = 64;
    double learning_rate = 0.01;
    std::string target = "click";
    std::string weight_behavior = "convert";  // sample weight 1 + label
};

// Small feed-forward ranking model on raw continuous features and their user x item
// products, trained with weighted logloss on impressions only.
class Teacher {
public:
    static Teacher train(const features::FeatureSchema& schema, std::span<const Record> records,
                         const TeacherConfig& config, std::uint64_t seed);

    double predict(const Record& r) const;
    std::vector<double> input(const Record& r) const;

private:
    std::vector<std::string> user_fields_;
    std::vector<std::string> item_fields_;
    ParameterSet params_;
    towers::Dense hidden_;
    towers::Dense out_;
};

// Sets teacher_p on impressions and clears it elsewhere.
void attach_teacher(const Teacher& teacher, std::vector<Record>& records);

} // namespace ranktower::cascade
