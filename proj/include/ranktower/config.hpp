#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ranktower/cascade.hpp"
#include "ranktower/losses.hpp"
#include "ranktower/model.hpp"

namespace ranktower {

enum class LossKind { hybrid, listwise_softmax, pairwise_logistic };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;      // list groups per step
    std::size_t max_steps = 20000;
    std::size_t eval_interval = 1000;
    std::size_t patience = 5;         // evaluations without NDCG improvement
    std::size_t k = 100;
    std::size_t eval_batch = 512;
    LossKind loss = LossKind::hybrid;
    losses::HybridWeights weights;
    cascade::CascadeConfig cascade;

    void validate() const;
};

// Everything one experiment needs. Text form is INI with sections
// [run] [world] [teacher] [model] [train] [loss] [cascade] [labels].
struct RunConfig {
    std::uint64_t seed = 1;
    cascade::WorldConfig world;
    cascade::TeacherConfig teacher;
    ModelConfig model;
    TrainConfig train;

    RunConfig();

    static RunConfig parse(std::string_view ini);
    static RunConfig load(const std::filesystem::path& path);
    // Full echo, every key included; parse(to_ini()) reproduces the config.
    std::string to_ini() const;

    // Applies "section.key=value"; unknown keys throw ConfigError.
    void set(const std::string& assignment);
    void set(const std::string& key, const std::string& value);
    std::vector<std::string> keys() const;

    void validate() const;
};

// Independent stream seeds derived from the run seed.
enum class SeedStream : std::uint64_t { world = 1, teacher = 2, model = 3, trainer = 4 };
std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

} // namespace ranktower
