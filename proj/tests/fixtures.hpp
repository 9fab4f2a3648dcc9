#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "ranktower/cascade.hpp"
#include "ranktower/config.hpp"
#include "ranktower/trainer.hpp"

namespace testutil {

inline ranktower::cascade::WorldConfig small_world_config() {
    ranktower::cascade::WorldConfig w;
    w.n_users = 30;
    w.n_items = 300;
    w.recall_size = 120;
    w.prerank_size = 40;
    w.rank_size = 20;
    w.impressions = 10;
    w.randoms_per_user = 10;
    w.buckets = 8;
    return w;
}

// World with teacher probabilities attached; built once per process.
inline const ranktower::cascade::SyntheticWorld& small_world() {
    static const ranktower::cascade::SyntheticWorld world = [] {
        auto w = ranktower::cascade::generate_synthetic_world(small_world_config(), 17);
        ranktower::cascade::TeacherConfig tc;
        tc.steps = 400;
        auto teacher = ranktower::cascade::Teacher::train(w.schema, w.train, tc, 5);
        ranktower::cascade::attach_teacher(teacher, w.train);
        ranktower::cascade::attach_teacher(teacher, w.valid);
        ranktower::cascade::attach_teacher(teacher, w.test);
        return w;
    }();
    return world;
}

inline ranktower::features::FeatureEncoder small_encoder() {
    const auto& w = small_world();
    std::vector<ranktower::features::FeatureMap> users, items;
    for (const auto& u : w.users) users.push_back(u.features);
    for (const auto& i : w.items) items.push_back(i.features);
    return ranktower::features::FeatureEncoder::fit(w.schema, users, items);
}

inline ranktower::RunConfig tiny_run_config() {
    ranktower::RunConfig c;
    c.world = small_world_config();
    c.model.user_tower.heads = 2;
    c.model.item_tower.heads = 3;
    c.model.user_tower.subspace = c.model.item_tower.subspace = 4;
    c.model.user_tower.hidden = {8};
    c.model.item_tower.hidden = {8};
    c.train.batch_size = 8;
    c.train.eval_interval = 1000;
    c.train.k = 20;
    c.train.learning_rate = 0.01;
    return c;
}

inline ranktower::trainer::TrainingData small_training_data() {
    const auto& w = small_world();
    return {w.train, w.valid, w.users, w.items};
}

inline std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "ranktower_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace testutil
