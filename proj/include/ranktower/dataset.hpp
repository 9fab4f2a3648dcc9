#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ranktower/features.hpp"

namespace ranktower::features {

enum class Stage { impression, candidate, random };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& s);

// One logged (user, item) row. JSON-lines keys: user_id, item_id, user_features,
// item_features, labels (behavior -> 0/1), teacher_p (optional), stage.
struct Record {
    std::uint64_t user_id = 0;
    std::uint64_t item_id = 0;
    FeatureMap user_features;
    FeatureMap item_features;
    std::map<std::string, int> labels;
    std::optional<double> teacher_p;
    Stage stage = Stage::impression;
};

std::string to_json_line(const Record& r);
Record record_from_json_line(const std::string& line);

std::vector<Record> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<Record>& records);

// Entity corpus row: {"id": ..., "features": {...}}.
struct Entity {
    std::uint64_t id = 0;
    FeatureMap features;
};

std::vector<Entity> read_entities(const std::filesystem::path& path);
void write_entities(const std::filesystem::path& path, const std::vector<Entity>& entities);

} // namespace ranktower::features
