#include "ranktower/dataset.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "ranktower/errors.hpp"

namespace ranktower::features {
namespace {

using nlohmann::json;

json features_to_json(const FeatureMap& m) {
    json out = json::object();
    for (const auto& [k, v] : m) {
        if (std::isnan(v)) continue;
        if (v == std::floor(v) && std::abs(v) < 9e15)
            out[k] = static_cast<std::int64_t>(v);
        else
            out[k] = v;
    }
    return out;
}

FeatureMap features_from_json(const json& j) {
    FeatureMap m;
    if (j.is_null()) return m;
    if (!j.is_object()) throw ConfigError("feature block must be a JSON object");
    for (const auto& [k, v] : j.items()) m[k] = v.is_number() ? v.get<double>() : std::nan("");
    return m;
}

} // namespace

std::string to_string(Stage stage) {
    switch (stage) {
    case Stage::impression: return "impression";
    case Stage::candidate: return "candidate";
    case Stage::random: return "random";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "impression") return Stage::impression;
    if (s == "candidate") return Stage::candidate;
    if (s == "random") return Stage::random;
    throw ConfigError("unknown stage '" + s + "'");
}

std::string to_json_line(const Record& r) {
    json j;
    j["user_id"] = r.user_id;
    j["item_id"] = r.item_id;
    j["user_features"] = features_to_json(r.user_features);
    j["item_features"] = features_to_json(r.item_features);
    j["labels"] = r.labels;
    if (r.teacher_p) j["teacher_p"] = *r.teacher_p;
    j["stage"] = to_string(r.stage);
    return j.dump();
}

Record record_from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed dataset line: ") + e.what());
    }
    try {
        Record r;
        r.user_id = j.at("user_id").get<std::uint64_t>();
        r.item_id = j.at("item_id").get<std::uint64_t>();
        r.user_features = features_from_json(j.value("user_features", json()));
        r.item_features = features_from_json(j.value("item_features", json()));
        if (j.contains("labels")) r.labels = j.at("labels").get<std::map<std::string, int>>();
        if (j.contains("teacher_p") && !j.at("teacher_p").is_null()) {
            const double p = j.at("teacher_p").get<double>();
            if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("teacher_p outside [0,1]");
            r.teacher_p = p;
        }
        r.stage = stage_from_string(j.at("stage").get<std::string>());
        return r;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dataset line does not match the record format: ") + e.what());
    }
}

std::vector<Record> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset " + path.string());
    std::vector<Record> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json_line(line));
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_records(const std::filesystem::path& path, const std::vector<Record>& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset " + path.string());
    for (const auto& r : records) out << to_json_line(r) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Entity> read_entities(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open entity file " + path.string());
    std::vector<Entity> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            out.push_back({j.at("id").get<std::uint64_t>(), features_from_json(j.value("features", json()))});
        } catch (const json::exception& e) {
            throw ConfigError(path.string() + ": malformed entity line: " + e.what());
        }
    }
    return out;
}

void write_entities(const std::filesystem::path& path, const std::vector<Entity>& entities) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write entity file " + path.string());
    for (const auto& e : entities) {
        json j;
        j["id"] = e.id;
        j["features"] = features_to_json(e.features);
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace ranktower::features
