#include "ranktower/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ranktower/diff/ops.hpp"
#include "ranktower/errors.hpp"

namespace ranktower::features {

std::string to_string(FieldKind kind) { return kind == FieldKind::categorical ? "categorical" : "continuous"; }
std::string to_string(Side side) { return side == Side::user ? "user" : "item"; }

std::size_t auto_embedding_dim(std::size_t cardinality) {
    const std::size_t log2_floor = cardinality == 0 ? 0 : static_cast<std::size_t>(std::bit_width(cardinality) - 1);
    return std::max<std::size_t>(log2_floor, 16);
}

FeatureSchema::FeatureSchema(std::vector<FieldSpec> fields) : fields_(std::move(fields)) {
    std::set<std::string> names;
    for (const auto& f : fields_) {
        if (f.name.empty()) throw ConfigError("schema field with empty name");
        if (!names.insert(f.name).second) throw ConfigError("schema field '" + f.name + "' declared twice");
        if (f.cardinality == 0) throw ConfigError("schema field '" + f.name + "' needs a positive cardinality");
    }
    if (side_fields(Side::user).empty()) throw ConfigError("schema declares no user fields");
    if (side_fields(Side::item).empty()) throw ConfigError("schema declares no item fields");
}

FeatureSchema FeatureSchema::parse(std::string_view text) {
    std::vector<FieldSpec> fields;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        auto fail = [&](const std::string& why) {
            return ConfigError("schema line " + std::to_string(lineno) + ": " + why);
        };
        if (tok.size() < 4 || tok.size() > 5) throw fail("expected '<name> <kind> <side> <cardinality> [dim]'");
        FieldSpec f;
        f.name = tok[0];
        if (tok[1] == "categorical")
            f.kind = FieldKind::categorical;
        else if (tok[1] == "continuous")
            f.kind = FieldKind::continuous;
        else
            throw fail("unknown kind '" + tok[1] + "'");
        if (tok[2] == "user")
            f.side = Side::user;
        else if (tok[2] == "item")
            f.side = Side::item;
        else
            throw fail("unknown side '" + tok[2] + "'");
        try {
            f.cardinality = std::stoul(tok[3]);
            if (tok.size() == 5) f.dim_override = std::stoul(tok[4]);
        } catch (const std::exception&) {
            throw fail("cardinality/dim must be positive integers");
        }
        fields.push_back(std::move(f));
    }
    return FeatureSchema(std::move(fields));
}

FeatureSchema FeatureSchema::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string FeatureSchema::to_text() const {
    std::string out;
    for (const auto& f : fields_) {
        out += f.name + " " + to_string(f.kind) + " " + to_string(f.side) + " " + std::to_string(f.cardinality);
        if (f.dim_override) out += " " + std::to_string(f.dim_override);
        out += "\n";
    }
    return out;
}

void FeatureSchema::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write schema file " + path.string());
    out << to_text();
}

std::vector<const FieldSpec*> FeatureSchema::side_fields(Side side) const {
    std::vector<const FieldSpec*> out;
    for (const auto& f : fields_)
        if (f.side == side) out.push_back(&f);
    return out;
}

std::size_t FeatureSchema::input_width(Side side) const {
    std::size_t w = 0;
    for (const auto* f : side_fields(side)) w += f->embedding_dim();
    return w;
}

bool operator==(const FeatureSchema& a, const FeatureSchema& b) { return a.to_text() == b.to_text(); }

std::size_t Bucketizer::bucket(double value) const {
    return static_cast<std::size_t>(std::upper_bound(boundaries.begin(), boundaries.end(), value) - boundaries.begin());
}

Bucketizer fit_bucketizer(std::span<const double> values, std::size_t bins) {
    if (bins < 2) throw ConfigError("fit_bucketizer: bins must be at least 2");
    std::vector<double> sorted;
    sorted.reserve(values.size());
    for (double v : values)
        if (!std::isnan(v)) sorted.push_back(v);
    if (sorted.empty()) throw ConfigError("fit_bucketizer: no values to fit");
    std::sort(sorted.begin(), sorted.end());
    std::size_t n_distinct = 1;
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i] != sorted[i - 1]) ++n_distinct;
    const std::size_t effective = std::min(bins, n_distinct);

    Bucketizer b;
    const double last = static_cast<double>(sorted.size() - 1);
    for (std::size_t i = 1; i < effective; ++i) {
        const double pos = last * static_cast<double>(i) / static_cast<double>(effective);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(lo);
        double q = sorted[lo];
        if (lo + 1 < sorted.size()) q += frac * (sorted[lo + 1] - sorted[lo]);
        // A boundary at the minimum would only create an empty first bucket.
        if (q <= sorted.front()) continue;
        if (b.boundaries.empty() || q > b.boundaries.back()) b.boundaries.push_back(q);
    }
    return b;
}

FeatureEncoder::FeatureEncoder(FeatureSchema schema, std::map<std::string, Bucketizer> buckets)
    : schema_(std::move(schema)), buckets_(std::move(buckets)) {
    for (const auto& f : schema_.fields()) {
        if (f.kind != FieldKind::continuous) continue;
        auto it = buckets_.find(f.name);
        if (it == buckets_.end()) throw ConfigError("no bucket boundaries for continuous field '" + f.name + "'");
        if (it->second.bucket_count() > f.cardinality) {
            throw ConfigError("field '" + f.name + "' has " + std::to_string(it->second.bucket_count()) +
                              " buckets but the schema allows " + std::to_string(f.cardinality));
        }
    }
}

FeatureEncoder FeatureEncoder::fit(const FeatureSchema& schema, std::span<const FeatureMap> users,
                                   std::span<const FeatureMap> items) {
    std::map<std::string, Bucketizer> buckets;
    for (const auto& f : schema.fields()) {
        if (f.kind != FieldKind::continuous) continue;
        std::vector<double> values;
        for (const auto& m : f.side == Side::user ? users : items) {
            if (auto it = m.find(f.name); it != m.end()) values.push_back(it->second);
        }
        try {
            buckets.emplace(f.name, fit_bucketizer(values, f.cardinality));
        } catch (const ConfigError& e) {
            throw ConfigError("field '" + f.name + "': " + e.what());
        }
    }
    return FeatureEncoder(schema, std::move(buckets));
}

std::vector<std::size_t> FeatureEncoder::encode(const FeatureMap& features, Side side) const {
    std::vector<std::size_t> rows;
    for (const auto* f : schema_.side_fields(side)) {
        auto it = features.find(f->name);
        const double v = it == features.end() ? std::nan("") : it->second;
        std::size_t row = 0;
        if (!std::isnan(v)) {
            if (f->kind == FieldKind::categorical) {
                if (v >= 0 && v < static_cast<double>(f->cardinality) && v == std::floor(v)) {
                    row = static_cast<std::size_t>(v) + 1;
                }
            } else {
                row = buckets_.at(f->name).bucket(v) + 1;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

std::string FeatureEncoder::buckets_to_text() const {
    std::string out;
    char buf[64];
    for (const auto& [name, b] : buckets_) {
        out += name + " " + std::to_string(b.boundaries.size());
        for (double v : b.boundaries) {
            std::snprintf(buf, sizeof buf, " %a", v);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

std::map<std::string, Bucketizer> FeatureEncoder::buckets_from_text(std::string_view text) {
    std::map<std::string, Bucketizer> out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string name;
        std::size_t count = 0;
        if (!(ls >> name)) continue;
        if (!(ls >> count)) throw ConfigError("malformed bucket line for '" + name + "'");
        Bucketizer b;
        for (std::size_t i = 0; i < count; ++i) {
            std::string tok;
            if (!(ls >> tok)) throw ConfigError("truncated bucket line for '" + name + "'");
            b.boundaries.push_back(std::strtod(tok.c_str(), nullptr));
        }
        out.emplace(name, std::move(b));
    }
    return out;
}

EmbeddingTables EmbeddingTables::create(const FeatureSchema& schema, ParameterSet& params, std::mt19937_64& rng) {
    EmbeddingTables t;
    t.schema_ = schema;
    for (const auto& f : schema.fields()) {
        const auto dim = f.embedding_dim();
        t.tables_.push_back(params.add("embedding/" + f.name,
                                       init::uniform(rng, {f.table_rows(), dim}, 1.0 / std::sqrt(static_cast<double>(dim)))));
    }
    return t;
}

diff::Var EmbeddingTables::embed(Binding& bind, std::span<const std::vector<std::size_t>> rows, Side side) const {
    std::vector<diff::Var> parts;
    std::size_t position = 0;
    for (std::size_t fi = 0; fi < schema_.fields().size(); ++fi) {
        const auto& f = schema_.fields()[fi];
        if (f.side != side) continue;
        std::vector<std::size_t> idx;
        idx.reserve(rows.size());
        for (const auto& r : rows) {
            if (position >= r.size()) throw DimensionError("encoded instance has too few fields for " + to_string(side));
            idx.push_back(r[position]);
        }
        parts.push_back(diff::gather_rows(bind(tables_[fi]), idx));
        ++position;
    }
    return diff::concat_last(parts);
}

InputEmbedding embed_instance(Binding& bind, const FeatureMap& user, const FeatureMap& item,
                              const FeatureEncoder& encoder, const EmbeddingTables& tables) {
    const std::vector<std::vector<std::size_t>> u{encoder.encode(user, Side::user)};
    const std::vector<std::vector<std::size_t>> i{encoder.encode(item, Side::item)};
    return {tables.embed(bind, u, Side::user), tables.embed(bind, i, Side::item)};
}

} // namespace ranktower::features
