#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ranktower/diff/graph.hpp"
#include "ranktower/params.hpp"

namespace ranktower::features {

enum class FieldKind { categorical, continuous };
enum class Side { user, item };

std::string to_string(FieldKind kind);
std::string to_string(Side side);

// max(floor(log2(cardinality)), 16)
std::size_t auto_embedding_dim(std::size_t cardinality);

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::categorical;
    Side side = Side::user;
    // Category count for categorical fields, requested bucket count for continuous ones.
    std::size_t cardinality = 0;
    std::size_t dim_override = 0;

    std::size_t embedding_dim() const { return dim_override ? dim_override : auto_embedding_dim(cardinality); }
    // Row 0 is the out-of-vocabulary row.
    std::size_t table_rows() const { return cardinality + 1; }
};

// Feature metadata. Text form is one field per line:
//   <name> <categorical|continuous> <user|item> <cardinality-or-buckets> [dim]
// Blank lines and '#' comments are ignored.
class FeatureSchema {
public:
    FeatureSchema() = default;
    explicit FeatureSchema(std::vector<FieldSpec> fields);

    static FeatureSchema parse(std::string_view text);
    static FeatureSchema load(const std::filesystem::path& path);
    std::string to_text() const;
    void save(const std::filesystem::path& path) const;

    const std::vector<FieldSpec>& fields() const { return fields_; }
    std::vector<const FieldSpec*> side_fields(Side side) const;
    std::size_t input_width(Side side) const;

    friend bool operator==(const FeatureSchema&, const FeatureSchema&);

private:
    std::vector<FieldSpec> fields_;
};

// Equal-frequency bucket boundaries for one continuous field. Buckets are right-open:
// bucket(v) = number of boundaries <= v, so values past the last boundary take the last bucket.
struct Bucketizer {
    std::vector<double> boundaries;

    std::size_t bucket_count() const { return boundaries.size() + 1; }
    std::size_t bucket(double value) const;
};

// Boundaries at the empirical quantiles i/bins (linear interpolation), duplicates collapsed.
// With fewer distinct values than bins, the bin count degrades to the distinct count.
Bucketizer fit_bucketizer(std::span<const double> values, std::size_t bins);

// Missing keys and non-numeric values are represented as NaN and land on the OOV row.
using FeatureMap = std::map<std::string, double>;

// Maps raw feature values to embedding-table rows for each field of a side.
class FeatureEncoder {
public:
    FeatureEncoder() = default;
    FeatureEncoder(FeatureSchema schema, std::map<std::string, Bucketizer> buckets);

    // Fits bucketizers for continuous fields from entity feature corpora.
    static FeatureEncoder fit(const FeatureSchema& schema, std::span<const FeatureMap> users,
                              std::span<const FeatureMap> items);

    const FeatureSchema& schema() const { return schema_; }
    const std::map<std::string, Bucketizer>& buckets() const { return buckets_; }

    // One table row per field of `side`, in schema order. Never fails: unseen or
    // missing values map to row 0.
    std::vector<std::size_t> encode(const FeatureMap& features, Side side) const;

    // Text serialization of the bucket boundaries (hex floats, bit-exact).
    std::string buckets_to_text() const;
    static std::map<std::string, Bucketizer> buckets_from_text(std::string_view text);

private:
    FeatureSchema schema_;
    std::map<std::string, Bucketizer> buckets_;
};

// One learnable (rows, dim) table per field, uniform init in [-1/sqrt(dim), 1/sqrt(dim)].
class EmbeddingTables {
public:
    EmbeddingTables() = default;
    static EmbeddingTables create(const FeatureSchema& schema, ParameterSet& params, std::mt19937_64& rng);

    // rows[i] holds the encoded rows of instance i for `side`; output is (n, input_width(side)).
    diff::Var embed(Binding& bind, std::span<const std::vector<std::size_t>> rows, Side side) const;

    ParamId table(std::size_t field_index) const { return tables_.at(field_index); }

private:
    FeatureSchema schema_;
    std::vector<ParamId> tables_;
};

struct InputEmbedding {
    diff::Var user;  // (1, F_U dims)
    diff::Var item;  // (1, F_I dims)
};

InputEmbedding embed_instance(Binding& bind, const FeatureMap& user, const FeatureMap& item,
                              const FeatureEncoder& encoder, const EmbeddingTables& tables);

} // namespace ranktower::features
