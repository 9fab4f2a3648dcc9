#include "ranktower/serving.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "ranktower/errors.hpp"

namespace ranktower::serving {

static_assert(std::endian::native == std::endian::little, "embedding store I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'K', 'T', 'W', 'E', 'M', 'B', '\0'};

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated embedding store " + path.string());
    return v;
}

} // namespace

EmbeddingStore::EmbeddingStore(features::Side side, std::size_t heads, std::size_t subspace)
    : side_(side), heads_(heads), subspace_(subspace) {
    if (heads == 0 || subspace == 0) throw DimensionError("embedding store needs positive H and k");
}

void EmbeddingStore::add(std::uint64_t id, std::span<const double> values) {
    if (values.size() != record_width())
        throw DimensionError("embedding store: record of " + std::to_string(values.size()) + " values, expected " +
                             std::to_string(record_width()));
    if (!index_.emplace(id, ids_.size()).second) throw ConfigError("embedding store: duplicate id " + std::to_string(id));
    ids_.push_back(id);
    values_.insert(values_.end(), values.begin(), values.end());
}

std::span<const double> EmbeddingStore::find(std::uint64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end())
        throw NotFoundError(features::to_string(side_) + " id " + std::to_string(id) + " not found in embedding store");
    return {values_.data() + it->second * record_width(), record_width()};
}

diff::Tensor EmbeddingStore::gather(std::span<const std::uint64_t> ids) const {
    std::vector<double> out;
    out.reserve(ids.size() * record_width());
    for (auto id : ids) {
        auto v = find(id);
        out.insert(out.end(), v.begin(), v.end());
    }
    return diff::Tensor({ids.size(), heads_, subspace_}, std::move(out));
}

void EmbeddingStore::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write embedding store " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, version);
    put<std::uint32_t>(out, side_ == features::Side::user ? 0u : 1u);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(heads_));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(subspace_));
    put<std::uint64_t>(out, ids_.size());
    for (std::size_t r = 0; r < ids_.size(); ++r) {
        put<std::uint64_t>(out, ids_[r]);
        out.write(reinterpret_cast<const char*>(values_.data() + r * record_width()),
                  static_cast<std::streamsize>(record_width() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing embedding store " + path.string());
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embedding store " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw IoError(path.string() + " is not an embedding store");
    if (get<std::uint32_t>(in, path) != version) throw IoError("unsupported embedding store version in " + path.string());
    const auto side = get<std::uint32_t>(in, path);
    if (side > 1) throw IoError("bad side tag in " + path.string());
    const auto heads = get<std::uint32_t>(in, path);
    const auto subspace = get<std::uint32_t>(in, path);
    const auto count = get<std::uint64_t>(in, path);
    EmbeddingStore store(side == 0 ? features::Side::user : features::Side::item, heads, subspace);
    std::vector<double> row(store.record_width());
    for (std::uint64_t r = 0; r < count; ++r) {
        const auto id = get<std::uint64_t>(in, path);
        if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double))))
            throw IoError("truncated embedding store " + path.string());
        store.add(id, row);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in embedding store " + path.string());
    return store;
}

EmbeddingStore export_embeddings(const RankTower& model, std::span<const features::Entity> entities,
                                 features::Side side, std::size_t batch_size) {
    const auto& tower = side == features::Side::user ? model.user_tower() : model.item_tower();
    EmbeddingStore store(side, tower.heads(), tower.subspace());
    batch_size = std::max<std::size_t>(batch_size, 1);
    for (std::size_t start = 0; start < entities.size(); start += batch_size) {
        const auto end = std::min(entities.size(), start + batch_size);
        std::vector<EncodedRows> rows;
        for (std::size_t e = start; e < end; ++e) rows.push_back(model.encoder().encode(entities[e].features, side));
        diff::Graph g(false);
        Binding bind(g, model.params(), false);
        auto out = side == features::Side::user ? model.user_embeddings(bind, rows) : model.item_embeddings(bind, rows);
        auto values = out.values();
        for (std::size_t e = start; e < end; ++e)
            store.add(entities[e].id, values.subspan((e - start) * store.record_width(), store.record_width()));
    }
    return store;
}

OnlineScorer::OnlineScorer(InteractionModel model, EmbeddingStore users, EmbeddingStore items)
    : model_(std::move(model)), users_(std::move(users)), items_(std::move(items)) {
    if (users_.side() != features::Side::user || items_.side() != features::Side::item)
        throw ConfigError("online scorer: store sides are swapped");
    if (users_.heads() != model_.user_heads || items_.heads() != model_.item_heads)
        throw DimensionError("online scorer: store head counts do not match the model");
    if (users_.subspace() != items_.subspace()) throw DimensionError("online scorer: store subspace sizes differ");
}

std::vector<double> OnlineScorer::score(std::uint64_t user_id, std::span<const std::uint64_t> item_ids,
                                        std::size_t batch_size) const {
    auto user = users_.find(user_id);
    const diff::Tensor user_tensor({users_.heads(), users_.subspace()}, {user.begin(), user.end()});
    std::vector<double> out;
    out.reserve(item_ids.size());
    batch_size = std::max<std::size_t>(batch_size, 1);
    for (std::size_t start = 0; start < item_ids.size(); start += batch_size) {
        const auto end = std::min(item_ids.size(), start + batch_size);
        diff::Graph g(false);
        Binding bind(g, model_.params, false);
        auto z = model_.score(bind, g.constant(user_tensor), g.constant(items_.gather(item_ids.subspan(start, end - start))));
        auto v = z.values();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

std::string score_json_line(std::uint64_t user_id, std::uint64_t item_id, double logit) {
    nlohmann::ordered_json j;
    j["user_id"] = user_id;
    j["item_id"] = item_id;
    j["logit"] = logit;
    return j.dump();
}

} // namespace ranktower::serving
