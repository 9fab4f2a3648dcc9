#include "ranktower/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ranktower/errors.hpp"
#include "ranktower/losses.hpp"
#include "ranktower/optim.hpp"

namespace ranktower::cascade {

double LabelWeights::weight(const std::string& behavior) const {
    auto it = weights.find(behavior);
    return it == weights.end() ? 1.0 : it->second;
}

double aggregate_hard_label(const std::map<std::string, int>& behaviors, bool exposed, const LabelWeights& weights) {
    double y = exposed ? 1.0 : 0.0;
    for (const auto& [name, label] : behaviors) {
        const double w = weights.weight(name);
        if (w < 0) throw ConfigError("negative weight for behavior '" + name + "'");
        y += w * static_cast<double>(label);
    }
    return y;
}

double hard_label(const Record& r, const LabelWeights& weights) {
    if (r.stage != Stage::impression) return 0.0;
    return aggregate_hard_label(r.labels, true, weights);
}

bool has_positive_behavior(const Record& r) {
    return std::any_of(r.labels.begin(), r.labels.end(), [](const auto& kv) { return kv.second != 0; });
}

std::vector<UserPool> build_pools(std::span<const Record> records) {
    std::map<std::uint64_t, UserPool> pools;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        auto& pool = pools[r.user_id];
        pool.user_id = r.user_id;
        switch (r.stage) {
        case Stage::impression:
            (has_positive_behavior(r) ? pool.positive : pool.negative).push_back(i);
            break;
        case Stage::candidate: pool.candidate.push_back(i); break;
        case Stage::random: pool.random.push_back(i); break;
        }
    }
    std::vector<UserPool> out;
    for (auto& [id, pool] : pools) {
        std::set<std::uint64_t> interacted;
        for (auto i : pool.positive) interacted.insert(records[i].item_id);
        std::erase_if(pool.candidate, [&](std::size_t i) { return interacted.count(records[i].item_id) > 0; });
        out.push_back(std::move(pool));
    }
    return out;
}

namespace {

// First `count` entries of a partial Fisher-Yates shuffle of `pool`.
std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t count, std::mt19937_64& rng) {
    count = std::min(count, pool.size());
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(count);
    return pool;
}

} // namespace

std::optional<ListGroup> assemble_list_group(const UserPool& pool, std::span<const Record> records,
                                             const CascadeConfig& config, std::mt19937_64& rng) {
    if (pool.positive.empty() && pool.negative.empty()) return std::nullopt;
    ListGroup group{pool.user_id, {}};
    auto add = [&](const std::vector<std::size_t>& picked) {
        for (auto i : picked) {
            const auto& r = records[i];
            ListItem item{i, r.item_id, r.stage, hard_label(r, config.labels), std::nullopt};
            if (r.stage == Stage::impression) item.teacher = r.teacher_p;
            group.items.push_back(item);
        }
    };
    add(draw(pool.positive, config.n_impression_pos, rng));
    add(draw(pool.negative, config.n_impression_neg, rng));
    add(draw(pool.candidate, config.n_candidate, rng));
    add(draw(pool.random, config.n_random, rng));
    if (group.items.size() < 2) return std::nullopt;
    return group;
}

void WorldConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("world: " + msg); };
    if (n_users == 0 || n_items == 0 || latent_dim == 0) fail("n_users, n_items and latent_dim must be positive");
    if (impressions == 0) fail("impressions must be positive");
    if (!(impressions <= rank_size && rank_size <= prerank_size && prerank_size <= recall_size &&
          recall_size <= n_items))
        fail("funnel sizes must satisfy impressions <= rank_size <= prerank_size <= recall_size <= n_items");
    if (n_items - prerank_size < randoms_per_user) fail("not enough items outside the pre-rank stage for random samples");
    if (n_items < 10 * impressions) fail("corpus must be at least 10x the impression list");
    if (noise < 0 || recall_noise < 0 || prerank_noise < 0 || rank_noise < 0 || label_temperature < 0)
        fail("noise levels must be nonnegative");
    if (!(0 <= click_quantile && click_quantile <= convert_quantile && convert_quantile <= 1))
        fail("quantiles must satisfy 0 <= click_quantile <= convert_quantile <= 1");
    if (segment_bits == 0 || category_bits == 0 || segment_bits > latent_dim || category_bits > latent_dim ||
        category_bits > 16 || segment_bits > 16)
        fail("segment_bits and category_bits must lie in [1, min(latent_dim, 16)]");
    if (buckets < 2) fail("buckets must be at least 2");
    if (!(train_fraction > 0 && valid_fraction >= 0 && train_fraction + valid_fraction < 1))
        fail("split fractions must leave a nonempty test share");
}

std::string user_latent_feature(std::size_t d) { return "u_lat_" + std::to_string(d); }
std::string item_latent_feature(std::size_t d) { return "i_lat_" + std::to_string(d); }

double oracle_utility(const FeatureMap& user, const FeatureMap& item, std::size_t latent_dim) {
    double dot = 0, nu = 0, ni = 0;
    for (std::size_t d = 0; d < latent_dim; ++d) {
        auto u = user.find(user_latent_feature(d));
        auto i = item.find(item_latent_feature(d));
        if (u == user.end() || i == item.end()) throw NotFoundError("missing latent feature " + std::to_string(d));
        dot += u->second * i->second;
        nu += u->second * u->second;
        ni += i->second * i->second;
    }
    const double denom = std::max(std::sqrt(nu), 1e-12) * std::max(std::sqrt(ni), 1e-12);
    return dot / denom;
}

namespace {

std::vector<double> unit_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> normal;
    std::vector<double> v(dim);
    double norm = 0;
    do {
        norm = 0;
        for (auto& x : v) {
            x = normal(rng);
            norm += x * x;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

double sign_code(const std::vector<double>& v, std::size_t bits) {
    std::size_t code = 0;
    for (std::size_t b = 0; b < bits; ++b)
        if (v[b] > 0) code |= std::size_t{1} << b;
    return static_cast<double>(code);
}

// Indices of the `k` largest scores among `ids`; ties go to the smaller id.
std::vector<std::size_t> top_k(const std::vector<std::size_t>& ids, const std::vector<double>& score, std::size_t k) {
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return ids[a] < ids[b];
    });
    order.resize(std::min(k, order.size()));
    std::vector<std::size_t> out;
    for (auto o : order) out.push_back(ids[o]);
    return out;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

} // namespace

SyntheticWorld generate_synthetic_world(const WorldConfig& config, std::uint64_t seed) {
    config.validate();
    SyntheticWorld world;
    world.config = config;
    world.seed = seed;
    std::mt19937_64 rng(seed);

    using features::FieldKind;
    using features::FieldSpec;
    using features::Side;
    std::vector<FieldSpec> fields;
    for (std::size_t d = 0; d < config.latent_dim; ++d)
        fields.push_back({user_latent_feature(d), FieldKind::continuous, Side::user, config.buckets, 0});
    fields.push_back({"user_segment", FieldKind::categorical, Side::user, std::size_t{1} << config.segment_bits, 0});
    for (std::size_t d = 0; d < config.latent_dim; ++d)
        fields.push_back({item_latent_feature(d), FieldKind::continuous, Side::item, config.buckets, 0});
    fields.push_back({"item_category", FieldKind::categorical, Side::item, std::size_t{1} << config.category_bits, 0});
    world.schema = features::FeatureSchema(fields);

    std::vector<std::vector<double>> user_lat, item_lat;
    for (std::size_t u = 0; u < config.n_users; ++u) {
        user_lat.push_back(unit_vector(rng, config.latent_dim));
        Entity e{u, {}};
        for (std::size_t d = 0; d < config.latent_dim; ++d) e.features[user_latent_feature(d)] = user_lat.back()[d];
        e.features["user_segment"] = sign_code(user_lat.back(), config.segment_bits);
        world.users.push_back(std::move(e));
    }
    for (std::size_t i = 0; i < config.n_items; ++i) {
        item_lat.push_back(unit_vector(rng, config.latent_dim));
        Entity e{i, {}};
        for (std::size_t d = 0; d < config.latent_dim; ++d) e.features[item_latent_feature(d)] = item_lat.back()[d];
        e.features["item_category"] = sign_code(item_lat.back(), config.category_bits);
        world.items.push_back(std::move(e));
    }

    std::normal_distribution<double> normal;
    struct Row {
        std::size_t user, item;
        Stage stage;
        double utility;
    };
    std::vector<Row> rows;
    std::vector<double> impression_utility;
    for (std::size_t u = 0; u < config.n_users; ++u) {
        std::vector<double> util(config.n_items);
        for (std::size_t i = 0; i < config.n_items; ++i) {
            double dot = 0;
            for (std::size_t d = 0; d < config.latent_dim; ++d) dot += user_lat[u][d] * item_lat[i][d];
            util[i] = dot;
        }
        // Each stage keeps the best items by utility plus its own noise draw.
        auto stage = [&](const std::vector<std::size_t>& ids, double level, std::size_t keep) {
            std::vector<double> score(ids.size());
            for (std::size_t j = 0; j < ids.size(); ++j) score[j] = util[ids[j]] + config.noise * level * normal(rng);
            return top_k(ids, score, keep);
        };
        std::vector<std::size_t> all(config.n_items);
        std::iota(all.begin(), all.end(), 0);
        auto recall = stage(all, config.recall_noise, config.recall_size);
        auto prerank = stage(recall, config.prerank_noise, config.prerank_size);
        auto ranked = stage(prerank, config.rank_noise, config.rank_size);
        std::vector<std::size_t> shown(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(config.impressions));
        std::set<std::size_t> shown_set(shown.begin(), shown.end());
        std::set<std::size_t> prerank_set(prerank.begin(), prerank.end());

        for (auto i : shown) {
            rows.push_back({u, i, Stage::impression, util[i]});
            impression_utility.push_back(util[i]);
        }
        for (auto i : prerank)
            if (!shown_set.count(i)) rows.push_back({u, i, Stage::candidate, util[i]});
        std::vector<std::size_t> outside;
        for (std::size_t i = 0; i < config.n_items; ++i)
            if (!prerank_set.count(i)) outside.push_back(i);
        for (std::size_t j = 0; j < config.randoms_per_user; ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, outside.size() - 1);
            std::swap(outside[j], outside[pick(rng)]);
            rows.push_back({u, outside[j], Stage::random, util[outside[j]]});
        }
    }

    const double t_click = quantile(impression_utility, config.click_quantile);
    const double t_convert = quantile(impression_utility, config.convert_quantile);
    const double temperature = config.label_temperature * config.noise;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    // One uniform per impression drives both behaviors, so converts are always clicks.
    auto fires = [&](double utility, double threshold, double draw) {
        if (temperature == 0) return utility > threshold;
        return draw < sigmoid((utility - threshold) / temperature);
    };

    std::vector<Record> records;
    records.reserve(rows.size());
    for (const auto& row : rows) {
        Record r;
        r.user_id = row.user;
        r.item_id = row.item;
        r.user_features = world.users[row.user].features;
        r.item_features = world.items[row.item].features;
        r.stage = row.stage;
        r.labels = {{"click", 0}, {"convert", 0}};
        if (row.stage == Stage::impression) {
            const double draw = uniform(rng);
            r.labels["click"] = fires(row.utility, t_click, draw) ? 1 : 0;
            r.labels["convert"] = r.labels["click"] && fires(row.utility, t_convert, draw) ? 1 : 0;
        }
        records.push_back(std::move(r));
    }

    std::vector<std::size_t> perm(records.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> split(records.size());
    const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * records.size()));
    const auto n_valid = static_cast<std::size_t>(std::llround(config.valid_fraction * records.size()));
    for (std::size_t j = 0; j < perm.size(); ++j) split[perm[j]] = j < n_train ? 0 : (j < n_train + n_valid ? 1 : 2);
    for (std::size_t j = 0; j < records.size(); ++j) {
        auto& dst = split[j] == 0 ? world.train : (split[j] == 1 ? world.valid : world.test);
        dst.push_back(std::move(records[j]));
    }
    return world;
}

void save_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    world.schema.save(dir / "schema.txt");
    features::write_entities(dir / "users.jsonl", world.users);
    features::write_entities(dir / "items.jsonl", world.items);
    features::write_records(dir / "train.jsonl", world.train);
    features::write_records(dir / "valid.jsonl", world.valid);
    features::write_records(dir / "test.jsonl", world.test);
}

DatasetFiles DatasetFiles::load(const std::filesystem::path& dir) {
    DatasetFiles d;
    d.schema = features::FeatureSchema::load(dir / "schema.txt");
    d.users = features::read_entities(dir / "users.jsonl");
    d.items = features::read_entities(dir / "items.jsonl");
    d.train = features::read_records(dir / "train.jsonl");
    d.valid = features::read_records(dir / "valid.jsonl");
    d.test = features::read_records(dir / "test.jsonl");
    return d;
}

std::vector<double> Teacher::input(const Record& r) const {
    auto value = [](const FeatureMap& m, const std::string& name) {
        auto it = m.find(name);
        return it == m.end() || !std::isfinite(it->second) ? 0.0 : it->second;
    };
    std::vector<double> x;
    for (const auto& f : user_fields_) x.push_back(value(r.user_features, f));
    for (const auto& f : item_fields_) x.push_back(value(r.item_features, f));
    for (const auto& uf : user_fields_)
        for (const auto& itf : item_fields_) x.push_back(value(r.user_features, uf) * value(r.item_features, itf));
    return x;
}

Teacher Teacher::train(const features::FeatureSchema& schema, std::span<const Record> records,
                       const TeacherConfig& config, std::uint64_t seed) {
    Teacher t;
    for (const auto& f : schema.fields()) {
        if (f.kind != features::FieldKind::continuous) continue;
        (f.side == features::Side::user ? t.user_fields_ : t.item_fields_).push_back(f.name);
    }
    if (t.user_fields_.empty() || t.item_fields_.empty())
        throw ConfigError("teacher needs continuous features on both sides");
    std::vector<std::vector<double>> inputs;
    std::vector<double> targets, weights;
    for (const auto& r : records) {
        if (r.stage != Stage::impression) continue;
        inputs.push_back(t.input(r));
        auto label = [&](const std::string& b) {
            auto it = r.labels.find(b);
            return it == r.labels.end() ? 0.0 : static_cast<double>(it->second);
        };
        targets.push_back(label(config.target));
        weights.push_back(1.0 + label(config.weight_behavior));
    }
    if (inputs.empty()) throw ConfigError("teacher: no impression samples to train on");
    if (config.batch_size == 0 || config.hidden == 0) throw ConfigError("teacher: batch_size and hidden must be positive");

    std::mt19937_64 rng(seed);
    const std::size_t width = inputs[0].size();
    t.hidden_ = towers::Dense::create(t.params_, "teacher/hidden", width, config.hidden, rng);
    t.out_ = towers::Dense::create(t.params_, "teacher/out", config.hidden, 1, rng);
    Adam adam(t.params_, {config.learning_rate});
    std::uniform_int_distribution<std::size_t> pick(0, inputs.size() - 1);
    for (std::size_t step = 0; step < config.steps; ++step) {
        std::vector<double> x, y, w;
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const auto i = pick(rng);
            x.insert(x.end(), inputs[i].begin(), inputs[i].end());
            y.push_back(targets[i]);
            w.push_back(weights[i]);
        }
        diff::Graph g;
        Binding bind(g, t.params_);
        auto h = diff::silu(t.hidden_.forward(bind, g.constant(diff::Tensor::matrix(config.batch_size, width, x))));
        auto logits = diff::reshape(t.out_.forward(bind, h), {config.batch_size});
        auto loss = losses::weighted_logloss(logits, y, w);
        if (!std::isfinite(loss.item())) throw EvaluationError("teacher: non-finite loss at step " + std::to_string(step));
        g.backward(loss);
        std::vector<std::vector<double>> grads;
        for (std::size_t p = 0; p < t.params_.size(); ++p) grads.push_back(bind.grad(ParamId{p}));
        adam.step(t.params_, grads);
    }
    return t;
}

double Teacher::predict(const Record& r) const {
    diff::Graph g(false);
    Binding bind(g, params_, false);
    auto x = input(r);
    const auto width = x.size();
    auto h = diff::silu(hidden_.forward(bind, g.constant(diff::Tensor::matrix(1, width, std::move(x)))));
    return diff::sigmoid(out_.forward(bind, h)).values()[0];
}

void attach_teacher(const Teacher& teacher, std::vector<Record>& records) {
    for (auto& r : records) {
        if (r.stage == Stage::impression) r.teacher_p = teacher.predict(r);
        else r.teacher_p.reset();
    }
}

} // namespace ranktower::cascade
