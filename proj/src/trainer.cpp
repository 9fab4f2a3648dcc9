#include "ranktower/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ranktower/errors.hpp"
#include "ranktower/serving.hpp"

namespace ranktower::trainer {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using features::Record;
using features::Side;

namespace {

constexpr char kMagic[8] = {'R', 'K', 'T', 'W', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated checkpoint " + path.string());
    return v;
}

std::string read_string(std::istream& in, std::size_t n, const std::filesystem::path& path) {
    std::string s(n, '\0');
    if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("truncated checkpoint " + path.string());
    return s;
}

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double unhex(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw IoError("bad number '" + s + "' in checkpoint");
    return v;
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(std::stoull(s)); }

} // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
    for (const auto& t : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.shape.size()));
        for (auto d : t.value.shape) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.value.values.data()),
                  static_cast<std::streamsize>(t.value.values.size() * sizeof(double)));
    }
    for (const auto& [key, value] : meta) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
        out.write(key.data(), static_cast<std::streamsize>(key.size()));
        put<std::uint64_t>(out, value.size());
        out.write(value.data(), static_cast<std::streamsize>(value.size()));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw IoError(path.string() + " is not a checkpoint");
    if (read_pod<std::uint32_t>(in, path) != version) throw IoError("unsupported checkpoint version in " + path.string());
    const auto n_tensors = read_pod<std::uint32_t>(in, path);
    const auto n_meta = read_pod<std::uint32_t>(in, path);
    Checkpoint c;
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        auto name = read_string(in, read_pod<std::uint32_t>(in, path), path);
        const auto rank = read_pod<std::uint32_t>(in, path);
        diff::Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(read_pod<std::uint64_t>(in, path));
        std::vector<double> values(diff::shape_size(shape));
        if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
            throw IoError("truncated checkpoint " + path.string());
        c.tensors.push_back({std::move(name), diff::Tensor(std::move(shape), std::move(values))});
    }
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto key = read_string(in, read_pod<std::uint32_t>(in, path), path);
        c.meta[key] = read_string(in, read_pod<std::uint64_t>(in, path), path);
    }
    return c;
}

std::vector<NamedTensor> Checkpoint::group(const std::string& prefix) const {
    std::vector<NamedTensor> out;
    const auto p = prefix + "/";
    for (const auto& t : tensors)
        if (t.name.rfind(p, 0) == 0) out.push_back({t.name.substr(p.size()), t.value});
    return out;
}

const std::string& Checkpoint::get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw NotFoundError("checkpoint has no '" + key + "' entry");
    return it->second;
}

RunConfig Checkpoint::config() const { return RunConfig::parse(get("config")); }

features::FeatureEncoder Checkpoint::encoder() const {
    return features::FeatureEncoder(features::FeatureSchema::parse(get("schema")),
                                    features::FeatureEncoder::buckets_from_text(get("buckets")));
}

RankTower model_from_checkpoint(const Checkpoint& checkpoint) {
    auto config = checkpoint.config();
    auto model = RankTower::create(checkpoint.encoder(), config.model, 0);
    auto best = checkpoint.group("best");
    model.params().assign_from(best.empty() ? checkpoint.group("param") : best);
    return model;
}

metrics::EvalReport evaluate(const RankTower& model, std::span<const Record> records,
                             std::span<const features::Entity> users, std::span<const features::Entity> items,
                             const cascade::LabelWeights& weights, std::size_t k, std::size_t batch_size) {
    auto judgments = metrics::judgments_from(records, weights);
    std::vector<features::Entity> needed;
    for (const auto& u : users)
        if (judgments.count(u.id)) needed.push_back(u);
    serving::OnlineScorer scorer(InteractionModel::from(model.config(), model.params().entries()),
                                 serving::export_embeddings(model, needed, Side::user),
                                 serving::export_embeddings(model, items, Side::item));
    std::vector<metrics::ItemId> corpus;
    for (const auto& i : items) corpus.push_back(i.id);
    return metrics::evaluate(
        judgments, corpus, [&](std::uint64_t user) { return scorer.score(user, corpus, batch_size); }, k);
}

metrics::EvalReport evaluate_oracle(std::span<const Record> records, std::span<const features::Entity> users,
                                    std::span<const features::Entity> items, const cascade::LabelWeights& weights,
                                    std::size_t latent_dim, std::size_t k) {
    std::map<std::uint64_t, const features::FeatureMap*> user_features;
    for (const auto& u : users) user_features[u.id] = &u.features;
    std::vector<metrics::ItemId> corpus;
    for (const auto& i : items) corpus.push_back(i.id);
    return metrics::evaluate(
        metrics::judgments_from(records, weights), corpus,
        [&](std::uint64_t user) {
            auto it = user_features.find(user);
            if (it == user_features.end()) throw NotFoundError("user id " + std::to_string(user) + " not in corpus");
            std::vector<double> s;
            s.reserve(items.size());
            for (const auto& i : items) s.push_back(cascade::oracle_utility(*it->second, i.features, latent_dim));
            return s;
        },
        k);
}

Trainer::Trainer(RunConfig config, RankTower model, const TrainingData& data)
    : config_(std::move(config)), model_(std::move(model)), data_(&data),
      adam_(model_.params(), {config_.train.learning_rate}),
      rng_(derive_seed(config_.seed, SeedStream::trainer)) {
    prepare();
}

Trainer::Trainer(RunConfig config, features::FeatureEncoder encoder, const TrainingData& data)
    : Trainer(config, RankTower::create(std::move(encoder), config.model, derive_seed(config.seed, SeedStream::model)),
              data) {}

void Trainer::prepare() {
    config_.validate();
    const auto& train = data_->train;
    user_rows_.clear();
    item_rows_.clear();
    for (const auto& r : train) {
        user_rows_.push_back(model_.encoder().encode(r.user_features, Side::user));
        item_rows_.push_back(model_.encoder().encode(r.item_features, Side::item));
    }
    const auto& c = config_.train.cascade;
    pools_.clear();
    for (auto& pool : cascade::build_pools(train)) {
        const bool has_impression = !pool.positive.empty() || !pool.negative.empty();
        const auto drawable = std::min(pool.positive.size(), c.n_impression_pos) +
                              std::min(pool.negative.size(), c.n_impression_neg) +
                              std::min(pool.candidate.size(), c.n_candidate) + std::min(pool.random.size(), c.n_random);
        if (has_impression && drawable >= 2) pools_.push_back(std::move(pool));
    }
    if (pools_.empty()) throw ConfigError("training data yields no valid list group");
}

std::vector<cascade::ListGroup> Trainer::sample_batch() {
    std::vector<cascade::ListGroup> groups;
    std::uniform_int_distribution<std::size_t> pick(0, pools_.size() - 1);
    while (groups.size() < config_.train.batch_size) {
        auto g = cascade::assemble_list_group(pools_[pick(rng_)], data_->train, config_.train.cascade, rng_);
        if (g) groups.push_back(std::move(*g));
    }
    return groups;
}

diff::Var Trainer::batch_loss(Binding& bind, std::span<const cascade::ListGroup> groups) const {
    std::vector<EncodedRows> users, items;
    std::vector<std::size_t> owner;
    for (std::size_t b = 0; b < groups.size(); ++b) {
        users.push_back(user_rows_.at(groups[b].items.front().record));
        for (const auto& it : groups[b].items) {
            items.push_back(item_rows_.at(it.record));
            owner.push_back(b);
        }
    }
    const auto& ut = model_.user_tower();
    const auto hk = ut.heads() * ut.subspace();
    auto u = diff::reshape(model_.user_embeddings(bind, users), {groups.size(), hk});
    u = diff::reshape(diff::gather_rows(u, owner), {owner.size(), ut.heads(), ut.subspace()});
    auto z = model_.score_pairs(bind, u, model_.item_embeddings(bind, items));

    diff::Var total;
    std::size_t offset = 0;
    for (const auto& group : groups) {
        std::vector<std::size_t> idx(group.items.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = offset + i;
        offset += idx.size();
        auto zg = diff::select(z, idx);
        losses::ListScores scores{zg, {}, {}, {}};
        for (const auto& it : group.items) {
            scores.y.push_back(it.y);
            scores.teacher.push_back(it.teacher);
            scores.stage.push_back(it.stage);
        }
        diff::Var l;
        switch (config_.train.loss) {
        case LossKind::hybrid: l = losses::hybrid_loss(scores, config_.train.weights); break;
        case LossKind::listwise_softmax: l = losses::listwise_softmax_loss(zg, scores.y); break;
        case LossKind::pairwise_logistic: l = losses::pairwise_logistic_loss(zg, scores.y); break;
        }
        if (!std::isfinite(l.item()))
            throw EvaluationError("non-finite loss for the list group of user " + std::to_string(group.user_id) +
                                  " at step " + std::to_string(step_));
        total = total.valid() ? diff::add(total, l) : l;
    }
    return diff::scale(total, 1.0 / static_cast<double>(groups.size()));
}

double Trainer::step() {
    auto groups = sample_batch();
    diff::Graph g;
    Binding bind(g, model_.params());
    auto loss = batch_loss(bind, groups);
    g.backward(loss);
    std::vector<std::vector<double>> grads;
    grads.reserve(model_.params().size());
    for (std::size_t p = 0; p < model_.params().size(); ++p) grads.push_back(bind.grad(ParamId{p}));
    adam_.step(model_.params(), grads);
    ++step_;
    loss_sum_ += loss.item();
    ++loss_count_;
    return loss.item();
}

HistoryEntry Trainer::evaluate_now() {
    auto report = evaluate(model_, data_->valid, data_->users, data_->items, config_.train.cascade.labels,
                           config_.train.k, config_.train.eval_batch);
    HistoryEntry h{step_, loss_count_ ? loss_sum_ / static_cast<double>(loss_count_) : 0.0, report.recall, report.ndcg};
    loss_sum_ = 0;
    loss_count_ = 0;
    history_.push_back(h);
    if (h.ndcg > best_ndcg_) {
        best_ndcg_ = h.ndcg;
        best_step_ = step_;
        best_params_ = model_.params().entries();
        evals_since_best_ = 0;
    } else if (++evals_since_best_ >= config_.train.patience) {
        stopped_ = true;
    }
    return h;
}

void Trainer::train(const std::function<void(const HistoryEntry&)>& on_eval) {
    const auto& t = config_.train;
    while (!stopped_ && step_ < t.max_steps) {
        step();
        if (step_ % t.eval_interval == 0) {
            auto h = evaluate_now();
            if (on_eval) on_eval(h);
        }
    }
    if (!stopped_ && (history_.empty() || history_.back().step != step_)) {
        auto h = evaluate_now();
        if (on_eval) on_eval(h);
    }
}

RankTower Trainer::best_model() const {
    RankTower m = model_;
    if (!best_params_.empty()) m.params().assign_from(best_params_);
    return m;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    const auto& entries = model_.params().entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
        c.tensors.push_back({"param/" + entries[p].name, entries[p].value});
        c.tensors.push_back({"adam_m/" + entries[p].name, diff::Tensor(entries[p].value.shape, adam_.first_moments()[p])});
        c.tensors.push_back({"adam_v/" + entries[p].name, diff::Tensor(entries[p].value.shape, adam_.second_moments()[p])});
    }
    for (const auto& e : best_params_) c.tensors.push_back({"best/" + e.name, e.value});
    c.meta["config"] = config_.to_ini();
    c.meta["schema"] = model_.encoder().schema().to_text();
    c.meta["buckets"] = model_.encoder().buckets_to_text();
    c.meta["step"] = std::to_string(step_);
    c.meta["adam_t"] = std::to_string(adam_.steps());
    std::ostringstream rng;
    rng << rng_;
    c.meta["rng"] = rng.str();
    c.meta["best_ndcg"] = hex(best_ndcg_);
    c.meta["best_step"] = std::to_string(best_step_);
    c.meta["evals_since_best"] = std::to_string(evals_since_best_);
    c.meta["stopped"] = stopped_ ? "1" : "0";
    c.meta["loss_sum"] = hex(loss_sum_);
    c.meta["loss_count"] = std::to_string(loss_count_);
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : history_)
        hist.push_back({{"step", h.step}, {"train_loss", hex(h.train_loss)}, {"recall", hex(h.recall)}, {"ndcg", hex(h.ndcg)}});
    c.meta["history"] = hist.dump();
    return c;
}

Trainer Trainer::resume(const Checkpoint& c, const TrainingData& data) {
    auto config = c.config();
    auto model = RankTower::create(c.encoder(), config.model, 0);
    model.params().assign_from(c.group("param"));
    Trainer t(config, std::move(model), data);
    const auto m = c.group("adam_m");
    const auto v = c.group("adam_v");
    auto& params = t.model_.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto find = [&](const std::vector<NamedTensor>& list) -> const std::vector<double>& {
            for (const auto& e : list)
                if (e.name == params.entries()[p].name) return e.value.values;
            throw NotFoundError("checkpoint lacks optimizer state for " + params.entries()[p].name);
        };
        t.adam_.first_moments()[p] = find(m);
        t.adam_.second_moments()[p] = find(v);
    }
    t.adam_.set_steps(to_size(c.get("adam_t")));
    std::istringstream rng(c.get("rng"));
    rng >> t.rng_;
    if (!rng) throw IoError("bad rng state in checkpoint");
    t.step_ = to_size(c.get("step"));
    t.best_ndcg_ = unhex(c.get("best_ndcg"));
    t.best_step_ = to_size(c.get("best_step"));
    t.evals_since_best_ = to_size(c.get("evals_since_best"));
    t.stopped_ = c.get("stopped") == "1";
    t.loss_sum_ = unhex(c.get("loss_sum"));
    t.loss_count_ = to_size(c.get("loss_count"));
    auto best = c.group("best");
    if (!best.empty()) {
        ParameterSet snapshot = params;
        snapshot.assign_from(best);
        t.best_params_ = snapshot.entries();
    }
    for (const auto& h : nlohmann::json::parse(c.get("history")))
        t.history_.push_back({h["step"].get<std::size_t>(), unhex(h["train_loss"].get<std::string>()),
                              unhex(h["recall"].get<std::string>()), unhex(h["ndcg"].get<std::string>())});
    return t;
}

} // namespace ranktower::trainer
