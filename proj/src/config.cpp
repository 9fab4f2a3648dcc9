#include "ranktower/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ranktower/errors.hpp"

namespace ranktower {

std::string to_string(LossKind kind) {
    switch (kind) {
    case LossKind::hybrid: return "hybrid";
    case LossKind::listwise_softmax: return "listwise_softmax";
    case LossKind::pairwise_logistic: return "pairwise_logistic";
    }
    return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "hybrid") return LossKind::hybrid;
    if (s == "listwise_softmax") return LossKind::listwise_softmax;
    if (s == "pairwise_logistic") return LossKind::pairwise_logistic;
    throw ConfigError("unknown loss '" + s + "' (expected hybrid, listwise_softmax or pairwise_logistic)");
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0)) throw ConfigError("train.learning_rate must be nonnegative");
    if (batch_size == 0 || eval_interval == 0 || k == 0 || eval_batch == 0)
        throw ConfigError("train.batch_size, eval_interval, k and eval_batch must be positive");
    if (patience == 0) throw ConfigError("train.patience must be at least 1");
    weights.validate();
    if (cascade.n_impression_pos + cascade.n_impression_neg == 0)
        throw ConfigError("cascade: at least one impression per list is required");
    if (cascade.n_impression_pos + cascade.n_impression_neg + cascade.n_candidate + cascade.n_random < 2)
        throw ConfigError("cascade: lists need at least two items");
}

namespace {

std::string format(double v) {
    char buf[64];
    const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;  // shortest round-trip form
    return std::string(buf, end);
}

std::string format(std::size_t v) { return std::to_string(v); }

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError("bad value '" + text + "' for " + key);
    return v;
}

std::string format_list(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) out.push_back(parse_number<std::size_t>(key, part));
    if (out.empty()) throw ConfigError(key + " needs at least one width");
    return out;
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class Access>
Field number(std::string key, Access access) {
    using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
    return {key, [access](const RunConfig& c) { return format(access(const_cast<RunConfig&>(c))); },
            [access, key](RunConfig& c, const std::string& v) { access(c) = parse_number<T>(key, v); }};
}

template <class Access>
Field tower_hidden(std::string key, Access access) {
    return {key, [access](const RunConfig& c) { return format_list(access(const_cast<RunConfig&>(c))); },
            [access, key](RunConfig& c, const std::string& v) { access(c) = parse_list(key, v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                     [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("run.seed", v); }});
#define RT_NUM(key, member) f.push_back(number(key, [](RunConfig& c) -> auto& { return c.member; }))
        RT_NUM("world.n_users", world.n_users);
        RT_NUM("world.n_items", world.n_items);
        RT_NUM("world.latent_dim", world.latent_dim);
        RT_NUM("world.recall_size", world.recall_size);
        RT_NUM("world.prerank_size", world.prerank_size);
        RT_NUM("world.rank_size", world.rank_size);
        RT_NUM("world.impressions", world.impressions);
        RT_NUM("world.randoms_per_user", world.randoms_per_user);
        RT_NUM("world.noise", world.noise);
        RT_NUM("world.recall_noise", world.recall_noise);
        RT_NUM("world.prerank_noise", world.prerank_noise);
        RT_NUM("world.rank_noise", world.rank_noise);
        RT_NUM("world.label_temperature", world.label_temperature);
        RT_NUM("world.click_quantile", world.click_quantile);
        RT_NUM("world.convert_quantile", world.convert_quantile);
        RT_NUM("world.segment_bits", world.segment_bits);
        RT_NUM("world.category_bits", world.category_bits);
        RT_NUM("world.buckets", world.buckets);
        RT_NUM("world.train_fraction", world.train_fraction);
        RT_NUM("world.valid_fraction", world.valid_fraction);

        RT_NUM("teacher.hidden", teacher.hidden);
        RT_NUM("teacher.steps", teacher.steps);
        RT_NUM("teacher.batch_size", teacher.batch_size);
        RT_NUM("teacher.learning_rate", teacher.learning_rate);
        f.push_back({"teacher.target", [](const RunConfig& c) { return c.teacher.target; },
                     [](RunConfig& c, const std::string& v) { c.teacher.target = v; }});
        f.push_back({"teacher.weight_behavior", [](const RunConfig& c) { return c.teacher.weight_behavior; },
                     [](RunConfig& c, const std::string& v) { c.teacher.weight_behavior = v; }});

        RT_NUM("model.user_heads", model.user_tower.heads);
        RT_NUM("model.item_heads", model.item_tower.heads);
        f.push_back(number("model.subspace", [](RunConfig& c) -> auto& { return c.model.user_tower.subspace; }));
        f.back().set = [](RunConfig& c, const std::string& v) {
            c.model.user_tower.subspace = c.model.item_tower.subspace = parse_number<std::size_t>("model.subspace", v);
        };
        f.push_back(tower_hidden("model.user_hidden", [](RunConfig& c) -> auto& { return c.model.user_tower.hidden; }));
        f.push_back(tower_hidden("model.item_hidden", [](RunConfig& c) -> auto& { return c.model.item_tower.hidden; }));
        RT_NUM("model.user_reduction", model.user_tower.reduction);
        RT_NUM("model.item_reduction", model.item_tower.reduction);
        RT_NUM("model.cross_layers", model.cross_layers);
        f.push_back({"model.phi", [](const RunConfig& c) { return diff::to_string(c.model.phi); },
                     [](RunConfig& c, const std::string& v) { c.model.phi = diff::activation_from_string(v); }});
        RT_NUM("model.ln_eps", model.ln_eps);
        RT_NUM("model.initial_tau", model.initial_tau);

        RT_NUM("train.learning_rate", train.learning_rate);
        RT_NUM("train.batch_size", train.batch_size);
        RT_NUM("train.max_steps", train.max_steps);
        RT_NUM("train.eval_interval", train.eval_interval);
        RT_NUM("train.patience", train.patience);
        RT_NUM("train.k", train.k);
        RT_NUM("train.eval_batch", train.eval_batch);
        f.push_back({"train.loss", [](const RunConfig& c) { return to_string(c.train.loss); },
                     [](RunConfig& c, const std::string& v) { c.train.loss = loss_kind_from_string(v); }});

        RT_NUM("loss.distillation", train.weights.distillation);
        RT_NUM("loss.sorting", train.weights.sorting);
        RT_NUM("loss.am_rankmax", train.weights.am_rankmax);
        RT_NUM("loss.sort_tau", train.weights.sort_tau);
        RT_NUM("loss.sort_power", train.weights.sort_power);
        RT_NUM("loss.margin_alpha", train.weights.margin.alpha);
        f.push_back({"loss.margin_metric",
                     [](const RunConfig& c) {
                         return std::string(c.train.weights.margin.metric == losses::MarginMetric::constant ? "constant"
                                                                                                             : "scaled_power");
                     },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "constant") c.train.weights.margin.metric = losses::MarginMetric::constant;
                         else if (v == "scaled_power") c.train.weights.margin.metric = losses::MarginMetric::scaled_power;
                         else throw ConfigError("loss.margin_metric must be constant or scaled_power");
                     }});
        RT_NUM("loss.margin_beta", train.weights.margin.beta);
        RT_NUM("loss.margin_power", train.weights.margin.power);

        RT_NUM("cascade.impression_pos", train.cascade.n_impression_pos);
        RT_NUM("cascade.impression_neg", train.cascade.n_impression_neg);
        RT_NUM("cascade.candidates", train.cascade.n_candidate);
        RT_NUM("cascade.randoms", train.cascade.n_random);
#undef RT_NUM
        return f;
    }();
    return table;
}

const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return &f;
    return nullptr;
}

} // namespace

RunConfig::RunConfig() { train.cascade.labels.weights = {{"click", 1.0}, {"convert", 1.0}}; }

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key.rfind("labels.", 0) == 0 && key.size() > 7) {
        train.cascade.labels.weights[key.substr(7)] = parse_number<double>(key, value);
        return;
    }
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    f->set(*this, value);
}

void RunConfig::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not section.key=value");
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::vector<std::string> RunConfig::keys() const {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    for (const auto& [name, w] : train.cascade.labels.weights) out.push_back("labels." + name);
    return out;
}

RunConfig RunConfig::parse(std::string_view ini) {
    boost::property_tree::ptree tree;
    std::istringstream in{std::string(ini)};
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' outside a section");
        for (const auto& [key, value] : body) c.set(section + "." + key, value.data());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string RunConfig::to_ini() const {
    boost::property_tree::ptree tree;
    for (const auto& f : fields()) tree.put(boost::property_tree::ptree::path_type(f.key, '.'), f.get(*this));
    for (const auto& [name, w] : train.cascade.labels.weights)
        tree.put(boost::property_tree::ptree::path_type("labels." + name, '.'), format(w));
    std::ostringstream out;
    boost::property_tree::write_ini(out, tree);
    return out.str();
}

void RunConfig::validate() const {
    world.validate();
    model.validate();
    train.validate();
    if (teacher.steps == 0 || teacher.batch_size == 0 || teacher.hidden == 0)
        throw ConfigError("teacher.steps, batch_size and hidden must be positive");
    for (const auto& [name, w] : train.cascade.labels.weights)
        if (!(w >= 0)) throw ConfigError("labels." + name + " must be nonnegative");
}

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
    // splitmix64 finalizer over the seed and stream tag
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(stream) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace ranktower
