#include "ranktower/params.hpp"

#include <cmath>

#include "ranktower/errors.hpp"

namespace ranktower {

ParamId ParameterSet::add(std::string name, diff::Tensor init) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(init)});
    return ParamId{entries_.size() - 1};
}

std::optional<ParamId> ParameterSet::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return ParamId{it->second};
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

void ParameterSet::assign_from(const std::vector<NamedTensor>& other) {
    std::unordered_map<std::string, const diff::Tensor*> by_name;
    for (const auto& e : other) by_name.emplace(e.name, &e.value);
    for (auto& e : entries_) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) throw NotFoundError("parameter '" + e.name + "' missing from source");
        if (it->second->shape != e.value.shape) {
            throw DimensionError("parameter '" + e.name + "' has shape " + diff::shape_to_string(it->second->shape) +
                                 ", expected " + diff::shape_to_string(e.value.shape));
        }
        e.value = *it->second;
    }
}

Binding::Binding(diff::Graph& graph, const ParameterSet& params, bool trainable)
    : graph_(graph), params_(params), trainable_(trainable), vars_(params.size()) {}

diff::Var Binding::operator()(ParamId id) {
    auto& slot = vars_.at(id.index);
    if (!slot) slot = graph_.bind(params_[id], trainable_);
    return *slot;
}

std::vector<double> Binding::grad(ParamId id) const {
    const auto& slot = vars_.at(id.index);
    if (!slot) return std::vector<double>(params_[id].size(), 0.0);
    return graph_.grad(*slot);
}

namespace init {

diff::Tensor glorot_uniform(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform(rng, {fan_in, fan_out}, limit);
}

diff::Tensor uniform(std::mt19937_64& rng, diff::Shape shape, double limit) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> v(diff::shape_size(shape));
    for (auto& x : v) x = dist(rng);
    return diff::Tensor(std::move(shape), std::move(v));
}

} // namespace init
} // namespace ranktower
