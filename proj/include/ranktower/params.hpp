#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "ranktower/diff/graph.hpp"

namespace ranktower {

struct ParamId {
    std::size_t index = 0;
};

struct NamedTensor {
    std::string name;
    diff::Tensor value;
};

// Ordered, named collection of trainable tensors. Modules keep ParamIds, so copying a
// ParameterSet together with its modules keeps them consistent.
class ParameterSet {
public:
    ParamId add(std::string name, diff::Tensor init);

    diff::Tensor& operator[](ParamId id) { return entries_[id.index].value; }
    const diff::Tensor& operator[](ParamId id) const { return entries_[id.index].value; }
    const std::string& name(ParamId id) const { return entries_[id.index].name; }

    std::optional<ParamId> find(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;
    const std::vector<NamedTensor>& entries() const { return entries_; }
    std::vector<NamedTensor>& entries() { return entries_; }

    // Copies every entry of `other` with a matching name and shape. Throws NotFoundError
    // (or DimensionError) when an entry of this set has no counterpart.
    void assign_from(const std::vector<NamedTensor>& other);

private:
    std::vector<NamedTensor> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Binds a ParameterSet onto one Graph, creating each leaf on first use.
class Binding {
public:
    Binding(diff::Graph& graph, const ParameterSet& params, bool trainable = true);

    diff::Var operator()(ParamId id);
    // Uses `v` for this parameter instead of binding the stored tensor.
    void set(ParamId id, diff::Var v) { vars_.at(id.index) = v; }
    diff::Graph& graph() { return graph_; }
    const ParameterSet& params() const { return params_; }

    // Gradient for a parameter after graph.backward(); zeros when it was never bound.
    std::vector<double> grad(ParamId id) const;

private:
    diff::Graph& graph_;
    const ParameterSet& params_;
    bool trainable_;
    std::vector<std::optional<diff::Var>> vars_;
};

namespace init {
diff::Tensor glorot_uniform(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out);
diff::Tensor uniform(std::mt19937_64& rng, diff::Shape shape, double limit);
} // namespace init

} // namespace ranktower
