#include "ranktower/diff/graph.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "ranktower/errors.hpp"

namespace ranktower::diff {

const Shape& Var::shape() const { return graph_->shape(id_); }
std::size_t Var::size() const { return graph_->value(id_).size(); }
std::span<const double> Var::values() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

double Var::item() const {
    auto v = values();
    if (v.size() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
    return v[0];
}

Tensor Var::to_tensor() const {
    auto v = values();
    return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}

Var Graph::push(Node node) {
    if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
        throw std::length_error("graph node limit reached");
    }
    nodes_.push_back(std::move(node));
    auto& back = nodes_.back();
    if (!back.owned.empty()) back.data = back.owned.data();
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::constant(Tensor t) {
    Node n;
    n.shape = std::move(t.shape);
    n.size = t.values.size();
    n.owned = std::move(t.values);
    return push(std::move(n));
}

Var Graph::variable(Tensor t) {
    Node n;
    n.shape = std::move(t.shape);
    n.size = t.values.size();
    n.owned = std::move(t.values);
    n.requires_grad = record_;
    return push(std::move(n));
}

Var Graph::bind(const Tensor& t, bool requires_grad) {
    Node n;
    n.shape = t.shape;
    n.size = t.values.size();
    n.data = t.values.data();
    n.requires_grad = record_ && requires_grad;
    return push(std::move(n));
}

Var Graph::emit(Shape shape, std::vector<double> values, std::initializer_list<Var> inputs, Backward backward) {
    return emit(std::move(shape), std::move(values), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Graph::emit(Shape shape, std::vector<double> values, std::span<const Var> inputs, Backward backward) {
    if (shape_size(shape) != values.size()) {
        throw DimensionError("op produced " + std::to_string(values.size()) + " values for shape " +
                             shape_to_string(shape));
    }
    Node n;
    n.shape = std::move(shape);
    n.size = values.size();
    n.owned = std::move(values);
    if (record_) {
        n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
        if (n.requires_grad) n.backward = std::move(backward);
    }
    return push(std::move(n));
}

void Graph::backward(Var loss) {
    if (!record_) throw std::logic_error("backward() on an inference-mode graph");
    if (backward_done_) throw std::logic_error("backward() already ran on this graph");
    if (&loss.graph() != this) throw std::logic_error("loss belongs to a different graph");
    if (loss.size() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_to_string(loss.shape()));
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_accumulator(loss.id())[0] = 1.0;
    for (std::int64_t id = loss.id(); id >= 0; --id) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        if (node.backward && !node.grad.empty()) node.backward(*this, static_cast<std::uint32_t>(id));
    }
}

std::vector<double> Graph::grad(Var v) const {
    const auto& node = nodes_[v.id()];
    if (node.grad.empty()) return std::vector<double>(node.size, 0.0);
    return node.grad;
}

std::span<double> Graph::grad_accumulator(std::uint32_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty()) node.grad.assign(node.size, 0.0);
    return node.grad;
}

} // namespace ranktower::diff
