#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "ranktower/diff/tensor.hpp"

namespace ranktower::diff {

class Graph;

// Lightweight handle to a value recorded on a Graph. Copyable; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    std::uint32_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

    const Shape& shape() const;
    std::size_t size() const;
    std::size_t last_dim() const { return shape().back(); }
    std::span<const double> values() const;
    double item() const;
    bool requires_grad() const;
    Tensor to_tensor() const;

private:
    Graph* graph_ = nullptr;
    std::uint32_t id_ = 0;
};

// Tape of recorded operations. Backward replays the tape in reverse recording order,
// visiting each node at most once. A graph built with record=false keeps forward
// values only (inference mode) and refuses backward().
class Graph {
public:
    using Backward = std::function<void(Graph&, std::uint32_t self)>;

    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return record_; }

    // Owned copy, never receives gradient.
    Var constant(Tensor t);
    // Owned leaf that receives gradient (when recording).
    Var variable(Tensor t);
    // Borrowed leaf: no copy; `t` must outlive the graph and stay unmodified.
    Var bind(const Tensor& t, bool requires_grad);

    // Records an op result. `inputs` decide whether the result requires grad.
    Var emit(Shape shape, std::vector<double> values, std::initializer_list<Var> inputs, Backward backward);
    Var emit(Shape shape, std::vector<double> values, std::span<const Var> inputs, Backward backward);

    void backward(Var loss);

    const Shape& shape(std::uint32_t id) const { return nodes_[id].shape; }
    std::span<const double> value(std::uint32_t id) const { return {nodes_[id].data, nodes_[id].size}; }
    bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

    // Gradient of the last backward() loss w.r.t. a node; zeros if unreached.
    std::vector<double> grad(Var v) const;
    std::span<const double> grad_span(std::uint32_t id) const { return nodes_[id].grad; }
    // Gradient accumulator for an op's input, allocated on first use.
    std::span<double> grad_accumulator(std::uint32_t id);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<double> owned;
        const double* data = nullptr;
        std::size_t size = 0;
        std::vector<double> grad;
        bool requires_grad = false;
        Backward backward;
    };

    Var push(Node node);

    bool record_;
    bool backward_done_ = false;
    std::deque<Node> nodes_;
};

} // namespace ranktower::diff
