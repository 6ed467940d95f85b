// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over Tensor values.
//
// Every op allocates a Node that remembers its parents and a backward
// closure. Nodes are numbered from a per-thread counter at creation, so a
// reverse sweep in descending creation order is a valid topological order.
// Leaves bound to a Parameter accumulate their gradient straight into
// Parameter::grad.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "distillkit/tensor.h"

namespace distillkit {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool decay = true;  // excluded from weight decay when false (biases, norms)

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool d = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), decay(d) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

struct Node {
    Tensor own;
    const Tensor* external = nullptr;  // parameter storage for bound leaves
    Tensor grad;                       // lazily allocated
    Parameter* param = nullptr;
    bool requires_grad = false;
    uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    const Tensor& value() const { return external ? *external : own; }
    /// Adds g into this node's gradient (or its parameter's gradient).
    void accumulate(const Tensor& g);
    Tensor& grad_buffer();
};

/// Handle to a node in the computation graph.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    const Tensor& value() const { return node_->value(); }
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    double item() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Creates an op result. `backward` is dropped when no parent needs a gradient.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);
Var constant(Tensor value);

/// Parameter registry and backward driver for one forward/backward pass.
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const { return record_; }

    /// Leaf bound to `p`. Repeated calls for the same parameter return the
    /// same node so tied weights accumulate into one gradient.
    Var param(Parameter& p);

    /// Seeds d(loss)/d(loss) = 1 and sweeps the graph in reverse creation
    /// order. Gradients land in the registered parameters' `grad` tensors.
    void backward(const Var& loss);

    std::vector<Parameter*> parameters() const { return order_; }

private:
    bool record_;
    std::unordered_map<Parameter*, Var> leaves_;
    std::vector<Parameter*> order_;
};

}  // namespace distillkit
