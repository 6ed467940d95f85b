// SPDX-License-Identifier: Apache-2.0

#include "distillkit/autograd.h"

#include <algorithm>
#include <unordered_set>

namespace distillkit {

namespace {

thread_local uint64_t g_seq = 0;

}  // namespace

Tensor& Node::grad_buffer() {
    if (param) {
        if (param->grad.numel() != param->value.numel()) param->grad = Tensor(param->value.shape());
        return param->grad;
    }
    if (grad.numel() != value().numel()) grad = Tensor(value().shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    grad_buffer().add_(g);
}

double Var::item() const {
    if (value().numel() != 1) {
        throw NumericError("item() on tensor of shape " + shape_str(shape()));
    }
    return value()[0];
}

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->own = std::move(value);
    node->seq = ++g_seq;
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.ptr());
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->own = std::move(value);
    node->seq = ++g_seq;
    return Var(std::move(node));
}

Var Tape::param(Parameter& p) {
    if (auto it = leaves_.find(&p); it != leaves_.end()) return it->second;
    auto node = std::make_shared<Node>();
    node->external = &p.value;
    node->seq = ++g_seq;
    if (record_) {
        node->param = &p;
        node->requires_grad = true;
    }
    Var v(std::move(node));
    leaves_.emplace(&p, v);
    order_.push_back(&p);
    return v;
}

void Tape::backward(const Var& loss) {
    if (!loss.defined()) throw NumericError("backward on undefined variable");
    if (loss.value().numel() != 1) {
        throw NumericError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    std::vector<Node*> nodes;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node()};
    seen.insert(loss.node());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(nodes.begin(), nodes.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

    loss.node()->grad_buffer().fill(0.0);
    loss.node()->grad_buffer()[0] = 1.0;
    for (Node* n : nodes) {
        if (!n->backward) continue;
        if (n->grad.numel() == 0) continue;  // nothing flowed into this node
        n->backward(*n);
        // Interior gradients are no longer needed once propagated.
        n->grad = Tensor();
    }
}

}  // namespace distillkit
