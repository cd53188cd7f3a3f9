// SPDX-License-Identifier: Apache-2.0
#include "senet/graph.hpp"

#include <unordered_set>

namespace senet {

Tensor& Node::ensure_grad() {
    if (!grad_ready) {
        grad = Tensor::zeros(value.shape());
        grad_ready = true;
    }
    return grad;
}

Var make_param(Tensor value, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->needs_grad = true;
    n->name = std::move(name);
    n->ensure_grad();
    return n;
}

Var make_input(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    n->backprop = std::move(backprop);
    for (const auto& in : n->inputs) {
        if (in->needs_grad) {
            n->needs_grad = true;
            break;
        }
    }
    return n;
}

void backward(const Var& root) {
    if (root->value.numel() != 1) {
        throw ValidationError("backward() requires a scalar root");
    }
    // Iterative post-order DFS; nodes visited once.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->needs_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop && node->needs_grad) {
            node->backprop(*node);
        }
    }
}

void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) {
        p->ensure_grad().fill(0.0f);
    }
}

} // namespace senet
