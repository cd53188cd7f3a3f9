// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "senet/tensor.hpp"

namespace senet {

// Reverse-mode tape. Each forward op appends a node holding its output value
// and a closure that scatters the node's gradient into its inputs. Graphs are
// rebuilt per forward pass; parameter nodes are long-lived and accumulate
// gradients across backward() calls until zero_grad().

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;                 // allocated on first backward touch
    bool needs_grad = false;     // true for params and anything downstream of one
    bool grad_ready = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backprop;
    std::string name;            // set for parameters

    Tensor& ensure_grad();
};

/// Leaf that participates in optimization.
Var make_param(Tensor value, std::string name);
/// Leaf that never receives a gradient (batch data, frozen teacher outputs).
Var make_input(Tensor value);
/// Interior node; needs_grad is inherited from inputs.
Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop);

/// Seeds d(root)/d(root) = 1 and runs the tape in reverse topological order.
/// `root` must be scalar (numel == 1).
void backward(const Var& root);

void zero_grad(const std::vector<Var>& params);

} // namespace senet
