// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "senet/arch.hpp"

namespace senet::zoo {

/// Desk-scale CNN: 8 ReLU layers, ~125k weights, 3x16x16 input.
ModelSpec toy_cnn8(int classes = 4, std::vector<double> dropout_rates = {1.0});

/// Three-stage residual net (one basic block per stage), 3x16x16 input.
ModelSpec mini_resnet(int classes = 4, std::vector<double> dropout_rates = {1.0});

/// VGG16 layout with halved channels, 3x32x32 input.
ModelSpec mini_vgg(int classes = 10, std::vector<double> dropout_rates = {1.0});

/// CIFAR-style ResNet18 (3x3 stem, stride/padding 1), 3x32x32 input.
/// 17 ReLU layers; full-capacity ReLU count 557,056.
ModelSpec resnet18_cifar(int classes = 100, std::vector<double> dropout_rates = {1.0});

/// Lookup by name ("toy-cnn-8", "mini-resnet", "mini-vgg", "resnet18-cifar").
ModelSpec by_name(const std::string& name, int classes, std::vector<double> dropout_rates = {1.0});

std::vector<std::string> names();

} // namespace senet::zoo
