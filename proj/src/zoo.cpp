// SPDX-License-Identifier: Apache-2.0
#include "senet/zoo.hpp"

namespace senet::zoo {

namespace {

LayerSpec conv(const std::string& name, int out_c, int kernel, int stride, int padding,
               const std::string& input = "") {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.name = name;
    l.out_channels = out_c;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    l.input = input;
    return l;
}

LayerSpec bn(const std::string& name, const std::string& input = "") {
    LayerSpec l;
    l.kind = LayerKind::BatchNorm;
    l.name = name;
    l.input = input;
    return l;
}

LayerSpec relu(const std::string& name, const std::string& input = "") {
    LayerSpec l;
    l.kind = LayerKind::Relu;
    l.name = name;
    l.input = input;
    return l;
}

LayerSpec maxpool(const std::string& name, int size = 2, int stride = 2) {
    LayerSpec l;
    l.kind = LayerKind::Pool;
    l.name = name;
    l.pool_max = true;
    l.pool_size = size;
    l.pool_stride = stride;
    return l;
}

LayerSpec gap(const std::string& name) {
    LayerSpec l;
    l.kind = LayerKind::Pool;
    l.name = name;
    l.pool_max = false;
    l.pool_global = true;
    return l;
}

LayerSpec flatten(const std::string& name) {
    LayerSpec l;
    l.kind = LayerKind::Flatten;
    l.name = name;
    return l;
}

LayerSpec linear(const std::string& name, int features) {
    LayerSpec l;
    l.kind = LayerKind::Linear;
    l.name = name;
    l.features = features;
    return l;
}

LayerSpec res_add(const std::string& name, const std::string& a, const std::string& b) {
    LayerSpec l;
    l.kind = LayerKind::ResidualAdd;
    l.name = name;
    l.input = a;
    l.input2 = b;
    return l;
}

// BasicBlock: conv-bn-relu-conv-bn (+ projection when shape changes), add, relu.
void basic_block(std::vector<LayerSpec>& layers, const std::string& prefix, int out_c, int stride,
                 bool project) {
    const std::string in = layers.back().name;
    layers.push_back(conv(prefix + ".conv1", out_c, 3, stride, 1, in));
    layers.push_back(bn(prefix + ".bn1"));
    layers.push_back(relu(prefix + ".relu1"));
    layers.push_back(conv(prefix + ".conv2", out_c, 3, 1, 1));
    layers.push_back(bn(prefix + ".bn2"));
    std::string skip = in;
    if (project) {
        layers.push_back(conv(prefix + ".down.conv", out_c, 1, stride, 0, in));
        layers.push_back(bn(prefix + ".down.bn"));
        skip = prefix + ".down.bn";
    }
    layers.push_back(res_add(prefix + ".add", prefix + ".bn2", skip));
    layers.push_back(relu(prefix + ".relu2", prefix + ".add"));
}

} // namespace

ModelSpec toy_cnn8(int classes, std::vector<double> dropout_rates) {
    ModelSpec spec;
    spec.in_channels = 3;
    spec.in_height = 16;
    spec.in_width = 16;
    spec.class_count = classes;
    spec.dropout_rates = std::move(dropout_rates);
    auto& L = spec.layers;
    L.push_back(conv("conv1", 16, 3, 1, 1));
    L.push_back(bn("bn1"));
    L.push_back(relu("relu1"));
    L.push_back(conv("conv2", 16, 3, 1, 1));
    L.push_back(bn("bn2"));
    L.push_back(relu("relu2"));
    L.push_back(maxpool("pool1"));
    L.push_back(conv("conv3", 32, 3, 1, 1));
    L.push_back(bn("bn3"));
    L.push_back(relu("relu3"));
    L.push_back(conv("conv4", 32, 3, 1, 1));
    L.push_back(bn("bn4"));
    L.push_back(relu("relu4"));
    L.push_back(maxpool("pool2"));
    L.push_back(conv("conv5", 64, 3, 1, 1));
    L.push_back(bn("bn5"));
    L.push_back(relu("relu5"));
    L.push_back(conv("conv6", 64, 3, 1, 1));
    L.push_back(bn("bn6"));
    L.push_back(relu("relu6"));
    L.push_back(maxpool("pool3"));
    L.push_back(conv("conv7", 64, 3, 1, 1));
    L.push_back(bn("bn7"));
    L.push_back(relu("relu7"));
    L.push_back(flatten("flat"));
    L.push_back(linear("fc1", 64));
    L.push_back(relu("relu8"));
    L.push_back(linear("fc2", classes));
    spec.validate();
    return spec;
}

ModelSpec mini_resnet(int classes, std::vector<double> dropout_rates) {
    ModelSpec spec;
    spec.in_channels = 3;
    spec.in_height = 16;
    spec.in_width = 16;
    spec.class_count = classes;
    spec.dropout_rates = std::move(dropout_rates);
    auto& L = spec.layers;
    L.push_back(conv("stem.conv", 16, 3, 1, 1));
    L.push_back(bn("stem.bn"));
    L.push_back(relu("stem.relu"));
    basic_block(L, "s1.b1", 16, 1, false);
    basic_block(L, "s2.b1", 32, 2, true);
    basic_block(L, "s3.b1", 64, 2, true);
    L.push_back(gap("gap"));
    L.push_back(linear("fc", classes));
    spec.validate();
    return spec;
}

ModelSpec mini_vgg(int classes, std::vector<double> dropout_rates) {
    ModelSpec spec;
    spec.in_channels = 3;
    spec.in_height = 32;
    spec.in_width = 32;
    spec.class_count = classes;
    spec.dropout_rates = std::move(dropout_rates);
    auto& L = spec.layers;
    const int plan[5][3] = {{32, 32, 0}, {64, 64, 0}, {128, 128, 128}, {256, 256, 256}, {256, 256, 256}};
    int idx = 0;
    for (int blk = 0; blk < 5; ++blk) {
        for (int j = 0; j < 3; ++j) {
            if (plan[blk][j] == 0) continue;
            ++idx;
            const std::string n = "conv" + std::to_string(idx);
            L.push_back(conv(n, plan[blk][j], 3, 1, 1));
            L.push_back(bn("bn" + std::to_string(idx)));
            L.push_back(relu("relu" + std::to_string(idx)));
        }
        L.push_back(maxpool("pool" + std::to_string(blk + 1)));
    }
    L.push_back(flatten("flat"));
    L.push_back(linear("fc1", 256));
    L.push_back(relu("relu14"));
    L.push_back(linear("fc2", 256));
    L.push_back(relu("relu15"));
    L.push_back(linear("fc3", classes));
    spec.validate();
    return spec;
}

ModelSpec resnet18_cifar(int classes, std::vector<double> dropout_rates) {
    ModelSpec spec;
    spec.in_channels = 3;
    spec.in_height = 32;
    spec.in_width = 32;
    spec.class_count = classes;
    spec.dropout_rates = std::move(dropout_rates);
    auto& L = spec.layers;
    L.push_back(conv("stem.conv", 64, 3, 1, 1));
    L.push_back(bn("stem.bn"));
    L.push_back(relu("stem.relu"));
    const int stage_channels[4] = {64, 128, 256, 512};
    for (int stage = 0; stage < 4; ++stage) {
        for (int block = 0; block < 2; ++block) {
            const std::string prefix = "s" + std::to_string(stage + 1) + ".b" + std::to_string(block + 1);
            const int stride = (stage > 0 && block == 0) ? 2 : 1;
            const bool project = (stage > 0 && block == 0);
            basic_block(L, prefix, stage_channels[stage], stride, project);
        }
    }
    L.push_back(gap("gap"));
    L.push_back(linear("fc", classes));
    spec.validate();
    return spec;
}

ModelSpec by_name(const std::string& name, int classes, std::vector<double> dropout_rates) {
    if (name == "toy-cnn-8") return toy_cnn8(classes, std::move(dropout_rates));
    if (name == "mini-resnet") return mini_resnet(classes, std::move(dropout_rates));
    if (name == "mini-vgg") return mini_vgg(classes, std::move(dropout_rates));
    if (name == "resnet18-cifar") return resnet18_cifar(classes, std::move(dropout_rates));
    throw ValidationError("unknown zoo model '" + name + "'");
}

std::vector<std::string> names() {
    return {"toy-cnn-8", "mini-resnet", "mini-vgg", "resnet18-cifar"};
}

} // namespace senet::zoo
