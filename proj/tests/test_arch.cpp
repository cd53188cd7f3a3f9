// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <numeric>

#include "senet/checkpoint.hpp"
#include "senet/zoo.hpp"
#include "support/oracles.hpp"

using namespace senet;
using namespace senet::testing;

namespace {

std::int64_t capacity_sum(const ModelSpec& spec) {
    std::int64_t sum = 0;
    for (const auto& s : relu_shapes(spec)) sum += s.capacity();
    return sum;
}

} // namespace

TEST_CASE("single linear layer spec has O x F parameters") {
    ModelSpec spec;
    spec.in_channels = 3;
    spec.in_height = 2;
    spec.in_width = 2;
    spec.class_count = 5;
    LayerSpec flat;
    flat.kind = LayerKind::Flatten;
    flat.name = "flat";
    LayerSpec fc;
    fc.kind = LayerKind::Linear;
    fc.name = "fc";
    fc.features = 5;
    spec.layers = {flat, fc};
    Model m = Model::build(spec, 1);
    REQUIRE(m.weight_params().size() == 1);
    CHECK(m.weight_params()[0]->value.numel() == 5u * 12u);
}

TEST_CASE("toy-cnn-8 structure") {
    const ModelSpec spec = zoo::toy_cnn8(4);
    const auto shapes = relu_shapes(spec);
    REQUIRE(shapes.size() == 8);
    // hand tally: 2x4096 + 2x2048 + 2x1024 + 256 + 64
    CHECK(capacity_sum(spec) == 14656);
    Model m = Model::build(spec, 3);
    std::size_t weight_count = 0;
    for (const auto& w : m.weight_params()) weight_count += w->value.numel();
    CHECK(weight_count == 125360u);   // ~120k weights
}

TEST_CASE("CIFAR ResNet18: 17 ReLU layers in 5 stages, 557,056 capacity") {
    const ModelSpec spec = zoo::resnet18_cifar(100);
    const auto shapes = relu_shapes(spec);
    REQUIRE(shapes.size() == 17);
    // per-stage tallies from the BasicBlock layout
    std::int64_t stem = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    for (const auto& s : shapes) {
        if (s.name.rfind("stem", 0) == 0) stem += s.capacity();
        if (s.name.rfind("s1", 0) == 0) s1 += s.capacity();
        if (s.name.rfind("s2", 0) == 0) s2 += s.capacity();
        if (s.name.rfind("s3", 0) == 0) s3 += s.capacity();
        if (s.name.rfind("s4", 0) == 0) s4 += s.capacity();
    }
    CHECK(stem == 65536);
    CHECK(s1 == 262144);
    CHECK(s2 == 131072);
    CHECK(s3 == 65536);
    CHECK(s4 == 32768);
    CHECK(capacity_sum(spec) == 557056);
}

TEST_CASE("mini-vgg capacity matches the hand count") {
    const ModelSpec spec = zoo::mini_vgg(10);
    const auto shapes = relu_shapes(spec);
    REQUIRE(shapes.size() == 15);
    // 2x32768 + 2x16384 + 3x8192 + 3x4096 + 3x1024 + 256 + 256
    CHECK(capacity_sum(spec) == 138752);
}

TEST_CASE("dropout set [0.5, 1.0] builds two BN states per BN layer") {
    const ModelSpec spec = zoo::toy_cnn8(4, {0.5, 1.0});
    Model m = Model::build(spec, 1);
    const Checkpoint ckpt = m.to_checkpoint();
    int bn1_states = 0;
    for (const auto& [name, t] : ckpt.entries) {
        if (name.rfind("bn1@", 0) == 0 && name.find(".gamma") != std::string::npos) ++bn1_states;
    }
    CHECK(bn1_states == 2);
    CHECK(ckpt.find("bn1@0.5.gamma") != nullptr);
    CHECK(ckpt.find("bn1@1.gamma") != nullptr);
}

TEST_CASE("relu_shapes follows forward order") {
    const ModelSpec spec = zoo::toy_cnn8(4);
    const auto shapes = relu_shapes(spec);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        CHECK(shapes[i].name == "relu" + std::to_string(i + 1));
    }
}

TEST_CASE("relu-parameter pairing picks the nearest preceding conv/linear") {
    const ModelSpec spec = zoo::mini_resnet(4);
    const auto pairing = relu_parameter_pairing(spec);
    REQUIRE(pairing.size() == 7);
    CHECK(pairing[0] == std::pair<std::string, std::string>{"stem.relu", "stem.conv"});
    CHECK(pairing[1] == std::pair<std::string, std::string>{"s1.b1.relu1", "s1.b1.conv1"});
    CHECK(pairing[2] == std::pair<std::string, std::string>{"s1.b1.relu2", "s1.b1.conv2"});
    // blocks with projection: relu2 pairs with the downsample conv (nearest)
    CHECK(pairing[4] == std::pair<std::string, std::string>{"s2.b1.relu2", "s2.b1.down.conv"});
}

TEST_CASE("forward at d_r=1.0 is bit-identical to a single-width model") {
    const ModelSpec two_rate = zoo::toy_cnn8(4, {0.5, 1.0});
    Model m2 = Model::build(two_rate, 9);

    const ModelSpec one_rate = zoo::toy_cnn8(4, {1.0});
    Model m1 = Model::build(one_rate, 9);
    // transplant the two-rate model's weights + rate-1.0 BN state
    Checkpoint donor = m2.to_checkpoint();
    Checkpoint patched;
    for (const auto& [name, t] : donor.entries) {
        if (name.find("@0.5") != std::string::npos) continue;
        patched.add(name, t);
    }
    m1.load_state(patched);

    Rng rng(77);
    Tensor batch({3, 3, 16, 16});
    fill_uniform(batch, rng, 0.0f, 1.0f);
    ForwardResult f2 = m2.forward(batch, 1.0, false);
    ForwardResult f1 = m1.forward(batch, 1.0, false);
    REQUIRE(f1.logits->value.numel() == f2.logits->value.numel());
    CHECK(std::memcmp(f1.logits->value.data(), f2.logits->value.data(),
                      f1.logits->value.numel() * sizeof(float)) == 0);
    REQUIRE(f1.post_relu.size() == f2.post_relu.size());
    for (std::size_t i = 0; i < f1.post_relu.size(); ++i) {
        CHECK(std::memcmp(f1.post_relu[i]->value.data(), f2.post_relu[i]->value.data(),
                          f1.post_relu[i]->value.numel() * sizeof(float)) == 0);
    }
}

TEST_CASE("d_r=0.5 keeps only the first half of the channels") {
    const ModelSpec spec = zoo::toy_cnn8(4, {0.5, 1.0});
    Model m = Model::build(spec, 5);
    Rng rng(6);
    Tensor batch({2, 3, 16, 16});
    fill_uniform(batch, rng, 0.0f, 1.0f);
    ForwardResult half = m.forward(batch, 0.5, false);
    // conv1 has 16 channels; the half model's first post-ReLU map has 8
    CHECK(half.post_relu[0]->value.dim(1) == 8);
    CHECK(half.post_relu.back()->value.dim(1) == 32);   // fc1: 64 -> 32
    CHECK(half.logits->value.dim(1) == 4);              // classifier stays full
}

TEST_CASE("prefix nesting: the half-width model touches only prefix weights") {
    const ModelSpec spec = zoo::toy_cnn8(4, {0.5, 1.0});
    Model m = Model::build(spec, 5);
    Rng rng(8);
    Tensor batch({4, 3, 16, 16});
    fill_uniform(batch, rng, 0.0f, 1.0f);
    const std::vector<int> labels = {0, 1, 2, 3};

    zero_grad(m.parameters());
    ForwardResult fwd = m.forward(batch, 0.5, true);
    backward(ops::ce_loss(fwd.logits, labels));

    bool any_inside = false;
    for (const auto& w : m.weight_params()) {
        if (w->name != "conv3.weight") continue;
        // conv3: 32 x 16 x 3 x 3; at 0.5 only out<16, in<8 may be touched
        const int co = w->value.dim(0), ci = w->value.dim(1), k = w->value.dim(2);
        for (int o = 0; o < co; ++o) {
            for (int c = 0; c < ci; ++c) {
                for (int i = 0; i < k * k; ++i) {
                    const float g = w->grad[(static_cast<std::size_t>(o) * ci + c) * k * k + i];
                    if (o >= 16 || c >= 8) {
                        CHECK(g == 0.0f);
                    } else if (g != 0.0f) {
                        any_inside = true;
                    }
                }
            }
        }
    }
    CHECK(any_inside);
}

TEST_CASE("model spec JSON round trip is byte stable") {
    const ModelSpec spec = zoo::mini_resnet(7, {0.25, 1.0});
    const std::string text1 = model_spec_to_json_text(spec);
    const ModelSpec parsed = model_spec_from_json_text(text1);
    const std::string text2 = model_spec_to_json_text(parsed);
    CHECK(text1 == text2);
    CHECK(parsed.class_count == 7);
    CHECK(parsed.dropout_rates == std::vector<double>{0.25, 1.0});
    CHECK(relu_shapes(parsed).size() == relu_shapes(spec).size());
}

TEST_CASE("spec validation failures name the offending layer") {
    ModelSpec spec = zoo::toy_cnn8(4);
    spec.layers[3].name = "conv1";   // duplicate
    CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("conv1"), ValidationError);

    ModelSpec spec2 = zoo::toy_cnn8(4);
    spec2.layers[0].kernel = 99;
    CHECK_THROWS_WITH_AS(spec2.validate(), doctest::Contains("conv1"), ValidationError);

    ModelSpec spec3 = zoo::toy_cnn8(4);
    spec3.dropout_rates = {0.5};   // missing 1.0
    CHECK_THROWS_AS(spec3.validate(), ValidationError);

    CHECK_THROWS_AS(model_spec_from_json_text("{\"classes\":4}"), ValidationError);
    CHECK_THROWS_AS(model_spec_from_json_text(
                        "{\"input_shape\":[3,4,4],\"classes\":2,\"layers\":[],\"bogus\":1}"),
                    ValidationError);
}

TEST_CASE("build/forward determinism: identical seeds give identical bytes") {
    const ModelSpec spec = zoo::toy_cnn8(4);
    Model a = Model::build(spec, 31);
    Model b = Model::build(spec, 31);
    const auto bytes_a = serialize_checkpoint(a.to_checkpoint());
    const auto bytes_b = serialize_checkpoint(b.to_checkpoint());
    REQUIRE(bytes_a.size() == bytes_b.size());
    CHECK(std::memcmp(bytes_a.data(), bytes_b.data(), bytes_a.size()) == 0);

    Rng rng(12);
    Tensor batch({2, 3, 16, 16});
    fill_uniform(batch, rng, 0.0f, 1.0f);
    ForwardResult fa = a.forward(batch, 1.0, false);
    ForwardResult fb = b.forward(batch, 1.0, false);
    CHECK(std::memcmp(fa.logits->value.data(), fb.logits->value.data(),
                      fa.logits->value.numel() * sizeof(float)) == 0);
}

TEST_CASE("mask binding validates dimensions") {
    const ModelSpec spec = zoo::toy_cnn8(4);
    Model m = Model::build(spec, 1);
    ReluMask mask;
    mask.granularity = Granularity::Pixel;
    for (const auto& s : relu_shapes(spec)) {
        MaskLayer layer;
        layer.name = s.name;
        layer.h = s.h;
        layer.w = s.w;
        layer.c = s.c;
        layer.bits.assign(static_cast<std::size_t>(s.capacity()), 1);
        mask.layers.push_back(layer);
    }
    m.bind_mask(&mask);   // fits
    mask.layers[0].c += 1;
    mask.layers[0].bits.resize(static_cast<std::size_t>(mask.layers[0].capacity()), 1);
    CHECK_THROWS_AS(m.bind_mask(&mask), ValidationError);
}

TEST_CASE("shipped golden spec files match the zoo builders") {
    const std::pair<std::string, ModelSpec> golden[] = {
        {"toy-cnn-8.json", zoo::toy_cnn8(4)},
        {"mini-resnet.json", zoo::mini_resnet(4)},
        {"mini-vgg.json", zoo::mini_vgg(10)},
        {"resnet18-cifar.json", zoo::resnet18_cifar(100)},
    };
    for (const auto& [file, spec] : golden) {
        const ModelSpec shipped = load_model_spec(std::string(SENET_SOURCE_DIR) +
                                                  "/configs/models/" + file);
        CHECK(model_spec_to_json_text(shipped) == model_spec_to_json_text(spec));
    }
}

TEST_CASE("unsupported dropout rate is rejected") {
    const ModelSpec spec = zoo::toy_cnn8(4, {1.0});
    Model m = Model::build(spec, 1);
    Tensor batch = Tensor::zeros({1, 3, 16, 16});
    CHECK_THROWS_WITH_AS(m.forward(batch, 0.5, false), doctest::Contains("rate not supported"),
                         ValidationError);
}
