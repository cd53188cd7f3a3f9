// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "senet/kernels.hpp"
#include "senet/mask_search.hpp"
#include "senet/trainer.hpp"
#include "senet/zoo.hpp"
#include "support/oracles.hpp"

using namespace senet;

namespace {

struct Fixture {
    ModelSpec spec = zoo::toy_cnn8(4);
    std::vector<ReluShape> shapes = relu_shapes(spec);
    std::vector<std::int64_t> caps;
    std::vector<std::string> names;

    Fixture() {
        for (const auto& s : shapes) {
            caps.push_back(s.capacity());
            names.push_back(s.name);
        }
    }

    BudgetAllocation alloc(std::int64_t budget) const {
        return allocate_uniform(budget, caps, &names);
    }
};

} // namespace

TEST_CASE("init_mask: full capacity is all ones, zero budget all zeros, seeds reproduce") {
    Fixture fx;
    std::int64_t total_cap = 0;
    for (auto c : fx.caps) total_cap += c;

    ReluMask full = init_mask(fx.alloc(total_cap), fx.shapes, Granularity::Pixel, 7);
    for (const auto& l : full.layers) CHECK(l.ones() == l.capacity());

    ReluMask empty = init_mask(fx.alloc(0), fx.shapes, Granularity::Pixel, 7);
    CHECK(empty.total_ones() == 0);

    ReluMask a = init_mask(fx.alloc(3664), fx.shapes, Granularity::Pixel, 42);
    ReluMask b = init_mask(fx.alloc(3664), fx.shapes, Granularity::Pixel, 42);
    CHECK(serialize_mask(a) == serialize_mask(b));
    ReluMask c = init_mask(fx.alloc(3664), fx.shapes, Granularity::Pixel, 43);
    CHECK(serialize_mask(a) != serialize_mask(c));
    // exact per-layer counts
    const BudgetAllocation alloc = fx.alloc(3664);
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        CHECK(a.layers[l].ones() == alloc.per_layer[l]);
    }
}

TEST_CASE("init_mask channel granularity fills whole channels") {
    Fixture fx;
    ReluMask m = init_mask(fx.alloc(3664), fx.shapes, Granularity::Channel, 3);
    const BudgetAllocation alloc = fx.alloc(3664);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const MaskLayer& layer = m.layers[l];
        const std::int64_t hw = static_cast<std::int64_t>(layer.h) * layer.w;
        const std::int64_t rc = (alloc.per_layer[l] + hw - 1) / hw;
        CHECK(layer.ones() == rc * hw);
        for (int ch = 0; ch < layer.c; ++ch) {
            std::int64_t ones = 0;
            for (int i = 0; i < hw; ++i) ones += layer.bits[static_cast<std::size_t>(ch * hw + i)];
            CHECK((ones == 0 || ones == hw));
        }
    }
}

TEST_CASE("accumulate_diff arithmetic") {
    std::vector<ReluShape> shapes = {{"r", 1, 2, 2}};
    DiffAccumulator acc = DiffAccumulator::for_shapes(shapes);

    Tensor ar({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4});
    // identical maps add zeros
    accumulate_diff(acc, {make_input(ar)}, {ar});
    for (double v : acc.sums[0]) CHECK(v == doctest::Approx(0.0));

    // pr = ar + 1 everywhere: one batch adds mean diff 1
    Tensor pr({2, 4}, {2, 3, 4, 5, 2, 3, 4, 5});
    acc.reset();
    accumulate_diff(acc, {make_input(pr)}, {ar});
    CHECK(acc.batches == 1);
    for (double v : acc.sums[0]) CHECK(v == doctest::Approx(1.0));

    // second batch with diff 3 -> epoch mean (1+3)/2 = 2
    Tensor pr3({2, 4}, {4, 5, 6, 7, 4, 5, 6, 7});
    accumulate_diff(acc, {make_input(pr3)}, {ar});
    for (double v : acc.sums[0]) {
        CHECK(v / static_cast<double>(acc.batches) == doctest::Approx(2.0));
    }
    CHECK_THROWS_AS(accumulate_diff(acc, {make_input(Tensor::zeros({2, 3}))}, {ar}),
                    ValidationError);
}

TEST_CASE("rerank_mask picks top diffs with index tie-breaks") {
    std::vector<ReluShape> shapes = {{"r", 1, 1, 4}};
    std::vector<std::int64_t> caps = {4};
    std::vector<std::string> names = {"r"};
    BudgetAllocation alloc = allocate(2, {1.0}, caps, &names);

    DiffAccumulator acc = DiffAccumulator::for_shapes(shapes);
    acc.batches = 1;
    acc.sums[0] = {5, 1, 3, 2};
    ReluMask top = rerank_mask(acc, alloc, shapes, Granularity::Pixel);
    CHECK(top.layers[0].bits == std::vector<std::uint8_t>{1, 0, 1, 0});

    acc.sums[0] = {7, 7, 7, 7};   // all equal: ascending index wins
    ReluMask ties = rerank_mask(acc, alloc, shapes, Granularity::Pixel);
    CHECK(ties.layers[0].bits == std::vector<std::uint8_t>{1, 1, 0, 0});
}

TEST_CASE("rerank_mask channel mode keeps the strongest channels") {
    std::vector<ReluShape> shapes = {{"r", 2, 2, 2}};   // 2 channels of 2x2
    std::vector<std::int64_t> caps = {8};
    std::vector<std::string> names = {"r"};
    BudgetAllocation alloc = allocate(4, {1.0}, caps, &names);   // r_c = ceil(4/4) = 1

    DiffAccumulator acc = DiffAccumulator::for_shapes(shapes);
    acc.batches = 1;
    acc.sums[0] = {0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1};   // channel 0 mean 0.9
    ReluMask m = rerank_mask(acc, alloc, shapes, Granularity::Channel);
    CHECK(m.layers[0].bits == std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0, 0, 0});
}

TEST_CASE("hamming distance examples") {
    auto mk = [](std::vector<std::uint8_t> bits) {
        ReluMask m;
        MaskLayer l;
        l.name = "r";
        l.h = 1;
        l.w = 1;
        l.c = static_cast<int>(bits.size());
        l.bits = std::move(bits);
        m.layers.push_back(l);
        return m;
    };
    // identical -> 0 -> converged
    std::vector<std::uint8_t> base(100, 0);
    for (int i = 0; i < 50; ++i) base[static_cast<std::size_t>(i)] = 1;
    CHECK(mask_hamming_distance(mk(base), mk(base)) == 0.0);
    CHECK(hamming_converged(mk(base), mk(base), 0.05));

    // 100 ones, 4 moved -> 0.04 < 0.05
    std::vector<std::uint8_t> a(200, 0), b(200, 0);
    for (int i = 0; i < 100; ++i) a[static_cast<std::size_t>(i)] = 1;
    for (int i = 0; i < 96; ++i) b[static_cast<std::size_t>(i)] = 1;
    for (int i = 100; i < 104; ++i) b[static_cast<std::size_t>(i)] = 1;
    CHECK(mask_hamming_distance(mk(a), mk(b)) == doctest::Approx(0.04));
    CHECK(hamming_converged(mk(a), mk(b), 0.05));

    // 6 moved -> 0.06 >= 0.05
    std::vector<std::uint8_t> c(200, 0);
    for (int i = 0; i < 94; ++i) c[static_cast<std::size_t>(i)] = 1;
    for (int i = 100; i < 106; ++i) c[static_cast<std::size_t>(i)] = 1;
    CHECK(mask_hamming_distance(mk(a), mk(c)) == doctest::Approx(0.06));
    CHECK(!hamming_converged(mk(a), mk(c), 0.05));

    // symmetry and budget mismatch
    CHECK(mask_hamming_distance(mk(a), mk(c)) == mask_hamming_distance(mk(c), mk(a)));
    std::vector<std::uint8_t> d(200, 1);
    CHECK_THROWS_AS(mask_hamming_distance(mk(a), mk(d)), ValidationError);
}

TEST_CASE("run_mask_search contracts on a small model") {
    if (kernels::avx2_supported()) kernels::set_backend(kernels::Backend::Avx2);
    const ModelSpec spec = zoo::mini_resnet(3);
    const auto shapes = relu_shapes(spec);
    std::vector<std::int64_t> caps;
    std::vector<std::string> names;
    std::int64_t total_cap = 0;
    for (const auto& s : shapes) {
        caps.push_back(s.capacity());
        names.push_back(s.name);
        total_cap += s.capacity();
    }
    Dataset pool = synth_generate(3, 40, 3, 16, 16, 0.3, 17);
    TrainValSplit split = split_train_val(pool, 0.15, 17);

    TrainConfig tcfg;
    tcfg.epochs_stage1 = 2;
    tcfg.batch_size = 24;
    tcfg.seed = 17;
    Model ar = train_ar(spec, split.train, split.val, tcfg, nullptr);

    MaskSearchConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 24;
    cfg.seed = 17;

    SUBCASE("full-capacity budget converges at epoch 1 with an all-ones mask") {
        BudgetAllocation alloc = allocate_uniform(total_cap, caps, &names);
        MaskSearchResult res = run_mask_search(ar, alloc, split.train, split.val, cfg);
        CHECK(res.converged);
        CHECK(res.history.size() == 1);
        CHECK(res.history[0].hamming == 0.0);
        CHECK(res.mask.total_ones() == total_cap);
    }

    SUBCASE("epsilon = 1.0 stops after exactly one rerank epoch") {
        cfg.epsilon = 1.0;
        BudgetAllocation alloc = allocate_uniform(total_cap / 4, caps, &names);
        MaskSearchResult res = run_mask_search(ar, alloc, split.train, split.val, cfg);
        CHECK(res.history.size() == 1);
    }

    SUBCASE("ones counts survive reranks; same seed gives identical masks") {
        cfg.epsilon = 0.0;   // never converge early: exercise every epoch
        BudgetAllocation alloc = allocate_uniform(total_cap / 4, caps, &names);
        MaskSearchResult res = run_mask_search(ar, alloc, split.train, split.val, cfg);
        for (std::size_t l = 0; l < res.mask.layers.size(); ++l) {
            CHECK(res.mask.layers[l].ones() == alloc.per_layer[l]);
        }
        CHECK(static_cast<int>(res.history.size()) == cfg.epochs);
        CHECK(res.best_accuracy >= 0.0);

        MaskSearchResult res2 = run_mask_search(ar, alloc, split.train, split.val, cfg);
        CHECK(serialize_mask(res.mask) == serialize_mask(res2.mask));
        CHECK(serialize_checkpoint(res.best_snapshot) == serialize_checkpoint(res2.best_snapshot));
    }

    kernels::set_backend(kernels::Backend::Scalar);
}
