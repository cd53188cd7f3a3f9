// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "senet/ops.hpp"
#include "support/oracles.hpp"

using namespace senet;
using namespace senet::ops;
using namespace senet::testing;

namespace {

std::vector<float> random_proj(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = rng.next_uniform(-1.0f, 1.0f);
    return v;
}

} // namespace

TEST_CASE("conv2d identity kernel") {
    Var x = make_input(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
    Var w = make_param(Tensor({1, 1, 1, 1}, {1}), "w");
    Var y = conv2d(x, w, 1, 0);
    CHECK(y->value.shape() == std::vector<int>{1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) CHECK(y->value[i] == doctest::Approx(x->value[i]));
}

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
    Var x = make_input(Tensor::full({1, 1, 3, 3}, 1.0f));
    Var w = make_param(Tensor::full({1, 1, 3, 3}, 1.0f), "w");
    Var y = conv2d(x, w, 1, 0);
    CHECK(y->value.shape() == std::vector<int>{1, 1, 1, 1});
    CHECK(y->value[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d matches direct-summation oracle") {
    Rng rng(101);
    Tensor x({1, 2, 5, 5});
    Tensor w({3, 2, 3, 3});
    fill_uniform(x, rng);
    fill_uniform(w, rng);
    Var y = conv2d(make_input(x), make_param(w, "w"), 2, 1);
    Tensor ref = naive_conv2d(x, w, 2, 1);
    REQUIRE(y->value.shape() == ref.shape());
    for (std::size_t i = 0; i < ref.numel(); ++i) {
        CHECK(std::abs(y->value[i] - ref[i]) <= 1e-5f);
    }
}

TEST_CASE("conv2d shape errors") {
    Var x = make_input(Tensor::zeros({1, 3, 4, 4}));
    Var w = make_param(Tensor::zeros({2, 2, 3, 3}), "w");   // wrong Cin
    CHECK_THROWS_AS(conv2d(x, w, 1, 1), ValidationError);
    Var w2 = make_param(Tensor::zeros({2, 3, 7, 7}), "w2");   // kernel larger than input+pad
    CHECK_THROWS_AS(conv2d(x, w2, 1, 1), ValidationError);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(102);
    Tensor x({2, 2, 4, 4});
    Tensor w({3, 2, 3, 3});
    fill_uniform(x, rng);
    fill_uniform(w, rng);
    const std::size_t out_n = 2 * 3 * 4 * 4;
    const auto proj = random_proj(out_n, rng);

    Var vx = make_param(x, "x");
    Var vw = make_param(w, "w");
    Var loss = weighted_sum(conv2d(vx, vw, 1, 1), proj);
    backward(loss);

    auto loss_fn = [&]() {
        Var lx = make_input(x);
        Var lw = make_param(w, "w");
        Var y = conv2d(lx, lw, 1, 1);
        double acc = 0.0;
        for (std::size_t i = 0; i < y->value.numel(); ++i) acc += static_cast<double>(proj[i]) * y->value[i];
        return acc;
    };
    CHECK(fd_check(loss_fn, w, vw->grad).rel_err <= 1e-3);
    auto loss_fn_x = [&]() {
        Var lx = make_param(x, "x");
        Var lw = make_input(w);
        Var y = conv2d(lx, lw, 1, 1);
        double acc = 0.0;
        for (std::size_t i = 0; i < y->value.numel(); ++i) acc += static_cast<double>(proj[i]) * y->value[i];
        return acc;
    };
    CHECK(fd_check(loss_fn_x, x, vx->grad).rel_err <= 1e-3);
}

TEST_CASE("linear identity and zero weights") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Var y = linear(make_input(x), make_param(eye, "w"));
    for (int i = 0; i < 6; ++i) CHECK(y->value[i] == doctest::Approx(x[i]));

    Var z = linear(make_input(x), make_param(Tensor::zeros({4, 3}), "w0"));
    for (std::size_t i = 0; i < z->value.numel(); ++i) CHECK(z->value[i] == 0.0f);
}

TEST_CASE("linear matches triple-loop oracle") {
    Rng rng(103);
    Tensor x({2, 3});
    Tensor w({4, 3});
    fill_uniform(x, rng);
    fill_uniform(w, rng);
    Var y = linear(make_input(x), make_param(w, "w"));
    Tensor ref = naive_linear(x, w);
    for (std::size_t i = 0; i < ref.numel(); ++i) {
        CHECK(std::abs(y->value[i] - ref[i]) <= 1e-5f);
    }
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(104);
    Tensor x({3, 6});
    Tensor w({5, 6});
    fill_uniform(x, rng);
    fill_uniform(w, rng);
    const auto proj = random_proj(15, rng);
    Var vx = make_param(x, "x");
    Var vw = make_param(w, "w");
    backward(weighted_sum(linear(vx, vw), proj));
    auto loss_fn = [&]() {
        Var y = linear(make_param(x, "x"), make_param(w, "w"));
        double acc = 0.0;
        for (std::size_t i = 0; i < y->value.numel(); ++i) acc += static_cast<double>(proj[i]) * y->value[i];
        return acc;
    };
    CHECK(fd_check(loss_fn, x, vx->grad).rel_err <= 1e-3);
    CHECK(fd_check(loss_fn, w, vw->grad).rel_err <= 1e-3);
}

TEST_CASE("batchnorm eval with identity statistics passes input through") {
    Rng rng(105);
    Tensor x({2, 3, 2, 2});
    fill_uniform(x, rng);
    BnState st = make_bn_state(3, "bn");
    Var y = batchnorm(make_input(x), st, /*training=*/false);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(y->value[i] == doctest::Approx(x[i]).epsilon(1e-4));
    }
}

TEST_CASE("batchnorm train on constant input gives zero mean") {
    Tensor x = Tensor::full({4, 2, 3, 3}, 2.5f);
    BnState st = make_bn_state(2, "bn");
    Var y = batchnorm(make_input(x), st, /*training=*/true);
    double mean = 0.0;
    for (std::size_t i = 0; i < y->value.numel(); ++i) mean += y->value[i];
    mean /= static_cast<double>(y->value.numel());
    CHECK(std::abs(mean) <= 1e-6);
}

TEST_CASE("batchnorm width tags keep disjoint running statistics") {
    Rng rng(106);
    Tensor x({4, 3, 2, 2});
    fill_uniform(x, rng, 0.0f, 2.0f);
    BnState tag_a = make_bn_state(3, "bn@0.5");
    BnState tag_b = make_bn_state(3, "bn@1");
    const Tensor a_mean_before = tag_a.running_mean;
    const Tensor a_var_before = tag_a.running_var;
    batchnorm(make_input(x), tag_b, /*training=*/true);
    CHECK(std::memcmp(tag_a.running_mean.data(), a_mean_before.data(),
                      a_mean_before.numel() * sizeof(float)) == 0);
    CHECK(std::memcmp(tag_a.running_var.data(), a_var_before.data(),
                      a_var_before.numel() * sizeof(float)) == 0);
    // and tag B actually moved
    bool moved = false;
    for (std::size_t i = 0; i < tag_b.running_mean.numel(); ++i) {
        if (tag_b.running_mean[i] != 0.0f) moved = true;
    }
    CHECK(moved);
}

TEST_CASE("batchnorm gradients match finite differences") {
    Rng rng(107);
    Tensor x({3, 2, 3, 3});
    fill_uniform(x, rng);
    const auto proj = random_proj(x.numel(), rng);

    for (bool training : {true, false}) {
        CAPTURE(training);
        Tensor gamma({2}, {1.2f, 0.8f});
        Tensor beta({2}, {0.1f, -0.2f});
        auto build = [&](Tensor& gx, Tensor& gg, Tensor& gb, bool want_grads) {
            BnState st = make_bn_state(2, "bn");
            st.gamma->value = gamma;
            st.beta->value = beta;
            st.running_mean = Tensor({2}, {0.2f, -0.1f});
            st.running_var = Tensor({2}, {1.5f, 0.7f});
            Var vx = make_param(x, "x");
            Var y = batchnorm(vx, st, training);
            Var loss = weighted_sum(y, proj);
            if (want_grads) {
                backward(loss);
                gx = vx->grad;
                gg = st.gamma->grad;
                gb = st.beta->grad;
            }
            return static_cast<double>(loss->value[0]);
        };
        Tensor gx, gg, gb;
        build(gx, gg, gb, true);
        auto loss_fn = [&]() {
            Tensor a, b, c;
            return build(a, b, c, false);
        };
        CHECK(fd_check(loss_fn, x, gx).rel_err <= 1e-3);
        CHECK(fd_check(loss_fn, gamma, gg).rel_err <= 1e-3);
        CHECK(fd_check(loss_fn, beta, gb).rel_err <= 1e-3);
    }
}

TEST_CASE("masked_relu spec examples") {
    const std::uint8_t m11[] = {1, 1};
    const std::uint8_t m00[] = {0, 0};
    const std::uint8_t m10[] = {1, 0};
    Var a = masked_relu(make_input(Tensor({1, 2}, {-1, 2})), m11, 2);
    CHECK(a->value[0] == 0.0f);
    CHECK(a->value[1] == 2.0f);
    Var b = masked_relu(make_input(Tensor({1, 2}, {-1, 2})), m00, 2);
    CHECK(b->value[0] == -1.0f);
    CHECK(b->value[1] == 2.0f);
    Var c = masked_relu(make_input(Tensor({1, 2}, {-3, -3})), m10, 2);
    CHECK(c->value[0] == 0.0f);
    CHECK(c->value[1] == -3.0f);
}

TEST_CASE("masked_relu all-ones equals plain ReLU, all-zeros equals identity (bit-exact)") {
    Rng rng(108);
    Tensor x({2, 3, 4, 4});
    fill_uniform(x, rng);
    x.data()[0] = 0.0f;
    x.data()[1] = -0.0f;
    const std::size_t per_sample = 3 * 4 * 4;
    std::vector<std::uint8_t> ones(per_sample, 1), zeros(per_sample, 0);

    Var y1 = masked_relu(make_input(x), ones.data(), per_sample);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float expect = x[i] < 0.0f ? 0.0f : x[i];
        CHECK(std::memcmp(&y1->value[i], &expect, sizeof(float)) == 0);
    }
    Var y0 = masked_relu(make_input(x), zeros.data(), per_sample);
    CHECK(std::memcmp(y0->value.data(), x.data(), x.numel() * sizeof(float)) == 0);
}

TEST_CASE("masked_relu gradient gating") {
    Rng rng(109);
    Tensor x({2, 10});
    fill_uniform(x, rng);
    std::vector<std::uint8_t> mask(10);
    for (auto& m : mask) m = static_cast<std::uint8_t>(rng.next_below(2));
    const auto proj = random_proj(20, rng);
    Var vx = make_param(x, "x");
    backward(weighted_sum(masked_relu(vx, mask.data(), 10), proj));
    auto loss_fn = [&]() {
        Var y = masked_relu(make_param(x, "x"), mask.data(), 10);
        double acc = 0.0;
        for (std::size_t i = 0; i < y->value.numel(); ++i) acc += static_cast<double>(proj[i]) * y->value[i];
        return acc;
    };
    CHECK(fd_check(loss_fn, x, vx->grad).rel_err <= 1e-3);
}

TEST_CASE("pooling values and gradients") {
    Tensor x({1, 1, 4, 4}, {1, 3, 5, 2, 2, 4, 1, 6, 7, 8, 4, 9, 3, 1, 2, 5});
    Var mp = maxpool2d(make_input(x), 2, 2);
    CHECK(mp->value.shape() == std::vector<int>{1, 1, 2, 2});
    CHECK(mp->value[0] == 4.0f);
    CHECK(mp->value[1] == 6.0f);
    CHECK(mp->value[2] == 8.0f);
    CHECK(mp->value[3] == 9.0f);

    Var gp = global_avgpool(make_input(x));
    CHECK(gp->value.shape() == std::vector<int>{1, 1});
    CHECK(gp->value[0] == doctest::Approx(63.0f / 16.0f));

    Rng rng(110);
    Tensor xr({2, 2, 4, 4});
    fill_uniform(xr, rng);
    const auto proj = random_proj(2 * 2 * 2 * 2, rng);
    Var vx = make_param(xr, "x");
    backward(weighted_sum(maxpool2d(vx, 2, 2), proj));
    auto loss_fn = [&]() {
        Var y = maxpool2d(make_param(xr, "x"), 2, 2);
        double acc = 0.0;
        for (std::size_t i = 0; i < y->value.numel(); ++i) acc += static_cast<double>(proj[i]) * y->value[i];
        return acc;
    };
    CHECK(fd_check(loss_fn, xr, vx->grad).rel_err <= 1e-3);

    const auto proj2 = random_proj(4, rng);
    Var vx2 = make_param(xr, "x");
    backward(weighted_sum(global_avgpool(vx2), proj2));
    auto loss_fn2 = [&]() {
        Var y = global_avgpool(make_param(xr, "x"));
        double acc = 0.0;
        for (std::size_t i = 0; i < y->value.numel(); ++i) acc += static_cast<double>(proj2[i]) * y->value[i];
        return acc;
    };
    CHECK(fd_check(loss_fn2, xr, vx2->grad).rel_err <= 1e-3);
}

TEST_CASE("ce_loss analytic values") {
    // uniform logits, K = 4 -> ln 4
    Var u = ce_loss(make_input(Tensor::zeros({2, 4})), {1, 3});
    CHECK(u->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-5));
    // huge correct logit -> ~0
    Tensor conf({1, 3}, {50.0f, 0.0f, 0.0f});
    Var c = ce_loss(make_input(conf), {0});
    CHECK(c->value[0] <= 1e-6f);
    // label validation
    CHECK_THROWS_AS(ce_loss(make_input(Tensor::zeros({1, 3})), {3}), ValidationError);
    CHECK_THROWS_AS(ce_loss(make_input(Tensor::zeros({1, 3})), {-1}), ValidationError);
}

TEST_CASE("ce_loss gradient matches finite differences") {
    Rng rng(111);
    Tensor logits({3, 5});
    fill_uniform(logits, rng, -2.0f, 2.0f);
    const std::vector<int> labels = {0, 3, 2};
    Var v = make_param(logits, "z");
    backward(ce_loss(v, labels));
    auto loss_fn = [&]() {
        return static_cast<double>(ce_loss(make_param(logits, "z"), labels)->value[0]);
    };
    CHECK(fd_check(loss_fn, logits, v->grad, 5e-3f).rel_err <= 1e-3);
}

TEST_CASE("kl_loss spec examples") {
    Tensor t({1, 2}, {2, 0});
    CHECK(kl_loss(t, make_input(t), 1.0f)->value[0] == doctest::Approx(0.0f).epsilon(1e-6));

    Tensor s({1, 2}, {0, 2});
    // p_t = (0.8808, 0.1192); KL = (p0 - p1) * 2 = 1.523188
    CHECK(kl_loss(t, make_input(s), 1.0f)->value[0] == doctest::Approx(1.5232).epsilon(1e-3));

    // loss decreases monotonically in the temperature on a sampled pair
    Rng rng(112);
    Tensor tl({2, 6}), sl({2, 6});
    fill_uniform(tl, rng, -3.0f, 3.0f);
    fill_uniform(sl, rng, -3.0f, 3.0f);
    float prev = 1e30f;
    for (float rho : {1.0f, 4.0f, 16.0f, 64.0f}) {
        const float cur = kl_loss(tl, make_input(sl), rho)->value[0];
        CHECK(cur < prev);
        prev = cur;
    }
    CHECK(prev >= 0.0f);
    CHECK_THROWS_AS(kl_loss(t, make_input(s), 0.0f), ValidationError);
}

TEST_CASE("kl_loss gradient matches finite differences") {
    Rng rng(113);
    Tensor t({3, 4}), s({3, 4});
    fill_uniform(t, rng, -2.0f, 2.0f);
    fill_uniform(s, rng, -2.0f, 2.0f);
    Var v = make_param(s, "z");
    backward(kl_loss(t, v, 4.0f));
    auto loss_fn = [&]() {
        return static_cast<double>(kl_loss(t, make_param(s, "z"), 4.0f)->value[0]);
    };
    CHECK(fd_check(loss_fn, s, v->grad, 5e-3f).rel_err <= 1e-3);
}

TEST_CASE("pram_loss spec examples") {
    // identical maps -> 0
    Rng rng(114);
    Tensor m({2, 8});
    fill_uniform(m, rng);
    CHECK(pram_loss({make_input(m)}, {m})->value[0] == doctest::Approx(0.0f).epsilon(1e-6));

    // single pair (1,0) vs (0,1) -> sqrt(2)
    Tensor u({1, 2}, {1, 0});
    Tensor a({1, 2}, {0, 1});
    CHECK(pram_loss({make_input(u)}, {a})->value[0] ==
          doctest::Approx(std::sqrt(2.0)).epsilon(1e-5));

    // scale invariance: v vs 3v -> 0
    Tensor v3({1, 4}, {3, -6, 9, 12});
    Tensor v1({1, 4}, {1, -2, 3, 4});
    CHECK(pram_loss({make_input(v1)}, {v3})->value[0] == doctest::Approx(0.0f).epsilon(1e-6));

    // zero-norm map survives via the eps guard
    Tensor z = Tensor::zeros({1, 4});
    CHECK(std::isfinite(pram_loss({make_input(z)}, {v3})->value[0]));
    CHECK_THROWS_AS(pram_loss({make_input(u)}, {v3}), ValidationError);   // shape mismatch
}

TEST_CASE("pram_loss gradient matches finite differences") {
    Rng rng(115);
    Tensor u({3, 12}), a({3, 12});
    fill_uniform(u, rng, 0.1f, 2.0f);
    fill_uniform(a, rng, 0.1f, 2.0f);
    Var v = make_param(u, "psi");
    backward(pram_loss({v}, {a}));
    auto loss_fn = [&]() {
        return static_cast<double>(pram_loss({make_param(u, "psi")}, {a})->value[0]);
    };
    CHECK(fd_check(loss_fn, u, v->grad, 5e-3f).rel_err <= 1e-3);
}

TEST_CASE("sgd_step spec examples") {
    // mu=0, wd=0, lr=1: theta 1 with grad 0.5 -> 0.5
    Var p = make_param(Tensor({1}, {1.0f}), "p");
    p->grad[0] = 0.5f;
    Sgd opt1({1.0f, 0.0f, 0.0f});
    opt1.step({p});
    CHECK(p->value[0] == doctest::Approx(0.5f));

    // wd > 0, g = 0: theta shrinks by lr*wd*theta
    Var q = make_param(Tensor({1}, {2.0f}), "q");
    Sgd opt2({0.1f, 0.0f, 0.01f});
    opt2.step({q});
    CHECK(q->value[0] == doctest::Approx(2.0f - 0.1f * 0.01f * 2.0f));

    // two steps with mu = 0.9 match the hand-unrolled recurrence
    float theta = 1.0f, vel = 0.0f;
    const float lr = 0.1f, mu = 0.9f, g1 = 0.3f, g2 = -0.2f;
    vel = mu * vel + g1;
    theta -= lr * vel;
    vel = mu * vel + g2;
    theta -= lr * vel;

    Var r = make_param(Tensor({1}, {1.0f}), "r");
    Sgd opt3({lr, mu, 0.0f});
    r->grad[0] = g1;
    opt3.step({r});
    r->grad[0] = g2;
    opt3.step({r});
    CHECK(r->value[0] == doctest::Approx(theta).epsilon(1e-6));
}

TEST_CASE("sgd config validation") {
    CHECK_THROWS_AS(Sgd({-0.1f, 0.0f, 0.0f}), ValidationError);
    CHECK_THROWS_AS(Sgd({0.1f, 1.0f, 0.0f}), ValidationError);
    CHECK_THROWS_AS(Sgd({0.1f, 0.0f, -1.0f}), ValidationError);
}

TEST_CASE("gradient accumulation across backward calls") {
    // two backward passes accumulate into the same parameter gradient
    Tensor x({1, 3}, {1, 2, 3});
    Var w = make_param(Tensor({2, 3}, {1, 0, 0, 0, 1, 0}), "w");
    backward(ce_loss(linear(make_input(x), w), {0}));
    Tensor g1 = w->grad;
    backward(ce_loss(linear(make_input(x), w), {0}));
    for (std::size_t i = 0; i < g1.numel(); ++i) {
        CHECK(w->grad[i] == doctest::Approx(2.0f * g1[i]).epsilon(1e-5));
    }
}
