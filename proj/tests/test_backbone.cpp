#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "attnfuse/backbone.hpp"
#include "attnfuse/errors.hpp"
#include "common/gradient_check.hpp"
#include "common/test_util.hpp"

using namespace attnfuse;

TEST_CASE("init is deterministic per seed with zero biases") {
    const BackboneParams a = init_backbone(123, 3);
    const BackboneParams b = init_backbone(123, 3);
    const BackboneParams c = init_backbone(124, 3);
    CHECK(a.bit_equal(b));
    CHECK_FALSE(a.bit_equal(c));
    for (const auto& layer : a.layers)
        for (double v : layer.b) CHECK(v == 0.0);
    for (const auto& buf : a.momentum) {
        CHECK(std::all_of(buf.w.begin(), buf.w.end(), [](double v) { return v == 0.0; }));
        CHECK(std::all_of(buf.b.begin(), buf.b.end(), [](double v) { return v == 0.0; }));
    }
    CHECK(a.layers[0].in_ch == 3);
    CHECK(a.layers[0].out_ch == 16);
    CHECK(a.layers[1].out_ch == 32);
    CHECK(a.layers[2].out_ch == 4);
    CHECK(a.num_classes() == 3);
}

TEST_CASE("forward with a zeroed final layer gives zero maps and logits") {
    BackboneParams p = init_backbone(7, 3);
    std::fill(p.layers[2].w.begin(), p.layers[2].w.end(), 0.0);
    std::fill(p.layers[2].b.begin(), p.layers[2].b.end(), 0.0);
    std::mt19937_64 rng(1);
    const Tensor3 image = testutil::random_tensor(rng, 3, 8, 8, 0.0, 1.0);
    const ForwardResult r = forward(p, image);
    for (double v : r.attn.data) CHECK(v == 0.0);
    for (double v : r.pred.logits) CHECK(v == 0.0);
}

TEST_CASE("forward output shape, range and zero pattern") {
    const BackboneParams p = init_backbone(5, 3);
    std::mt19937_64 rng(2);
    const Tensor3 image = testutil::random_tensor(rng, 3, 10, 6, 0.0, 1.0);
    ForwardCache cache;
    const ForwardResult r = forward(p, image, &cache);
    CHECK(r.attn.channels == 4);
    CHECK(r.attn.height == 10);
    CHECK(r.attn.width == 6);
    CHECK(static_cast<int>(r.pred.logits.size()) == 3);
    for (std::size_t i = 0; i < r.attn.size(); ++i) {
        CHECK(r.attn.data[i] >= 0.0);
        CHECK(r.attn.data[i] <= 1.0);
        // attn is zero exactly where relu(raw) is zero
        CHECK((r.attn.data[i] == 0.0) == (cache.relu_raw.data[i] == 0.0));
    }
    CHECK_THROWS_AS(forward(p, Tensor3(2, 4, 4)), std::invalid_argument);
}

TEST_CASE("forward is deterministic") {
    const BackboneParams p = init_backbone(11, 3);
    std::mt19937_64 rng(3);
    const Tensor3 image = testutil::random_tensor(rng, 3, 9, 9, 0.0, 1.0);
    const ForwardResult a = forward(p, image);
    const ForwardResult b = forward(p, image);
    CHECK(a.attn.data == b.attn.data);
    CHECK(a.raw.data == b.raw.data);
    CHECK(a.pred.logits == b.pred.logits);
}

TEST_CASE("backward of zero upstream gradients is zero") {
    const BackboneParams p = init_backbone(13, 3);
    std::mt19937_64 rng(4);
    const Tensor3 image = testutil::random_tensor(rng, 3, 6, 6, 0.0, 1.0);
    ForwardCache cache;
    forward(p, image, &cache);
    const Tensor3 zero_attn(4, 6, 6);
    const Gradients g = backward(p, cache, zero_attn, {0.0, 0.0, 0.0});
    for (const auto& layer : g.layers) {
        for (double v : layer.w) CHECK(v == 0.0);
        for (double v : layer.b) CHECK(v == 0.0);
    }
}

TEST_CASE("backward is linear in the upstream gradient") {
    const BackboneParams p = init_backbone(17, 3);
    std::mt19937_64 rng(5);
    const Tensor3 image = testutil::random_tensor(rng, 3, 6, 6, 0.0, 1.0);
    ForwardCache cache;
    forward(p, image, &cache);
    const Tensor3 ga = testutil::random_tensor(rng, 4, 6, 6);
    const std::vector<double> gp = {0.3, -0.7, 1.1};
    const Gradients g1 = backward(p, cache, ga, gp);
    const Gradients g2 = backward(p, cache, scale(ga, 2.0), {0.6, -1.4, 2.2});
    for (std::size_t l = 0; l < g1.layers.size(); ++l) {
        for (std::size_t i = 0; i < g1.layers[l].w.size(); ++i)
            CHECK(g2.layers[l].w[i] == doctest::Approx(2.0 * g1.layers[l].w[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < g1.layers[l].b.size(); ++i)
            CHECK(g2.layers[l].b[i] == doctest::Approx(2.0 * g1.layers[l].b[i]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(backward(p, cache, Tensor3(4, 5, 5), gp), std::invalid_argument);
    CHECK_THROWS_AS(backward(p, cache, ga, {0.0}), std::invalid_argument);
}

TEST_CASE("parameter gradients match the finite-difference oracle") {
    const testgrad::Instance inst = testgrad::random_instance(101, 3, 8, 8, 100.0);
    const testgrad::Report report = testgrad::check_param_gradients(inst, 1e-3);
    CAPTURE(report.max_rel_err);
    CHECK(report.checked > 6000);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("input gradient matches the finite-difference oracle") {
    const testgrad::Instance inst = testgrad::random_instance(202, 3, 8, 8, 100.0);
    const testgrad::Report report = testgrad::check_input_gradient(inst, 1e-3);
    CAPTURE(report.max_rel_err);
    CHECK(report.checked == 3 * 8 * 8);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("sgd step: fixed point, vanilla step, momentum unroll") {
    Hyperparams hp;
    hp.learning_rate = 1.0;
    hp.momentum = 0.0;
    hp.weight_decay = 0.0;

    BackboneParams p = init_backbone(23, 3);
    const BackboneParams orig = p;
    Gradients zero;
    zero.layers.assign({ConvLayerParams(16, 3), ConvLayerParams(32, 16), ConvLayerParams(4, 32)});
    sgd_step(p, zero, hp);
    CHECK(p.bit_equal(orig));

    // one vanilla step: param decreases by lr * g
    Gradients g = zero;
    g.layers[0].w[0] = 0.25;
    hp.learning_rate = 0.1;
    sgd_step(p, g, hp);
    CHECK(p.layers[0].w[0] == doctest::Approx(orig.layers[0].w[0] - 0.1 * 0.25).epsilon(1e-15));

    // two steps with momentum 0.9, lr 1, constant grad: displacement g + 1.9 g
    BackboneParams q = init_backbone(29, 3);
    const double start = q.layers[1].w[5];
    Gradients cg = zero;
    cg.layers[1].w[5] = 0.5;
    hp.learning_rate = 1.0;
    hp.momentum = 0.9;
    sgd_step(q, cg, hp);
    sgd_step(q, cg, hp);
    CHECK(q.layers[1].w[5] == doctest::Approx(start - (0.5 + 1.9 * 0.5)).epsilon(1e-14));
}

TEST_CASE("checkpoint round trip is bit exact") {
    testutil::TempDir dir("ckpt");
    BackboneParams p = init_backbone(31, 3);
    // make the momentum buffers non-trivial
    p.momentum[1].w[7] = 0.125;
    p.momentum[2].b[1] = -3.5;
    const auto path = dir.path() / "model.ckpt";
    save_checkpoint(path, p);
    const BackboneParams back = load_checkpoint(path);
    CHECK(back.bit_equal(p));
    CHECK(back.num_classes() == 3);

    // corrupted file
    std::string bytes = testutil::slurp(path);
    bytes.resize(bytes.size() / 2);
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "nope.ckpt"), DataError);
}
