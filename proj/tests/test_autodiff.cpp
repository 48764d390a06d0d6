#include <doctest.h>

#include <cmath>

#include "defront/autodiff.hpp"
#include "test_util.hpp"

using namespace defront;
using namespace defront::testutil;
using ad::Var;

TEST_CASE("backward accumulates and zero_grad clears") {
    Var x(Tensor::scalar(3.0), true);
    Var y = ad::mul(x, x);
    ad::backward(y);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
    Var y2 = ad::mul(x, x);
    ad::backward(y2);
    CHECK(x.grad()[0] == doctest::Approx(12.0));  // accumulated
    x.zero_grad();
    CHECK(!x.has_grad());
}

TEST_CASE("no-grad mode records no graph") {
    Var x(Tensor::scalar(2.0), true);
    ad::NoGradGuard ng;
    Var y = ad::mul(x, x);
    CHECK(!y.requires_grad());
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
    Rng rng(7);
    Var a = rand_var({2, 3}, rng);
    Var b = rand_var({2, 3}, rng);
    auto f = [&]() {
        return ad::mean_all(ad::mul(ad::tanh_(a), ad::add(ad::sigmoid_(b), ad::abs_(ad::sub(a, b)))));
    };
    CHECK(fd_check(f, {a, b}) < 1e-6);
}

TEST_CASE("log/clamp path") {
    Rng rng(11);
    Var a(Tensor::uniform({4, 4}, rng, 0.05, 0.95), true);
    auto f = [&]() { return ad::mean_all(ad::log_(ad::clamp(a, 1e-7, 1.0 - 1e-7))); };
    CHECK(fd_check(f, {a}) < 1e-6);
}

TEST_CASE("linear gradients") {
    Rng rng(13);
    Var x = rand_var({3, 5}, rng);
    Var w = rand_var({4, 5}, rng);
    Var b = rand_var({4}, rng);
    auto f = [&]() { return ad::mean_all(ad::tanh_(ad::linear(x, w, b))); };
    CHECK(fd_check(f, {x, w, b}) < 1e-6);
}

TEST_CASE("conv2d matches finite differences, stride and padding") {
    Rng rng(17);
    Var x = rand_var({2, 3, 6, 6}, rng);
    Var w = rand_var({4, 3, 3, 3}, rng, 0.5);
    Var b = rand_var({4}, rng);
    for (int stride : {1, 2}) {
        auto f = [&]() { return ad::mean_all(ad::conv2d(x, w, b, stride, 1)); };
        CHECK(fd_check(f, {x, w, b}) < 1e-6);
    }
}

TEST_CASE("pooling, upsampling and instance norm") {
    Rng rng(19);
    Var x = rand_var({2, 3, 4, 4}, rng);
    Var gamma(Tensor::uniform({3}, rng, 0.5, 1.5), true);
    Var beta = rand_var({3}, rng, 0.2);
    // a fixed projection keeps the objective sensitive to x despite the
    // per-plane normalization invariances
    Tensor w = Tensor::randn({2, 3, 4, 4}, rng);
    auto f = [&]() {
        Var h = ad::instance_norm(x, gamma, beta);
        h = ad::upsample_nearest2(h);
        h = ad::avg_pool2(h);
        return ad::mean_all(ad::mul(ad::add(h, ad::mul(h, h)), ad::constant(w)));
    };
    CHECK(fd_check(f, {x, gamma, beta}) < 1e-5);
    auto g = [&]() { return ad::mean_all(ad::global_avg_pool(x)); };
    CHECK(fd_check(g, {x}) < 1e-6);
}

TEST_CASE("concat splits gradients back") {
    Rng rng(23);
    Var a = rand_var({1, 2, 3, 3}, rng);
    Var b = rand_var({1, 1, 3, 3}, rng);
    auto f = [&]() {
        Var c = ad::concat_channels({a, b});
        return ad::mean_all(ad::mul(c, c));
    };
    CHECK(fd_check(f, {a, b}) < 1e-6);
}

TEST_CASE("warp with zero flow is the identity, exactly") {
    Rng rng(29);
    Var img = rand_var({1, 3, 8, 8}, rng);
    Var flow(Tensor::zeros({1, 2, 8, 8}));
    Var out = ad::warp_bilinear(img, flow);
    for (long i = 0; i < out.value().size(); ++i) CHECK(out.value()[i] == img.value()[i]);
}

TEST_CASE("warp with unit horizontal flow shifts one column") {
    // out(y,x) samples img(y, x+1) for interior pixels
    Var img(Tensor::zeros({1, 1, 4, 4}));
    for (long y = 0; y < 4; ++y)
        for (long x = 0; x < 4; ++x) img.value().at4(0, 0, y, x) = static_cast<double>(10 * y + x);
    Var flow(Tensor::full({1, 2, 4, 4}, 0.0));
    for (long y = 0; y < 4; ++y)
        for (long x = 0; x < 4; ++x) flow.value().at4(0, 0, y, x) = 1.0;
    Var out = ad::warp_bilinear(img, flow);
    for (long y = 0; y < 4; ++y)
        for (long x = 0; x + 1 < 4; ++x)
            CHECK(out.value().at4(0, 0, y, x) == doctest::Approx(img.value().at4(0, 0, y, x + 1)));
}

TEST_CASE("warp matches a scalar double-loop bilinear oracle") {
    Rng rng(31);
    long H = 7, W = 5, C = 2;
    Tensor img = Tensor::randn({1, C, H, W}, rng);
    Tensor flow = Tensor::randn({1, 2, H, W}, rng, 1.3);
    Var out = ad::warp_bilinear(ad::constant(img), ad::constant(flow));
    for (long c = 0; c < C; ++c)
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                double sx = std::min(std::max(static_cast<double>(x) + flow.at4(0, 0, y, x), 0.0),
                                     static_cast<double>(W - 1));
                double sy = std::min(std::max(static_cast<double>(y) + flow.at4(0, 1, y, x), 0.0),
                                     static_cast<double>(H - 1));
                long x0 = static_cast<long>(std::floor(sx)), y0 = static_cast<long>(std::floor(sy));
                long x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                double fx = sx - x0, fy = sy - y0;
                double expect = (1 - fy) * ((1 - fx) * img.at4(0, c, y0, x0) + fx * img.at4(0, c, y0, x1)) +
                                fy * ((1 - fx) * img.at4(0, c, y1, x0) + fx * img.at4(0, c, y1, x1));
                CHECK(out.value().at4(0, c, y, x) == doctest::Approx(expect).epsilon(1e-9));
            }
}

TEST_CASE("warp gradients w.r.t. image and flow") {
    Rng rng(37);
    Var img = rand_var({1, 2, 6, 6}, rng);
    Var flow(Tensor::randn({1, 2, 6, 6}, rng, 0.37), true);  // fractional offsets, off-lattice
    auto f = [&]() { return ad::mean_all(ad::mul(ad::warp_bilinear(img, flow), ad::warp_bilinear(img, flow))); };
    CHECK(fd_check(f, {img, flow}) < 1e-5);
}

TEST_CASE("first_diff_l1 gradient") {
    Rng rng(41);
    Var x = rand_var({1, 2, 5, 5}, rng);
    auto f = [&]() { return ad::first_diff_l1(x); };
    CHECK(fd_check(f, {x}) < 1e-5);
}

TEST_CASE("l2_normalize_rows yields unit rows and correct gradient") {
    Rng rng(43);
    Var x = rand_var({3, 6}, rng);
    Var y = ad::l2_normalize_rows(x);
    for (long n = 0; n < 3; ++n) {
        double s = 0;
        for (long d = 0; d < 6; ++d) s += y.value().at2(n, d) * y.value().at2(n, d);
        CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-9));
    }
    Rng wr(44);
    Tensor weights = Tensor::randn({3, 6}, wr);
    auto f = [&]() { return ad::mean_all(ad::mul(ad::l2_normalize_rows(x), ad::constant(weights))); };
    CHECK(fd_check(f, {x}) < 1e-5);
}

TEST_CASE("softmax cross-entropy gradient and values") {
    Rng rng(47);
    Var logits = rand_var({4, 5}, rng, 2.0);
    std::vector<long> labels = {0, 3, 2, 4};
    auto f = [&]() { return ad::softmax_xent(logits, labels); };
    CHECK(fd_check(f, {logits}) < 1e-6);

    // uniform logits -> log K
    Var uniform(Tensor::zeros({2, 8}), true);
    Var loss = ad::softmax_xent(uniform, {1, 5});
    CHECK(loss.value().item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("bce_mean analytic value and gradient") {
    Var half(Tensor::full({3, 3}, 0.5), true);
    Var target(Tensor::zeros({3, 3}));
    CHECK(ad::bce_mean(half, target).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Rng rng(53);
    Var pred(Tensor::uniform({4, 4}, rng, 0.05, 0.95), true);
    Tensor t(std::vector<long>{4, 4});
    for (long i = 0; i < 16; ++i) t[i] = (i % 3 == 0) ? 1.0 : 0.0;
    Var target2(std::move(t));
    auto f = [&]() { return ad::bce_mean(pred, target2); };
    CHECK(fd_check(f, {pred}) < 1e-6);
}

TEST_CASE("margin_cos_logits reduces to plain scaling at m=0") {
    Rng rng(59);
    Var cos(Tensor::uniform({3, 4}, rng, -0.9, 0.9), true);
    Var out = ad::margin_cos_logits(cos, {1, 2, 0}, 64.0, 0.0);
    for (long i = 0; i < out.value().size(); ++i)
        CHECK(out.value()[i] == doctest::Approx(64.0 * cos.value()[i]).epsilon(1e-12));
}

TEST_CASE("margin_cos_logits gradient") {
    Rng rng(61);
    Var cos(Tensor::uniform({3, 4}, rng, -0.9, 0.9), true);
    std::vector<long> labels = {2, 0, 3};
    auto f = [&]() { return ad::mean_all(ad::margin_cos_logits(cos, labels, 16.0, 0.4)); };
    CHECK(fd_check(f, {cos}) < 1e-5);
}

TEST_CASE("detach cuts the graph") {
    Var x(Tensor::scalar(2.0), true);
    Var y = ad::mul(ad::detach(ad::mul(x, x)), x);
    ad::backward(y);
    CHECK(x.grad()[0] == doctest::Approx(4.0));  // only the outer factor
}
