#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cortex3d/nn.hpp"
#include "support/networks.hpp"
#include "support/oracles.hpp"

using namespace cortex3d;

namespace {

TensorD vec(std::initializer_list<double> values) {
    return TensorD(Shape{values.size()}, std::vector<double>(values));
}

}  // namespace

TEST_CASE("activations") {
    const TensorD r = activation_apply(Activation::relu, vec({-1, 0, 2}));
    CHECK(r == vec({0, 0, 2}));
    CHECK(activation_apply(Activation::sigmoid, vec({0}))[0] == 0.5);
    std::mt19937_64 gen(1);
    const TensorD x = oracle::random_d(Shape{2, 3, 4}, gen);
    CHECK(activation_apply(Activation::identity, x) == x);

    CHECK(activation_grad(Activation::relu, vec({-1, 1}), vec({1, 1})) == vec({0, 1}));
    CHECK(activation_grad(Activation::relu, vec({0}), vec({1}))[0] == 0.0);
    CHECK(activation_grad(Activation::sigmoid, vec({0}), vec({1}))[0] == 0.25);
    CHECK_THROWS_AS(activation_grad(Activation::relu, vec({1, 2}), vec({1})), ShapeError);
}

TEST_CASE("activation gradients match central differences") {
    std::mt19937_64 gen(2);
    for (Activation kind : {Activation::relu, Activation::sigmoid, Activation::identity}) {
        TensorD x = oracle::random_d(Shape{50}, gen, -3, 3);
        for (auto& v : x.data())
            if (std::abs(v) < 1e-3) v = 0.5;  // stay off the ReLU kink
        const TensorD up = oracle::random_d(Shape{50}, gen);
        const TensorD g = activation_grad(kind, x, up);
        const double eps = 1e-6;
        for (std::size_t i = 0; i < x.size(); ++i) {
            TensorD xp = x, xm = x;
            xp[i] += eps;
            xm[i] -= eps;
            const double num = up[i] * (activation_apply(kind, xp)[i] - activation_apply(kind, xm)[i]) / (2 * eps);
            CHECK(std::abs(num - g[i]) < 1e-4);
        }
    }
}

TEST_CASE("dense_forward") {
    const TensorD x = vec({1.5, -2, 3});
    TensorD eye(Shape{3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
    CHECK(dense_forward(eye, TensorD(Shape{3}), x) == x);
    CHECK(dense_forward(TensorD(Shape{2, 3}), vec({-0.5, 0.7}), x, Activation::relu) == vec({0, 0.7}));

    std::mt19937_64 gen(3);
    const TensorD w = oracle::random_d(Shape{4, 7}, gen);
    const TensorD b = oracle::random_d(Shape{4}, gen);
    const TensorD in = oracle::random_d(Shape{7}, gen);
    const TensorD y = dense_forward(w, b, in);
    for (std::size_t r = 0; r < 4; ++r) {
        double acc = b[r];
        for (std::size_t c = 0; c < 7; ++c) acc += w(r, c) * in[c];
        CHECK(std::abs(y[r] - acc) < 1e-6);
    }
    CHECK_THROWS_AS(dense_forward(w, b, vec({1, 2})), ShapeError);
}

TEST_CASE("softmax") {
    const TensorD u = softmax(vec({0, 0, 0}));
    for (double p : u.data()) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    for (double c : {-50.0, 0.0, 3.0, 700.0}) {
        const TensorD p = softmax(vec({c, c + std::numbers::ln2}));
        CHECK(std::abs(p[0] - 1.0 / 3.0) < 1e-12);
        CHECK(std::abs(p[1] - 2.0 / 3.0) < 1e-12);
    }
    const TensorD big = softmax(vec({1000, 1000}));
    CHECK(big[0] == 0.5);
    CHECK(big[1] == 0.5);
    CHECK_THROWS_AS(softmax(vec({1.0, std::nan("")})), ArgumentError);
    CHECK_THROWS_AS(softmax(vec({1.0})), ShapeError);
}

TEST_CASE("softmax is a shift-invariant probability vector") {
    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> shift(-100, 100);
    for (int trial = 0; trial < 200; ++trial) {
        const TensorD logits = oracle::random_d(Shape{static_cast<std::size_t>(2 + trial % 5)}, gen, -30, 30);
        const TensorD p = softmax(logits);
        double total = 0.0;
        for (double v : p.data()) {
            CHECK(v > 0.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
        TensorD shifted = logits;
        const double s = shift(gen);
        for (auto& v : shifted.data()) v += s;
        const TensorD q = softmax(shifted);
        const auto argmax = [](const TensorD& t) {
            return std::max_element(t.data().begin(), t.data().end()) - t.data().begin();
        };
        CHECK(argmax(p) == argmax(q));
    }
}

TEST_CASE("nll_loss") {
    const auto perfect = nll_loss(vec({1, 0, 0}), 0);
    CHECK(perfect.loss == 0.0);
    CHECK_FALSE(perfect.clamped);
    const auto underflow = nll_loss(vec({1, 0, 0}), 1);
    CHECK(underflow.clamped);
    CHECK(underflow.loss == doctest::Approx(-std::log(1e-30)));
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(nll_loss(vec({1.0 / 3, 1.0 / 3, 1.0 / 3}), c).loss == doctest::Approx(std::log(3.0)));
    }
    CHECK_THROWS_AS(nll_loss(vec({0.5, 0.5}), 2), ArgumentError);

    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 20; ++trial) {
        TensorD logits = oracle::random_d(Shape{4}, gen, -3, 3);
        const std::size_t cls = trial % 4;
        const auto r = nll_loss(softmax(logits), cls);
        const double eps = 1e-6;
        for (std::size_t i = 0; i < 4; ++i) {
            const double saved = logits[i];
            logits[i] = saved + eps;
            const double plus = nll_loss(softmax(logits), cls).loss;
            logits[i] = saved - eps;
            const double minus = nll_loss(softmax(logits), cls).loss;
            logits[i] = saved;
            CHECK(std::abs((plus - minus) / (2 * eps) - r.grad_logits[i]) < 1e-4);
        }
    }
}

TEST_CASE("network construction checks the shape chain") {
    std::mt19937_64 gen(6);
    CHECK_THROWS_AS(Network<double>(Shape{1, 4, 4, 4},
                                    {Layer<double>::dense(TensorD(Shape{2, 3}), TensorD(Shape{2}),
                                                          Activation::relu)}),
                    ShapeError);
    CHECK_THROWS_AS(Network<double>(Shape{3}, {Layer<double>::softmax(), Layer<double>::flatten()}),
                    ShapeError);
    CHECK_THROWS_AS(Network<double>(Shape{2, 4, 4, 4},
                                    {Layer<double>::conv(TensorD(Shape{1, 3, 3, 3, 3}), TensorD(Shape{1}),
                                                         ConvMode::valid, Activation::relu)}),
                    ShapeError);
    Network<double> net = testnet::small_cnn(gen);
    CHECK(net.output_shape() == Shape{3});
    CHECK_THROWS_AS(net.append(Layer<double>::flatten()), ShapeError);
    CHECK(net.layer_count() == 6);  // failed append leaves the network intact
}

TEST_CASE("network_forward") {
    std::mt19937_64 gen(7);
    SUBCASE("empty network is the identity") {
        const Network<double> net(Shape{2, 3, 3, 3}, {});
        const TensorD x = oracle::random_d(Shape{2, 3, 3, 3}, gen);
        CHECK(network_forward(net, x).output() == x);
    }
    SUBCASE("single conv layer equals conv3d + bias + activation") {
        const TensorD w = oracle::random_d(Shape{3, 2, 3, 3, 3}, gen);
        const TensorD b = oracle::random_d(Shape{3}, gen);
        const Network<double> net(Shape{2, 4, 4, 4},
                                  {Layer<double>::conv(w, b, ConvMode::valid, Activation::sigmoid)});
        const TensorD x = oracle::random_d(Shape{2, 4, 4, 4}, gen);
        TensorD want = oracle::conv3d(x, w, ConvMode::valid);
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t i = 0; i < 8; ++i) want[k * 8 + i] = 1.0 / (1.0 + std::exp(-(want[k * 8 + i] + b[k])));
        CHECK(oracle::max_abs_diff(network_forward(net, x).output(), want) < 1e-6);
    }
    SUBCASE("conv-pool-flatten-dense-softmax outputs a distribution") {
        const Network<double> net = testnet::small_cnn(gen);
        const TensorD out = network_forward(net, oracle::random_d(Shape{1, 5, 5, 5}, gen)).output();
        double total = 0.0;
        for (double p : out.data()) total += p;
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
    SUBCASE("input shape is checked") {
        const Network<double> net = testnet::small_cnn(gen);
        CHECK_THROWS_AS(network_forward(net, TensorD(Shape{1, 4, 5, 5})), ShapeError);
    }
}

TEST_CASE("network_backward") {
    std::mt19937_64 gen(8);
    SUBCASE("all layers frozen gives zero gradients") {
        Network<double> net = testnet::small_cnn(gen);
        for (std::size_t i = 0; i < net.layer_count(); ++i) net.set_frozen(i, true);
        const auto cache = network_forward(net, oracle::random_d(Shape{1, 5, 5, 5}, gen));
        const auto g = network_backward(net, cache, nll_loss(cache.output(), 1).grad_logits);
        CHECK(g.all_zero());
        CHECK(g.layers.size() == net.layer_count());
    }
    SUBCASE("single dense layer: dW = delta x^T, db = delta") {
        const TensorD w = oracle::random_d(Shape{3, 4}, gen);
        const TensorD b = oracle::random_d(Shape{3}, gen);
        const Network<double> net(Shape{4}, {Layer<double>::dense(w, b, Activation::identity)});
        const TensorD x = oracle::random_d(Shape{4}, gen);
        const TensorD delta = oracle::random_d(Shape{3}, gen);
        const auto g = network_backward(net, network_forward(net, x), delta);
        for (std::size_t r = 0; r < 3; ++r) {
            CHECK(g.layers[0].bias[r] == delta[r]);
            for (std::size_t c = 0; c < 4; ++c) CHECK(g.layers[0].weights(r, c) == delta[r] * x[c]);
        }
    }
    SUBCASE("stale cache is rejected") {
        Network<double> net = testnet::small_cnn(gen);
        const auto cache = network_forward(net, oracle::random_d(Shape{1, 5, 5, 5}, gen));
        net.parameters()[0].tensor->data()[0] += 0.1;
        CHECK_THROWS_AS(network_backward(net, cache, nll_loss(cache.output(), 0).grad_logits), ArgumentError);
        const Network<double> other = testnet::small_cnn(gen);
        CHECK_THROWS_AS(network_backward(other, cache, nll_loss(cache.output(), 0).grad_logits), ArgumentError);
    }
    SUBCASE("frozen layers keep zero gradients while others train") {
        Network<double> net = testnet::small_cnn(gen);
        net.set_frozen(0, true);
        const auto cache = network_forward(net, oracle::random_d(Shape{1, 5, 5, 5}, gen));
        const auto g = network_backward(net, cache, nll_loss(cache.output(), 2).grad_logits);
        for (double v : g.layers[0].weights.data()) CHECK(v == 0.0);
        double mag = 0.0;
        for (double v : g.layers[4].weights.data()) mag += std::abs(v);
        CHECK(mag > 0.0);
    }
}

TEST_CASE("finite_diff_check") {
    std::mt19937_64 gen(9);
    SUBCASE("linear network") {
        Network<double> net(Shape{5}, {Layer<double>::dense(oracle::random_d(Shape{4, 5}, gen),
                                                             oracle::random_d(Shape{4}, gen), Activation::identity),
                                       Layer<double>::dense(oracle::random_d(Shape{3, 4}, gen),
                                                             oracle::random_d(Shape{3}, gen), Activation::identity),
                                       Layer<double>::softmax()});
        const TensorD x = oracle::random_d(Shape{5}, gen);
        const auto report = finite_diff_check(net, x, 1);
        CHECK(report.checked == 4 * 5 + 4 + 3 * 4 + 3);
        CHECK(report.max_abs_error < 1e-10);
        // Judged relative to gradients of order 1e-2 and up, where roundoff
        // in the difference quotient no longer dominates.
        CHECK(finite_diff_check(net, x, 1, 1e-5, 1e-2).max_relative_error < 1e-9);
    }
    SUBCASE("relu cnn away from kinks") {
        int accepted = 0;
        while (accepted < 10) {
            Network<double> net = testnet::small_cnn(gen);
            const TensorD x = oracle::random_d(Shape{1, 5, 5, 5}, gen);
            if (!testnet::away_from_kinks(net, network_forward(net, x))) continue;
            ++accepted;
            const auto report = finite_diff_check(net, x, accepted % 3);
            CHECK(report.max_relative_error < 1e-4);
        }
    }
    SUBCASE("reports the worst offender's coordinates") {
        Network<double> net(Shape{3}, {Layer<double>::dense(oracle::random_d(Shape{2, 3}, gen),
                                                             oracle::random_d(Shape{2}, gen), Activation::identity),
                                       Layer<double>::softmax()});
        const auto report = finite_diff_check(net, oracle::random_d(Shape{3}, gen), 0);
        CHECK(report.worst_name.rfind("layer0.", 0) == 0);
        CHECK(report.worst_offset < 6);
        CHECK(relative_error(report.worst_analytic, report.worst_numeric) == report.max_relative_error);
    }
}

TEST_CASE("frozen networks are bitwise reproducible") {
    std::mt19937_64 gen(10);
    Network<double> net = testnet::small_cnn(gen);
    for (std::size_t i = 0; i < net.layer_count(); ++i) net.set_frozen(i, true);
    const Network<float> f = net.cast<float>();
    const Tensor x = oracle::random_d(Shape{1, 5, 5, 5}, gen).cast<float>();
    const Tensor first = network_forward(f, x).output();
    for (int i = 0; i < 5; ++i) CHECK(network_forward(f, x).output() == first);
    CHECK(network_infer(f, x) == first);
}
