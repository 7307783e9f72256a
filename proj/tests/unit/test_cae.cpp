#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cortex3d/cae.hpp"
#include "cortex3d/random.hpp"
#include "support/cae_fixtures.hpp"
#include "support/oracles.hpp"

using namespace cortex3d;
using namespace caetest;

TEST_CASE("cae_encode") {
    std::mt19937_64 gen(31);
    SUBCASE("zero input gives zero maps of grown shape") {
        CaeLayer<double> layer = random_layer(gen, 1, 4, 3);
        layer.bias.fill(0.0);
        const TensorD h = cae_encode(layer, TensorD(Shape{1, 5, 6, 7}));
        CHECK(h.shape() == Shape{4, 7, 8, 9});
        for (double v : h.data()) CHECK(v == 0.0);
    }
    SUBCASE("matches full convolution + bias + activation") {
        for (int trial = 0; trial < 10; ++trial) {
            const CaeLayer<double> layer = random_layer(gen, 2, 3, 3, Activation::sigmoid);
            const TensorD x = oracle::random_d(Shape{2, 4, 3, 5}, gen);
            TensorD want = oracle::conv3d(x, layer.kernels, ConvMode::full);
            const std::size_t per = want.size() / 3;
            for (std::size_t i = 0; i < want.size(); ++i) want[i] = act(Activation::sigmoid, want[i] + layer.bias[i / per]);
            CHECK(oracle::max_abs_diff(cae_encode(layer, x), want) < 1e-6);
        }
    }
    SUBCASE("channel mismatch") {
        const CaeLayer<double> layer = random_layer(gen, 2, 3, 3);
        CHECK_THROWS_AS(cae_encode(layer, TensorD(Shape{1, 4, 4, 4})), ShapeError);
    }
    SUBCASE("full-size 200x150x150 shape, computed without data") {
        const std::size_t maps[] = {8};
        const auto stack = CaeStack<float>::build(1, maps, 3, {}, 1);
        CHECK(conv3d_output_shape(Shape{1, 200, 150, 150}, stack.layers[0].kernels.shape(), ConvMode::full) ==
              Shape{8, 202, 152, 152});
    }
}

TEST_CASE("cae_decode") {
    std::mt19937_64 gen(32);
    SUBCASE("round trip preserves shape") {
        std::uniform_int_distribution<std::size_t> ext(1, 6), small(1, 3);
        for (int trial = 0; trial < 30; ++trial) {
            const std::size_t n = 1 + 2 * (trial % 3);
            const CaeLayer<double> layer = random_layer(gen, small(gen), small(gen), n);
            const TensorD x = oracle::random_d(Shape{layer.input_channels(), ext(gen), ext(gen), ext(gen)}, gen);
            CHECK(cae_decode(layer, cae_encode(layer, x)).shape() == x.shape());
        }
    }
    SUBCASE("delta kernel reconstructs exactly") {
        CaeLayer<double> layer{TensorD(Shape{1, 1, 3, 3, 3}), TensorD(Shape{1}), TensorD(Shape{1}),
                               Activation::identity, Activation::identity};
        layer.kernels(0, 0, 1, 1, 1) = 1.0;
        const TensorD x = oracle::random_d(Shape{1, 5, 4, 6}, gen);
        CHECK(cae_decode(layer, cae_encode(layer, x)) == x);
        const CaeLayer<float> lf = layer.cast<float>();
        const Tensor xf = x.cast<float>();
        CHECK(cae_decode(lf, cae_encode(lf, xf)) == xf);
    }
    SUBCASE("matches the per-map flipped-kernel oracle") {
        for (int trial = 0; trial < 10; ++trial) {
            const CaeLayer<double> layer = random_layer(gen, 2, 3, 3);
            const TensorD h = oracle::random_d(Shape{3, 6, 5, 7}, gen);
            CHECK(oracle::max_abs_diff(cae_decode(layer, h), decode_oracle(layer, h)) < 1e-6);
        }
    }
    SUBCASE("maps too small to round trip") {
        const CaeLayer<double> layer = random_layer(gen, 1, 2, 3);
        CHECK_THROWS_AS(cae_decode(layer, TensorD(Shape{2, 2, 4, 4})), ShapeError);
        CHECK_THROWS_AS(cae_decode(layer, TensorD(Shape{3, 4, 4, 4})), ShapeError);
    }
}

TEST_CASE("cae_loss") {
    std::mt19937_64 gen(33);
    CaeLayer<double> delta{TensorD(Shape{1, 1, 3, 3, 3}), TensorD(Shape{1}), TensorD(Shape{1}),
                           Activation::identity, Activation::identity};
    delta.kernels(0, 0, 1, 1, 1) = 1.0;
    std::vector<TensorD> batch{oracle::random_d(Shape{1, 4, 4, 4}, gen), oracle::random_d(Shape{1, 4, 4, 4}, gen)};
    CHECK(cae_loss<double>(delta, batch) == 0.0);
    delta.decoder_bias[0] = 1.0;  // x_hat = x + 1
    CHECK(cae_loss<double>(delta, batch) == doctest::Approx(64.0).epsilon(1e-12));

    for (int trial = 0; trial < 10; ++trial) {
        const CaeLayer<double> layer = random_layer(gen, 2, 3, 3);
        std::vector<TensorD> b;
        for (int t = 0; t < 3; ++t) b.push_back(oracle::random_d(Shape{2, 4, 5, 3}, gen, 0, 1));
        const double e = cae_loss<double>(layer, b);
        CHECK(e >= 0.0);
        CHECK(std::abs(e - loss_oracle(layer, b)) < 1e-8);
        CHECK(std::abs(cae_loss_and_gradients<double>(layer, b).loss - e) < 1e-12);
    }
    CHECK_THROWS_AS(cae_loss<double>(delta, std::vector<TensorD>{}), ArgumentError);
    std::vector<TensorD> ragged{TensorD(Shape{1, 4, 4, 4}), TensorD(Shape{1, 4, 4, 5})};
    CHECK_THROWS_AS(cae_loss<double>(delta, ragged), ShapeError);
}

TEST_CASE("tied CAE gradient matches finite differences") {
    std::mt19937_64 gen(34);
    int accepted = 0;
    while (accepted < 8) {
        const Activation f = accepted % 2 ? Activation::sigmoid : Activation::relu;
        CaeLayer<double> layer = random_layer(gen, 1 + accepted % 2, 2, 3, f, Activation::relu);
        std::vector<TensorD> batch{oracle::random_d(Shape{layer.input_channels(), 3, 4, 3}, gen, 0, 1),
                                   oracle::random_d(Shape{layer.input_channels(), 3, 4, 3}, gen, 0, 1)};
        if (!away_from_kinks(layer, batch[0]) || !away_from_kinks(layer, batch[1])) continue;
        ++accepted;
        const auto report = cae_gradient_check(layer, batch);
        CHECK(report.checked == layer.kernels.size() + layer.bias.size() + layer.decoder_bias.size());
        CHECK(report.max_relative_error < 1e-4);
    }
}

TEST_CASE("train_cae") {
    std::mt19937_64 gen(35);
    std::vector<Tensor> data;
    for (int i = 0; i < 6; ++i) data.push_back(oracle::random_d(Shape{1, 6, 6, 6}, gen, 0, 1).cast<float>());

    SUBCASE("zero epochs leave the layer unchanged") {
        auto layer = CaeLayer<float>::initialized(1, 4, 3, 9);
        const auto before = layer.kernels;
        TrainConfig cfg;
        cfg.epochs = 0;
        const auto h = train_cae<float>(layer, data, cfg);
        CHECK(h.epoch_loss.empty());
        CHECK(h.steps == 0);
        CHECK(layer.kernels == before);
    }
    SUBCASE("loss decreases and runs are bit-identical") {
        TrainConfig cfg;
        cfg.epochs = 15;
        cfg.batch_size = 2;
        cfg.seed = 77;
        auto a = CaeLayer<float>::initialized(1, 4, 3, 9);
        auto b = a;
        const auto ha = train_cae<float>(a, data, cfg);
        const auto hb = train_cae<float>(b, data, cfg);
        CHECK(ha.epoch_loss.size() == 15);
        CHECK(ha.steps == 45);
        CHECK(ha.epoch_loss.back() < ha.initial_loss);
        CHECK(ha.epoch_loss == hb.epoch_loss);
        CHECK(a.kernels == b.kernels);
        CHECK(a.decoder_bias == b.decoder_bias);
    }
}

TEST_CASE("CaeStack") {
    const std::size_t maps[] = {8, 8, 8};
    const auto stack = CaeStack<float>::build(1, maps, 3, {}, 4);
    for (const auto& l : stack.layers) CHECK(l.feature_maps() == 8);
    CHECK(stack.layers[1].input_channels() == 8);
    CHECK_FALSE(stack.layers[0].kernels == stack.layers[1].kernels.reshaped(Shape{8, 8, 3, 3, 3}));

    SUBCASE("pooled shapes of a 200x150x150 volume") {
        const auto shapes = stack_output_shapes(stack, Shape{1, 200, 150, 150});
        const std::size_t want[3][3] = {{102, 76, 76}, {52, 40, 40}, {28, 22, 22}};
        REQUIRE(shapes.size() == 3);
        for (std::size_t l = 0; l < 3; ++l) {
            CHECK(shapes[l][0] == 8);
            for (std::size_t a = 0; a < 3; ++a) {
                const long diff = static_cast<long>(shapes[l][a + 1]) - static_cast<long>(want[l][a]);
                CHECK(std::abs(diff) <= 1);
            }
        }
    }
    SUBCASE("single layer is maxpool of the encoding") {
        const std::size_t one[] = {3};
        const auto s = CaeStack<float>::build(2, one, 3, {}, 5);
        std::mt19937_64 gen(36);
        const Tensor x = oracle::random_d(Shape{2, 5, 6, 4}, gen).cast<float>();
        const auto out = stack_forward(s, x);
        REQUIRE(out.size() == 1);
        CHECK(out[0] == maxpool3d(cae_encode(s.layers[0], x), 2, 2).output);
    }
    SUBCASE("forward shapes agree with the shape-only pass") {
        std::mt19937_64 gen(37);
        const Tensor x = oracle::random_d(Shape{1, 12, 10, 9}, gen).cast<float>();
        const auto out = stack_forward(stack, x);
        const auto shapes = stack_output_shapes(stack, x.shape());
        for (std::size_t l = 0; l < 3; ++l) CHECK(out[l].shape() == shapes[l]);
        CHECK_THROWS_AS(stack_forward(stack, Tensor(Shape{2, 12, 10, 9})), ShapeError);
    }
    SUBCASE("broken chain is rejected") {
        auto bad = stack;
        bad.layers[1] = CaeLayer<float>::initialized(4, 8, 3, 1);
        CHECK_THROWS(bad.validate());
    }
}

TEST_CASE("train_stack_greedy") {
    std::mt19937_64 gen(38);
    std::vector<Tensor> data;
    for (int i = 0; i < 4; ++i) data.push_back(oracle::random_d(Shape{1, 8, 8, 8}, gen, 0, 1).cast<float>());
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.seed = 3;

    const std::size_t one[] = {4};
    auto single = CaeStack<float>::build(1, one, 3, {}, 8);
    auto layer = single.layers[0];
    TrainConfig layer_cfg = cfg;
    layer_cfg.seed = derive_seed(cfg.seed, 0);
    const auto h1 = train_stack_greedy<float>(single, data, cfg);
    const auto h2 = train_cae<float>(layer, data, layer_cfg);
    CHECK(h1[0].epoch_loss == h2.epoch_loss);
    CHECK(single.layers[0].kernels == layer.kernels);

    const std::size_t two[] = {4, 4};
    auto stack = CaeStack<float>::build(1, two, 3, {}, 8);
    const auto frozen_first = stack.layers[0];
    const auto hist = train_stack_greedy<float>(stack, data, cfg);
    CHECK(hist.size() == 2);
    CHECK_FALSE(stack.layers[0].kernels == frozen_first.kernels);
    for (const auto& h : hist) CHECK(h.epoch_loss.back() <= h.initial_loss);
}

TEST_CASE("feature slice export") {
    const std::size_t maps[] = {8};
    auto stack = CaeStack<float>::build(1, maps, 3, {}, 6);
    std::mt19937_64 gen(39);
    const Tensor x = oracle::random_d(Shape{1, 6, 8, 10}, gen, 0, 1).cast<float>();
    // pooled output: 8 x 4 x 5 x 6
    const auto axial = export_feature_slices(stack, x, 0, SliceAxis::axial, 2);
    REQUIRE(axial.size() == 8);
    CHECK(axial[0].width == 6);
    CHECK(axial[0].height == 5);
    const auto sag = export_feature_slices(stack, x, 0, SliceAxis::sagittal, 0);
    CHECK(sag[0].width == 5);
    CHECK(sag[0].height == 4);
    CHECK_THROWS_AS(export_feature_slices(stack, x, 0, SliceAxis::sagittal, 6), ArgumentError);
    CHECK_THROWS_AS(export_feature_slices(stack, x, 1, SliceAxis::axial, 0), ArgumentError);

    stack.layers[0].kernels.fill(0.0f);
    stack.layers[0].bias.fill(0.0f);
    for (const auto& img : export_feature_slices(stack, x, 0, SliceAxis::coronal, 1))
        for (auto p : img.pixels) CHECK(p == 0);

    const auto dir = std::filesystem::temp_directory_path() / "cortex3d_slices_test";
    std::filesystem::remove_all(dir);
    const auto paths = write_feature_slices(dir, axial, 0, SliceAxis::axial, 2);
    REQUIRE(paths.size() == 8);
    CHECK(paths[3].filename() == "layer0_map3_axial2.pgm");
    std::ifstream in(paths[0], std::ios::binary);
    std::string magic;
    in >> magic;
    CHECK(magic == "P5");
    CHECK(std::filesystem::file_size(paths[0]) > 6 * 5);
    std::filesystem::remove_all(dir);
}
