#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "cortex3d/nn.hpp"
#include "support/oracles.hpp"

namespace testnet {

using namespace cortex3d;

// conv(full, relu) -> maxpool -> flatten -> dense(relu) -> dense -> softmax
inline Network<double> small_cnn(std::mt19937_64& gen, std::size_t classes = 3,
                                 Shape input = Shape{1, 5, 5, 5}) {
    std::vector<Layer<double>> layers;
    layers.push_back(Layer<double>::conv(oracle::random_d(Shape{2, input[0], 3, 3, 3}, gen, -0.5, 0.5),
                                         oracle::random_d(Shape{2}, gen, -0.1, 0.1), ConvMode::full,
                                         Activation::relu));
    layers.push_back(Layer<double>::maxpool(2, 2));
    layers.push_back(Layer<double>::flatten());
    Network<double> probe(input, layers);
    const std::size_t flat = probe.output_shape()[0];
    layers.push_back(Layer<double>::dense(oracle::random_d(Shape{6, flat}, gen, -0.3, 0.3),
                                          oracle::random_d(Shape{6}, gen, -0.1, 0.1), Activation::relu));
    layers.push_back(Layer<double>::dense(oracle::random_d(Shape{classes, 6}, gen, -0.5, 0.5),
                                          oracle::random_d(Shape{classes}, gen, -0.1, 0.1),
                                          Activation::identity));
    layers.push_back(Layer<double>::softmax());
    return Network<double>(input, std::move(layers));
}

// True when no ReLU pre-activation sits within `margin` of its kink and no
// pooling window has a runner-up within `margin` of its maximum, so that a
// small perturbation cannot switch a branch.
inline bool away_from_kinks(const Network<double>& net, const ForwardCache<double>& cache,
                            double margin = 1e-3) {
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
        const auto& l = net.layer(i);
        if (l.has_params() && l.activation == Activation::relu) {
            for (double v : cache.preacts[i].data())
                if (std::abs(v) < margin) return false;
        }
        if (l.kind == LayerKind::maxpool) {
            const TensorD& x = cache.inputs[i];
            const auto& idx = cache.pool_indices[i];
            const auto& s = x.shape();
            const auto& o = idx.shape();
            const std::size_t D = s[1], H = s[2], W = s[3];
            for (std::size_t k = 0; k < o[0]; ++k)
                for (std::size_t d = 0; d < o[1]; ++d)
                    for (std::size_t h = 0; h < o[2]; ++h)
                        for (std::size_t w = 0; w < o[3]; ++w) {
                            const std::size_t cell = ((k * o[1] + d) * o[2] + h) * o[3] + w;
                            const std::size_t best = idx.offsets()[cell];
                            for (std::size_t a = d * l.pool_stride; a < std::min(D, d * l.pool_stride + l.pool_window); ++a)
                                for (std::size_t b = h * l.pool_stride; b < std::min(H, h * l.pool_stride + l.pool_window); ++b)
                                    for (std::size_t c = w * l.pool_stride; c < std::min(W, w * l.pool_stride + l.pool_window); ++c) {
                                        const std::size_t off = ((k * D + a) * H + b) * W + c;
                                        if (off != best && x[best] - x[off] < margin) return false;
                                    }
                        }
        }
    }
    return true;
}

}  // namespace testnet
