#include "cortex3d/cae.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "cortex3d/random.hpp"

namespace cortex3d {

template <typename T>
CaeLayer<T> CaeLayer<T>::initialized(std::size_t input_channels, std::size_t feature_maps,
                                     std::size_t kernel_size, std::uint64_t seed,
                                     Activation encode, Activation decode) {
    if (input_channels == 0 || feature_maps == 0 || kernel_size == 0) {
        throw ArgumentError("CaeLayer needs positive channel, map and kernel counts");
    }
    Rng rng(seed);
    const std::size_t taps = kernel_size * kernel_size * kernel_size;
    CaeLayer layer;
    layer.kernels = glorot_uniform<T>(
        Shape{feature_maps, input_channels, kernel_size, kernel_size, kernel_size},
        input_channels * taps, feature_maps * taps, rng);
    layer.bias = BasicTensor<T>(Shape{feature_maps});
    layer.decoder_bias = BasicTensor<T>(Shape{input_channels});
    layer.encode_activation = encode;
    layer.decode_activation = decode;
    return layer;
}

template <typename T>
void CaeLayer<T>::validate() const {
    const Shape& s = kernels.shape();
    if (s.rank() != 5 || s[2] != s[3] || s[3] != s[4]) {
        throw ShapeError("CaeLayer kernels must be [K,J,n,n,n], got " + s.str());
    }
    if (bias.shape() != Shape{s[0]}) {
        throw ShapeError("CaeLayer bias " + bias.shape().str() + " must hold one value per map (" +
                         std::to_string(s[0]) + ")");
    }
    if (decoder_bias.shape() != Shape{s[1]}) {
        throw ShapeError("CaeLayer decoder bias " + decoder_bias.shape().str() +
                         " must hold one value per input channel (" + std::to_string(s[1]) + ")");
    }
}

namespace {

template <typename T>
BasicTensor<T> channel(const BasicTensor<T>& t, std::size_t c) {
    const Shape& s = t.shape();
    const std::size_t per = s[1] * s[2] * s[3];
    std::vector<T> data(t.raw() + c * per, t.raw() + (c + 1) * per);
    return BasicTensor<T>(Shape{1, s[1], s[2], s[3]}, std::move(data));
}

template <typename T>
void add_channel_bias(BasicTensor<T>& z, const BasicTensor<T>& bias) {
    const std::size_t C = z.shape()[0];
    const std::size_t per = z.size() / C;
    for (std::size_t c = 0; c < C; ++c) {
        T* p = z.raw() + c * per;
        for (std::size_t i = 0; i < per; ++i) p[i] += bias[c];
    }
}

template <typename T>
void sum_per_channel(const BasicTensor<T>& g, BasicTensor<T>& out) {
    const std::size_t C = g.shape()[0];
    const std::size_t per = g.size() / C;
    for (std::size_t c = 0; c < C; ++c) {
        T acc = 0;
        const T* p = g.raw() + c * per;
        for (std::size_t i = 0; i < per; ++i) acc += p[i];
        out[c] += acc;
    }
}

// Decoder bank for map k: [J, 1, n, n, n] with entry j equal to flip(W[k, j]).
template <typename T>
BasicTensor<T> decoder_bank(const BasicTensor<T>& flipped, std::size_t k) {
    const Shape& s = flipped.shape();
    const std::size_t J = s[1], n = s[2];
    const std::size_t per = J * n * n * n;
    std::vector<T> data(flipped.raw() + k * per, flipped.raw() + (k + 1) * per);
    return BasicTensor<T>(Shape{J, 1, n, n, n}, std::move(data));
}

template <typename T>
struct CaePass {
    BasicTensor<T> preact;                 // W (*)full x + b
    BasicTensor<T> hidden;                 // f(preact)
    std::vector<BasicTensor<T>> map_preact;  // per map k: flip(W_k) (*)valid h_k + b_inv
    BasicTensor<T> reconstruction;
};

template <typename T>
void check_input(const CaeLayer<T>& layer, const BasicTensor<T>& x) {
    layer.validate();
    if (x.rank() != 4 || x.shape()[0] != layer.input_channels()) {
        throw ShapeError("CAE input " + x.shape().str() + " must be [" +
                         std::to_string(layer.input_channels()) + ",D,H,W]");
    }
}

template <typename T>
BasicTensor<T> decode_maps(const CaeLayer<T>& layer, const BasicTensor<T>& h,
                           std::vector<BasicTensor<T>>* map_preacts) {
    const std::size_t K = layer.feature_maps();
    if (h.rank() != 4 || h.shape()[0] != K) {
        throw ShapeError("cae_decode expects [" + std::to_string(K) + ",D',H',W'] feature maps, got " +
                         h.shape().str());
    }
    const std::size_t n = layer.kernel_size();
    for (std::size_t axis = 1; axis < 4; ++axis) {
        if (h.shape()[axis] < n) {
            throw ShapeError("cae_decode: feature maps " + h.shape().str() +
                             " are smaller than the kernel and cannot round-trip");
        }
    }
    const BasicTensor<T> flipped = flip3d(layer.kernels);
    BasicTensor<T> out;
    for (std::size_t k = 0; k < K; ++k) {
        BasicTensor<T> y = conv3d(channel(h, k), decoder_bank(flipped, k), ConvMode::valid);
        add_channel_bias(y, layer.decoder_bias);
        BasicTensor<T> a = activation_apply(layer.decode_activation, y);
        if (k == 0) {
            out = std::move(a);
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += a[i];
        }
        if (map_preacts) map_preacts->push_back(std::move(y));
    }
    return out;
}

template <typename T>
CaePass<T> run_pass(const CaeLayer<T>& layer, const BasicTensor<T>& x, bool keep) {
    check_input(layer, x);
    CaePass<T> pass;
    pass.preact = conv3d(x, layer.kernels, ConvMode::full);
    add_channel_bias(pass.preact, layer.bias);
    pass.hidden = activation_apply(layer.encode_activation, pass.preact);
    pass.reconstruction = decode_maps<T>(layer, pass.hidden, keep ? &pass.map_preact : nullptr);
    return pass;
}

template <typename T>
double squared_error(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

template <typename T>
void check_batch(std::span<const BasicTensor<T>> batch) {
    if (batch.empty()) throw ArgumentError("CAE loss needs a non-empty batch");
    for (const auto& x : batch) {
        if (x.shape() != batch.front().shape()) {
            throw ShapeError("CAE batch shapes differ: " + x.shape().str() + " vs " +
                             batch.front().shape().str());
        }
    }
}

}  // namespace

template <typename T>
BasicTensor<T> cae_encode(const CaeLayer<T>& layer, const BasicTensor<T>& x) {
    check_input(layer, x);
    BasicTensor<T> z = conv3d(x, layer.kernels, ConvMode::full);
    add_channel_bias(z, layer.bias);
    return activation_apply(layer.encode_activation, z);
}

template <typename T>
BasicTensor<T> cae_decode(const CaeLayer<T>& layer, const BasicTensor<T>& h) {
    layer.validate();
    return decode_maps<T>(layer, h, nullptr);
}

template <typename T>
double cae_loss(const CaeLayer<T>& layer, std::span<const BasicTensor<T>> batch) {
    check_batch(batch);
    double total = 0.0;
    for (const auto& x : batch) total += squared_error(run_pass(layer, x, false).reconstruction, x);
    return total / static_cast<double>(batch.size());
}

template <typename T>
CaeLossAndGradients<T> cae_loss_and_gradients(const CaeLayer<T>& layer,
                                              std::span<const BasicTensor<T>> batch) {
    check_batch(batch);
    const std::size_t K = layer.feature_maps(), J = layer.input_channels();
    CaeLossAndGradients<T> out;
    out.grads.kernels = BasicTensor<T>(layer.kernels.shape());
    out.grads.bias = BasicTensor<T>(layer.bias.shape());
    out.grads.decoder_bias = BasicTensor<T>(layer.decoder_bias.shape());
    const BasicTensor<T> flipped = flip3d(layer.kernels);
    const T scale = static_cast<T>(2.0 / static_cast<double>(batch.size()));
    const std::size_t taps = layer.kernel_size() * layer.kernel_size() * layer.kernel_size();

    for (const auto& x : batch) {
        CaePass<T> pass = run_pass(layer, x, true);
        out.loss += squared_error(pass.reconstruction, x);

        BasicTensor<T> d_recon(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) d_recon[i] = scale * (pass.reconstruction[i] - x[i]);

        // Decoder path: each map's contribution, then the tied (flipped) kernels.
        BasicTensor<T> d_hidden(pass.hidden.shape());
        const std::size_t per_map = d_hidden.size() / K;
        for (std::size_t k = 0; k < K; ++k) {
            const BasicTensor<T> dy = activation_grad(layer.decode_activation, pass.map_preact[k], d_recon);
            sum_per_channel(dy, out.grads.decoder_bias);
            auto cg = conv3d_backward(channel(pass.hidden, k), decoder_bank(flipped, k), ConvMode::valid, dy);
            std::copy(cg.input.raw(), cg.input.raw() + per_map, d_hidden.raw() + k * per_map);
            // d/dW of flip(W) is the flip of d/d(flip(W)).
            const BasicTensor<T> d_bank = flip3d(cg.kernels);
            T* dw = out.grads.kernels.raw() + k * J * taps;
            for (std::size_t i = 0; i < J * taps; ++i) dw[i] += d_bank[i];
        }

        // Encoder path.
        const BasicTensor<T> dz = activation_grad(layer.encode_activation, pass.preact, d_hidden);
        sum_per_channel(dz, out.grads.bias);
        auto cg = conv3d_backward(x, layer.kernels, ConvMode::full, dz, false);
        for (std::size_t i = 0; i < cg.kernels.size(); ++i) out.grads.kernels[i] += cg.kernels[i];
    }
    out.loss /= static_cast<double>(batch.size());
    return out;
}

GradCheckReport cae_gradient_check(CaeLayer<double>& layer, std::span<const TensorD> batch,
                                   double epsilon) {
    const auto analytic = cae_loss_and_gradients(layer, batch);
    std::vector<TensorD*> params{&layer.kernels, &layer.bias, &layer.decoder_bias};
    std::vector<const TensorD*> grads{&analytic.grads.kernels, &analytic.grads.bias,
                                      &analytic.grads.decoder_bias};
    std::vector<std::string> names{"kernels", "bias", "decoder_bias"};
    return check_gradients(params, grads, names, [&] { return cae_loss(layer, batch); }, epsilon);
}

// ---------------------------------------------------------------- training

template <typename T>
TrainingHistory train_cae(CaeLayer<T>& layer, std::span<const BasicTensor<T>> inputs,
                          const TrainConfig& config) {
    TrainingHistory history;
    history.initial_loss = std::numeric_limits<double>::quiet_NaN();
    if (config.epochs == 0) return history;
    if (config.batch_size == 0) throw ArgumentError("train_cae: batch_size must be >= 1");
    check_batch(inputs);
    layer.validate();

    Optimizer<T> optimizer(config.optimizer);
    Rng rng(config.seed);
    std::vector<std::size_t> order(inputs.size());
    history.initial_loss = cae_loss(layer, inputs);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const CaeLayer<T> checkpoint = layer;
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order.begin(), order.end());

        bool failed = false;
        for (std::size_t start = 0; start < order.size() && !failed; start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<BasicTensor<T>> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(inputs[order[i]]);

            auto lg = cae_loss_and_gradients<T>(layer, batch);
            if (!std::isfinite(lg.loss)) {
                failed = true;
                break;
            }
            std::array<BasicTensor<T>*, 3> params{&layer.kernels, &layer.bias, &layer.decoder_bias};
            std::array<const BasicTensor<T>*, 3> grads{&lg.grads.kernels, &lg.grads.bias,
                                                       &lg.grads.decoder_bias};
            if (!optimizer.step(params, grads)) failed = true;
            ++history.steps;
        }
        const double loss = failed ? std::numeric_limits<double>::quiet_NaN() : cae_loss(layer, inputs);
        if (failed || !std::isfinite(loss)) {
            layer = checkpoint;
            history.diverged = true;
            break;
        }
        history.epoch_loss.push_back(loss);
    }
    return history;
}

// ---------------------------------------------------------------- stacks

template <typename T>
void CaeStack<T>::validate() const {
    if (layers.empty()) throw ArgumentError("CaeStack needs at least one layer");
    if (pools.size() != layers.size()) {
        throw ArgumentError("CaeStack has " + std::to_string(layers.size()) + " layers but " +
                            std::to_string(pools.size()) + " pool configs");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].validate();
        if (pools[l].window == 0 || pools[l].stride == 0) {
            throw ArgumentError("CaeStack layer " + std::to_string(l) + " has a zero pool window or stride");
        }
        if (l > 0 && layers[l].input_channels() != layers[l - 1].feature_maps()) {
            throw ShapeError("CaeStack layer " + std::to_string(l) + " expects " +
                             std::to_string(layers[l].input_channels()) + " channels but layer " +
                             std::to_string(l - 1) + " emits " +
                             std::to_string(layers[l - 1].feature_maps()));
        }
    }
}

template <typename T>
CaeStack<T> CaeStack<T>::build(std::size_t image_channels, std::span<const std::size_t> feature_maps,
                               std::size_t kernel_size, PoolConfig pool, std::uint64_t seed,
                               Activation encode, Activation decode) {
    CaeStack stack;
    std::size_t channels = image_channels;
    for (std::size_t l = 0; l < feature_maps.size(); ++l) {
        stack.layers.push_back(CaeLayer<T>::initialized(channels, feature_maps[l], kernel_size,
                                                        derive_seed(seed, l), encode, decode));
        stack.pools.push_back(pool);
        channels = feature_maps[l];
    }
    stack.validate();
    return stack;
}

template <typename T>
std::vector<BasicTensor<T>> stack_forward(const CaeStack<T>& stack, const BasicTensor<T>& x) {
    stack.validate();
    std::vector<BasicTensor<T>> outputs;
    const BasicTensor<T>* current = &x;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const auto h = cae_encode(stack.layers[l], *current);
        outputs.push_back(maxpool3d(h, stack.pools[l].window, stack.pools[l].stride).output);
        current = &outputs.back();
    }
    return outputs;
}

template <typename T>
std::vector<Shape> stack_output_shapes(const CaeStack<T>& stack, const Shape& input) {
    stack.validate();
    std::vector<Shape> shapes;
    Shape current = input;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const Shape encoded = conv3d_output_shape(current, stack.layers[l].kernels.shape(), ConvMode::full);
        current = maxpool3d_output_shape(encoded, stack.pools[l].window, stack.pools[l].stride);
        shapes.push_back(current);
    }
    return shapes;
}

template <typename T>
std::vector<TrainingHistory> train_stack_greedy(CaeStack<T>& stack,
                                                std::span<const BasicTensor<T>> inputs,
                                                const TrainConfig& config) {
    stack.validate();
    std::vector<TrainingHistory> histories;
    std::vector<BasicTensor<T>> level(inputs.begin(), inputs.end());
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        TrainConfig layer_config = config;
        layer_config.seed = derive_seed(config.seed, l);
        histories.push_back(train_cae<T>(stack.layers[l], level, layer_config));
        if (histories.back().diverged) break;
        if (l + 1 == stack.layers.size()) break;
        for (auto& x : level) {
            x = maxpool3d(cae_encode(stack.layers[l], x), stack.pools[l].window, stack.pools[l].stride).output;
        }
    }
    return histories;
}

// ---------------------------------------------------------------- visualization

const char* to_string(SliceAxis axis) noexcept {
    switch (axis) {
        case SliceAxis::axial: return "axial";
        case SliceAxis::coronal: return "coronal";
        case SliceAxis::sagittal: return "sagittal";
    }
    return "?";
}

SliceAxis parse_slice_axis(const std::string& name) {
    if (name == "axial") return SliceAxis::axial;
    if (name == "coronal") return SliceAxis::coronal;
    if (name == "sagittal") return SliceAxis::sagittal;
    throw ArgumentError("unknown slice axis '" + name + "' (expected axial, coronal or sagittal)");
}

std::vector<GrayImage> export_feature_slices(const CaeStack<float>& stack, const Tensor& x,
                                             std::size_t layer_index, SliceAxis axis,
                                             std::size_t position) {
    stack.validate();
    if (layer_index >= stack.layers.size()) {
        throw ArgumentError("layer index " + std::to_string(layer_index) + " out of range for a " +
                            std::to_string(stack.layers.size()) + "-layer stack");
    }
    Tensor maps = x;
    for (std::size_t l = 0; l <= layer_index; ++l) {
        maps = maxpool3d(cae_encode(stack.layers[l], maps), stack.pools[l].window, stack.pools[l].stride).output;
    }
    const Shape& s = maps.shape();
    const std::size_t K = s[0], D = s[1], H = s[2], W = s[3];
    const std::size_t axis_extent = axis == SliceAxis::axial ? D : axis == SliceAxis::coronal ? H : W;
    if (position >= axis_extent) {
        throw ArgumentError(std::string(to_string(axis)) + " slice " + std::to_string(position) +
                            " out of range for feature maps " + s.str());
    }

    std::vector<GrayImage> images;
    for (std::size_t k = 0; k < K; ++k) {
        GrayImage img;
        std::vector<float> values;
        auto at = [&](std::size_t d, std::size_t h, std::size_t w) { return maps[((k * D + d) * H + h) * W + w]; };
        switch (axis) {
            case SliceAxis::axial:
                img.height = H, img.width = W;
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t w = 0; w < W; ++w) values.push_back(at(position, h, w));
                break;
            case SliceAxis::coronal:
                img.height = D, img.width = W;
                for (std::size_t d = 0; d < D; ++d)
                    for (std::size_t w = 0; w < W; ++w) values.push_back(at(d, position, w));
                break;
            case SliceAxis::sagittal:
                img.height = D, img.width = H;
                for (std::size_t d = 0; d < D; ++d)
                    for (std::size_t h = 0; h < H; ++h) values.push_back(at(d, h, position));
                break;
        }
        const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
        const float range = *hi - *lo;
        img.pixels.resize(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            img.pixels[i] = range > 0.0f
                                ? static_cast<std::uint8_t>(std::lround(255.0f * (values[i] - *lo) / range))
                                : std::uint8_t{0};
        }
        images.push_back(std::move(img));
    }
    return images;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
    if (image.pixels.size() != image.width * image.height) {
        throw ArgumentError("write_pgm: pixel count does not match " + std::to_string(image.width) + "x" +
                            std::to_string(image.height));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::filesystem::path> write_feature_slices(const std::filesystem::path& dir,
                                                        std::span<const GrayImage> slices,
                                                        std::size_t layer_index, SliceAxis axis,
                                                        std::size_t position) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (std::size_t k = 0; k < slices.size(); ++k) {
        auto path = dir / ("layer" + std::to_string(layer_index) + "_map" + std::to_string(k) + "_" +
                           to_string(axis) + std::to_string(position) + ".pgm");
        write_pgm(slices[k], path);
        paths.push_back(std::move(path));
    }
    return paths;
}

#define CORTEX3D_INSTANTIATE(T)                                                                        \
    template struct CaeLayer<T>;                                                                       \
    template struct CaeStack<T>;                                                                       \
    template BasicTensor<T> cae_encode(const CaeLayer<T>&, const BasicTensor<T>&);                     \
    template BasicTensor<T> cae_decode(const CaeLayer<T>&, const BasicTensor<T>&);                     \
    template double cae_loss(const CaeLayer<T>&, std::span<const BasicTensor<T>>);                     \
    template CaeLossAndGradients<T> cae_loss_and_gradients(const CaeLayer<T>&,                         \
                                                           std::span<const BasicTensor<T>>);           \
    template TrainingHistory train_cae(CaeLayer<T>&, std::span<const BasicTensor<T>>,                  \
                                       const TrainConfig&);                                            \
    template std::vector<BasicTensor<T>> stack_forward(const CaeStack<T>&, const BasicTensor<T>&);     \
    template std::vector<Shape> stack_output_shapes(const CaeStack<T>&, const Shape&);                 \
    template std::vector<TrainingHistory> train_stack_greedy(CaeStack<T>&,                             \
                                                             std::span<const BasicTensor<T>>,          \
                                                             const TrainConfig&);

CORTEX3D_INSTANTIATE(float)
CORTEX3D_INSTANTIATE(double)
#undef CORTEX3D_INSTANTIATE

}  // namespace cortex3d
