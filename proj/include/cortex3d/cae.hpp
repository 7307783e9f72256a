#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cortex3d/nn.hpp"
#include "cortex3d/optim.hpp"

namespace cortex3d {

/// One tied-weight 3D convolutional autoencoder.
///
/// Encoding is a full-mode cross-correlation of the J-channel input with K
/// filters, plus one bias per feature map, through f:
///     h_k = f(W_k (*)full x + b_k)
/// so every spatial extent grows by n-1. Decoding runs each feature map back
/// through the flipped filters in valid mode, adds the per-channel decoder
/// bias, applies g per map and sums over maps:
///     x_hat = sum_k g(flip(W_k) (*)valid h_k + b_inv)
/// which restores the input extent exactly. Decoder kernels are never stored;
/// they are derived from `kernels` at use time.
template <typename T>
struct CaeLayer {
    BasicTensor<T> kernels;       // [K, J, n, n, n]
    BasicTensor<T> bias;          // [K]
    BasicTensor<T> decoder_bias;  // [J]
    Activation encode_activation = Activation::relu;
    Activation decode_activation = Activation::relu;

    std::size_t feature_maps() const { return kernels.shape()[0]; }
    std::size_t input_channels() const { return kernels.shape()[1]; }
    std::size_t kernel_size() const { return kernels.shape()[2]; }

    /// Glorot-uniform filters (fan_in = J n^3, fan_out = K n^3), zero biases.
    static CaeLayer initialized(std::size_t input_channels, std::size_t feature_maps,
                                std::size_t kernel_size, std::uint64_t seed,
                                Activation encode = Activation::relu,
                                Activation decode = Activation::relu);

    void validate() const;

    template <typename U>
    CaeLayer<U> cast() const {
        return {kernels.template cast<U>(), bias.template cast<U>(), decoder_bias.template cast<U>(),
                encode_activation, decode_activation};
    }
};

template <typename T>
BasicTensor<T> cae_encode(const CaeLayer<T>& layer, const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> cae_decode(const CaeLayer<T>& layer, const BasicTensor<T>& h);

/// Mean over the batch of the summed squared voxel error of each image:
///     E = (1/T) sum_t ||x_hat_t - x_t||^2
template <typename T>
double cae_loss(const CaeLayer<T>& layer, std::span<const BasicTensor<T>> batch);

template <typename T>
struct CaeGradients {
    BasicTensor<T> kernels;
    BasicTensor<T> bias;
    BasicTensor<T> decoder_bias;
};

template <typename T>
struct CaeLossAndGradients {
    double loss = 0.0;
    CaeGradients<T> grads;
};

/// E and its gradient. The kernel gradient carries both the encoder path and,
/// through the flip, the tied decoder path.
template <typename T>
CaeLossAndGradients<T> cae_loss_and_gradients(const CaeLayer<T>& layer,
                                              std::span<const BasicTensor<T>> batch);

/// Finite-difference check of cae_loss_and_gradients over every parameter.
GradCheckReport cae_gradient_check(CaeLayer<double>& layer, std::span<const TensorD> batch,
                                   double epsilon = 1e-5);

struct TrainConfig {
    OptimizerConfig optimizer;
    std::size_t epochs = 50;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
};

struct TrainingHistory {
    /// Dataset loss before the first update (NaN when no epochs ran).
    double initial_loss = 0.0;
    /// Dataset loss after each completed epoch.
    std::vector<double> epoch_loss;
    std::size_t steps = 0;
    /// Training hit a non-finite loss or gradient; parameters were restored
    /// to the start of the failing epoch.
    bool diverged = false;
};

/// Mini-batch training of one layer on the mean squared reconstruction error.
/// Batches are drawn from a seeded permutation each epoch; gradients are
/// averaged over the batch.
template <typename T>
TrainingHistory train_cae(CaeLayer<T>& layer, std::span<const BasicTensor<T>> inputs,
                          const TrainConfig& config);

struct PoolConfig {
    std::size_t window = 2;
    std::size_t stride = 2;
};

/// Greedily trained hierarchy of CAEs. Layer l consumes the max-pooled
/// encodings of layer l-1; layer 0 consumes the image itself.
template <typename T>
struct CaeStack {
    std::vector<CaeLayer<T>> layers;
    std::vector<PoolConfig> pools;

    std::size_t image_channels() const { return layers.front().input_channels(); }

    /// Throws unless channel counts chain and pools align with layers.
    void validate() const;

    static CaeStack build(std::size_t image_channels, std::span<const std::size_t> feature_maps,
                          std::size_t kernel_size, PoolConfig pool, std::uint64_t seed,
                          Activation encode = Activation::relu, Activation decode = Activation::relu);
};

/// Pooled encodings of every layer, computed bottom-up.
template <typename T>
std::vector<BasicTensor<T>> stack_forward(const CaeStack<T>& stack, const BasicTensor<T>& x);

/// Shapes stack_forward would produce, without touching any data.
template <typename T>
std::vector<Shape> stack_output_shapes(const CaeStack<T>& stack, const Shape& input);

/// Trains layer 0 on the inputs, materializes its pooled encodings, trains
/// layer 1 on those, and so on. Earlier layers are never revisited. Layer l
/// uses seed derive_seed(config.seed, l).
template <typename T>
std::vector<TrainingHistory> train_stack_greedy(CaeStack<T>& stack,
                                                std::span<const BasicTensor<T>> inputs,
                                                const TrainConfig& config);

// ---------------------------------------------------------------- visualization

enum class SliceAxis { axial, coronal, sagittal };

const char* to_string(SliceAxis axis) noexcept;
SliceAxis parse_slice_axis(const std::string& name);

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

/// One 2D slice per feature map of layer `layer_index`'s pooled output,
/// min-max scaled to [0, 255]. A constant map becomes all black.
/// Axial fixes depth (image is H x W), coronal fixes height (D x W), sagittal
/// fixes width (D x H).
std::vector<GrayImage> export_feature_slices(const CaeStack<float>& stack, const Tensor& x,
                                             std::size_t layer_index, SliceAxis axis,
                                             std::size_t position);

/// Binary PGM (P5, maxval 255).
void write_pgm(const GrayImage& image, const std::filesystem::path& path);

/// Writes `layer{l}_map{k}_{axis}{pos}.pgm` for each slice; returns the paths.
std::vector<std::filesystem::path> write_feature_slices(const std::filesystem::path& dir,
                                                        std::span<const GrayImage> slices,
                                                        std::size_t layer_index, SliceAxis axis,
                                                        std::size_t position);

}  // namespace cortex3d
