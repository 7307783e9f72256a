#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cortex3d/tensor.hpp"

namespace cortex3d {

enum class Activation { relu, sigmoid, identity };

const char* to_string(Activation kind) noexcept;
Activation parse_activation(const std::string& name);

template <typename T>
BasicTensor<T> activation_apply(Activation kind, const BasicTensor<T>& x);

/// upstream * f'(x), where x is the pre-activation. relu'(0) is taken as 0.
template <typename T>
BasicTensor<T> activation_grad(Activation kind, const BasicTensor<T>& x,
                               const BasicTensor<T>& upstream);

/// y = act(W x + b) for W of shape [out, in].
template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& weights, const BasicTensor<T>& bias,
                             const BasicTensor<T>& x, Activation activation = Activation::identity);

/// Max-subtracted softmax over a flat vector of at least two finite logits.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
struct NllResult {
    double loss = 0.0;
    /// d loss / d logits = probs - onehot(true_class).
    BasicTensor<T> grad_logits;
    /// True when probs[true_class] fell below the 1e-30 floor before the log.
    bool clamped = false;
};

inline constexpr double kProbabilityFloor = 1e-30;

template <typename T>
NllResult<T> nll_loss(const BasicTensor<T>& probs, std::size_t true_class);

// ---------------------------------------------------------------- layers

enum class LayerKind { conv3d, maxpool, flatten, dense, softmax };

const char* to_string(LayerKind kind) noexcept;

/// One link of a strict layer chain. Parameter tensors are used by conv3d
/// (weights [K,J,n,n,n], bias [K]) and dense (weights [out,in], bias [out]);
/// the other kinds leave them empty.
template <typename T>
struct Layer {
    LayerKind kind = LayerKind::flatten;
    Activation activation = Activation::identity;
    bool frozen = false;
    ConvMode conv_mode = ConvMode::full;
    std::size_t pool_window = 2;
    std::size_t pool_stride = 2;
    BasicTensor<T> weights;
    BasicTensor<T> bias;

    bool has_params() const noexcept { return kind == LayerKind::conv3d || kind == LayerKind::dense; }

    static Layer conv(BasicTensor<T> kernels, BasicTensor<T> bias, ConvMode mode,
                      Activation activation, bool frozen = false);
    static Layer maxpool(std::size_t window = 2, std::size_t stride = 2);
    static Layer flatten();
    static Layer dense(BasicTensor<T> weights, BasicTensor<T> bias, Activation activation,
                       bool frozen = false);
    static Layer softmax();
};

/// Per-layer parameter gradients mirroring a network's parameters. Layers
/// without parameters and frozen layers hold zero-filled (or empty) tensors.
template <typename T>
struct GradientSet {
    struct Entry {
        BasicTensor<T> weights;
        BasicTensor<T> bias;
    };
    std::vector<Entry> layers;

    void add(const GradientSet& other);
    void scale(T factor);
    bool all_zero() const;
};

template <typename T>
class Network;

/// Handle to one parameter tensor of a network, used by optimizers.
template <typename T>
struct ParamRef {
    std::size_t layer = 0;
    const char* name = "";
    BasicTensor<T>* tensor = nullptr;
    bool frozen = false;
};

/// Strict chain of layers over a fixed input shape. Shape chaining is checked
/// at construction. A softmax layer may only appear last.
template <typename T>
class Network {
public:
    Network();
    Network(Shape input_shape, std::vector<Layer<T>> layers);
    Network(const Network& other);
    Network(Network&& other) noexcept;
    Network& operator=(const Network& other);
    Network& operator=(Network&& other) noexcept;
    ~Network() = default;

    const Shape& input_shape() const noexcept { return input_shape_; }
    /// Shape entering layer i; index layer_count() gives the output shape.
    const Shape& shape_at(std::size_t i) const { return shapes_.at(i); }
    const Shape& output_shape() const { return shapes_.back(); }
    std::size_t layer_count() const noexcept { return layers_.size(); }
    const Layer<T>& layer(std::size_t i) const { return layers_.at(i); }
    std::span<const Layer<T>> layers() const noexcept { return layers_; }
    bool ends_with_softmax() const noexcept;

    /// Appends a layer and re-validates the chain.
    void append(Layer<T> layer);
    void set_frozen(std::size_t i, bool frozen);

    /// Mutable views of every parameter tensor. Invalidates outstanding
    /// forward caches.
    std::vector<ParamRef<T>> parameters();
    std::size_t parameter_count() const;

    /// Number of leading layers whose outputs do not depend on any trainable
    /// parameter: every layer before the first unfrozen parametrized one.
    std::size_t frozen_prefix() const;

    /// Identity used to reject caches produced by a different network or
    /// before a parameter change.
    std::uint64_t id() const noexcept { return id_; }
    std::uint64_t version() const noexcept { return version_; }

    template <typename U>
    Network<U> cast() const;

private:
    void validate();

    Shape input_shape_;
    std::vector<Layer<T>> layers_;
    std::vector<Shape> shapes_;
    std::uint64_t id_;
    std::uint64_t version_ = 0;
};

/// Everything network_backward needs from a forward pass.
template <typename T>
struct ForwardCache {
    std::uint64_t network_id = 0;
    std::uint64_t network_version = 0;
    std::size_t first_layer = 0;
    /// inputs[i] is the input of layer first_layer + i; the last entry is the output.
    std::vector<BasicTensor<T>> inputs;
    /// Pre-activation of conv/dense layers (empty for other kinds).
    std::vector<BasicTensor<T>> preacts;
    std::vector<PoolIndex> pool_indices;

    const BasicTensor<T>& output() const { return inputs.back(); }
};

/// Runs layers [first_layer, end) on x, which must have shape_at(first_layer).
template <typename T>
ForwardCache<T> network_forward(const Network<T>& net, const BasicTensor<T>& x,
                                std::size_t first_layer = 0);

/// Output only; keeps no intermediate tensors.
template <typename T>
BasicTensor<T> network_infer(const Network<T>& net, const BasicTensor<T>& x,
                             std::size_t first_layer = 0);

/// Back-propagates loss_grad through the cached pass. When the network ends
/// in softmax, loss_grad is the gradient with respect to the softmax input
/// (the logits, as returned by nll_loss); otherwise it is with respect to the
/// network output. Frozen layers get zero gradients; propagation stops below
/// the lowest trainable layer.
template <typename T>
GradientSet<T> network_backward(const Network<T>& net, const ForwardCache<T>& cache,
                                const BasicTensor<T>& loss_grad);

template <typename T>
GradientSet<T> zero_gradients(const Network<T>& net);

// ---------------------------------------------------------------- gradient checking

struct GradCheckReport {
    double max_relative_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    /// Coordinates of the worst offender.
    std::size_t worst_tensor = 0;
    std::string worst_name;
    std::size_t worst_offset = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is numerically zero from dividing roundoff by roundoff.
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Central-difference check of analytic gradients for an arbitrary scalar
/// loss of a set of parameter tensors. params are perturbed in place and
/// restored.
GradCheckReport check_gradients(std::span<TensorD* const> params,
                                std::span<const TensorD* const> analytic,
                                std::span<const std::string> names,
                                const std::function<double()>& loss, double epsilon = 1e-5,
                                double floor = 1e-8);

/// Perturbs every unfrozen parameter of a softmax-terminated network by
/// +-epsilon and compares (L+ - L-) / 2 epsilon with network_backward.
/// Central differences carry roughly 1e-11 absolute roundoff at the default
/// epsilon, so relative errors below ~1e-8 need a floor near the gradient
/// scale being judged.
GradCheckReport finite_diff_check(Network<double>& net, const TensorD& x, std::size_t true_class,
                                  double epsilon = 1e-5, double floor = 1e-8);

}  // namespace cortex3d
