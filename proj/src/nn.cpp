#include "cortex3d/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace cortex3d {

// ---------------------------------------------------------------- activations

const char* to_string(Activation kind) noexcept {
    switch (kind) {
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::identity: return "identity";
    }
    return "?";
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "identity") return Activation::identity;
    throw ArgumentError("unknown activation '" + name + "'");
}

namespace {

template <typename T>
T sigmoid(T u) {
    return T(1) / (T(1) + std::exp(-u));
}

}  // namespace

template <typename T>
BasicTensor<T> activation_apply(Activation kind, const BasicTensor<T>& x) {
    BasicTensor<T> y = x;
    switch (kind) {
        case Activation::relu:
            for (auto& v : y.data()) v = v > T(0) ? v : T(0);
            break;
        case Activation::sigmoid:
            for (auto& v : y.data()) v = sigmoid(v);
            break;
        case Activation::identity:
            break;
    }
    return y;
}

template <typename T>
BasicTensor<T> activation_grad(Activation kind, const BasicTensor<T>& x,
                               const BasicTensor<T>& upstream) {
    if (x.shape() != upstream.shape()) {
        throw ShapeError("activation_grad: x " + x.shape().str() + " vs upstream " +
                         upstream.shape().str());
    }
    BasicTensor<T> g = upstream;
    auto gd = g.data();
    auto xd = x.data();
    switch (kind) {
        case Activation::relu:
            for (std::size_t i = 0; i < gd.size(); ++i)
                if (!(xd[i] > T(0))) gd[i] = T(0);
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < gd.size(); ++i) {
                const T s = sigmoid(xd[i]);
                gd[i] *= s * (T(1) - s);
            }
            break;
        case Activation::identity:
            break;
    }
    return g;
}

// ---------------------------------------------------------------- dense / softmax / loss

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& weights, const BasicTensor<T>& bias,
                             const BasicTensor<T>& x, Activation activation) {
    if (weights.rank() != 2 || bias.rank() != 1 || x.rank() != 1 ||
        weights.shape()[1] != x.size() || weights.shape()[0] != bias.size()) {
        throw ShapeError("dense_forward: weights " + weights.shape().str() + ", bias " +
                         bias.shape().str() + ", input " + x.shape().str());
    }
    const std::size_t out = weights.shape()[0], in = weights.shape()[1];
    BasicTensor<T> y(Shape{out});
    for (std::size_t r = 0; r < out; ++r) {
        const T* row = weights.raw() + r * in;
        T acc = 0;
        for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
        y[r] = acc + bias[r];
    }
    return activation_apply(activation, y);
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
    if (logits.rank() != 1 || logits.size() < 2) {
        throw ShapeError("softmax expects a flat vector of length >= 2, got " + logits.shape().str());
    }
    for (T v : logits.data()) {
        if (!std::isfinite(v)) throw ArgumentError("softmax: non-finite logit");
    }
    const T peak = *std::max_element(logits.data().begin(), logits.data().end());
    std::vector<double> e(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] = std::exp(static_cast<double>(logits[i]) - static_cast<double>(peak));
        total += e[i];
    }
    BasicTensor<T> p(logits.shape());
    for (std::size_t i = 0; i < e.size(); ++i) p[i] = static_cast<T>(e[i] / total);
    return p;
}

template <typename T>
NllResult<T> nll_loss(const BasicTensor<T>& probs, std::size_t true_class) {
    if (probs.rank() != 1) throw ShapeError("nll_loss expects a flat probability vector");
    if (true_class >= probs.size()) {
        throw ArgumentError("nll_loss: class " + std::to_string(true_class) + " out of range for " +
                            std::to_string(probs.size()) + " classes");
    }
    NllResult<T> r;
    double p = static_cast<double>(probs[true_class]);
    if (!(p >= kProbabilityFloor)) {
        p = kProbabilityFloor;
        r.clamped = true;
    }
    r.loss = -std::log(p);
    r.grad_logits = probs;
    r.grad_logits[true_class] -= T(1);
    return r;
}

// ---------------------------------------------------------------- layers

const char* to_string(LayerKind kind) noexcept {
    switch (kind) {
        case LayerKind::conv3d: return "conv3d";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dense: return "dense";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

template <typename T>
Layer<T> Layer<T>::conv(BasicTensor<T> kernels, BasicTensor<T> bias, ConvMode mode,
                        Activation activation, bool frozen) {
    Layer l;
    l.kind = LayerKind::conv3d;
    l.weights = std::move(kernels);
    l.bias = std::move(bias);
    l.conv_mode = mode;
    l.activation = activation;
    l.frozen = frozen;
    return l;
}

template <typename T>
Layer<T> Layer<T>::maxpool(std::size_t window, std::size_t stride) {
    Layer l;
    l.kind = LayerKind::maxpool;
    l.pool_window = window;
    l.pool_stride = stride;
    return l;
}

template <typename T>
Layer<T> Layer<T>::flatten() {
    Layer l;
    l.kind = LayerKind::flatten;
    return l;
}

template <typename T>
Layer<T> Layer<T>::dense(BasicTensor<T> weights, BasicTensor<T> bias, Activation activation,
                         bool frozen) {
    Layer l;
    l.kind = LayerKind::dense;
    l.weights = std::move(weights);
    l.bias = std::move(bias);
    l.activation = activation;
    l.frozen = frozen;
    return l;
}

template <typename T>
Layer<T> Layer<T>::softmax() {
    Layer l;
    l.kind = LayerKind::softmax;
    return l;
}

// ---------------------------------------------------------------- GradientSet

template <typename T>
void GradientSet<T>::add(const GradientSet& other) {
    if (other.layers.size() != layers.size()) throw ShapeError("GradientSet::add: layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto accumulate = [](BasicTensor<T>& dst, const BasicTensor<T>& src) {
            if (dst.shape() != src.shape()) throw ShapeError("GradientSet::add: shape mismatch");
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        };
        accumulate(layers[i].weights, other.layers[i].weights);
        accumulate(layers[i].bias, other.layers[i].bias);
    }
}

template <typename T>
void GradientSet<T>::scale(T factor) {
    for (auto& e : layers) {
        for (auto& v : e.weights.data()) v *= factor;
        for (auto& v : e.bias.data()) v *= factor;
    }
}

template <typename T>
bool GradientSet<T>::all_zero() const {
    for (const auto& e : layers) {
        for (T v : e.weights.data())
            if (v != T(0)) return false;
        for (T v : e.bias.data())
            if (v != T(0)) return false;
    }
    return true;
}

// ---------------------------------------------------------------- Network

namespace {

std::uint64_t next_network_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}

}  // namespace

template <typename T>
Network<T>::Network() : shapes_(1), id_(next_network_id()) {}

template <typename T>
Network<T>::Network(Shape input_shape, std::vector<Layer<T>> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), id_(next_network_id()) {
    validate();
}

template <typename T>
Network<T>::Network(const Network& other)
    : input_shape_(other.input_shape_),
      layers_(other.layers_),
      shapes_(other.shapes_),
      id_(next_network_id()) {}

template <typename T>
Network<T>::Network(Network&& other) noexcept
    : input_shape_(std::move(other.input_shape_)),
      layers_(std::move(other.layers_)),
      shapes_(std::move(other.shapes_)),
      id_(other.id_),
      version_(other.version_) {
    other.id_ = next_network_id();
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
    if (this != &other) {
        input_shape_ = other.input_shape_;
        layers_ = other.layers_;
        shapes_ = other.shapes_;
        ++version_;
    }
    return *this;
}

template <typename T>
Network<T>& Network<T>::operator=(Network&& other) noexcept {
    if (this != &other) {
        input_shape_ = std::move(other.input_shape_);
        layers_ = std::move(other.layers_);
        shapes_ = std::move(other.shapes_);
        ++version_;
    }
    return *this;
}

template <typename T>
bool Network<T>::ends_with_softmax() const noexcept {
    return !layers_.empty() && layers_.back().kind == LayerKind::softmax;
}

template <typename T>
void Network<T>::validate() {
    if (input_shape_.rank() == 0) throw ShapeError("network input shape is empty");
    shapes_.assign(1, input_shape_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer<T>& l = layers_[i];
        const Shape& in = shapes_.back();
        const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + "): ";
        Shape out;
        switch (l.kind) {
            case LayerKind::conv3d:
                if (l.weights.rank() != 5 || l.bias.rank() != 1 || l.bias.size() != l.weights.shape()[0]) {
                    throw ShapeError(where + "kernels " + l.weights.shape().str() + " and bias " +
                                     l.bias.shape().str() + " are inconsistent");
                }
                try {
                    out = conv3d_output_shape(in, l.weights.shape(), l.conv_mode);
                } catch (const ShapeError& e) {
                    throw ShapeError(where + e.what());
                }
                break;
            case LayerKind::maxpool:
                if (in.rank() != 4) throw ShapeError(where + "expects [K,D,H,W], got " + in.str());
                out = maxpool3d_output_shape(in, l.pool_window, l.pool_stride);
                break;
            case LayerKind::flatten:
                out = Shape{in.numel()};
                break;
            case LayerKind::dense:
                if (in.rank() != 1) throw ShapeError(where + "expects a flat input, got " + in.str());
                if (l.weights.rank() != 2 || l.weights.shape()[1] != in[0] || l.bias.rank() != 1 ||
                    l.bias.size() != l.weights.shape()[0]) {
                    throw ShapeError(where + "weights " + l.weights.shape().str() + ", bias " +
                                     l.bias.shape().str() + " do not fit input " + in.str());
                }
                out = Shape{l.weights.shape()[0]};
                break;
            case LayerKind::softmax:
                if (i + 1 != layers_.size()) throw ShapeError(where + "softmax must be the last layer");
                if (in.rank() != 1 || in[0] < 2) throw ShapeError(where + "needs >= 2 flat logits, got " + in.str());
                out = in;
                break;
        }
        shapes_.push_back(out);
    }
}

template <typename T>
void Network<T>::append(Layer<T> layer) {
    layers_.push_back(std::move(layer));
    try {
        validate();
    } catch (...) {
        layers_.pop_back();
        validate();
        throw;
    }
    ++version_;
}

template <typename T>
void Network<T>::set_frozen(std::size_t i, bool frozen) {
    layers_.at(i).frozen = frozen;
    ++version_;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
    ++version_;
    std::vector<ParamRef<T>> refs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Layer<T>& l = layers_[i];
        if (!l.has_params()) continue;
        refs.push_back({i, "weights", &l.weights, l.frozen});
        refs.push_back({i, "bias", &l.bias, l.frozen});
    }
    return refs;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
    return n;
}

template <typename T>
std::size_t Network<T>::frozen_prefix() const {
    std::size_t i = 0;
    while (i < layers_.size() && !(layers_[i].has_params() && !layers_[i].frozen)) ++i;
    return i;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
    std::vector<Layer<U>> layers;
    layers.reserve(layers_.size());
    for (const auto& l : layers_) {
        Layer<U> c;
        c.kind = l.kind;
        c.activation = l.activation;
        c.frozen = l.frozen;
        c.conv_mode = l.conv_mode;
        c.pool_window = l.pool_window;
        c.pool_stride = l.pool_stride;
        if (!l.weights.empty()) c.weights = l.weights.template cast<U>();
        if (!l.bias.empty()) c.bias = l.bias.template cast<U>();
        layers.push_back(std::move(c));
    }
    return Network<U>(input_shape_, std::move(layers));
}

// ---------------------------------------------------------------- forward / backward

namespace {

template <typename T>
void add_channel_bias(BasicTensor<T>& z, const BasicTensor<T>& bias) {
    const std::size_t K = z.shape()[0];
    const std::size_t per = z.size() / K;
    for (std::size_t k = 0; k < K; ++k) {
        T* p = z.raw() + k * per;
        for (std::size_t i = 0; i < per; ++i) p[i] += bias[k];
    }
}

template <typename T>
void check_input(const Network<T>& net, const BasicTensor<T>& x, std::size_t first_layer) {
    if (first_layer > net.layer_count()) {
        throw ArgumentError("first_layer " + std::to_string(first_layer) + " beyond " +
                            std::to_string(net.layer_count()) + " layers");
    }
    if (x.shape() != net.shape_at(first_layer)) {
        throw ShapeError("network input " + x.shape().str() + " does not match expected " +
                         net.shape_at(first_layer).str());
    }
}

// Applies one layer; fills preact / pool index when the caller keeps a cache.
template <typename T>
BasicTensor<T> apply_layer(const Layer<T>& l, const BasicTensor<T>& x, BasicTensor<T>* preact,
                           PoolIndex* index) {
    switch (l.kind) {
        case LayerKind::conv3d: {
            BasicTensor<T> z = conv3d(x, l.weights, l.conv_mode);
            add_channel_bias(z, l.bias);
            BasicTensor<T> y = activation_apply(l.activation, z);
            if (preact) *preact = std::move(z);
            return y;
        }
        case LayerKind::dense: {
            BasicTensor<T> z = dense_forward(l.weights, l.bias, x, Activation::identity);
            BasicTensor<T> y = activation_apply(l.activation, z);
            if (preact) *preact = std::move(z);
            return y;
        }
        case LayerKind::maxpool: {
            auto pooled = maxpool3d(x, l.pool_window, l.pool_stride);
            if (index) *index = std::move(pooled.index);
            return std::move(pooled.output);
        }
        case LayerKind::flatten:
            return x.reshaped(Shape{x.size()});
        case LayerKind::softmax:
            return softmax(x);
    }
    throw ArgumentError("unknown layer kind");
}

}  // namespace

template <typename T>
ForwardCache<T> network_forward(const Network<T>& net, const BasicTensor<T>& x,
                                std::size_t first_layer) {
    check_input(net, x, first_layer);
    ForwardCache<T> cache;
    cache.network_id = net.id();
    cache.network_version = net.version();
    cache.first_layer = first_layer;
    const std::size_t n = net.layer_count() - first_layer;
    cache.inputs.reserve(n + 1);
    cache.preacts.resize(n);
    cache.pool_indices.resize(n);
    cache.inputs.push_back(x);
    for (std::size_t i = 0; i < n; ++i) {
        const Layer<T>& l = net.layer(first_layer + i);
        cache.inputs.push_back(apply_layer(l, cache.inputs.back(), &cache.preacts[i],
                                           &cache.pool_indices[i]));
    }
    return cache;
}

template <typename T>
BasicTensor<T> network_infer(const Network<T>& net, const BasicTensor<T>& x, std::size_t first_layer) {
    check_input(net, x, first_layer);
    BasicTensor<T> current = x;
    for (std::size_t i = first_layer; i < net.layer_count(); ++i) {
        current = apply_layer<T>(net.layer(i), current, nullptr, nullptr);
    }
    return current;
}

template <typename T>
GradientSet<T> zero_gradients(const Network<T>& net) {
    GradientSet<T> g;
    g.layers.resize(net.layer_count());
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
        const Layer<T>& l = net.layer(i);
        if (!l.has_params()) continue;
        g.layers[i].weights = BasicTensor<T>(l.weights.shape());
        g.layers[i].bias = BasicTensor<T>(l.bias.shape());
    }
    return g;
}

template <typename T>
GradientSet<T> network_backward(const Network<T>& net, const ForwardCache<T>& cache,
                                const BasicTensor<T>& loss_grad) {
    if (cache.network_id != net.id() || cache.network_version != net.version() ||
        cache.inputs.size() != net.layer_count() - cache.first_layer + 1) {
        throw ArgumentError("network_backward: stale forward cache (network changed since the forward pass)");
    }
    if (loss_grad.shape() != net.output_shape()) {
        throw ShapeError("network_backward: loss gradient " + loss_grad.shape().str() +
                         " does not match output " + net.output_shape().str());
    }
    GradientSet<T> grads = zero_gradients(net);

    // Lowest layer that needs a parameter gradient; nothing below it matters.
    std::size_t lowest = net.layer_count();
    for (std::size_t i = cache.first_layer; i < net.layer_count(); ++i) {
        const Layer<T>& l = net.layer(i);
        if (l.has_params() && !l.frozen) {
            lowest = i;
            break;
        }
    }
    if (lowest == net.layer_count()) return grads;

    BasicTensor<T> g = loss_grad;
    for (std::size_t i = net.layer_count(); i-- > lowest;) {
        const Layer<T>& l = net.layer(i);
        const std::size_t c = i - cache.first_layer;
        const BasicTensor<T>& x = cache.inputs[c];
        const bool need_input_grad = i > lowest;
        switch (l.kind) {
            case LayerKind::softmax:
                break;  // loss_grad is already with respect to the logits
            case LayerKind::flatten:
                g = g.reshaped(x.shape());
                break;
            case LayerKind::maxpool:
                g = maxpool3d_grad(g, cache.pool_indices[c], x.shape());
                break;
            case LayerKind::dense: {
                const BasicTensor<T> dz = activation_grad(l.activation, cache.preacts[c], g);
                const std::size_t out = l.weights.shape()[0], in = l.weights.shape()[1];
                if (!l.frozen) {
                    auto& e = grads.layers[i];
                    for (std::size_t r = 0; r < out; ++r) {
                        T* row = e.weights.raw() + r * in;
                        for (std::size_t col = 0; col < in; ++col) row[col] = dz[r] * x[col];
                        e.bias[r] = dz[r];
                    }
                }
                if (need_input_grad) {
                    BasicTensor<T> gx(Shape{in});
                    for (std::size_t r = 0; r < out; ++r) {
                        const T* row = l.weights.raw() + r * in;
                        for (std::size_t col = 0; col < in; ++col) gx[col] += row[col] * dz[r];
                    }
                    g = std::move(gx);
                }
                break;
            }
            case LayerKind::conv3d: {
                const BasicTensor<T> dz = activation_grad(l.activation, cache.preacts[c], g);
                auto cg = conv3d_backward(x, l.weights, l.conv_mode, dz, need_input_grad);
                if (!l.frozen) {
                    auto& e = grads.layers[i];
                    e.weights = std::move(cg.kernels);
                    const std::size_t K = dz.shape()[0];
                    const std::size_t per = dz.size() / K;
                    for (std::size_t k = 0; k < K; ++k) {
                        T acc = 0;
                        const T* p = dz.raw() + k * per;
                        for (std::size_t v = 0; v < per; ++v) acc += p[v];
                        e.bias[k] = acc;
                    }
                }
                if (need_input_grad) g = std::move(cg.input);
                break;
            }
        }
    }
    return grads;
}

// ---------------------------------------------------------------- gradient checking

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport check_gradients(std::span<TensorD* const> params,
                                std::span<const TensorD* const> analytic,
                                std::span<const std::string> names,
                                const std::function<double()>& loss, double epsilon, double floor) {
    if (params.size() != analytic.size() || params.size() != names.size()) {
        throw ArgumentError("check_gradients: params, analytic and names must align");
    }
    GradCheckReport report;
    for (std::size_t t = 0; t < params.size(); ++t) {
        TensorD& p = *params[t];
        const TensorD& a = *analytic[t];
        if (p.shape() != a.shape()) {
            throw ShapeError("check_gradients: parameter " + names[t] + " " + p.shape().str() +
                             " vs gradient " + a.shape().str());
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + epsilon;
            const double plus = loss();
            p[i] = saved - epsilon;
            const double minus = loss();
            p[i] = saved;
            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double err = relative_error(a[i], numeric, floor);
            ++report.checked;
            report.max_abs_error = std::max(report.max_abs_error, std::abs(a[i] - numeric));
            if (err > report.max_relative_error || report.checked == 1) {
                report.max_relative_error = err;
                report.worst_tensor = t;
                report.worst_name = names[t];
                report.worst_offset = i;
                report.worst_analytic = a[i];
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

GradCheckReport finite_diff_check(Network<double>& net, const TensorD& x, std::size_t true_class,
                                  double epsilon, double floor) {
    if (!net.ends_with_softmax()) {
        throw ArgumentError("finite_diff_check needs a softmax-terminated network");
    }
    GradientSet<double> analytic;
    {
        const auto cache = network_forward(net, x);
        const auto nll = nll_loss(cache.output(), true_class);
        analytic = network_backward(net, cache, nll.grad_logits);
    }
    std::vector<TensorD*> params;
    std::vector<const TensorD*> grads;
    std::vector<std::string> names;
    for (const auto& ref : net.parameters()) {
        if (ref.frozen) continue;
        params.push_back(ref.tensor);
        const auto& e = analytic.layers[ref.layer];
        grads.push_back(std::string(ref.name) == "weights" ? &e.weights : &e.bias);
        names.push_back("layer" + std::to_string(ref.layer) + "." + ref.name);
    }
    auto loss = [&] { return nll_loss(network_infer(net, x), true_class).loss; };
    return check_gradients(params, grads, names, loss, epsilon, floor);
}

// ---------------------------------------------------------------- instantiations

#define CORTEX3D_INSTANTIATE(T)                                                                         \
    template BasicTensor<T> activation_apply(Activation, const BasicTensor<T>&);                        \
    template BasicTensor<T> activation_grad(Activation, const BasicTensor<T>&, const BasicTensor<T>&);  \
    template BasicTensor<T> dense_forward(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                          const BasicTensor<T>&, Activation);                           \
    template BasicTensor<T> softmax(const BasicTensor<T>&);                                             \
    template NllResult<T> nll_loss(const BasicTensor<T>&, std::size_t);                                 \
    template struct Layer<T>;                                                                           \
    template struct GradientSet<T>;                                                                     \
    template class Network<T>;                                                                          \
    template ForwardCache<T> network_forward(const Network<T>&, const BasicTensor<T>&, std::size_t);    \
    template BasicTensor<T> network_infer(const Network<T>&, const BasicTensor<T>&, std::size_t);       \
    template GradientSet<T> network_backward(const Network<T>&, const ForwardCache<T>&,                 \
                                             const BasicTensor<T>&);                                    \
    template GradientSet<T> zero_gradients(const Network<T>&);

CORTEX3D_INSTANTIATE(float)
CORTEX3D_INSTANTIATE(double)
#undef CORTEX3D_INSTANTIATE

template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;

}  // namespace cortex3d
