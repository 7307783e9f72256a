#include "cortex3d/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "cortex3d/parallel.hpp"

namespace cortex3d {

// ---------------------------------------------------------------- Shape

Shape::Shape(std::initializer_list<std::size_t> extents)
    : Shape(std::span<const std::size_t>(extents.begin(), extents.size())) {}

Shape::Shape(std::span<const std::size_t> extents) {
    if (extents.empty() || extents.size() > kMaxRank) {
        throw ShapeError("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got " +
                         std::to_string(extents.size()));
    }
    for (std::size_t i = 0; i < extents.size(); ++i) {
        if (extents[i] == 0) throw ShapeError("tensor extents must be >= 1");
        extents_[i] = extents[i];
    }
    rank_ = extents.size();
}

std::size_t Shape::operator[](std::size_t axis) const {
    if (axis >= rank_) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + str());
    }
    return extents_[axis];
}

std::size_t Shape::numel() const noexcept {
    if (rank_ == 0) return 0;
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= extents_[i];
    return n;
}

std::array<std::size_t, Shape::kMaxRank> Shape::strides() const noexcept {
    std::array<std::size_t, kMaxRank> s{};
    std::size_t acc = 1;
    for (std::size_t i = rank_; i-- > 0;) {
        s[i] = acc;
        acc *= extents_[i];
    }
    return s;
}

std::string Shape::str() const {
    if (rank_ == 0) return "[]";
    std::ostringstream os;
    for (std::size_t i = 0; i < rank_; ++i) {
        if (i) os << 'x';
        os << extents_[i];
    }
    return os.str();
}

// ---------------------------------------------------------------- BasicTensor

template <typename T>
BasicTensor<T>::BasicTensor(const Shape& shape) : shape_(shape), data_(shape.numel(), T(0)) {
    if (shape.rank() == 0) throw ShapeError("cannot construct a rank-0 tensor");
}

template <typename T>
BasicTensor<T>::BasicTensor(const Shape& shape, std::vector<T> data)
    : shape_(shape), data_(std::move(data)) {
    if (shape.rank() == 0) throw ShapeError("cannot construct a rank-0 tensor");
    if (data_.size() != shape.numel()) {
        throw ShapeError("shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                         " elements, got " + std::to_string(data_.size()));
    }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::filled(const Shape& shape, T value) {
    BasicTensor t(shape);
    t.fill(value);
    return t;
}

template <typename T>
std::size_t BasicTensor<T>::offset_of(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.rank()) {
        throw ShapeError("index of rank " + std::to_string(index.size()) + " for shape " +
                         shape_.str());
    }
    const auto strides = shape_.strides();
    std::size_t offset = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape_[axis]) {
            throw ArgumentError("index " + std::to_string(i) + " out of range on axis " +
                                std::to_string(axis) + " of " + shape_.str());
        }
        offset += i * strides[axis];
        ++axis;
    }
    return offset;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(const Shape& shape) const {
    if (shape.numel() != data_.size()) {
        throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return BasicTensor(shape, data_);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::operator==(const BasicTensor& other) const {
    if (shape_ != other.shape_) return false;
    // Bitwise: distinguishes -0.0 from 0.0 and treats identical NaN payloads as equal.
    return std::equal(data_.begin(), data_.end(), other.data_.begin(), [](T a, T b) {
        return std::memcmp(&a, &b, sizeof(T)) == 0;
    });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// ---------------------------------------------------------------- convolution

const char* to_string(ConvMode mode) noexcept { return mode == ConvMode::valid ? "valid" : "full"; }

namespace {

struct Dims3 {
    std::size_t d, h, w;
    std::size_t volume() const { return d * h * w; }
};

void check_conv_operands(const Shape& input, const Shape& kernels) {
    if (input.rank() != 4 || kernels.rank() != 5) {
        throw ShapeError("conv3d expects input [J,D,H,W] and kernels [K,J,n,n,n], got input " +
                         input.str() + " and kernels " + kernels.str());
    }
    if (input[0] != kernels[1]) {
        throw ShapeError("conv3d channel mismatch: input " + input.str() + " vs kernels " +
                         kernels.str());
    }
}

// Zero-pad the three spatial axes of a [J,D,H,W] tensor by `pad` on each side.
template <typename T>
BasicTensor<T> pad_spatial(const BasicTensor<T>& input, std::size_t pad) {
    const Shape& s = input.shape();
    const std::size_t J = s[0], D = s[1], H = s[2], W = s[3];
    const std::size_t Dp = D + 2 * pad, Hp = H + 2 * pad, Wp = W + 2 * pad;
    BasicTensor<T> out(Shape{J, Dp, Hp, Wp});
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t d = 0; d < D; ++d)
            for (std::size_t h = 0; h < H; ++h) {
                const T* src = input.raw() + ((j * D + d) * H + h) * W;
                T* dst = out.raw() + ((j * Dp + d + pad) * Hp + h + pad) * Wp + pad;
                std::copy(src, src + W, dst);
            }
    return out;
}

template <typename T>
BasicTensor<T> crop_spatial(const BasicTensor<T>& input, std::size_t pad, Dims3 keep) {
    const Shape& s = input.shape();
    const std::size_t J = s[0], Dp = s[1], Hp = s[2], Wp = s[3];
    BasicTensor<T> out(Shape{J, keep.d, keep.h, keep.w});
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t d = 0; d < keep.d; ++d)
            for (std::size_t h = 0; h < keep.h; ++h) {
                const T* src = input.raw() + ((j * Dp + d + pad) * Hp + h + pad) * Wp + pad;
                T* dst = out.raw() + ((j * keep.d + d) * keep.h + h) * keep.w;
                std::copy(src, src + keep.w, dst);
            }
    return out;
}

// Valid cross-correlation on an already padded input.
template <typename T>
BasicTensor<T> correlate_valid(const BasicTensor<T>& in, const BasicTensor<T>& kernels) {
    const Shape& is = in.shape();
    const Shape& ks = kernels.shape();
    const std::size_t J = is[0], D = is[1], H = is[2], W = is[3];
    const std::size_t K = ks[0], nd = ks[2], nh = ks[3], nw = ks[4];
    const Dims3 o{D - nd + 1, H - nh + 1, W - nw + 1};
    BasicTensor<T> out(Shape{K, o.d, o.h, o.w});
    const std::size_t taps = nd * nh * nw;

    parallel_for(K, [&](std::size_t k) {
        T* out_k = out.raw() + k * o.volume();
        for (std::size_t j = 0; j < J; ++j) {
            const T* kern = kernels.raw() + (k * J + j) * taps;
            const T* in_j = in.raw() + j * D * H * W;
            for (std::size_t a = 0; a < nd; ++a)
                for (std::size_t b = 0; b < nh; ++b)
                    for (std::size_t c = 0; c < nw; ++c) {
                        const T w = kern[(a * nh + b) * nw + c];
                        for (std::size_t od = 0; od < o.d; ++od)
                            for (std::size_t oh = 0; oh < o.h; ++oh) {
                                const T* src = in_j + ((od + a) * H + oh + b) * W + c;
                                T* dst = out_k + (od * o.h + oh) * o.w;
                                for (std::size_t ow = 0; ow < o.w; ++ow) dst[ow] += w * src[ow];
                            }
                    }
        }
    });
    return out;
}

}  // namespace

Shape conv3d_output_shape(const Shape& input, const Shape& kernels, ConvMode mode) {
    check_conv_operands(input, kernels);
    std::array<std::size_t, 4> out{kernels[0], 0, 0, 0};
    for (std::size_t axis = 1; axis < 4; ++axis) {
        const std::size_t extent = input[axis];
        const std::size_t n = kernels[axis + 1];
        if (mode == ConvMode::full) {
            out[axis] = extent + n - 1;
        } else {
            if (n > extent) {
                throw ShapeError("conv3d valid mode yields an empty output: input " + input.str() +
                                 ", kernels " + kernels.str());
            }
            out[axis] = extent - n + 1;
        }
    }
    return Shape(std::span<const std::size_t>(out));
}

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, ConvMode mode) {
    conv3d_output_shape(input.shape(), kernels.shape(), mode);  // validates
    if (mode == ConvMode::valid) return correlate_valid(input, kernels);
    const std::size_t nd = kernels.shape()[2], nh = kernels.shape()[3], nw = kernels.shape()[4];
    if (nd != nh || nh != nw) {
        // Full mode pads symmetrically per axis; only cubic kernels are supported there.
        throw ShapeError("conv3d full mode needs cubic kernels, got " + kernels.shape().str());
    }
    return correlate_valid(pad_spatial(input, nd - 1), kernels);
}

template <typename T>
ConvGradients<T> conv3d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                 ConvMode mode, const BasicTensor<T>& grad_output,
                                 bool want_input_grad) {
    const Shape out_shape = conv3d_output_shape(input.shape(), kernels.shape(), mode);
    if (grad_output.shape() != out_shape) {
        throw ShapeError("conv3d_backward: grad_output " + grad_output.shape().str() +
                         " does not match output shape " + out_shape.str());
    }
    const std::size_t n = kernels.shape()[2];
    const std::size_t pad = mode == ConvMode::full ? n - 1 : 0;
    const BasicTensor<T> padded = pad ? pad_spatial(input, pad) : BasicTensor<T>();
    const BasicTensor<T>& in = pad ? padded : input;

    const Shape& is = in.shape();
    const Shape& ks = kernels.shape();
    const std::size_t J = is[0], D = is[1], H = is[2], W = is[3];
    const std::size_t K = ks[0], nd = ks[2], nh = ks[3], nw = ks[4];
    const Dims3 o{out_shape[1], out_shape[2], out_shape[3]};
    const std::size_t taps = nd * nh * nw;

    ConvGradients<T> grads;
    grads.kernels = BasicTensor<T>(ks);
    parallel_for(K, [&](std::size_t k) {
        const T* g_k = grad_output.raw() + k * o.volume();
        for (std::size_t j = 0; j < J; ++j) {
            const T* in_j = in.raw() + j * D * H * W;
            T* gk = grads.kernels.raw() + (k * J + j) * taps;
            for (std::size_t a = 0; a < nd; ++a)
                for (std::size_t b = 0; b < nh; ++b)
                    for (std::size_t c = 0; c < nw; ++c) {
                        T acc = 0;
                        for (std::size_t od = 0; od < o.d; ++od)
                            for (std::size_t oh = 0; oh < o.h; ++oh) {
                                const T* src = in_j + ((od + a) * H + oh + b) * W + c;
                                const T* g = g_k + (od * o.h + oh) * o.w;
                                for (std::size_t ow = 0; ow < o.w; ++ow) acc += g[ow] * src[ow];
                            }
                        gk[(a * nh + b) * nw + c] = acc;
                    }
        }
    });

    if (!want_input_grad) return grads;

    BasicTensor<T> grad_in(is);
    parallel_for(J, [&](std::size_t j) {
        T* gi_j = grad_in.raw() + j * D * H * W;
        for (std::size_t k = 0; k < K; ++k) {
            const T* kern = kernels.raw() + (k * J + j) * taps;
            const T* g_k = grad_output.raw() + k * o.volume();
            for (std::size_t a = 0; a < nd; ++a)
                for (std::size_t b = 0; b < nh; ++b)
                    for (std::size_t c = 0; c < nw; ++c) {
                        const T w = kern[(a * nh + b) * nw + c];
                        for (std::size_t od = 0; od < o.d; ++od)
                            for (std::size_t oh = 0; oh < o.h; ++oh) {
                                T* dst = gi_j + ((od + a) * H + oh + b) * W + c;
                                const T* g = g_k + (od * o.h + oh) * o.w;
                                for (std::size_t ow = 0; ow < o.w; ++ow) dst[ow] += g[ow] * w;
                            }
                    }
        }
    });
    if (pad) {
        const Shape& s = input.shape();
        grads.input = crop_spatial(grad_in, pad, Dims3{s[1], s[2], s[3]});
    } else {
        grads.input = std::move(grad_in);
    }
    return grads;
}

template <typename T>
BasicTensor<T> flip3d(const BasicTensor<T>& kernels) {
    const Shape& s = kernels.shape();
    if (s.rank() != 5) throw ShapeError("flip3d expects a rank-5 kernel bank, got " + s.str());
    const std::size_t banks = s[0] * s[1], nd = s[2], nh = s[3], nw = s[4];
    const std::size_t taps = nd * nh * nw;
    BasicTensor<T> out(s);
    for (std::size_t kj = 0; kj < banks; ++kj) {
        const T* src = kernels.raw() + kj * taps;
        T* dst = out.raw() + kj * taps;
        for (std::size_t a = 0; a < nd; ++a)
            for (std::size_t b = 0; b < nh; ++b)
                for (std::size_t c = 0; c < nw; ++c)
                    dst[((nd - 1 - a) * nh + (nh - 1 - b)) * nw + (nw - 1 - c)] =
                        src[(a * nh + b) * nw + c];
    }
    return out;
}

// ---------------------------------------------------------------- pooling

PoolIndex::PoolIndex(Shape output_shape, Shape input_shape, std::size_t window, std::size_t stride,
                     std::vector<std::size_t> offsets)
    : output_shape_(std::move(output_shape)),
      input_shape_(std::move(input_shape)),
      window_(window),
      stride_(stride),
      offsets_(std::move(offsets)) {
    if (offsets_.size() != output_shape_.numel()) {
        throw ShapeError("PoolIndex offsets do not match output shape " + output_shape_.str());
    }
}

Shape maxpool3d_output_shape(const Shape& input, std::size_t window, std::size_t stride) {
    if (input.rank() != 4) throw ShapeError("maxpool3d expects [K,D,H,W], got " + input.str());
    if (window == 0 || stride == 0) throw ArgumentError("maxpool3d window and stride must be >= 1");
    auto ceil_div = [stride](std::size_t e) { return (e + stride - 1) / stride; };
    return Shape{input[0], ceil_div(input[1]), ceil_div(input[2]), ceil_div(input[3])};
}

template <typename T>
PoolResult<T> maxpool3d(const BasicTensor<T>& input, std::size_t window, std::size_t stride) {
    const Shape out_shape = maxpool3d_output_shape(input.shape(), window, stride);
    const Shape& s = input.shape();
    const std::size_t K = s[0], D = s[1], H = s[2], W = s[3];
    const std::size_t Od = out_shape[1], Oh = out_shape[2], Ow = out_shape[3];

    BasicTensor<T> out(out_shape);
    std::vector<std::size_t> offsets(out_shape.numel());
    parallel_for(K, [&](std::size_t k) {
        for (std::size_t od = 0; od < Od; ++od)
            for (std::size_t oh = 0; oh < Oh; ++oh)
                for (std::size_t ow = 0; ow < Ow; ++ow) {
                    const std::size_t d0 = od * stride, h0 = oh * stride, w0 = ow * stride;
                    const std::size_t d1 = std::min(D, d0 + window);
                    const std::size_t h1 = std::min(H, h0 + window);
                    const std::size_t w1 = std::min(W, w0 + window);
                    // Scan in increasing linear offset; strict '>' keeps the first maximum.
                    std::size_t best = ((k * D + d0) * H + h0) * W + w0;
                    T best_value = input[best];
                    for (std::size_t d = d0; d < d1; ++d)
                        for (std::size_t h = h0; h < h1; ++h)
                            for (std::size_t w = w0; w < w1; ++w) {
                                const std::size_t off = ((k * D + d) * H + h) * W + w;
                                if (input[off] > best_value) {
                                    best_value = input[off];
                                    best = off;
                                }
                            }
                    const std::size_t o = ((k * Od + od) * Oh + oh) * Ow + ow;
                    out[o] = best_value;
                    offsets[o] = best;
                }
    });
    return {std::move(out), PoolIndex(out_shape, s, window, stride, std::move(offsets))};
}

template <typename T>
BasicTensor<T> maxpool3d_grad(const BasicTensor<T>& grad_out, const PoolIndex& index,
                              const Shape& in_shape) {
    if (grad_out.shape() != index.shape()) {
        throw ShapeError("maxpool3d_grad: grad_out " + grad_out.shape().str() +
                         " does not match pool index " + index.shape().str());
    }
    if (in_shape != index.input_shape()) {
        throw ShapeError("maxpool3d_grad: input shape " + in_shape.str() +
                         " inconsistent with pool index recorded for " + index.input_shape().str());
    }
    BasicTensor<T> grad_in(in_shape);
    const auto offsets = index.offsets();
    for (std::size_t i = 0; i < offsets.size(); ++i) grad_in[offsets[i]] += grad_out[i];
    return grad_in;
}

#define CORTEX3D_INSTANTIATE(T)                                                                   \
    template BasicTensor<T> conv3d(const BasicTensor<T>&, const BasicTensor<T>&, ConvMode);       \
    template ConvGradients<T> conv3d_backward(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                              ConvMode, const BasicTensor<T>&, bool);             \
    template BasicTensor<T> flip3d(const BasicTensor<T>&);                                        \
    template PoolResult<T> maxpool3d(const BasicTensor<T>&, std::size_t, std::size_t);            \
    template BasicTensor<T> maxpool3d_grad(const BasicTensor<T>&, const PoolIndex&, const Shape&);

CORTEX3D_INSTANTIATE(float)
CORTEX3D_INSTANTIATE(double)
#undef CORTEX3D_INSTANTIATE

}  // namespace cortex3d
