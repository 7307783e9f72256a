#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "cortex3d/error.hpp"

namespace cortex3d {

/// Extents of a dense tensor, rank 1 to 5. Unused trailing slots are kept at
/// zero so that defaulted equality compares only meaningful extents.
class Shape {
public:
    static constexpr std::size_t kMaxRank = 5;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> extents);
    explicit Shape(std::span<const std::size_t> extents);

    std::size_t rank() const noexcept { return rank_; }
    std::size_t operator[](std::size_t axis) const;
    std::span<const std::size_t> extents() const noexcept { return {extents_.data(), rank_}; }

    std::size_t numel() const noexcept;
    /// Row-major strides (last axis fastest).
    std::array<std::size_t, kMaxRank> strides() const noexcept;

    /// "2x4x4x4"
    std::string str() const;

    bool operator==(const Shape&) const = default;

private:
    std::array<std::size_t, kMaxRank> extents_{};
    std::size_t rank_ = 0;
};

/// Dense row-major tensor. A default-constructed tensor is empty (rank 0, no
/// data) and only serves as a placeholder; every constructed tensor has rank
/// 1..5 and positive extents.
template <typename T>
class BasicTensor {
    static_assert(std::is_floating_point_v<T>);

public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(const Shape& shape);
    BasicTensor(const Shape& shape, std::vector<T> data);

    static BasicTensor filled(const Shape& shape, T value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.rank(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }

    T& operator[](std::size_t offset) { return data_[offset]; }
    const T& operator[](std::size_t offset) const { return data_[offset]; }

    template <typename... Idx>
    T& operator()(Idx... idx) {
        return data_[offset_of({static_cast<std::size_t>(idx)...})];
    }
    template <typename... Idx>
    const T& operator()(Idx... idx) const {
        return data_[offset_of({static_cast<std::size_t>(idx)...})];
    }

    /// Linear offset of a multi-index; throws on rank mismatch or out-of-range.
    std::size_t offset_of(std::initializer_list<std::size_t> index) const;

    /// Same data under a new shape of equal element count.
    BasicTensor reshaped(const Shape& shape) const;

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    void fill(T value);

    /// Bitwise-exact comparison of shape and contents.
    bool operator==(const BasicTensor& other) const;

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

enum class ConvMode { valid, full };

const char* to_string(ConvMode mode) noexcept;

/// Output shape of conv3d, without computing it.
Shape conv3d_output_shape(const Shape& input, const Shape& kernels, ConvMode mode);

/// 3D cross-correlation of a [J,D,H,W] input with a [K,J,n,n,n] kernel bank.
/// No kernel flip happens here; callers that need true convolution apply
/// flip3d explicitly. Full mode zero-pads by n-1 on every side.
/// Each output voxel sums over (j, a, b, c) in that fixed order, so results do
/// not depend on the worker count.
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, ConvMode mode);

template <typename T>
struct ConvGradients {
    BasicTensor<T> input;    // empty when not requested
    BasicTensor<T> kernels;
};

/// Gradients of a conv3d call with respect to its input and kernels, given the
/// gradient of the loss with respect to its output.
template <typename T>
ConvGradients<T> conv3d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                 ConvMode mode, const BasicTensor<T>& grad_output,
                                 bool want_input_grad = true);

/// Reverse every spatial axis of a rank-5 kernel bank.
template <typename T>
BasicTensor<T> flip3d(const BasicTensor<T>& kernels);

/// Argmax record of a max-pool call, sufficient to route gradients back.
class PoolIndex {
public:
    PoolIndex() = default;
    PoolIndex(Shape output_shape, Shape input_shape, std::size_t window, std::size_t stride,
              std::vector<std::size_t> offsets);

    const Shape& shape() const noexcept { return output_shape_; }
    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t window() const noexcept { return window_; }
    std::size_t stride() const noexcept { return stride_; }
    /// Linear offset into the pooled input of each output cell's maximum.
    std::span<const std::size_t> offsets() const noexcept { return offsets_; }

private:
    Shape output_shape_;
    Shape input_shape_;
    std::size_t window_ = 0;
    std::size_t stride_ = 0;
    std::vector<std::size_t> offsets_;
};

/// ceil(D/s) per spatial axis; channels preserved.
Shape maxpool3d_output_shape(const Shape& input, std::size_t window, std::size_t stride);

template <typename T>
struct PoolResult {
    BasicTensor<T> output;
    PoolIndex index;
};

/// Max-pool a [K,D,H,W] tensor. Windows start at multiples of the stride and
/// are clipped at the upper boundary. Ties go to the lowest linear offset.
template <typename T>
PoolResult<T> maxpool3d(const BasicTensor<T>& input, std::size_t window = 2, std::size_t stride = 2);

/// Route grad_out back to the recorded argmax positions of an input of
/// in_shape. Positions that were never a maximum receive zero.
template <typename T>
BasicTensor<T> maxpool3d_grad(const BasicTensor<T>& grad_out, const PoolIndex& index,
                              const Shape& in_shape);

}  // namespace cortex3d
