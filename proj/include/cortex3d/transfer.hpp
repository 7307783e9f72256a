#pragma once

#include <string>
#include <vector>

#include "cortex3d/cae.hpp"
#include "cortex3d/nn.hpp"

namespace cortex3d {

/// Target configuration for one transplanted encoder layer.
struct LayerTransfer {
    std::size_t source_layer = 0;
    /// 0 keeps the source kernel size.
    std::size_t kernel_size = 0;
    PoolConfig pool;
    bool frozen = true;
};

struct TransferPlan {
    std::vector<LayerTransfer> layers;

    /// Same kernels and pools as the source stack, every layer mapped in order.
    template <typename T>
    static TransferPlan identity(const CaeStack<T>& stack, bool freeze = true);
};

/// Centers each n^3 kernel in an all-zero n'^3 kernel. n' must be at least n
/// and of the same parity.
template <typename T>
BasicTensor<T> embed_kernel(const BasicTensor<T>& kernels, std::size_t target_size);

template <typename T>
struct TransferResult {
    /// conv3d(full, encoder activation) + maxpool per mapped layer.
    Network<T> network;
    /// Non-fatal notes, e.g. pool changes that break function preservation.
    std::vector<std::string> warnings;
};

/// Builds the convolutional part of a classifier from pretrained encoders.
/// Decoder parameters are dropped; the source stack is not modified.
template <typename T>
TransferResult<T> transplant(const CaeStack<T>& stack, const TransferPlan& plan,
                             const Shape& input_shape);

}  // namespace cortex3d
