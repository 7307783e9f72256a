#include "cortex3d/transfer.hpp"

#include "cortex3d/error.hpp"

namespace cortex3d {

template <typename T>
TransferPlan TransferPlan::identity(const CaeStack<T>& stack, bool freeze) {
    stack.validate();
    TransferPlan plan;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        plan.layers.push_back({l, stack.layers[l].kernel_size(), stack.pools[l], freeze});
    }
    return plan;
}

template <typename T>
BasicTensor<T> embed_kernel(const BasicTensor<T>& kernels, std::size_t target_size) {
    const Shape& s = kernels.shape();
    if (s.rank() != 5 || s[2] != s[3] || s[2] != s[4]) {
        throw ShapeError("embed_kernel: expected a cubic kernel bank [K,J,n,n,n], got " + s.str());
    }
    const std::size_t n = s[2];
    if (target_size < n) {
        throw ArgumentError("embed_kernel: cannot shrink " + std::to_string(n) + "^3 kernels to " +
                            std::to_string(target_size) + "^3");
    }
    if ((target_size - n) % 2 != 0) {
        throw ArgumentError("embed_kernel: " + std::to_string(n) + " -> " + std::to_string(target_size) +
                            " changes parity, so the kernel cannot be centered");
    }
    if (target_size == n) return kernels;

    const std::size_t m = target_size, off = (m - n) / 2;
    BasicTensor<T> out(Shape{s[0], s[1], m, m, m});
    for (std::size_t kj = 0; kj < s[0] * s[1]; ++kj)
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t c = 0; c < n; ++c)
                    out[(((kj * m) + a + off) * m + b + off) * m + c + off] = kernels[((kj * n + a) * n + b) * n + c];
    return out;
}

template <typename T>
TransferResult<T> transplant(const CaeStack<T>& stack, const TransferPlan& plan, const Shape& input_shape) {
    stack.validate();
    if (plan.layers.empty()) throw ArgumentError("transplant: empty transfer plan");

    TransferResult<T> result;
    std::vector<Layer<T>> layers;
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        const LayerTransfer& t = plan.layers[i];
        if (t.source_layer >= stack.layers.size()) {
            throw ArgumentError("transplant: plan layer " + std::to_string(i) + " names source layer " +
                                std::to_string(t.source_layer) + " but the stack has " +
                                std::to_string(stack.layers.size()));
        }
        const CaeLayer<T>& src = stack.layers[t.source_layer];
        const std::size_t n = t.kernel_size == 0 ? src.kernel_size() : t.kernel_size;
        layers.push_back(Layer<T>::conv(embed_kernel(src.kernels, n), src.bias, ConvMode::full,
                                        src.encode_activation, t.frozen));
        layers.push_back(Layer<T>::maxpool(t.pool.window, t.pool.stride));

        const PoolConfig& sp = stack.pools[t.source_layer];
        if (t.pool.window != sp.window || t.pool.stride != sp.stride) {
            result.warnings.push_back("layer " + std::to_string(i) + ": pool " + std::to_string(t.pool.window) +
                                      "/" + std::to_string(t.pool.stride) + " differs from pretraining pool " +
                                      std::to_string(sp.window) + "/" + std::to_string(sp.stride) +
                                      "; features are not preserved");
        }
        if (n != src.kernel_size()) {
            result.warnings.push_back("layer " + std::to_string(i) + ": kernels embedded " +
                                      std::to_string(src.kernel_size()) + "^3 -> " + std::to_string(n) +
                                      "^3; only interior responses are preserved");
        }
    }
    result.network = Network<T>(input_shape, std::move(layers));
    return result;
}

#define CORTEX3D_INSTANTIATE(T)                                                                       \
    template TransferPlan TransferPlan::identity(const CaeStack<T>&, bool);                           \
    template BasicTensor<T> embed_kernel(const BasicTensor<T>&, std::size_t);                         \
    template TransferResult<T> transplant(const CaeStack<T>&, const TransferPlan&, const Shape&);

CORTEX3D_INSTANTIATE(float)
CORTEX3D_INSTANTIATE(double)

}  // namespace cortex3d
