#pragma once

#include <span>
#include <string>
#include <vector>

#include "cortex3d/nn.hpp"

namespace cortex3d {

enum class UpdateRule { sgd, adadelta };

const char* to_string(UpdateRule rule) noexcept;
UpdateRule parse_update_rule(const std::string& name);

struct OptimizerConfig {
    UpdateRule rule = UpdateRule::adadelta;
    double learning_rate = 0.01;  // sgd only
    double rho = 0.95;            // adadelta decay
    double epsilon = 1e-6;        // adadelta conditioning

    void validate() const;
};

/// p <- p - lr * g. Returns false and leaves params untouched when any
/// gradient is non-finite.
template <typename T>
bool sgd_step(std::span<T> params, std::span<const T> grads, double learning_rate);

/// Running averages of squared gradients and squared updates for one
/// parameter tensor.
template <typename T>
struct AdadeltaAccumulators {
    std::vector<T> sq_grad;
    std::vector<T> sq_update;
};

/// One Adadelta update:
///   E[g^2]  <- rho E[g^2] + (1 - rho) g^2
///   delta   <- -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
///   E[dx^2] <- rho E[dx^2] + (1 - rho) delta^2
///   p       <- p + delta
/// Fresh accumulators (empty vectors) are zero-initialized to the parameter
/// size. Returns false and changes nothing when any gradient is non-finite.
template <typename T>
bool adadelta_step(AdadeltaAccumulators<T>& state, std::span<T> params, std::span<const T> grads,
                   double rho, double epsilon);

/// Optimizer state for a fixed list of parameter tensors (one slot each).
template <typename T>
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config = {});

    const OptimizerConfig& config() const noexcept { return config_; }

    /// Updates params[i] with grads[i]; frozen slots are skipped. All
    /// gradients are screened before any parameter moves, so a rejected step
    /// (non-finite gradient) leaves every tensor untouched.
    bool step(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads,
              std::span<const bool> frozen = {});

    /// Convenience: steps every unfrozen parameter of a network.
    bool step(Network<T>& net, const GradientSet<T>& grads);

    std::size_t steps_taken() const noexcept { return steps_; }
    std::size_t rejected_steps() const noexcept { return rejected_; }
    const std::vector<AdadeltaAccumulators<T>>& accumulators() const noexcept { return slots_; }

private:
    OptimizerConfig config_;
    std::vector<AdadeltaAccumulators<T>> slots_;
    std::size_t steps_ = 0;
    std::size_t rejected_ = 0;
};

}  // namespace cortex3d
