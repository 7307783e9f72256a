#include "cortex3d/optim.hpp"

#include <cmath>
#include <memory>

namespace cortex3d {

const char* to_string(UpdateRule rule) noexcept { return rule == UpdateRule::sgd ? "sgd" : "adadelta"; }

UpdateRule parse_update_rule(const std::string& name) {
    if (name == "sgd") return UpdateRule::sgd;
    if (name == "adadelta") return UpdateRule::adadelta;
    throw ArgumentError("unknown optimizer rule '" + name + "'");
}

void OptimizerConfig::validate() const {
    if (rule == UpdateRule::sgd && !(learning_rate > 0.0)) {
        throw ArgumentError("sgd learning_rate must be > 0");
    }
    if (rule == UpdateRule::adadelta) {
        if (!(rho > 0.0 && rho < 1.0)) throw ArgumentError("adadelta rho must lie in (0, 1)");
        if (!(epsilon > 0.0)) throw ArgumentError("adadelta epsilon must be > 0");
    }
}

namespace {

template <typename T>
bool all_finite(std::span<const T> values) {
    for (T v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

template <typename T>
bool sgd_step(std::span<T> params, std::span<const T> grads, double learning_rate) {
    if (params.size() != grads.size()) throw ShapeError("sgd_step: params and grads differ in size");
    if (!(learning_rate > 0.0)) throw ArgumentError("sgd_step: learning rate must be > 0");
    if (!all_finite(grads)) return false;
    const T lr = static_cast<T>(learning_rate);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
    return true;
}

template <typename T>
bool adadelta_step(AdadeltaAccumulators<T>& state, std::span<T> params, std::span<const T> grads,
                   double rho, double epsilon) {
    if (params.size() != grads.size()) throw ShapeError("adadelta_step: params and grads differ in size");
    if (state.sq_grad.empty() && state.sq_update.empty()) {
        state.sq_grad.assign(params.size(), T(0));
        state.sq_update.assign(params.size(), T(0));
    }
    if (state.sq_grad.size() != params.size() || state.sq_update.size() != params.size()) {
        throw ShapeError("adadelta_step: accumulator shape does not mirror the parameters");
    }
    if (!all_finite(grads)) return false;
    const T r = static_cast<T>(rho), eps = static_cast<T>(epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.sq_grad[i] = r * state.sq_grad[i] + (T(1) - r) * g * g;
        const T delta = -std::sqrt(state.sq_update[i] + eps) / std::sqrt(state.sq_grad[i] + eps) * g;
        state.sq_update[i] = r * state.sq_update[i] + (T(1) - r) * delta * delta;
        params[i] += delta;
    }
    return true;
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig config) : config_(config) {
    config_.validate();
}

template <typename T>
bool Optimizer<T>::step(std::span<BasicTensor<T>* const> params,
                        std::span<const BasicTensor<T>* const> grads, std::span<const bool> frozen) {
    if (params.size() != grads.size() || (!frozen.empty() && frozen.size() != params.size())) {
        throw ShapeError("Optimizer::step: params, grads and frozen flags must align");
    }
    if (slots_.empty()) slots_.resize(params.size());
    if (slots_.size() != params.size()) {
        throw ShapeError("Optimizer::step: parameter list changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i]->shape()) {
            throw ShapeError("Optimizer::step: parameter " + params[i]->shape().str() +
                             " vs gradient " + grads[i]->shape().str());
        }
        if (!all_finite(grads[i]->data())) {
            ++rejected_;
            return false;
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!frozen.empty() && frozen[i]) continue;
        if (config_.rule == UpdateRule::sgd) {
            sgd_step<T>(params[i]->data(), grads[i]->data(), config_.learning_rate);
        } else {
            adadelta_step<T>(slots_[i], params[i]->data(), grads[i]->data(), config_.rho, config_.epsilon);
        }
    }
    ++steps_;
    return true;
}

template <typename T>
bool Optimizer<T>::step(Network<T>& net, const GradientSet<T>& grads) {
    if (grads.layers.size() != net.layer_count()) {
        throw ShapeError("Optimizer::step: gradient set does not match network");
    }
    const auto refs = net.parameters();
    std::vector<BasicTensor<T>*> params;
    std::vector<const BasicTensor<T>*> g;
    // std::vector<bool> has no contiguous storage to span over.
    auto frozen = std::make_unique<bool[]>(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
        params.push_back(refs[i].tensor);
        const auto& e = grads.layers[refs[i].layer];
        g.push_back(std::string(refs[i].name) == "weights" ? &e.weights : &e.bias);
        frozen[i] = refs[i].frozen;
    }
    return step(params, g, std::span<const bool>(frozen.get(), refs.size()));
}

template bool sgd_step<float>(std::span<float>, std::span<const float>, double);
template bool sgd_step<double>(std::span<double>, std::span<const double>, double);
template bool adadelta_step<float>(AdadeltaAccumulators<float>&, std::span<float>,
                                   std::span<const float>, double, double);
template bool adadelta_step<double>(AdadeltaAccumulators<double>&, std::span<double>,
                                    std::span<const double>, double, double);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace cortex3d
