#include "cortex3d/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cortex3d/random.hpp"

namespace cortex3d {

namespace {

struct TaskRow {
    const char* name;
    std::array<int, kRawLabelCount> map;  // AD, MCI, NC
    std::size_t classes;
};

constexpr TaskRow kTasks[] = {
    {"AD/NC", {0, -1, 1}, 2},
    {"AD+MCI/NC", {0, 0, 1}, 2},
    {"AD/MCI", {0, 1, -1}, 2},
    {"MCI/NC", {-1, 0, 1}, 2},
    {"AD/MCI/NC", {0, 1, 2}, 3},
};

}  // namespace

TaskSpec TaskSpec::parse(const std::string& name) {
    for (const auto& row : kTasks) {
        if (name == row.name) return {row.name, row.map, row.classes};
    }
    throw ArgumentError("unknown task '" + name + "' (expected AD/NC, AD+MCI/NC, AD/MCI, MCI/NC or AD/MCI/NC)");
}

std::vector<TaskSpec> TaskSpec::all() {
    std::vector<TaskSpec> out;
    for (const auto& row : kTasks) out.push_back({row.name, row.map, row.classes});
    return out;
}

std::size_t TaskSpec::class_of(RawLabel label) const {
    const int c = class_map[static_cast<std::size_t>(label)];
    if (c < 0) throw ArgumentError(std::string("label ") + to_string(label) + " is not part of task " + name);
    return static_cast<std::size_t>(c);
}

std::vector<std::string> TaskSpec::class_names() const {
    std::vector<std::string> out(num_classes);
    for (std::size_t l = 0; l < kRawLabelCount; ++l) {
        const int c = class_map[l];
        if (c < 0) continue;
        auto& s = out[static_cast<std::size_t>(c)];
        s += (s.empty() ? "" : "+") + std::string(to_string(static_cast<RawLabel>(l)));
    }
    return out;
}

TaskDataset apply_task(const Dataset& dataset, const TaskSpec& task) {
    TaskDataset out;
    out.task = task;
    out.class_counts.assign(task.num_classes, 0);
    for (const auto& v : dataset) {
        if (!task.includes(v.label)) continue;
        const std::size_t c = task.class_of(v.label);
        out.volumes.push_back(v.tensor);
        out.classes.push_back(c);
        out.subject_ids.push_back(v.subject_id);
        ++out.class_counts[c];
    }
    if (out.volumes.empty()) throw ArgumentError("task " + task.name + " keeps no subjects");
    for (std::size_t c = 0; c < task.num_classes; ++c) {
        if (out.class_counts[c] == 0) {
            throw ArgumentError("task " + task.name + ": class " + task.class_names()[c] + " has no subjects");
        }
    }
    return out;
}

AcnnModel assemble_acnn(const Network<float>& conv, std::span<const std::size_t> fc_widths, const TaskSpec& task,
                        std::uint64_t seed) {
    if (task.num_classes < 2) throw ArgumentError("assemble_acnn: task has fewer than two classes");
    if (conv.ends_with_softmax()) throw ArgumentError("assemble_acnn: conv stack already ends in softmax");
    AcnnModel model;
    model.network = conv;
    model.task = task;
    model.fc_widths.assign(fc_widths.begin(), fc_widths.end());
    model.seed = seed;

    Network<float>& net = model.network;
    if (net.output_shape().rank() != 1) net.append(Layer<float>::flatten());
    std::vector<std::size_t> widths(fc_widths.begin(), fc_widths.end());
    widths.push_back(task.num_classes);
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] == 0) throw ArgumentError("assemble_acnn: fully connected layer " + std::to_string(i) + " has width 0");
        const std::size_t in = net.output_shape()[0];
        Rng rng(derive_seed(seed, i));
        const bool last = i + 1 == widths.size();
        net.append(Layer<float>::dense(glorot_uniform<float>(Shape{widths[i], in}, in, widths[i], rng),
                                       Tensor(Shape{widths[i]}), last ? Activation::identity : Activation::relu));
    }
    net.append(Layer<float>::softmax());
    return model;
}

std::vector<Tensor> prefix_features(const Network<float>& network, std::size_t layer_count,
                                    std::span<const Tensor> volumes) {
    if (layer_count > network.layer_count()) {
        throw ArgumentError("prefix_features: network has only " + std::to_string(network.layer_count()) + " layers");
    }
    if (layer_count == 0) return {volumes.begin(), volumes.end()};
    const Network<float> prefix(network.input_shape(),
                                std::vector<Layer<float>>(network.layers().begin(),
                                                          network.layers().begin() + static_cast<long>(layer_count)));
    std::vector<Tensor> out;
    out.reserve(volumes.size());
    for (const auto& v : volumes) out.push_back(network_infer(prefix, v));
    return out;
}

FineTuneHistory fine_tune_from(AcnnModel& model, std::size_t first_layer, std::span<const Tensor> inputs,
                               std::span<const std::size_t> classes, const FineTuneConfig& config) {
    Network<float>& net = model.network;
    if (!net.ends_with_softmax()) throw ArgumentError("fine_tune: model does not end in softmax");
    if (first_layer > net.frozen_prefix()) {
        throw ArgumentError("fine_tune: layers before " + std::to_string(first_layer) + " are not all frozen");
    }
    if (inputs.size() != classes.size()) throw ArgumentError("fine_tune: inputs and classes differ in length");
    if (inputs.empty()) throw ArgumentError("fine_tune: empty training set");
    if (config.batch_size == 0) throw ArgumentError("fine_tune: batch size must be >= 1");
    config.optimizer.validate();
    std::vector<std::size_t> counts(model.task.num_classes, 0);
    for (std::size_t c : classes) {
        if (c >= counts.size()) {
            throw ArgumentError("fine_tune: class " + std::to_string(c) + " outside task " + model.task.name);
        }
        ++counts[c];
    }
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) throw ArgumentError("fine_tune: class " + std::to_string(c) + " has no samples");
    }
    model.last_fine_tune = config;

    FineTuneHistory history;
    Optimizer<float> optimizer(config.optimizer);
    Rng rng(config.seed);
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const Network<float> checkpoint = net;
        rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t correct = 0;
        bool failed = false;
        for (std::size_t start = 0; start < order.size() && !failed; start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            GradientSet<float> total = zero_gradients(net);
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t i = order[b];
                const auto cache = network_forward(net, inputs[i], first_layer);
                const auto nll = nll_loss(cache.output(), classes[i]);
                if (!std::isfinite(nll.loss)) {
                    failed = true;
                    break;
                }
                loss_sum += nll.loss;
                history.clamped += nll.clamped ? 1 : 0;
                const auto& p = cache.output().data();
                if (static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == classes[i]) ++correct;
                total.add(network_backward(net, cache, nll.grad_logits));
            }
            if (failed) break;
            total.scale(1.0f / static_cast<float>(stop - start));
            if (!optimizer.step(net, total)) {
                failed = true;
                break;
            }
            ++history.steps;
        }
        if (failed) {
            net = checkpoint;
            history.diverged = true;
            break;
        }
        history.epoch_loss.push_back(loss_sum / static_cast<double>(inputs.size()));
        history.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(inputs.size()));
    }
    return history;
}

FineTuneHistory fine_tune(AcnnModel& model, std::span<const Tensor> volumes, std::span<const std::size_t> classes,
                          const FineTuneConfig& config) {
    const std::size_t prefix = model.network.frozen_prefix();
    const auto features = prefix_features(model.network, prefix, volumes);
    return fine_tune_from(model, prefix, features, classes, config);
}

Prediction predict_from(const AcnnModel& model, std::size_t first_layer, const Tensor& input) {
    const Network<float>& net = model.network;
    if (!net.ends_with_softmax()) throw ArgumentError("predict: model does not end in softmax");
    if (first_layer >= net.layer_count()) throw ArgumentError("predict: first layer out of range");
    // Run up to, not through, the softmax and normalize in double.
    const auto cache = network_forward(net, input, first_layer);
    const Tensor& logits = cache.inputs[cache.inputs.size() - 2];
    const TensorD probs = softmax(logits.cast<double>());
    Prediction p;
    p.probabilities.assign(probs.data().begin(), probs.data().end());
    p.class_index = static_cast<std::size_t>(
        std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin());
    return p;
}

Prediction predict(const AcnnModel& model, const Tensor& volume) { return predict_from(model, 0, volume); }

}  // namespace cortex3d
