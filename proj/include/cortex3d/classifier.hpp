#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cortex3d/data.hpp"
#include "cortex3d/nn.hpp"
#include "cortex3d/optim.hpp"

namespace cortex3d {

/// One of the five diagnosis tasks. class_map sends each raw label to a task
/// class, or -1 when subjects with that label are excluded.
struct TaskSpec {
    std::string name;
    std::array<int, kRawLabelCount> class_map{};
    std::size_t num_classes = 0;

    /// "AD/NC", "AD+MCI/NC", "AD/MCI", "MCI/NC" or "AD/MCI/NC".
    static TaskSpec parse(const std::string& name);
    static std::vector<TaskSpec> all();

    bool includes(RawLabel label) const { return class_map[static_cast<std::size_t>(label)] >= 0; }
    std::size_t class_of(RawLabel label) const;
    /// Human-readable class names, e.g. {"AD+MCI", "NC"}.
    std::vector<std::string> class_names() const;
};

/// Volumes relabelled for one task, with excluded subjects dropped.
struct TaskDataset {
    TaskSpec task;
    std::vector<Tensor> volumes;
    std::vector<std::size_t> classes;
    std::vector<std::string> subject_ids;
    std::vector<std::size_t> class_counts;

    std::size_t size() const noexcept { return volumes.size(); }
};

/// Throws if nothing survives the mapping or a task class ends up empty.
TaskDataset apply_task(const Dataset& dataset, const TaskSpec& task);

struct FineTuneConfig {
    OptimizerConfig optimizer;
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
};

struct AcnnModel {
    Network<float> network;
    TaskSpec task;
    std::vector<std::size_t> fc_widths;
    std::uint64_t seed = 0;
    FineTuneConfig last_fine_tune;
};

/// Appends flatten, ReLU dense layers of the given widths, a final dense
/// layer of task.num_classes logits and softmax to a copy of `conv`. Dense
/// weights are Glorot-uniform (layer i seeded by derive_seed(seed, i)),
/// biases zero.
AcnnModel assemble_acnn(const Network<float>& conv, std::span<const std::size_t> fc_widths,
                        const TaskSpec& task, std::uint64_t seed);

struct FineTuneHistory {
    std::vector<double> epoch_loss;      // mean NLL over the epoch's samples
    std::vector<double> epoch_accuracy;  // training accuracy over the epoch
    std::size_t steps = 0;
    /// Samples whose true-class probability hit the 1e-30 floor.
    std::size_t clamped = 0;
    /// A non-finite loss or gradient stopped training; parameters were
    /// restored to the start of that epoch.
    bool diverged = false;
};

/// Outputs of the model's first `layer_count` layers for each volume.
std::vector<Tensor> prefix_features(const Network<float>& network, std::size_t layer_count,
                                    std::span<const Tensor> volumes);

/// Mini-batch NLL training of the unfrozen parameters. inputs[i] must have
/// shape network.shape_at(first_layer), and every layer before first_layer
/// must be frozen; passing prefix_features lets callers reuse frozen
/// features across runs.
FineTuneHistory fine_tune_from(AcnnModel& model, std::size_t first_layer, std::span<const Tensor> inputs,
                               std::span<const std::size_t> classes, const FineTuneConfig& config);

/// fine_tune_from on features of the model's frozen prefix.
FineTuneHistory fine_tune(AcnnModel& model, std::span<const Tensor> volumes,
                          std::span<const std::size_t> classes, const FineTuneConfig& config);

struct Prediction {
    std::size_t class_index = 0;
    /// Softmax of the logits evaluated in double precision.
    std::vector<double> probabilities;
};

/// Argmax of the class probabilities; ties go to the lowest class index.
Prediction predict_from(const AcnnModel& model, std::size_t first_layer, const Tensor& input);
Prediction predict(const AcnnModel& model, const Tensor& volume);

}  // namespace cortex3d
