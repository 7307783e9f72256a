#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cortex3d/classifier.hpp"

namespace cortex3d {

using Confusion = std::vector<std::vector<std::size_t>>;  // [true][predicted]

struct FoldResult {
    std::size_t fold = 0;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    double accuracy = 0.0;
    Confusion confusion;
};

struct Metrics {
    std::string task;
    std::size_t num_classes = 0;
    /// Pooled over every evaluated subject (all folds for cross-validation).
    Confusion confusion;
    double accuracy = 0.0;
    /// Per true class; 0 for a class with no subjects.
    std::vector<double> recall;
    std::vector<FoldResult> folds;
    /// Across folds; the sample standard deviation (n - 1), 0 for one fold.
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    /// Set when a fold failed; folds holds the completed ones.
    bool aborted = false;
    std::string error;

    std::size_t total() const;
};

Confusion confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                           std::size_t num_classes);

/// Accuracy and recall from a confusion matrix; leaves folds empty.
Metrics metrics_from_confusion(const Confusion& confusion, const std::string& task = "");

Metrics evaluate_from(const AcnnModel& model, std::size_t first_layer, std::span<const Tensor> inputs,
                      std::span<const std::size_t> classes);
Metrics evaluate(const AcnnModel& model, const TaskDataset& data);

struct CrossValidationConfig {
    std::size_t k = 10;
    std::uint64_t seed = 0;
    std::vector<std::size_t> fc_widths{32, 16};
    FineTuneConfig fine_tune;
};

/// Stratified k-fold evaluation. Subjects are sorted by id before splitting,
/// so the result does not depend on dataset order. Each fold gets a fresh
/// head (seed derive_seed(seed, fold)) on top of the shared `conv` network;
/// frozen conv features are computed once and reused by every fold.
Metrics cross_validate(const Network<float>& conv, const TaskDataset& data, const CrossValidationConfig& config);

enum class ReportFormat { json, csv };

ReportFormat parse_report_format(const std::string& name);
/// json for ".json", csv for ".csv"; throws otherwise.
ReportFormat report_format_for(const std::filesystem::path& path);

/// JSON keeps the confusion matrices, so read_report reconstructs the counts
/// exactly; accuracies are printed with four decimals in both formats.
void write_report(const Metrics& metrics, const std::filesystem::path& path, ReportFormat format);
/// Reads a JSON report; accuracies and recalls are recomputed from the counts.
Metrics read_report(const std::filesystem::path& path);

}  // namespace cortex3d
