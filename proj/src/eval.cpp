#include "cortex3d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>

#include <json.hpp>

#include "cortex3d/random.hpp"

namespace cortex3d {

std::size_t Metrics::total() const {
    std::size_t n = 0;
    for (const auto& row : confusion) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
    return n;
}

Confusion confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                           std::size_t num_classes) {
    if (truth.size() != predicted.size()) throw ArgumentError("confusion_matrix: length mismatch");
    Confusion m(num_classes, std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= num_classes || predicted[i] >= num_classes) {
            throw ArgumentError("confusion_matrix: class index outside [0, " + std::to_string(num_classes) + ")");
        }
        ++m[truth[i]][predicted[i]];
    }
    return m;
}

Metrics metrics_from_confusion(const Confusion& confusion, const std::string& task) {
    Metrics m;
    m.task = task;
    m.num_classes = confusion.size();
    m.confusion = confusion;
    std::size_t total = 0, trace = 0;
    for (std::size_t r = 0; r < confusion.size(); ++r) {
        if (confusion[r].size() != confusion.size()) throw ShapeError("confusion matrix is not square");
        const std::size_t row = std::accumulate(confusion[r].begin(), confusion[r].end(), std::size_t{0});
        total += row;
        trace += confusion[r][r];
        m.recall.push_back(row == 0 ? 0.0 : static_cast<double>(confusion[r][r]) / static_cast<double>(row));
    }
    m.accuracy = total == 0 ? 0.0 : static_cast<double>(trace) / static_cast<double>(total);
    return m;
}

Metrics evaluate_from(const AcnnModel& model, std::size_t first_layer, std::span<const Tensor> inputs,
                      std::span<const std::size_t> classes) {
    if (inputs.empty()) throw ArgumentError("evaluate: empty dataset");
    if (inputs.size() != classes.size()) throw ArgumentError("evaluate: inputs and classes differ in length");
    std::vector<std::size_t> predicted;
    predicted.reserve(inputs.size());
    for (const auto& x : inputs) predicted.push_back(predict_from(model, first_layer, x).class_index);
    Metrics m = metrics_from_confusion(confusion_matrix(classes, predicted, model.task.num_classes), model.task.name);
    m.mean_accuracy = m.accuracy;
    return m;
}

Metrics evaluate(const AcnnModel& model, const TaskDataset& data) {
    if (data.task.name != model.task.name) {
        throw ArgumentError("evaluate: dataset is labelled for " + data.task.name + " but the model predicts " +
                            model.task.name);
    }
    return evaluate_from(model, 0, data.volumes, data.classes);
}

Metrics cross_validate(const Network<float>& conv, const TaskDataset& data, const CrossValidationConfig& config) {
    // Canonical order: by subject id.
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return data.subject_ids[a] < data.subject_ids[b]; });
    std::vector<std::string> ids;
    std::vector<std::size_t> classes;
    std::vector<Tensor> volumes;
    for (std::size_t i : order) {
        ids.push_back(data.subject_ids[i]);
        classes.push_back(data.classes[i]);
        volumes.push_back(data.volumes[i]);
    }
    const FoldPlan plan = stratified_kfold(ids, classes, config.k, config.seed);

    // The head's layout does not affect the conv prefix, so a throwaway model
    // tells us how far features can be precomputed.
    const AcnnModel probe = assemble_acnn(conv, config.fc_widths, data.task, config.seed);
    const std::size_t prefix = probe.network.frozen_prefix();
    const std::vector<Tensor> features = prefix_features(probe.network, prefix, volumes);

    std::vector<std::size_t> fold_of(ids.size());
    for (std::size_t f = 0; f < plan.k(); ++f)
        for (const auto& id : plan.folds[f])
            fold_of[static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin())] = f;

    Metrics result;
    result.task = data.task.name;
    result.num_classes = data.task.num_classes;
    Confusion pooled(result.num_classes, std::vector<std::size_t>(result.num_classes, 0));
    for (std::size_t f = 0; f < plan.k(); ++f) {
        try {
            std::vector<Tensor> train_x, test_x;
            std::vector<std::size_t> train_y, test_y;
            std::set<std::string> train_ids;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (fold_of[i] == f) {
                    test_x.push_back(features[i]);
                    test_y.push_back(classes[i]);
                } else {
                    train_x.push_back(features[i]);
                    train_y.push_back(classes[i]);
                    train_ids.insert(ids[i]);
                }
            }
            for (const auto& id : plan.folds[f]) {
                if (train_ids.count(id) != 0) {
                    throw Error("fold " + std::to_string(f) + ": test subject " + id + " is in the training set");
                }
            }
            AcnnModel model = assemble_acnn(conv, config.fc_widths, data.task, derive_seed(config.seed, f));
            FineTuneConfig ft = config.fine_tune;
            ft.seed = derive_seed(config.fine_tune.seed, f);
            const FineTuneHistory history = fine_tune_from(model, prefix, train_x, train_y, ft);
            if (history.diverged) throw Error("fold " + std::to_string(f) + ": fine-tuning diverged");
            const Metrics m = evaluate_from(model, prefix, test_x, test_y);
            result.folds.push_back({f, train_x.size(), test_x.size(), m.accuracy, m.confusion});
            for (std::size_t r = 0; r < result.num_classes; ++r)
                for (std::size_t c = 0; c < result.num_classes; ++c) pooled[r][c] += m.confusion[r][c];
        } catch (const std::exception& e) {
            result.aborted = true;
            result.error = e.what();
            break;
        }
    }
    const Metrics agg = metrics_from_confusion(pooled, data.task.name);
    result.confusion = agg.confusion;
    result.accuracy = agg.accuracy;
    result.recall = agg.recall;
    const std::size_t n = result.folds.size();
    if (n > 0) {
        double sum = 0.0;
        for (const auto& fr : result.folds) sum += fr.accuracy;
        result.mean_accuracy = sum / static_cast<double>(n);
        double ss = 0.0;
        for (const auto& fr : result.folds) ss += (fr.accuracy - result.mean_accuracy) * (fr.accuracy - result.mean_accuracy);
        result.std_accuracy = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    }
    return result;
}

// ---------------------------------------------------------------- reports

ReportFormat parse_report_format(const std::string& name) {
    if (name == "json") return ReportFormat::json;
    if (name == "csv") return ReportFormat::csv;
    throw ArgumentError("unknown report format '" + name + "' (expected json or csv)");
}

ReportFormat report_format_for(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".json") return ReportFormat::json;
    if (ext == ".csv") return ReportFormat::csv;
    throw ArgumentError("cannot infer report format from '" + path.string() + "' (use .json or .csv)");
}

namespace {

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// nlohmann prints the shortest round-trip form of a double, so fixed-width
// numbers go in as tagged strings and are unquoted after dumping.
constexpr char kFixedTag[] = "\x01" "fixed:";

nlohmann::ordered_json rounded(double v) { return std::string(kFixedTag) + fixed4(v); }

std::string untag_fixed(const std::string& text) {
    static const std::regex tagged(R"re("\\u0001fixed:(-?[0-9]+\.[0-9]{4})")re");
    return std::regex_replace(text, tagged, "$1");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

void write_report(const Metrics& metrics, const std::filesystem::path& path, ReportFormat format) {
    if (format == ReportFormat::csv) {
        std::string text = "fold,train_size,test_size,accuracy\n";
        for (const auto& f : metrics.folds) {
            text += std::to_string(f.fold) + "," + std::to_string(f.train_size) + "," + std::to_string(f.test_size) +
                    "," + fixed4(f.accuracy) + "\n";
        }
        const bool single = metrics.folds.empty();
        text += std::string(metrics.aborted ? "aborted" : "all") + ",," + std::to_string(metrics.total()) + "," +
                fixed4(single ? metrics.accuracy : metrics.mean_accuracy) + "\n";
        write_text(path, text);
        return;
    }
    nlohmann::ordered_json j;
    j["task"] = metrics.task;
    j["num_classes"] = metrics.num_classes;
    j["accuracy"] = rounded(metrics.accuracy);
    j["mean_accuracy"] = rounded(metrics.mean_accuracy);
    j["std_accuracy"] = rounded(metrics.std_accuracy);
    j["recall"] = nlohmann::json::array();
    for (double r : metrics.recall) j["recall"].push_back(rounded(r));
    j["confusion"] = metrics.confusion;
    j["folds"] = nlohmann::json::array();
    for (const auto& f : metrics.folds) {
        nlohmann::ordered_json fj;
        fj["fold"] = f.fold;
        fj["train_size"] = f.train_size;
        fj["test_size"] = f.test_size;
        fj["accuracy"] = rounded(f.accuracy);
        fj["confusion"] = f.confusion;
        j["folds"].push_back(fj);
    }
    j["aborted"] = metrics.aborted;
    j["error"] = metrics.error;
    write_text(path, untag_fixed(j.dump(2)) + "\n");
}

Metrics read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        Metrics m = metrics_from_confusion(j.at("confusion").get<Confusion>(), j.at("task").get<std::string>());
        if (m.num_classes != j.at("num_classes").get<std::size_t>()) {
            throw FormatError(path.string() + ": num_classes disagrees with the confusion matrix");
        }
        for (const auto& fj : j.at("folds")) {
            FoldResult f;
            f.fold = fj.at("fold").get<std::size_t>();
            f.train_size = fj.at("train_size").get<std::size_t>();
            f.test_size = fj.at("test_size").get<std::size_t>();
            f.confusion = fj.at("confusion").get<Confusion>();
            f.accuracy = metrics_from_confusion(f.confusion).accuracy;
            m.folds.push_back(std::move(f));
        }
        m.aborted = j.at("aborted").get<bool>();
        m.error = j.at("error").get<std::string>();
        if (m.folds.empty()) {
            m.mean_accuracy = m.accuracy;
        } else {
            double sum = 0.0, ss = 0.0;
            for (const auto& f : m.folds) sum += f.accuracy;
            m.mean_accuracy = sum / static_cast<double>(m.folds.size());
            for (const auto& f : m.folds) ss += (f.accuracy - m.mean_accuracy) * (f.accuracy - m.mean_accuracy);
            m.std_accuracy = m.folds.size() > 1 ? std::sqrt(ss / static_cast<double>(m.folds.size() - 1)) : 0.0;
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace cortex3d
