#include "cortex3d/cli.hpp"

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cortex3d/checkpoint.hpp"
#include "cortex3d/error.hpp"
#include "cortex3d/random.hpp"

namespace cortex3d {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t stream_seed(const RunConfig& config, SeedStream stream) {
    return derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

// ---------------------------------------------------------------- config parsing

namespace {

// One JSON object of the config. Every read marks the key as known so that
// finish() can reject typos.
class Fields {
public:
    Fields(json j, std::string where) : j_(std::move(j)), where_(std::move(where)) {
        if (j_.is_null()) j_ = json::object();
        if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    Fields child(const std::string& key) {
        const json* v = find(key);
        return Fields(v ? *v : json::object(), name(key));
    }

    std::uint64_t whole(const std::string& key, std::uint64_t fallback, std::uint64_t min = 0) {
        const json* v = find(key);
        if (!v) return fallback;
        if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
        const auto n = v->get<std::uint64_t>();
        if (n < min) fail(key, "must be at least " + std::to_string(min));
        return n;
    }

    double number(const std::string& key, double fallback) {
        const json* v = find(key);
        if (!v) return fallback;
        if (!v->is_number()) fail(key, "expected a number");
        return v->get<double>();
    }

    long integer(const std::string& key, long fallback) {
        const json* v = find(key);
        if (!v) return fallback;
        if (!v->is_number_integer()) fail(key, "expected an integer");
        return v->get<long>();
    }

    bool flag(const std::string& key, bool fallback) {
        const json* v = find(key);
        if (!v) return fallback;
        if (!v->is_boolean()) fail(key, "expected true or false");
        return v->get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback) {
        const json* v = find(key);
        if (!v) return fallback;
        if (!v->is_string()) fail(key, "expected a string");
        return v->get<std::string>();
    }

    std::vector<std::size_t> wholes(const std::string& key, std::vector<std::size_t> fallback, std::size_t min = 0) {
        const json* v = find(key);
        if (!v) return fallback;
        if (!v->is_array()) fail(key, "expected an array of non-negative integers");
        std::vector<std::size_t> out;
        for (const auto& e : *v) {
            if (!e.is_number_unsigned()) fail(key, "expected an array of non-negative integers");
            if (e.get<std::size_t>() < min) fail(key, "entries must be at least " + std::to_string(min));
            out.push_back(e.get<std::size_t>());
        }
        return out;
    }

    std::array<std::size_t, kRawLabelCount> per_class(const std::string& key,
                                                      std::array<std::size_t, kRawLabelCount> fallback) {
        if (!j_.contains(key)) {
            seen_.insert(key);
            return fallback;
        }
        const auto v = wholes(key, {});
        if (v.size() != kRawLabelCount) fail(key, "expected three counts (AD, MCI, NC)");
        return {v[0], v[1], v[2]};
    }

    template <typename F>
    auto parsed(const std::string& key, F parse, decltype(parse(std::string())) fallback) {
        const json* v = find(key);
        if (!v) return fallback;
        if (!v->is_string()) fail(key, "expected a string");
        try {
            return parse(v->get<std::string>());
        } catch (const Error& e) {
            fail(key, e.what());
        }
    }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!seen_.count(k)) fail(k, "unknown field");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError(name(key) + ": " + what);
    }

    std::string name(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }
    std::string label() const { return where_.empty() ? "config" : where_; }

private:
    json j_;
    std::string where_;
    std::set<std::string> seen_;
};

OptimizerConfig parse_optimizer(Fields f, double default_epsilon) {
    OptimizerConfig o;
    o.rule = f.parsed("rule", parse_update_rule, UpdateRule::adadelta);
    o.learning_rate = f.number("learning_rate", o.learning_rate);
    o.rho = f.number("rho", o.rho);
    o.epsilon = f.number("epsilon", default_epsilon);
    f.finish();
    try {
        o.validate();
    } catch (const Error& e) {
        throw ConfigError(f.label() + ": " + e.what());
    }
    return o;
}

PoolConfig parse_pool(Fields f, PoolConfig fallback) {
    PoolConfig p;
    p.window = f.whole("window", fallback.window, 1);
    p.stride = f.whole("stride", fallback.stride, 1);
    f.finish();
    return p;
}

PhantomClass parse_class(Fields f, const PhantomClass& fallback) {
    auto range = [&](const std::string& key, Range r) {
        const json* v = f.find(key);
        if (!v) return r;
        if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number())
            f.fail(key, "expected [lo, hi]");
        return Range{(*v)[0].get<double>(), (*v)[1].get<double>()};
    };
    PhantomClass c;
    c.ventricle_radius = range("ventricle_radius", fallback.ventricle_radius);
    c.shell_thickness = range("shell_thickness", fallback.shell_thickness);
    c.brain_scale = range("brain_scale", fallback.brain_scale);
    f.finish();
    return c;
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    Fields top(root, "");
    c.seed = top.whole("seed", 0);

    {
        Fields d = top.child("data");
        c.data.phantom.grid = d.whole("grid", c.data.phantom.grid);
        c.data.phantom.noise_sigma = d.number("noise_sigma", c.data.phantom.noise_sigma);
        c.data.counts = d.per_class("counts", c.data.counts);
        c.data.pretrain_counts = d.per_class("pretrain_counts", c.data.pretrain_counts);
        c.data.normalize = d.flag("normalize", c.data.normalize);
        Fields classes = d.child("classes");
        for (std::size_t l = 0; l < kRawLabelCount; ++l) {
            const std::string key = to_string(static_cast<RawLabel>(l));
            c.data.phantom.classes[l] = parse_class(classes.child(key), c.data.phantom.classes[l]);
        }
        classes.finish();
        d.finish();
        try {
            c.data.phantom.validate();
        } catch (const Error& e) {
            throw ConfigError(std::string("data: ") + e.what());
        }
    }

    {
        Fields f = top.child("cae");
        c.cae.feature_maps = f.wholes("feature_maps", c.cae.feature_maps, 1);
        if (c.cae.feature_maps.empty()) f.fail("feature_maps", "needs at least one layer");
        c.cae.kernel_size = f.whole("kernel_size", c.cae.kernel_size, 1);
        c.cae.pool = parse_pool(f.child("pool"), c.cae.pool);
        c.cae.encode_activation = f.parsed("encode_activation", parse_activation, c.cae.encode_activation);
        c.cae.decode_activation = f.parsed("decode_activation", parse_activation, c.cae.decode_activation);
        c.cae.train.epochs = f.whole("epochs", 50);
        c.cae.train.batch_size = f.whole("batch_size", 1, 1);
        c.cae.train.optimizer = parse_optimizer(f.child("optimizer"), 1e-8);
        f.finish();
    }

    {
        Fields f = top.child("transfer");
        if (const json* layers = f.find("layers")) {
            if (!layers->is_array()) f.fail("layers", "expected an array");
            for (std::size_t i = 0; i < layers->size(); ++i) {
                Fields lf((*layers)[i], "transfer.layers[" + std::to_string(i) + "]");
                LayerTransfer t;
                t.source_layer = lf.whole("source_layer", i);
                if (t.source_layer >= c.cae.feature_maps.size())
                    lf.fail("source_layer", "the CAE stack has " + std::to_string(c.cae.feature_maps.size()) + " layers");
                t.kernel_size = lf.whole("kernel_size", 0);
                if (t.kernel_size != 0 &&
                    (t.kernel_size < c.cae.kernel_size || (t.kernel_size - c.cae.kernel_size) % 2 != 0))
                    lf.fail("kernel_size", "must be 0 or at least the CAE kernel size with the same parity");
                t.pool = parse_pool(lf.child("pool"), c.cae.pool);
                t.frozen = lf.flag("frozen", true);
                lf.finish();
                c.transfer.layers.push_back(t);
            }
        }
        f.finish();
    }

    {
        Fields f = top.child("acnn");
        c.task = f.parsed("task", TaskSpec::parse, c.task);
        c.fc_widths = f.wholes("fc_widths", c.fc_widths, 1);
        c.fine_tune.epochs = f.whole("epochs", c.fine_tune.epochs);
        c.fine_tune.batch_size = f.whole("batch_size", c.fine_tune.batch_size, 1);
        c.fine_tune.optimizer = parse_optimizer(f.child("optimizer"), 1e-8);
        f.finish();
    }

    {
        Fields f = top.child("cv");
        c.folds = f.whole("k", c.folds, 1);
        f.finish();
    }

    {
        Fields f = top.child("inspect");
        c.inspect.subject = f.text("subject", "");
        c.inspect.layer = f.whole("layer", 0);
        if (c.inspect.layer >= c.cae.feature_maps.size()) f.fail("layer", "no such CAE layer");
        c.inspect.axis = f.parsed("axis", parse_slice_axis, SliceAxis::axial);
        c.inspect.position = f.integer("position", -1);
        f.finish();
    }

    {
        Fields f = top.child("paths");
        auto path = [&](const std::string& key, const fs::path& fallback) {
            const std::string s = f.text(key, "");
            return s.empty() ? fallback : resolve(base_dir, s);
        };
        c.paths.data_dir = path("data_dir", base_dir / "data");
        c.paths.output_dir = path("output_dir", base_dir / "out");
        c.paths.manifest = path("manifest", c.paths.data_dir / "manifest.csv");
        const bool separate = c.data.pretrain_counts != std::array<std::size_t, kRawLabelCount>{0, 0, 0};
        c.paths.pretrain_manifest =
            path("pretrain_manifest", separate ? c.paths.data_dir / "pretrain" / "manifest.csv" : c.paths.manifest);
        c.paths.cae_checkpoint = path("cae_checkpoint", c.paths.output_dir / "cae.ckpt");
        c.paths.conv_checkpoint = path("conv_checkpoint", c.paths.output_dir / "conv.ckpt");
        c.paths.model_checkpoint = path("model_checkpoint", c.paths.output_dir / "model.ckpt");
        f.finish();
    }

    top.finish();
    c.data.phantom.seed = stream_seed(c, SeedStream::data);
    c.cae.train.seed = stream_seed(c, SeedStream::cae_train);
    c.fine_tune.seed = stream_seed(c, SeedStream::fine_tune);
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.parent_path().empty() ? fs::current_path() : path.parent_path());
}

// ---------------------------------------------------------------- commands

namespace {

struct Context {
    const RunConfig& cfg;
    std::ostream& out;
    std::ostream& err;
};

void require_file(const fs::path& p, const std::string& field) {
    if (!fs::is_regular_file(p)) throw ConfigError("paths." + field + ": no such file " + p.string());
}

void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
}

Dataset load(const Context& ctx, const fs::path& manifest) {
    Dataset ds = load_dataset(manifest);
    if (!ctx.cfg.data.normalize) return ds;
    for (auto& v : ds) {
        auto r = normalize_intensity(v.tensor);
        if (r.degenerate) ctx.err << "warning: " << v.subject_id << " has constant intensity; using zeros\n";
        v.tensor = std::move(r.tensor);
    }
    return ds;
}

CaeStack<float> declared_stack(const RunConfig& cfg) {
    return CaeStack<float>::build(1, cfg.cae.feature_maps, cfg.cae.kernel_size, cfg.cae.pool,
                                  stream_seed(cfg, SeedStream::cae_init), cfg.cae.encode_activation,
                                  cfg.cae.decode_activation);
}

CaeStack<float> trained_stack(const RunConfig& cfg) {
    auto stack = declared_stack(cfg);
    load_parameters(stack, read_checkpoint(cfg.paths.cae_checkpoint));
    return stack;
}

Shape volume_shape(const RunConfig& cfg) {
    const auto entries = read_manifest(cfg.paths.manifest);
    if (entries.empty()) throw Error(cfg.paths.manifest.string() + ": no subjects");
    return read_vol(entries.front().path).shape();
}

TransferResult<float> transfer_from(const CaeStack<float>& stack, const RunConfig& cfg, const Shape& input) {
    const TransferPlan plan = cfg.transfer.layers.empty() ? TransferPlan::identity(stack) : cfg.transfer;
    return transplant(stack, plan, input);
}

Network<float> trained_conv(const RunConfig& cfg, const Shape& input) {
    auto net = transfer_from(declared_stack(cfg), cfg, input).network;
    load_parameters(net, read_checkpoint(cfg.paths.conv_checkpoint));
    return net;
}

AcnnModel fresh_model(const RunConfig& cfg, const Network<float>& conv) {
    return assemble_acnn(conv, cfg.fc_widths, cfg.task, stream_seed(cfg, SeedStream::head));
}

TaskDataset subset(const TaskDataset& d, const std::set<std::string>& ids, bool keep) {
    TaskDataset s;
    s.task = d.task;
    s.class_counts.assign(d.task.num_classes, 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (ids.count(d.subject_ids[i]) != static_cast<std::size_t>(keep)) continue;
        s.volumes.push_back(d.volumes[i]);
        s.classes.push_back(d.classes[i]);
        s.subject_ids.push_back(d.subject_ids[i]);
        ++s.class_counts[d.classes[i]];
    }
    return s;
}

// Fold 0 of the cross-validation split is held out for `evaluate`; with one
// fold the model is trained and evaluated on everything.
std::pair<TaskDataset, TaskDataset> holdout(const TaskDataset& d, const RunConfig& cfg) {
    if (cfg.folds == 1) return {d, d};
    const FoldPlan plan = stratified_kfold(d.subject_ids, d.classes, cfg.folds, stream_seed(cfg, SeedStream::split));
    const std::set<std::string> test(plan.folds[0].begin(), plan.folds[0].end());
    return {subset(d, test, false), subset(d, test, true)};
}

json history_json(const TrainingHistory& h) {
    return {{"initial_loss", h.initial_loss}, {"epoch_loss", h.epoch_loss}, {"steps", h.steps},
            {"diverged", h.diverged}};
}

void write_set(const Dataset& ds, const fs::path& manifest) {
    const fs::path dir = manifest.parent_path();
    fs::create_directories(dir);
    std::vector<ManifestEntry> entries;
    for (const auto& v : ds) {
        const fs::path file = v.subject_id + ".vol";
        write_vol(v.tensor, dir / file);
        entries.push_back({v.subject_id, file, v.label});
    }
    write_manifest(manifest, entries);
}

int gen_data(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const Dataset ds = generate_phantom_dataset(cfg.data.phantom, cfg.data.counts);
    write_set(ds, cfg.paths.manifest);
    ctx.out << "wrote " << ds.size() << " phantoms and " << cfg.paths.manifest.string() << "\n";
    if (cfg.data.pretrain_counts != std::array<std::size_t, kRawLabelCount>{0, 0, 0}) {
        PhantomParams p = cfg.data.phantom;
        p.seed = stream_seed(cfg, SeedStream::pretrain_data);
        const Dataset pre = generate_phantom_dataset(p, cfg.data.pretrain_counts, "pre-");
        write_set(pre, cfg.paths.pretrain_manifest);
        ctx.out << "wrote " << pre.size() << " pretraining phantoms and " << cfg.paths.pretrain_manifest.string()
                << "\n";
    }
    return 0;
}

int pretrain(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    require_file(cfg.paths.pretrain_manifest, "pretrain_manifest");
    const Dataset ds = load(ctx, cfg.paths.pretrain_manifest);
    std::vector<Tensor> xs;
    for (const auto& v : ds) xs.push_back(v.tensor);
    auto stack = declared_stack(cfg);
    const auto histories = train_stack_greedy<float>(stack, xs, cfg.cae.train);
    json layers = json::array();
    bool diverged = false;
    for (std::size_t l = 0; l < histories.size(); ++l) {
        const auto& h = histories[l];
        diverged = diverged || h.diverged;
        layers.push_back(history_json(h));
        ctx.out << "layer " << l << ": loss " << h.initial_loss << " -> "
                << (h.epoch_loss.empty() ? h.initial_loss : h.epoch_loss.back()) << "\n";
    }
    write_checkpoint(cfg.paths.cae_checkpoint, stack_tensors(stack));
    write_json(cfg.paths.output_dir / "pretrain_history.json", {{"subjects", ds.size()}, {"layers", layers}});
    if (diverged) {
        ctx.err << "error: CAE training diverged\n";
        return 1;
    }
    return 0;
}

int inspect_features(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    require_file(cfg.paths.cae_checkpoint, "cae_checkpoint");
    require_file(cfg.paths.manifest, "manifest");
    const auto stack = trained_stack(cfg);
    const Dataset ds = load(ctx, cfg.paths.manifest);
    const Volume* v = ds.empty() ? nullptr : &ds.front();
    if (!cfg.inspect.subject.empty()) {
        v = nullptr;
        for (const auto& s : ds)
            if (s.subject_id == cfg.inspect.subject) v = &s;
        if (!v) throw ConfigError("inspect.subject: " + cfg.inspect.subject + " is not in the manifest");
    }
    if (!v) throw Error("manifest lists no subjects");
    const Shape pooled = stack_output_shapes(stack, v->tensor.shape()).at(cfg.inspect.layer);
    const std::size_t extent = pooled[1 + static_cast<std::size_t>(cfg.inspect.axis)];
    const std::size_t pos = cfg.inspect.position < 0 ? extent / 2 : static_cast<std::size_t>(cfg.inspect.position);
    const auto slices = export_feature_slices(stack, v->tensor, cfg.inspect.layer, cfg.inspect.axis, pos);
    const auto paths = write_feature_slices(cfg.paths.output_dir / "features", slices, cfg.inspect.layer,
                                            cfg.inspect.axis, pos);
    ctx.out << "wrote " << paths.size() << " slices of " << v->subject_id << " to "
            << (cfg.paths.output_dir / "features").string() << "\n";
    return 0;
}

int transfer(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    require_file(cfg.paths.cae_checkpoint, "cae_checkpoint");
    require_file(cfg.paths.manifest, "manifest");
    const auto result = transfer_from(trained_stack(cfg), cfg, volume_shape(cfg));
    for (const auto& w : result.warnings) ctx.err << "warning: " << w << "\n";
    write_checkpoint(cfg.paths.conv_checkpoint, network_tensors(result.network));
    ctx.out << "conv network output " << result.network.output_shape().str() << " -> "
            << cfg.paths.conv_checkpoint.string() << "\n";
    return 0;
}

int finetune(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    require_file(cfg.paths.conv_checkpoint, "conv_checkpoint");
    require_file(cfg.paths.manifest, "manifest");
    const TaskDataset all = apply_task(load(ctx, cfg.paths.manifest), cfg.task);
    const auto [train, test] = holdout(all, cfg);
    AcnnModel model = fresh_model(cfg, trained_conv(cfg, all.volumes.front().shape()));
    const auto h = fine_tune(model, train.volumes, train.classes, cfg.fine_tune);
    write_checkpoint(cfg.paths.model_checkpoint, network_tensors(model.network));
    write_json(cfg.paths.output_dir / "finetune_history.json",
               {{"task", cfg.task.name},
                {"train_size", train.size()},
                {"epoch_loss", h.epoch_loss},
                {"epoch_accuracy", h.epoch_accuracy},
                {"steps", h.steps},
                {"clamped", h.clamped},
                {"diverged", h.diverged}});
    ctx.out << cfg.task.name << ": trained on " << train.size() << " subjects, final loss "
            << (h.epoch_loss.empty() ? 0.0 : h.epoch_loss.back()) << "\n";
    if (h.diverged) {
        ctx.err << "error: fine-tuning diverged\n";
        return 1;
    }
    return 0;
}

int evaluate_cmd(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    require_file(cfg.paths.conv_checkpoint, "conv_checkpoint");
    require_file(cfg.paths.model_checkpoint, "model_checkpoint");
    require_file(cfg.paths.manifest, "manifest");
    const TaskDataset all = apply_task(load(ctx, cfg.paths.manifest), cfg.task);
    const auto test = holdout(all, cfg).second;
    AcnnModel model = fresh_model(cfg, trained_conv(cfg, all.volumes.front().shape()));
    load_parameters(model.network, read_checkpoint(cfg.paths.model_checkpoint));
    const Metrics m = evaluate(model, test);
    const fs::path report = cfg.paths.output_dir / "eval_report.json";
    write_report(m, report, ReportFormat::json);
    ctx.out << cfg.task.name << ": accuracy " << m.accuracy << " on " << m.total() << " held-out subjects -> "
            << report.string() << "\n";
    return 0;
}

int cv(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    require_file(cfg.paths.conv_checkpoint, "conv_checkpoint");
    require_file(cfg.paths.manifest, "manifest");
    const TaskDataset data = apply_task(load(ctx, cfg.paths.manifest), cfg.task);
    CrossValidationConfig cv;
    cv.k = cfg.folds;
    cv.seed = stream_seed(cfg, SeedStream::split);
    cv.fc_widths = cfg.fc_widths;
    cv.fine_tune = cfg.fine_tune;
    const Metrics m = cross_validate(trained_conv(cfg, data.volumes.front().shape()), data, cv);
    write_report(m, cfg.paths.output_dir / "cv_report.json", ReportFormat::json);
    write_report(m, cfg.paths.output_dir / "cv_report.csv", ReportFormat::csv);
    if (m.aborted) {
        ctx.err << "error: cross-validation aborted after " << m.folds.size() << " folds: " << m.error << "\n";
        return 1;
    }
    ctx.out << cfg.task.name << ": " << cfg.folds << "-fold accuracy " << m.mean_accuracy << " +/- " << m.std_accuracy
            << "\n";
    return 0;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"3D convolutional autoencoder pretraining and ACNN classification of brain volumes", "cortex3d"};
    app.require_subcommand(1);
    std::string config_path;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"gen-data", "write a labelled phantom dataset and its manifest"},
        {"pretrain", "train the CAE stack greedily and save it"},
        {"inspect-features", "export feature-map slices of one subject as PGM images"},
        {"transfer", "build the convolutional network from the pretrained encoders"},
        {"finetune", "train the classifier head on all but the held-out fold"},
        {"evaluate", "score the fine-tuned model on the held-out fold"},
        {"cv", "k-fold cross-validation of the classifier"},
    };
    for (const auto& [name, help] : commands)
        app.add_subcommand(name, help)->add_option("-c,--config", config_path, "run configuration (JSON)")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        const RunConfig cfg = load_run_config(config_path);
        const Context ctx{cfg, out, err};
        if (command == "gen-data") return gen_data(ctx);
        if (command == "pretrain") return pretrain(ctx);
        if (command == "inspect-features") return inspect_features(ctx);
        if (command == "transfer") return transfer(ctx);
        if (command == "finetune") return finetune(ctx);
        if (command == "evaluate") return evaluate_cmd(ctx);
        return cv(ctx);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cortex3d
