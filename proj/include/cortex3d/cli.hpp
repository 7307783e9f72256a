#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cortex3d/cae.hpp"
#include "cortex3d/classifier.hpp"
#include "cortex3d/data.hpp"
#include "cortex3d/eval.hpp"
#include "cortex3d/transfer.hpp"

namespace cortex3d {

struct PathConfig {
    std::filesystem::path data_dir;
    std::filesystem::path output_dir;
    std::filesystem::path manifest;
    std::filesystem::path pretrain_manifest;
    std::filesystem::path cae_checkpoint;
    std::filesystem::path conv_checkpoint;
    std::filesystem::path model_checkpoint;
};

struct DataConfig {
    PhantomParams phantom;  // seed is filled from the run seed
    std::array<std::size_t, kRawLabelCount> counts{20, 20, 20};
    /// A separate phantom set for CAE pretraining; all zero means pretrain on
    /// the main set.
    std::array<std::size_t, kRawLabelCount> pretrain_counts{0, 0, 0};
    bool normalize = true;
};

struct CaeConfig {
    std::vector<std::size_t> feature_maps{8, 8, 8};
    std::size_t kernel_size = 3;
    PoolConfig pool;
    Activation encode_activation = Activation::relu;
    Activation decode_activation = Activation::relu;
    TrainConfig train;
};

struct InspectConfig {
    std::string subject;  // empty: first subject of the manifest
    std::size_t layer = 0;
    SliceAxis axis = SliceAxis::axial;
    long position = -1;  // -1: middle slice
};

/// Everything one run needs; all randomness derives from `seed`.
struct RunConfig {
    std::uint64_t seed = 0;
    PathConfig paths;
    DataConfig data;
    CaeConfig cae;
    /// Empty layers means the identity plan over the CAE stack.
    TransferPlan transfer;
    TaskSpec task = TaskSpec::parse("AD/NC");
    std::vector<std::size_t> fc_widths{32, 16};
    FineTuneConfig fine_tune;
    std::size_t folds = 10;
    InspectConfig inspect;
};

/// Seed streams derived from RunConfig::seed.
enum class SeedStream : std::uint64_t {
    data = 1,
    pretrain_data = 2,
    cae_init = 3,
    cae_train = 4,
    head = 5,
    fine_tune = 6,
    split = 7,
};

std::uint64_t stream_seed(const RunConfig& config, SeedStream stream);

/// Parses a JSON run configuration. Relative paths are taken relative to
/// base_dir. Throws ConfigError naming the offending field.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// CLI entry point: args exclude the program name. Returns 0 on success, 2
/// for usage or configuration errors, 1 for runtime failures.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace cortex3d
