#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cortex3d/tensor.hpp"

namespace cortex3d {

enum class RawLabel { ad, mci, nc };

inline constexpr std::size_t kRawLabelCount = 3;

const char* to_string(RawLabel label) noexcept;  // "AD", "MCI", "NC"
RawLabel parse_raw_label(const std::string& name);

enum class VolumeSource { phantom, file };

struct Volume {
    Tensor tensor;  // [1, D, H, W]
    RawLabel label = RawLabel::nc;
    std::string subject_id;
    VolumeSource source = VolumeSource::phantom;
};

using Dataset = std::vector<Volume>;

// ---------------------------------------------------------------- phantoms

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Class-conditional anatomy. Lengths are in voxels; brain_scale multiplies
/// the default brain semi-axes (0.42 of the grid).
struct PhantomClass {
    Range ventricle_radius;
    Range shell_thickness;
    Range brain_scale;
};

struct PhantomParams {
    std::size_t grid = 32;
    /// Indexed by RawLabel. AD has the largest ventricles, thinnest cortex and
    /// smallest brain, NC the opposite. Ventricle ranges of neighbouring
    /// classes overlap by 0.2 voxel; shell and scale ranges leave small gaps.
    std::array<PhantomClass, kRawLabelCount> classes{{
        {{5.5, 6.9}, {1.0, 1.5}, {0.83, 0.88}},
        {{4.2, 5.7}, {1.7, 2.2}, {0.90, 0.95}},
        {{3.0, 4.4}, {2.4, 2.9}, {0.97, 1.02}},
    }};
    double noise_sigma = 0.05;
    std::uint64_t seed = 0;

    /// Throws when a range is inverted or negative, sigma is negative, or the
    /// largest brain would not fit in the grid.
    void validate() const;
};

inline constexpr float kBackgroundIntensity = 0.0f;
inline constexpr float kTissueIntensity = 0.55f;
inline constexpr float kShellIntensity = 0.9f;
inline constexpr float kVentricleIntensity = 0.08f;

/// Ellipsoidal brain with a bright cortical shell and a dark central
/// ventricle, plus clipped Gaussian noise. Deterministic in params.seed.
Volume generate_phantom(const PhantomParams& params, RawLabel label);

/// counts[c] phantoms of each class, ordered AD, MCI, NC. Subject i gets
/// seed derive_seed(params.seed, i) and id "<prefix><LABEL>-<i, 4 digits>".
Dataset generate_phantom_dataset(const PhantomParams& params,
                                 const std::array<std::size_t, kRawLabelCount>& counts,
                                 const std::string& id_prefix = "");

// ---------------------------------------------------------------- VOL1 files

inline constexpr std::size_t kVolHeaderBytes = 24;

/// Writes a [C, D, H, W] tensor as VOL1 (little-endian float32).
void write_vol(const Tensor& tensor, const std::filesystem::path& path);
Tensor read_vol(const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path, RawLabel label, std::string subject_id);

enum class RawDtype { u8, u16, f32 };

RawDtype parse_raw_dtype(const std::string& name);

/// Headerless little-endian voxels, width fastest, as a [1, D, H, W] tensor.
Tensor import_raw(const std::filesystem::path& path, std::size_t depth, std::size_t height,
                  std::size_t width, RawDtype dtype);

struct NormalizeResult {
    Tensor tensor;
    /// Input was constant; output is all zero.
    bool degenerate = false;
};

/// Linear rescale so the minimum maps to 0 and the maximum to 1.
NormalizeResult normalize_intensity(const Tensor& tensor);

// ---------------------------------------------------------------- manifests

struct ManifestEntry {
    std::string subject_id;
    std::filesystem::path path;
    RawLabel label = RawLabel::nc;
};

/// CSV with header `subject_id,path,label`. Relative paths are resolved
/// against the manifest's directory on read and written as given.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

Dataset load_dataset(const std::filesystem::path& manifest);

// ---------------------------------------------------------------- folds

struct FoldPlan {
    std::vector<std::vector<std::string>> folds;

    std::size_t k() const noexcept { return folds.size(); }
    /// Fold holding the subject; throws if absent.
    std::size_t fold_of(const std::string& subject_id) const;
};

/// Ids are sorted within each class, shuffled with the seed, then dealt
/// round-robin; the dealer continues across classes so fold sizes also
/// differ by at most one.
FoldPlan stratified_kfold(std::span<const std::string> subject_ids, std::span<const std::size_t> classes,
                          std::size_t k, std::uint64_t seed);
FoldPlan stratified_kfold(const Dataset& dataset, std::size_t k, std::uint64_t seed);

}  // namespace cortex3d
