#include "cortex3d/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cortex3d/random.hpp"

namespace cortex3d {

const char* to_string(RawLabel label) noexcept {
    switch (label) {
        case RawLabel::ad: return "AD";
        case RawLabel::mci: return "MCI";
        case RawLabel::nc: return "NC";
    }
    return "?";
}

RawLabel parse_raw_label(const std::string& name) {
    std::string up = name;
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
    if (up == "AD") return RawLabel::ad;
    if (up == "MCI") return RawLabel::mci;
    if (up == "NC") return RawLabel::nc;
    throw ArgumentError("unknown label '" + name + "' (expected AD, MCI or NC)");
}

// ---------------------------------------------------------------- phantoms

namespace {

constexpr double kBrainFraction = 0.42;

void check_range(const Range& r, const std::string& what) {
    if (!(r.lo >= 0.0) || !(r.hi >= r.lo)) {
        throw ArgumentError("phantom " + what + " range [" + std::to_string(r.lo) + ", " +
                            std::to_string(r.hi) + "] is invalid");
    }
}

}  // namespace

void PhantomParams::validate() const {
    if (grid < 8) throw ArgumentError("phantom grid must be at least 8, got " + std::to_string(grid));
    if (!(noise_sigma >= 0.0)) throw ArgumentError("phantom noise sigma must be >= 0");
    for (std::size_t c = 0; c < kRawLabelCount; ++c) {
        const std::string name = to_string(static_cast<RawLabel>(c));
        const PhantomClass& p = classes[c];
        check_range(p.ventricle_radius, name + " ventricle radius");
        check_range(p.shell_thickness, name + " shell thickness");
        check_range(p.brain_scale, name + " brain scale");
        // The largest brain with 1% axis jitter must stay half a voxel inside
        // the grid.
        const double half = 0.5 * static_cast<double>(grid);
        const double outer = kBrainFraction * static_cast<double>(grid) * p.brain_scale.hi * 1.01 + 0.5;
        if (outer > half) {
            throw ArgumentError("phantom " + name + " brain scale " + std::to_string(p.brain_scale.hi) +
                                " exceeds the " + std::to_string(grid) + "^3 grid");
        }
        const double inner = kBrainFraction * static_cast<double>(grid) * p.brain_scale.lo * 0.99;
        if (p.ventricle_radius.hi * 1.05 + p.shell_thickness.hi >= inner) {
            throw ArgumentError("phantom " + name + " ventricle and shell do not fit inside the brain");
        }
    }
}

Volume generate_phantom(const PhantomParams& params, RawLabel label) {
    params.validate();
    const PhantomClass& cls = params.classes[static_cast<std::size_t>(label)];
    Rng rng(params.seed);

    const double g = static_cast<double>(params.grid);
    const double mid = 0.5 * (g - 1.0);
    const double scale = rng.uniform(cls.brain_scale.lo, cls.brain_scale.hi);
    const double shell = rng.uniform(cls.shell_thickness.lo, cls.shell_thickness.hi);
    const double radius = rng.uniform(cls.ventricle_radius.lo, cls.ventricle_radius.hi);
    std::array<double, 3> brain{}, vent{};
    for (std::size_t a = 0; a < 3; ++a) {
        brain[a] = kBrainFraction * g * scale * rng.uniform(0.99, 1.01);
        vent[a] = radius * rng.uniform(0.95, 1.05);
    }
    const double brain_mean = (brain[0] + brain[1] + brain[2]) / 3.0;

    Volume v;
    v.label = label;
    v.source = VolumeSource::phantom;
    v.tensor = Tensor(Shape{1, params.grid, params.grid, params.grid});
    auto* out = v.tensor.raw();
    std::size_t i = 0;
    for (std::size_t d = 0; d < params.grid; ++d)
        for (std::size_t h = 0; h < params.grid; ++h)
            for (std::size_t w = 0; w < params.grid; ++w, ++i) {
                const double p[3] = {static_cast<double>(d) - mid, static_cast<double>(h) - mid,
                                     static_cast<double>(w) - mid};
                double rb = 0.0, rv = 0.0;
                for (std::size_t a = 0; a < 3; ++a) {
                    rb += (p[a] / brain[a]) * (p[a] / brain[a]);
                    rv += (p[a] / vent[a]) * (p[a] / vent[a]);
                }
                rb = std::sqrt(rb);
                double value = kBackgroundIntensity;
                if (rb <= 1.0) {
                    if ((1.0 - rb) * brain_mean < shell) {
                        value = kShellIntensity;
                    } else if (rv <= 1.0) {
                        value = kVentricleIntensity;
                    } else {
                        value = kTissueIntensity;
                    }
                }
                if (params.noise_sigma > 0.0) value += params.noise_sigma * rng.normal();
                out[i] = static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
    return v;
}

Dataset generate_phantom_dataset(const PhantomParams& params,
                                 const std::array<std::size_t, kRawLabelCount>& counts,
                                 const std::string& id_prefix) {
    Dataset out;
    std::size_t index = 0;
    for (std::size_t c = 0; c < kRawLabelCount; ++c) {
        for (std::size_t n = 0; n < counts[c]; ++n, ++index) {
            PhantomParams p = params;
            p.seed = derive_seed(params.seed, index);
            Volume v = generate_phantom(p, static_cast<RawLabel>(c));
            char id[32];
            std::snprintf(id, sizeof id, "%s-%04zu", to_string(v.label), index);
            v.subject_id = id_prefix + id;
            out.push_back(std::move(v));
        }
    }
    return out;
}

// ---------------------------------------------------------------- VOL1

namespace {

constexpr char kVolMagic[4] = {'V', 'O', 'L', '1'};
constexpr std::uint32_t kDtypeF32 = 1;

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void put_u32(std::string& buf, std::uint32_t v) {
    v = to_le(v);
    buf.append(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(const std::string& buf, std::size_t at) {
    std::uint32_t v;
    std::memcpy(&v, buf.data() + at, 4);
    return to_le(v);
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

void write_vol(const Tensor& tensor, const std::filesystem::path& path) {
    if (tensor.rank() != 4) {
        throw ShapeError("write_vol: expected a [C,D,H,W] tensor, got " + tensor.shape().str());
    }
    std::string buf(kVolMagic, 4);
    for (std::size_t a = 0; a < 4; ++a) put_u32(buf, static_cast<std::uint32_t>(tensor.shape()[a]));
    put_u32(buf, kDtypeF32);
    buf.reserve(kVolHeaderBytes + 4 * tensor.size());
    for (float f : tensor.data()) put_u32(buf, std::bit_cast<std::uint32_t>(f));
    spit(path, buf);
}

Tensor read_vol(const std::filesystem::path& path) {
    const std::string buf = slurp(path);
    const std::string where = path.string() + ": ";
    if (buf.size() < 4 || std::memcmp(buf.data(), kVolMagic, 4) != 0) {
        throw FormatError(where + "missing VOL1 magic", 0);
    }
    if (buf.size() < kVolHeaderBytes) {
        throw FormatError(where + "truncated VOL1 header", buf.size());
    }
    std::array<std::size_t, 4> dims{};
    for (std::size_t a = 0; a < 4; ++a) {
        dims[a] = get_u32(buf, 4 + 4 * a);
        if (dims[a] == 0) throw FormatError(where + "zero extent in VOL1 header", 4 + 4 * a);
    }
    const std::uint32_t dtype = get_u32(buf, 20);
    if (dtype != kDtypeF32) {
        throw FormatError(where + "unknown VOL1 dtype code " + std::to_string(dtype), 20);
    }
    const Shape shape{dims[0], dims[1], dims[2], dims[3]};
    const std::size_t expected = kVolHeaderBytes + 4 * shape.numel();
    if (buf.size() < expected) {
        throw FormatError(where + "VOL1 payload truncated: expected " + std::to_string(expected) +
                              " bytes for " + shape.str(),
                          buf.size());
    }
    if (buf.size() > expected) {
        throw FormatError(where + "trailing bytes after VOL1 payload", expected);
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(get_u32(buf, kVolHeaderBytes + 4 * i));
    return t;
}

Volume read_volume(const std::filesystem::path& path, RawLabel label, std::string subject_id) {
    Volume v;
    v.tensor = read_vol(path);
    if (v.tensor.shape()[0] != 1) {
        throw ShapeError(path.string() + ": volumes must have one channel, got " + v.tensor.shape().str());
    }
    v.label = label;
    v.subject_id = std::move(subject_id);
    v.source = VolumeSource::file;
    return v;
}

RawDtype parse_raw_dtype(const std::string& name) {
    if (name == "u8") return RawDtype::u8;
    if (name == "u16") return RawDtype::u16;
    if (name == "f32") return RawDtype::f32;
    throw ArgumentError("unknown raw dtype '" + name + "' (expected u8, u16 or f32)");
}

Tensor import_raw(const std::filesystem::path& path, std::size_t depth, std::size_t height, std::size_t width,
                  RawDtype dtype) {
    const std::string buf = slurp(path);
    const std::size_t bytes = dtype == RawDtype::u8 ? 1 : dtype == RawDtype::u16 ? 2 : 4;
    Tensor t(Shape{1, depth, height, width});
    if (buf.size() != bytes * t.size()) {
        throw FormatError(path.string() + ": raw file holds " + std::to_string(buf.size()) + " bytes, expected " +
                              std::to_string(bytes * t.size()),
                          std::min(buf.size(), bytes * t.size()));
    }
    const auto* u = reinterpret_cast<const unsigned char*>(buf.data());
    for (std::size_t i = 0; i < t.size(); ++i) {
        switch (dtype) {
            case RawDtype::u8: t[i] = u[i]; break;
            case RawDtype::u16: t[i] = static_cast<float>(u[2 * i] | (u[2 * i + 1] << 8)); break;
            case RawDtype::f32: t[i] = std::bit_cast<float>(get_u32(buf, 4 * i)); break;
        }
    }
    return t;
}

NormalizeResult normalize_intensity(const Tensor& tensor) {
    if (tensor.size() == 0) throw ArgumentError("normalize_intensity: empty tensor");
    const auto [lo_it, hi_it] = std::minmax_element(tensor.data().begin(), tensor.data().end());
    const double lo = *lo_it, hi = *hi_it;
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        throw ArgumentError("normalize_intensity: non-finite intensities");
    }
    NormalizeResult r{Tensor(tensor.shape()), hi == lo};
    if (r.degenerate) return r;
    const double span = hi - lo;
    for (std::size_t i = 0; i < tensor.size(); ++i) {
        r.tensor[i] = static_cast<float>((static_cast<double>(tensor[i]) - lo) / span);
    }
    return r;
}

// ---------------------------------------------------------------- manifests

namespace {

constexpr const char* kManifestHeader = "subject_id,path,label";

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::string line;
    std::size_t lineno = 0;
    std::vector<ManifestEntry> out;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line != kManifestHeader) {
                throw FormatError(path.string() + ": line 1: expected header '" + kManifestHeader + "'");
            }
            continue;
        }
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        const std::string at = path.string() + ": line " + std::to_string(lineno) + ": ";
        if (fields.size() != 3) {
            throw FormatError(at + "expected 3 fields, got " + std::to_string(fields.size()));
        }
        if (fields[0].empty()) throw FormatError(at + "empty subject_id");
        if (!seen.insert(fields[0]).second) throw FormatError(at + "duplicate subject_id " + fields[0]);
        ManifestEntry e;
        e.subject_id = fields[0];
        e.path = std::filesystem::path(fields[1]);
        if (e.path.is_relative()) e.path = base / e.path;
        try {
            e.label = parse_raw_label(fields[2]);
        } catch (const ArgumentError& err) {
            throw FormatError(at + err.what());
        }
        out.push_back(std::move(e));
    }
    if (lineno == 0) throw FormatError(path.string() + ": empty manifest");
    return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
    std::string text = std::string(kManifestHeader) + "\n";
    for (const auto& e : entries) {
        const std::string p = e.path.generic_string();
        if (e.subject_id.find_first_of(",\n") != std::string::npos || p.find_first_of(",\n") != std::string::npos) {
            throw ArgumentError("manifest fields may not contain commas or newlines: " + e.subject_id);
        }
        text += e.subject_id + "," + p + "," + to_string(e.label) + "\n";
    }
    spit(path, text);
}

Dataset load_dataset(const std::filesystem::path& manifest) {
    Dataset out;
    for (const auto& e : read_manifest(manifest)) out.push_back(read_volume(e.path, e.label, e.subject_id));
    return out;
}

// ---------------------------------------------------------------- folds

std::size_t FoldPlan::fold_of(const std::string& subject_id) const {
    for (std::size_t f = 0; f < folds.size(); ++f)
        if (std::find(folds[f].begin(), folds[f].end(), subject_id) != folds[f].end()) return f;
    throw ArgumentError("subject " + subject_id + " is in no fold");
}

FoldPlan stratified_kfold(std::span<const std::string> subject_ids, std::span<const std::size_t> classes,
                          std::size_t k, std::uint64_t seed) {
    if (subject_ids.size() != classes.size()) {
        throw ArgumentError("stratified_kfold: ids and classes differ in length");
    }
    if (k == 0) throw ArgumentError("stratified_kfold: k must be >= 1");
    std::map<std::size_t, std::vector<std::string>> by_class;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < subject_ids.size(); ++i) {
        if (!seen.insert(subject_ids[i]).second) {
            throw ArgumentError("stratified_kfold: duplicate subject id " + subject_ids[i]);
        }
        by_class[classes[i]].push_back(subject_ids[i]);
    }
    if (by_class.empty()) throw ArgumentError("stratified_kfold: empty dataset");
    for (const auto& [cls, ids] : by_class) {
        if (ids.size() < k) {
            throw ArgumentError("stratified_kfold: k=" + std::to_string(k) + " exceeds the " +
                                std::to_string(ids.size()) + " subjects of class " + std::to_string(cls));
        }
    }
    Rng rng(seed);
    FoldPlan plan;
    plan.folds.resize(k);
    std::size_t dealer = 0;
    for (auto& [cls, ids] : by_class) {
        std::sort(ids.begin(), ids.end());
        rng.shuffle(ids.begin(), ids.end());
        for (auto& id : ids) plan.folds[dealer++ % k].push_back(std::move(id));
    }
    return plan;
}

FoldPlan stratified_kfold(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    std::vector<std::string> ids;
    std::vector<std::size_t> classes;
    for (const auto& v : dataset) {
        ids.push_back(v.subject_id);
        classes.push_back(static_cast<std::size_t>(v.label));
    }
    return stratified_kfold(ids, classes, k, seed);
}

}  // namespace cortex3d
