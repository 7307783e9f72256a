#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "cortex3d/data.hpp"
#include "cortex3d/error.hpp"
#include "cortex3d/random.hpp"
#include "support/oracles.hpp"

using namespace cortex3d;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("cortex3d_test_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<char> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const fs::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Voxels below 0.2 inside the central half-box, counted directly.
std::size_t dark_interior(const Tensor& t) {
    const auto& s = t.shape();
    std::size_t n = 0;
    for (std::size_t d = s[1] / 4; d < 3 * s[1] / 4; ++d)
        for (std::size_t h = s[2] / 4; h < 3 * s[2] / 4; ++h)
            for (std::size_t w = s[3] / 4; w < 3 * s[3] / 4; ++w)
                if (t(0, d, h, w) < 0.2f) ++n;
    return n;
}

std::uint64_t expect_format_error(const fs::path& path) {
    try {
        read_vol(path);
    } catch (const FormatError& e) {
        return e.offset();
    }
    FAIL("expected FormatError");
    return 0;
}

}  // namespace

TEST_CASE("raw labels round trip through their names") {
    for (RawLabel l : {RawLabel::ad, RawLabel::mci, RawLabel::nc}) CHECK(parse_raw_label(to_string(l)) == l);
    CHECK(parse_raw_label("mci") == RawLabel::mci);
    CHECK_THROWS_AS(parse_raw_label("CN"), ArgumentError);
}

TEST_CASE("phantoms are deterministic and clipped to the unit interval") {
    PhantomParams p;
    p.noise_sigma = 0.0;
    p.seed = 42;
    const Volume a = generate_phantom(p, RawLabel::mci);
    const Volume b = generate_phantom(p, RawLabel::mci);
    CHECK(a.tensor.shape() == Shape{1, 32, 32, 32});
    CHECK(a.tensor == b.tensor);
    CHECK(a.label == RawLabel::mci);

    p.noise_sigma = 0.3;
    for (RawLabel l : {RawLabel::ad, RawLabel::mci, RawLabel::nc}) {
        const Volume v = generate_phantom(p, l);
        const auto [lo, hi] = std::minmax_element(v.tensor.data().begin(), v.tensor.data().end());
        CHECK(*lo >= 0.0f);
        CHECK(*hi <= 1.0f);
    }
}

TEST_CASE("larger ventricles give more dark interior voxels") {
    PhantomParams p;
    double sum_ad = 0.0, sum_nc = 0.0;
    for (std::uint64_t i = 0; i < 50; ++i) {
        p.seed = derive_seed(7, i);
        sum_ad += static_cast<double>(dark_interior(generate_phantom(p, RawLabel::ad).tensor));
        sum_nc += static_cast<double>(dark_interior(generate_phantom(p, RawLabel::nc).tensor));
    }
    CHECK(sum_ad / 50.0 > sum_nc / 50.0);
}

TEST_CASE("a dark-voxel threshold separates the phantom classes") {
    // 100 phantoms per class; the best pair of cut points on the dark-voxel
    // count must classify most of them correctly.
    PhantomParams p;
    p.seed = 31337;
    const Dataset ds = generate_phantom_dataset(p, {100, 100, 100});
    std::vector<std::pair<std::size_t, std::size_t>> scored;  // count, class
    for (const auto& v : ds) scored.emplace_back(dark_interior(v.tensor), static_cast<std::size_t>(v.label));
    std::set<std::size_t> cuts;
    for (const auto& s : scored) cuts.insert(s.first);
    std::size_t best = 0;
    for (std::size_t hi : cuts)
        for (std::size_t lo : cuts) {
            if (lo > hi) break;
            std::size_t correct = 0;
            for (const auto& [count, cls] : scored) {
                const std::size_t guess = count >= hi ? 0 : (count >= lo ? 1 : 2);
                correct += guess == cls;
            }
            best = std::max(best, correct);
        }
    CHECK(static_cast<double>(best) / 300.0 > 0.80);
}

TEST_CASE("phantom parameters are validated") {
    PhantomParams p;
    CHECK_NOTHROW(p.validate());
    p.noise_sigma = -0.1;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    p = {};
    p.classes[0].ventricle_radius = {3.0, 2.0};
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    p = {};
    p.classes[2].brain_scale = {1.3, 1.4};
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    CHECK_THROWS_AS(generate_phantom(p, RawLabel::nc), ArgumentError);
}

TEST_CASE("phantom datasets carry labels, ids and per-subject seeds") {
    PhantomParams p;
    p.grid = 16;
    p.classes = {{{{2.0, 2.5}, {0.8, 1.0}, {0.85, 0.9}},
                  {{1.5, 2.0}, {1.0, 1.2}, {0.9, 0.95}},
                  {{1.0, 1.5}, {1.2, 1.5}, {0.95, 1.0}}}};
    p.seed = 5;
    const Dataset ds = generate_phantom_dataset(p, {2, 1, 3}, "S");
    REQUIRE(ds.size() == 6);
    CHECK(ds[0].subject_id == "SAD-0000");
    CHECK(ds[2].subject_id == "SMCI-0002");
    CHECK(ds[5].subject_id == "SNC-0005");
    CHECK(ds[2].label == RawLabel::mci);
    PhantomParams q = p;
    q.seed = derive_seed(5, 4);
    CHECK(generate_phantom(q, RawLabel::nc).tensor == ds[4].tensor);
}

TEST_CASE("VOL1 round trip is bitwise and sized by the header arithmetic") {
    const fs::path dir = scratch_dir("vol");
    std::mt19937_64 gen(3);
    const Tensor t = oracle::random_d(Shape{1, 32, 32, 32}, gen).cast<float>();
    write_vol(t, dir / "a.vol");
    CHECK(fs::file_size(dir / "a.vol") == 131096);
    const Tensor back = read_vol(dir / "a.vol");
    CHECK(back.shape() == t.shape());
    CHECK(std::memcmp(back.data().data(), t.data().data(), t.size() * sizeof(float)) == 0);

    const Tensor multi = oracle::random_d(Shape{2, 3, 4, 5}, gen).cast<float>();
    write_vol(multi, dir / "m.vol");
    CHECK(read_vol(dir / "m.vol") == multi);
    CHECK_THROWS_AS(read_volume(dir / "m.vol", RawLabel::ad, "x"), ShapeError);
    const Volume v = read_volume(dir / "a.vol", RawLabel::ad, "x");
    CHECK(v.source == VolumeSource::file);
    CHECK(v.subject_id == "x");
}

TEST_CASE("corrupted VOL1 files report the failing offset") {
    const fs::path dir = scratch_dir("corrupt");
    write_vol(Tensor::filled(Shape{1, 2, 2, 2}, 0.5f), dir / "good.vol");
    const std::vector<char> good = slurp(dir / "good.vol");
    REQUIRE(good.size() == kVolHeaderBytes + 32);

    auto bad = good;
    bad[0] = 'X';
    dump(dir / "magic.vol", bad);
    CHECK(expect_format_error(dir / "magic.vol") == 0);

    bad = good;
    bad[20] = 7;
    dump(dir / "dtype.vol", bad);
    CHECK(expect_format_error(dir / "dtype.vol") == 20);

    bad = good;
    bad[12] = bad[13] = bad[14] = bad[15] = 0;  // height
    dump(dir / "zero.vol", bad);
    CHECK(expect_format_error(dir / "zero.vol") == 12);

    dump(dir / "short_header.vol", std::vector<char>(good.begin(), good.begin() + 10));
    CHECK(expect_format_error(dir / "short_header.vol") == 10);

    dump(dir / "short_payload.vol", std::vector<char>(good.begin(), good.end() - 3));
    CHECK(expect_format_error(dir / "short_payload.vol") == good.size() - 3);

    bad = good;
    bad.push_back(0);
    dump(dir / "trailing.vol", bad);
    CHECK(expect_format_error(dir / "trailing.vol") == good.size());

    CHECK_THROWS_AS(read_vol(dir / "missing.vol"), IoError);
}

TEST_CASE("raw import reads each dtype width-fastest") {
    const fs::path dir = scratch_dir("raw");
    {
        std::ofstream out(dir / "u16.raw", std::ios::binary);
        for (std::uint16_t i = 0; i < 8; ++i) {
            const unsigned char bytes[2] = {static_cast<unsigned char>(i * 300 & 0xff),
                                            static_cast<unsigned char>(i * 300 >> 8)};
            out.write(reinterpret_cast<const char*>(bytes), 2);
        }
    }
    const Tensor t = import_raw(dir / "u16.raw", 2, 2, 2, RawDtype::u16);
    CHECK(t.shape() == Shape{1, 2, 2, 2});
    CHECK(t(0, 0, 0, 1) == 300.0f);
    CHECK(t(0, 1, 1, 1) == 2100.0f);
    CHECK_THROWS_AS(import_raw(dir / "u16.raw", 2, 2, 3, RawDtype::u16), FormatError);
    CHECK(parse_raw_dtype("f32") == RawDtype::f32);
    CHECK_THROWS_AS(parse_raw_dtype("f64"), ArgumentError);
}

TEST_CASE("intensity normalization") {
    Tensor t(Shape{3});
    t[0] = 2.0f;
    t[1] = 4.0f;
    t[2] = 6.0f;
    auto r = normalize_intensity(t);
    CHECK_FALSE(r.degenerate);
    CHECK(r.tensor[0] == 0.0f);
    CHECK(r.tensor[1] == 0.5f);
    CHECK(r.tensor[2] == 1.0f);

    std::mt19937_64 gen(1);
    Tensor unit = oracle::random_d(Shape{1, 4, 4, 4}, gen, 0.0, 1.0).cast<float>();
    unit[0] = 0.0f;
    unit[1] = 1.0f;
    CHECK(normalize_intensity(unit).tensor == unit);

    r = normalize_intensity(Tensor::filled(Shape{1, 2, 2, 2}, 3.0f));
    CHECK(r.degenerate);
    for (float v : r.tensor.data()) CHECK(v == 0.0f);
}

TEST_CASE("manifests round trip and resolve relative paths") {
    const fs::path dir = scratch_dir("manifest");
    fs::create_directories(dir / "vols");
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < 3; ++i) {
        const std::string id = "sub" + std::to_string(i);
        write_vol(Tensor::filled(Shape{1, 2, 2, 2}, 0.1f * static_cast<float>(i)), dir / "vols" / (id + ".vol"));
        entries.push_back({id, fs::path("vols") / (id + ".vol"), static_cast<RawLabel>(i)});
    }
    write_manifest(dir / "manifest.csv", entries);
    const auto back = read_manifest(dir / "manifest.csv");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].subject_id == entries[i].subject_id);
        CHECK(back[i].label == entries[i].label);
        CHECK(back[i].path == dir / entries[i].path);
    }
    const Dataset ds = load_dataset(dir / "manifest.csv");
    REQUIRE(ds.size() == 3);
    CHECK(ds[2].tensor[0] == 0.2f);
    CHECK(ds[1].label == RawLabel::mci);

    std::ofstream(dir / "dup.csv") << "subject_id,path,label\na,x.vol,AD\na,y.vol,NC\n";
    CHECK_THROWS_AS(read_manifest(dir / "dup.csv"), FormatError);
    std::ofstream(dir / "header.csv") << "id,path,label\na,x.vol,AD\n";
    CHECK_THROWS_AS(read_manifest(dir / "header.csv"), FormatError);
    std::ofstream(dir / "fields.csv") << "subject_id,path,label\na,x.vol\n";
    CHECK_THROWS_AS(read_manifest(dir / "fields.csv"), FormatError);
}

namespace {

std::pair<std::vector<std::string>, std::vector<std::size_t>> subjects(std::array<std::size_t, 3> counts) {
    std::vector<std::string> ids;
    std::vector<std::size_t> classes;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < counts[c]; ++i) {
            ids.push_back("c" + std::to_string(c) + "_" + std::to_string(i));
            classes.push_back(c);
        }
    return {ids, classes};
}

}  // namespace

TEST_CASE("ten folds over 70/70/70 hold 21 subjects, 7 per class") {
    const auto [ids, classes] = subjects({70, 70, 70});
    const FoldPlan plan = stratified_kfold(ids, classes, 10, 123);
    REQUIRE(plan.k() == 10);
    std::map<std::string, std::size_t> class_of;
    for (std::size_t i = 0; i < ids.size(); ++i) class_of[ids[i]] = classes[i];
    std::set<std::string> seen;
    for (const auto& fold : plan.folds) {
        CHECK(fold.size() == 21);
        std::array<std::size_t, 3> per{};
        for (const auto& id : fold) {
            ++per[class_of.at(id)];
            CHECK(seen.insert(id).second);
        }
        CHECK(per == std::array<std::size_t, 3>{7, 7, 7});
    }
    CHECK(seen.size() == 210);
}

TEST_CASE("fold plans: k = 1, determinism and errors") {
    const auto [ids, classes] = subjects({4, 5, 6});
    const FoldPlan one = stratified_kfold(ids, classes, 1, 9);
    REQUIRE(one.k() == 1);
    CHECK(std::set<std::string>(one.folds[0].begin(), one.folds[0].end()) ==
          std::set<std::string>(ids.begin(), ids.end()));

    const FoldPlan a = stratified_kfold(ids, classes, 4, 9);
    const FoldPlan b = stratified_kfold(ids, classes, 4, 9);
    CHECK(a.folds == b.folds);
    CHECK(a.fold_of(a.folds[3][0]) == 3);
    CHECK_THROWS_AS(a.fold_of("nobody"), ArgumentError);

    CHECK_THROWS_AS(stratified_kfold(ids, classes, 5, 9), ArgumentError);
    CHECK_THROWS_AS(stratified_kfold(ids, classes, 0, 9), ArgumentError);
}

TEST_CASE("fold plans are disjoint, covering and stratified on random datasets") {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t num_classes = 1 + gen() % 4;
        std::vector<std::string> ids;
        std::vector<std::size_t> classes;
        std::size_t smallest = SIZE_MAX;
        for (std::size_t c = 0; c < num_classes; ++c) {
            const std::size_t n = 1 + gen() % 25;
            smallest = std::min(smallest, n);
            for (std::size_t i = 0; i < n; ++i) {
                ids.push_back(std::to_string(gen()));
                classes.push_back(c);
            }
        }
        const std::size_t k = 1 + gen() % smallest;
        const FoldPlan plan = stratified_kfold(ids, classes, k, gen());
        REQUIRE(plan.k() == k);
        std::set<std::string> seen;
        std::size_t total = 0;
        std::size_t min_size = SIZE_MAX, max_size = 0;
        std::vector<std::vector<std::size_t>> per(num_classes, std::vector<std::size_t>(k, 0));
        std::map<std::string, std::size_t> class_of;
        for (std::size_t i = 0; i < ids.size(); ++i) class_of[ids[i]] = classes[i];
        for (std::size_t f = 0; f < k; ++f) {
            total += plan.folds[f].size();
            min_size = std::min(min_size, plan.folds[f].size());
            max_size = std::max(max_size, plan.folds[f].size());
            for (const auto& id : plan.folds[f]) {
                seen.insert(id);
                ++per[class_of.at(id)][f];
            }
        }
        CHECK(total == ids.size());
        CHECK(seen.size() == std::set<std::string>(ids.begin(), ids.end()).size());
        CHECK(max_size - min_size <= 1);
        for (const auto& row : per) {
            const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
            CHECK(*hi - *lo <= 1);
        }
    }
}
