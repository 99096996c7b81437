#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "nodulenet/dataset.hpp"
#include "nodulenet/errors.hpp"

using namespace nodulenet;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("nodulenet_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream f(p);
    f << body;
}

Volume ramp_volume(int64_t X, int64_t Y, int64_t Z) {
    Volume v;
    v.id = "vol";
    v.X = X;
    v.Y = Y;
    v.Z = Z;
    v.thickness_mm.assign(Z, 1.0);
    v.data.resize(X * Y * Z);
    for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i);
    return v;
}

} // namespace

TEST_CASE("consensus labeling fixtures") {
    // median < 3 -> benign, > 3 -> malignant, == 3 -> excluded
    CHECK(consensus_label({1, 2, 2, 4}) == Consensus::Benign);
    CHECK(consensus_label({2, 2, 2}) == Consensus::Benign);
    CHECK(consensus_label({4, 4, 5, 1}) == Consensus::Malignant);
    CHECK(consensus_label({5, 5, 5}) == Consensus::Malignant);
    CHECK(consensus_label({3, 3, 3, 3}) == Consensus::Excluded);
    CHECK(consensus_label({2, 3, 4}) == Consensus::Excluded);      // odd median 3
    CHECK(consensus_label({2, 2, 4, 4}) == Consensus::Excluded);   // even median (2+4)/2 = 3
    CHECK(consensus_label({2, 2, 4, 5}) == Consensus::Excluded);   // even median 3
    CHECK(consensus_label({2, 2, 5, 5}) == Consensus::Malignant);  // even median 3.5

    // zero grades (unavailable) are dropped before counting raters
    CHECK(consensus_label({0, 4, 4, 4}) == Consensus::Malignant);
    CHECK(consensus_label({0, 0, 4, 4}) == Consensus::Excluded); // only 2 raters
    CHECK(consensus_label({1, 2}) == Consensus::Excluded);
    CHECK(consensus_label({}) == Consensus::Excluded);
    CHECK(consensus_label({0, 0, 0, 0}) == Consensus::Excluded);

    CHECK_THROWS_AS(consensus_label({6, 1, 1}), DataError);
    CHECK_THROWS_AS(consensus_label({-1, 1, 1}), DataError);
}

TEST_CASE("consensus labeling is permutation invariant") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> g;
        const int n = 3 + rng() % 4;
        for (int i = 0; i < n; ++i) g.push_back(static_cast<int>(rng() % 6));
        const Consensus base = consensus_label(g);
        std::vector<int> p = g;
        for (int reorder = 0; reorder < 8; ++reorder) {
            std::shuffle(p.begin(), p.end(), rng);
            CHECK(consensus_label(p) == base);
        }
    }
}

TEST_CASE("scan filtering: thickness uniformity and missing slices") {
    NoduleRecord r;
    r.nodule_id = "n1";
    r.cz = 10;
    r.thickness_mm.assign(30, 1.25);
    CHECK(scan_discard_reason(r) == DiscardReason::Kept);

    r.thickness_mm[20] = 1.2500005; // within 1e-6 tolerance
    CHECK(scan_discard_reason(r) == DiscardReason::Kept);

    r.thickness_mm[20] = 2.5;
    CHECK(scan_discard_reason(r) == DiscardReason::NonUniformThickness);

    // missing slice inside the 10-slice window [cz-4, cz+5]
    r.thickness_mm.assign(30, 1.25);
    r.thickness_mm[6] = 0.0;
    CHECK(scan_discard_reason(r) == DiscardReason::MissingSlice);
    r.thickness_mm[6] = 1.25;
    r.thickness_mm[15] = -1.0;
    CHECK(scan_discard_reason(r) == DiscardReason::MissingSlice);

    // missing slice outside the window does not discard
    r.thickness_mm[15] = 1.25;
    r.thickness_mm[5] = 0.0;
    r.thickness_mm[16] = 0.0;
    CHECK(scan_discard_reason(r) == DiscardReason::Kept);
    CHECK(filter_scan(r));

    r.thickness_mm.clear();
    CHECK_THROWS_AS(scan_discard_reason(r), DataError);
}

TEST_CASE("HU normalization window") {
    CHECK(normalize_hu(-1000.0f) == 0.0f);
    CHECK(normalize_hu(400.0f) == 1.0f);
    CHECK(normalize_hu(-300.0f) == doctest::Approx(0.5));
    CHECK(normalize_hu(-2000.0f) == 0.0f); // clipped
    CHECK(normalize_hu(3000.0f) == 1.0f);
}

TEST_CASE("patch extraction: centering and zero fill") {
    Volume v = ramp_volume(8, 8, 8);
    PatchDims dims{{4, 4, 2}, {6, 6, 4}};

    Sample s = extract_patch_pair(v, {4, 4, 4}, dims);
    // even window: start = center - (len/2 - 1); small x spans [3,6]
    CHECK(s.small[0] == v.at(3, 3, 4));
    CHECK(s.small[(1 * 4 + 1) * 2 + 0] == v.at(4, 4, 4)); // center voxel at index ceil(len/2)-1
    CHECK(s.large[0] == v.at(2, 2, 3));

    // out-of-bounds region zero-filled
    Sample edge = extract_patch_pair(v, {0, 0, 0}, dims);
    CHECK(edge.small[0] == 0.0f);
    CHECK(edge.small[(1 * 4 + 1) * 2 + 1] == v.at(0, 0, 1));

    CHECK_THROWS_AS(extract_patch_pair(v, {8, 0, 0}, dims), DataError);
    CHECK_THROWS_AS(extract_patch_pair(v, {0, -1, 0}, dims), DataError);
}

TEST_CASE("fold assignment is a deterministic balanced partition") {
    std::vector<std::string> ids;
    for (int i = 0; i < 23; ++i) ids.push_back("n" + std::to_string(i));

    auto a = make_folds(ids, 5, 7, 0.1);
    auto b = make_folds(ids, 5, 7, 0.1);
    CHECK(a.fold_of == b.fold_of);

    std::vector<std::string> reversed(ids.rbegin(), ids.rend());
    CHECK(make_folds(reversed, 5, 7, 0.1).fold_of == a.fold_of); // order-insensitive

    auto c = make_folds(ids, 5, 8, 0.1);
    CHECK(a.fold_of != c.fold_of);

    auto sizes = a.fold_sizes();
    CHECK(sizes.size() == 5);
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    CHECK(*hi - *lo <= 1);
    int64_t total = 0;
    for (auto s : sizes) total += s;
    CHECK(total == 23);

    CHECK_THROWS_AS(make_folds(ids, 1, 0, 0.0), ConfigError);
    CHECK_THROWS_AS(make_folds({"a", "b"}, 3, 0, 0.0), ConfigError);
}

TEST_CASE("validation holdout: ceil(fraction*n), minimum one, disjoint draws") {
    std::vector<std::string> ids;
    for (int i = 0; i < 40; ++i) ids.push_back("n" + std::to_string(i));

    auto v = validation_holdout(ids, 0.025, 3, 0);
    CHECK(v.size() == 1);
    auto v2 = validation_holdout(ids, 0.1, 3, 0);
    CHECK(v2.size() == 4);
    CHECK(validation_holdout(ids, 0.0, 3, 0).size() == 1); // minimum 1

    // deterministic, fold-dependent
    CHECK(validation_holdout(ids, 0.1, 3, 0) == validation_holdout(ids, 0.1, 3, 0));
    CHECK(validation_holdout(ids, 0.1, 3, 1) != v2);
    for (const auto& id : v2) CHECK(std::count(ids.begin(), ids.end(), id) == 1);
    CHECK_THROWS_AS(validation_holdout({}, 0.1, 3, 0), ContractError);
}

TEST_CASE("synthetic generator: determinism, labels, intensity range") {
    std::vector<SynthMeta> meta;
    auto ds = generate_synthetic(10, 0.4, 123, PatchDims::reduced(), &meta);
    auto ds2 = generate_synthetic(10, 0.4, 123, PatchDims::reduced());
    REQUIRE(ds.samples.size() == 10);
    REQUIRE(meta.size() == 10);
    auto [benign, malignant] = ds.class_counts();
    CHECK(malignant == 4);
    CHECK(benign == 6);

    std::set<std::string> ids;
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        CHECK(ids.insert(s.id).second);
        CHECK(s.small == ds2.samples[i].small);
        CHECK(s.large == ds2.samples[i].large);
        for (float v : s.small) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        // malignant samples have 6-12 spikes, benign none
        if (s.label == 1) {
            CHECK(meta[i].n_spikes >= 6);
            CHECK(meta[i].n_spikes <= 12);
        } else {
            CHECK(meta[i].n_spikes == 0);
        }
    }

    auto ds3 = generate_synthetic(10, 0.4, 124, PatchDims::reduced());
    CHECK(ds.samples[0].small != ds3.samples[0].small);

    CHECK_THROWS_AS(generate_synthetic(1, 0.5, 0, PatchDims::reduced()), ConfigError);
    CHECK_THROWS_AS(generate_synthetic(10, 0.0, 0, PatchDims::reduced()), ConfigError);
    CHECK_THROWS_AS(generate_synthetic(10, 0.01, 0, PatchDims::reduced()), ConfigError);
}

TEST_CASE("small patch is the central crop of the large patch") {
    auto ds = generate_synthetic(2, 0.5, 9, PatchDims::reduced());
    const auto& s = ds.samples[0];
    const auto& S = ds.dims.small;
    const auto& L = ds.dims.large;
    std::array<int64_t, 3> start;
    for (int a = 0; a < 3; ++a) start[a] = (L[a] + 1) / 2 - 1 - ((S[a] + 1) / 2 - 1);
    for (int64_t x = 0; x < S[0]; x += 5)
        for (int64_t y = 0; y < S[1]; y += 5)
            for (int64_t z = 0; z < S[2]; ++z)
                CHECK(s.small[(x * S[1] + y) * S[2] + z] ==
                      s.large[((x + start[0]) * L[1] + (y + start[1])) * L[2] + (z + start[2])]);
}

TEST_CASE("dataset save / load roundtrip") {
    auto dir = scratch_dir("roundtrip");
    auto ds = generate_synthetic(6, 0.5, 77, PatchDims::reduced());
    save_dataset(ds, dir.string());
    CHECK(fs::exists(dir / "index.json"));
    CHECK(fs::exists(dir / "patches" / (ds.samples[0].id + ".bin")));

    auto back = load_dataset(dir.string());
    REQUIRE(back.samples.size() == ds.samples.size());
    CHECK(back.dims == ds.dims);
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].id == ds.samples[i].id);
        CHECK(back.samples[i].label == ds.samples[i].label);
        CHECK(back.samples[i].small == ds.samples[i].small);
        CHECK(back.samples[i].large == ds.samples[i].large);
    }

    CHECK_THROWS_AS(load_dataset((dir / "missing").string()), DataError);
    write_file(dir / "index.json", "{\"format\": \"something-else\"}");
    CHECK_THROWS_AS(load_dataset(dir.string()), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("annotation CSV parsing") {
    auto dir = scratch_dir("csv");
    const auto good = dir / "good.csv";
    write_file(good,
               "nodule_id,scan_id,x,y,z,g1,g2,g3,g4\n"
               "n1,scanA,10,12,5,4,4,5,0\n"
               "\n"
               "n2,scanA,8,8,8,1,2,2,2\n");
    auto recs = parse_annotations(good.string());
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].nodule_id == "n1");
    CHECK(recs[0].scan_id == "scanA");
    CHECK(recs[0].cx == 10);
    CHECK(recs[0].cz == 5);
    CHECK(recs[0].grades == std::vector<int>{4, 4, 5, 0});

    const auto bad_header = dir / "bad_header.csv";
    write_file(bad_header, "id,scan,x,y,z,g1,g2,g3,g4\nn1,s,1,1,1,1,1,1,1\n");
    CHECK_THROWS_AS(parse_annotations(bad_header.string()), DataError);

    const auto bad_row = dir / "bad_row.csv";
    write_file(bad_row, "nodule_id,scan_id,x,y,z,g1,g2,g3,g4\nn1,s,1,1\n");
    CHECK_THROWS_AS(parse_annotations(bad_row.string()), DataError);

    const auto bad_num = dir / "bad_num.csv";
    write_file(bad_num, "nodule_id,scan_id,x,y,z,g1,g2,g3,g4\nn1,s,1,1,one,1,1,1,1\n");
    CHECK_THROWS_AS(parse_annotations(bad_num.string()), DataError);

    CHECK_THROWS_AS(parse_annotations((dir / "nope.csv").string()), DataError);
    fs::remove_all(dir);
}

TEST_CASE("prepare_dataset pipeline with exclusions") {
    auto dir = scratch_dir("prep");
    const auto volumes = dir / "volumes";
    fs::create_directories(volumes);

    // scanA: good, uniform; raw HU values
    Volume a = ramp_volume(60, 60, 20);
    for (float& v : a.data) v = -1000.0f + std::fmod(v, 1400.0f);
    {
        std::ofstream bin(volumes / "scanA.bin", std::ios::binary);
        bin.write(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
        write_file(volumes / "scanA.json",
                   "{\"id\": \"scanA\", \"dims\": [60, 60, 20],"
                   " \"thickness_mm\": [1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,"
                   "1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25]}");
    }
    // scanB: non-uniform thickness
    {
        std::ofstream bin(volumes / "scanB.bin", std::ios::binary);
        bin.write(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
        write_file(volumes / "scanB.json",
                   "{\"id\": \"scanB\", \"dims\": [60, 60, 20],"
                   " \"thickness_mm\": [1.25,1.25,1.25,1.25,1.25,2.5,1.25,1.25,1.25,1.25,"
                   "1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25]}");
    }
    // scanC: slice 9 missing (window of z=10 covers [6,15])
    {
        std::ofstream bin(volumes / "scanC.bin", std::ios::binary);
        bin.write(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
        write_file(volumes / "scanC.json",
                   "{\"id\": \"scanC\", \"dims\": [60, 60, 20],"
                   " \"thickness_mm\": [1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,0,"
                   "1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25,1.25]}");
    }

    std::vector<NoduleRecord> recs = {
        {"keep-mal", "scanA", 30, 30, 10, {4, 5, 4, 0}, {}},
        {"keep-ben", "scanA", 20, 20, 10, {1, 2, 2, 2}, {}},
        {"excl-median", "scanA", 30, 30, 10, {3, 3, 3, 3}, {}},
        {"excl-raters", "scanA", 30, 30, 10, {4, 4, 0, 0}, {}},
        {"excl-thick", "scanB", 30, 30, 10, {4, 4, 4, 4}, {}},
        {"excl-slice", "scanC", 30, 30, 10, {4, 4, 4, 4}, {}},
    };
    const auto out = dir / "out";
    PrepStats stats = prepare_dataset(recs, volumes.string(), out.string(), PatchDims::reduced());
    CHECK(stats.kept == 2);
    CHECK(stats.excluded_median3 == 1);
    CHECK(stats.excluded_few_graders == 1);
    CHECK(stats.excluded_nonuniform == 1);
    CHECK(stats.excluded_missing_slice == 1);

    auto ds = load_dataset(out.string());
    REQUIRE(ds.samples.size() == 2);
    CHECK(ds.samples[0].id == "keep-mal");
    CHECK(ds.samples[0].label == 1);
    CHECK(ds.samples[1].label == 0);
    // intensities normalized from HU into [0,1]
    for (float v : ds.samples[0].large) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    fs::remove_all(dir);
}

TEST_CASE("volume loader validates sidecar and payload size") {
    auto dir = scratch_dir("vol");
    write_file(dir / "v.json",
               "{\"id\": \"v\", \"dims\": [2, 2, 2], \"thickness_mm\": [1.0, 1.0]}");
    {
        std::ofstream bin(dir / "v.bin", std::ios::binary);
        float vals[8] = {0, 1, 2, 3, 4, 5, 6, 7};
        bin.write(reinterpret_cast<const char*>(vals), sizeof(vals));
    }
    auto v = load_volume((dir / "v.bin").string(), (dir / "v.json").string());
    CHECK(v.at(1, 1, 1) == 7.0f);
    CHECK(v.thickness_mm.size() == 2);

    {
        std::ofstream bin(dir / "short.bin", std::ios::binary);
        float vals[3] = {0, 1, 2};
        bin.write(reinterpret_cast<const char*>(vals), sizeof(vals));
    }
    CHECK_THROWS_AS(load_volume((dir / "short.bin").string(), (dir / "v.json").string()),
                    DataError);
    write_file(dir / "bad.json", "not json");
    CHECK_THROWS_AS(load_volume((dir / "v.bin").string(), (dir / "bad.json").string()), DataError);
    fs::remove_all(dir);
}
