#include "nodulenet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "nodulenet/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nodulenet {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

Consensus consensus_label(const std::vector<int>& grades) {
    std::vector<int> g;
    for (int v : grades) {
        if (v < 0 || v > 5)
            throw DataError("grade " + std::to_string(v) + " outside [0,5]");
        if (v != 0) g.push_back(v);
    }
    if (g.size() < 3) return Consensus::Excluded;
    std::sort(g.begin(), g.end());
    // Twice the median stays integral for both parities.
    const size_t n = g.size();
    const int med2 = (n % 2 == 1) ? 2 * g[n / 2] : g[n / 2 - 1] + g[n / 2];
    if (med2 < 6) return Consensus::Benign;
    if (med2 > 6) return Consensus::Malignant;
    return Consensus::Excluded;
}

DiscardReason scan_discard_reason(const NoduleRecord& r) {
    if (r.thickness_mm.empty()) throw DataError("empty slice thickness list for " + r.nodule_id);
    double uniform = 0.0;
    bool have_uniform = false;
    // 10-slice extraction window, even-window centering (offset ceil(10/2)-1).
    const int64_t z0 = r.cz - 4, z1 = r.cz + 5;
    for (int64_t z = 0; z < static_cast<int64_t>(r.thickness_mm.size()); ++z) {
        const double t = r.thickness_mm[z];
        if (t <= 0.0) {
            if (z >= z0 && z <= z1) return DiscardReason::MissingSlice;
            continue;
        }
        if (!have_uniform) {
            uniform = t;
            have_uniform = true;
        } else if (std::abs(t - uniform) > 1e-6) {
            return DiscardReason::NonUniformThickness;
        }
    }
    return DiscardReason::Kept;
}

bool filter_scan(const NoduleRecord& r) { return scan_discard_reason(r) == DiscardReason::Kept; }

float normalize_hu(float hu) {
    const float v = (hu + 1000.0f) / 1400.0f;
    return std::clamp(v, 0.0f, 1.0f);
}

Volume load_volume(const std::string& bin_path, const std::string& sidecar_path) {
    std::ifstream side(sidecar_path);
    if (!side) throw DataError("cannot open volume sidecar " + sidecar_path);
    json j;
    try {
        side >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed sidecar " + sidecar_path + ": " + e.what());
    }
    Volume v;
    v.id = j.at("id").get<std::string>();
    auto dims = j.at("dims").get<std::vector<int64_t>>();
    if (dims.size() != 3) throw DataError("sidecar dims must have 3 entries");
    v.X = dims[0];
    v.Y = dims[1];
    v.Z = dims[2];
    v.thickness_mm = j.at("thickness_mm").get<std::vector<double>>();

    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw DataError("cannot open volume " + bin_path);
    v.data.resize(static_cast<size_t>(v.X * v.Y * v.Z));
    bin.read(reinterpret_cast<char*>(v.data.data()),
             static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (bin.gcount() != static_cast<std::streamsize>(v.data.size() * sizeof(float)))
        throw DataError("volume " + bin_path + " shorter than dims promise");
    return v;
}

std::pair<int64_t, int64_t> Dataset::class_counts() const {
    int64_t benign = 0, malignant = 0;
    for (const auto& s : samples) (s.label == 1 ? malignant : benign)++;
    return {benign, malignant};
}

namespace {

// Crop with zero fill; start index = center - (ceil(len/2) - 1) per axis.
void crop(const Volume& v, const std::array<int64_t, 3>& center,
          const std::array<int64_t, 3>& len, std::vector<float>& out) {
    std::array<int64_t, 3> start;
    for (int a = 0; a < 3; ++a) start[a] = center[a] - ((len[a] + 1) / 2 - 1);
    out.assign(static_cast<size_t>(len[0] * len[1] * len[2]), 0.0f);
    for (int64_t x = 0; x < len[0]; ++x) {
        const int64_t sx = start[0] + x;
        if (sx < 0 || sx >= v.X) continue;
        for (int64_t y = 0; y < len[1]; ++y) {
            const int64_t sy = start[1] + y;
            if (sy < 0 || sy >= v.Y) continue;
            for (int64_t z = 0; z < len[2]; ++z) {
                const int64_t sz = start[2] + z;
                if (sz < 0 || sz >= v.Z) continue;
                out[(x * len[1] + y) * len[2] + z] = v.at(sx, sy, sz);
            }
        }
    }
}

} // namespace

Sample extract_patch_pair(const Volume& v, std::array<int64_t, 3> center, const PatchDims& dims) {
    if (center[0] < 0 || center[0] >= v.X || center[1] < 0 || center[1] >= v.Y || center[2] < 0 ||
        center[2] >= v.Z)
        throw DataError("nodule center outside volume " + v.id);
    Sample s;
    s.id = v.id;
    crop(v, center, dims.small, s.small);
    crop(v, center, dims.large, s.large);
    return s;
}

std::vector<int64_t> FoldAssignment::fold_sizes() const {
    std::vector<int64_t> sizes(k, 0);
    for (const auto& [id, f] : fold_of) sizes[f]++;
    return sizes;
}

FoldAssignment make_folds(std::vector<std::string> ids, int k, uint64_t seed,
                          double validation_fraction) {
    if (k < 2) throw ConfigError("k-fold split requires k >= 2");
    if (static_cast<size_t>(k) > ids.size())
        throw ConfigError("k = " + std::to_string(k) + " exceeds dataset size " +
                          std::to_string(ids.size()));
    if (validation_fraction < 0 || validation_fraction >= 1)
        throw ConfigError("validation_fraction must be in [0,1)");
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    FoldAssignment fa;
    fa.k = k;
    fa.validation_fraction = validation_fraction;
    for (size_t i = 0; i < ids.size(); ++i) fa.fold_of[ids[i]] = static_cast<int>(i % k);
    return fa;
}

std::vector<std::string> validation_holdout(const std::vector<std::string>& train_ids,
                                            double fraction, uint64_t seed, int fold) {
    if (train_ids.empty()) throw ContractError("validation holdout from empty training set");
    std::vector<std::string> ids = train_ids;
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(splitmix64(seed ^ (0x56414cULL + static_cast<uint64_t>(fold))));
    std::shuffle(ids.begin(), ids.end(), rng);
    const size_t n_val = std::max<size_t>(
        1, static_cast<size_t>(std::ceil(fraction * static_cast<double>(ids.size()))));
    ids.resize(std::min(n_val, ids.size()));
    return ids;
}

namespace {

struct Vec3 {
    double x, y, z;
};

// One nodule field evaluated over the large-patch grid.
struct NoduleField {
    Vec3 center;
    double rxy, rz, amp, bg;
    std::vector<Vec3> spike_dirs;
    double spike_amp, spike_width;

    double operator()(double x, double y, double z) const {
        const double dx = x - center.x, dy = y - center.y, dz = z - center.z;
        const double rho = std::sqrt((dx * dx + dy * dy) / (rxy * rxy) + dz * dz / (rz * rz));
        double v = bg + amp / (1.0 + std::exp(8.0 * (rho - 1.0))); // sharp shell
        for (const auto& u : spike_dirs) {
            // Offset in blob-normalized coordinates so spikes pierce the shell.
            const double nx = dx / rxy, ny = dy / rxy, nz = dz / rz;
            const double t = nx * u.x + ny * u.y + nz * u.z;
            if (t <= 0) continue;
            const double n2 = nx * nx + ny * ny + nz * nz;
            const double perp2 = std::max(0.0, n2 - t * t);
            const double radial = std::exp(-std::pow(t / 1.8, 4.0));
            v += spike_amp * std::exp(-perp2 / (spike_width * spike_width)) * radial;
        }
        return v;
    }
};

} // namespace

Dataset generate_synthetic(int64_t n, double malignant_fraction, uint64_t seed,
                           const PatchDims& dims, std::vector<SynthMeta>* meta) {
    if (n < 2) throw ConfigError("synthetic generator needs n >= 2");
    if (!(malignant_fraction > 0 && malignant_fraction < 1))
        throw ConfigError("malignant_fraction must be in (0,1)");
    const int64_t n_mal = std::llround(n * malignant_fraction);
    if (n_mal < 1 || n_mal >= n)
        throw ConfigError("malignant_fraction leaves one class empty");

    const auto& L = dims.large;
    Dataset ds;
    ds.dims = dims;
    if (meta) meta->clear();
    const double scale = static_cast<double>(L[0]) / 100.0; // radii track patch geometry
    for (int64_t i = 0; i < n; ++i) {
        std::mt19937_64 rng(splitmix64(seed ^ static_cast<uint64_t>(0x53594e + i * 0x9e37)));
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        std::normal_distribution<double> gauss(0.0, 1.0);

        NoduleField f;
        f.center = {(L[0] - 1) / 2.0, (L[1] - 1) / 2.0, (L[2] - 1) / 2.0};
        f.rxy = (9.0 + 6.0 * uni(rng)) * scale;
        f.rz = (1.4 + 1.2 * uni(rng)) * static_cast<double>(L[2]) / 10.0;
        f.amp = 0.55 + 0.30 * uni(rng);
        f.bg = 0.08;
        f.spike_amp = 0.9 * f.amp;
        f.spike_width = 0.10 + 0.06 * uni(rng);
        const bool malignant = i < n_mal;
        if (malignant) {
            const int n_spikes = 6 + static_cast<int>(uni(rng) * 7.0); // 6..12
            for (int s = 0; s < n_spikes; ++s) {
                Vec3 u{gauss(rng), gauss(rng), 0.5 * gauss(rng)};
                const double norm = std::sqrt(u.x * u.x + u.y * u.y + u.z * u.z);
                f.spike_dirs.push_back({u.x / norm, u.y / norm, u.z / norm});
            }
        }

        Sample s;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth-%04lld", static_cast<long long>(i));
        s.id = buf;
        s.label = malignant ? 1 : 0;
        s.large.resize(static_cast<size_t>(dims.large_voxels()));
        for (int64_t x = 0; x < L[0]; ++x)
            for (int64_t y = 0; y < L[1]; ++y)
                for (int64_t z = 0; z < L[2]; ++z) {
                    double v = f(static_cast<double>(x), static_cast<double>(y),
                                 static_cast<double>(z));
                    v += 0.05 * gauss(rng);
                    s.large[(x * L[1] + y) * L[2] + z] =
                        static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
        // Small patch = central crop of the same rendered field.
        const auto& S = dims.small;
        std::array<int64_t, 3> start;
        for (int a = 0; a < 3; ++a)
            start[a] = (L[a] + 1) / 2 - 1 - ((S[a] + 1) / 2 - 1);
        s.small.resize(static_cast<size_t>(dims.small_voxels()));
        for (int64_t x = 0; x < S[0]; ++x)
            for (int64_t y = 0; y < S[1]; ++y)
                for (int64_t z = 0; z < S[2]; ++z)
                    s.small[(x * S[1] + y) * S[2] + z] =
                        s.large[((x + start[0]) * L[1] + (y + start[1])) * L[2] + (z + start[2])];

        if (meta) meta->push_back({f.rxy, f.rz, f.amp, static_cast<int>(f.spike_dirs.size())});
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

namespace {

void write_floats(std::ofstream& f, const std::vector<float>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}

} // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "patches");
    auto [benign, malignant] = ds.class_counts();
    json records = json::array();
    for (const auto& s : ds.samples)
        records.push_back({{"id", s.id}, {"label", s.label == 1 ? "malignant" : "benign"}});
    json index = {{"format", "nodulenet-dataset-v1"},
                  {"dims", {{"small", ds.dims.small}, {"large", ds.dims.large}}},
                  {"class_counts", {{"benign", benign}, {"malignant", malignant}}},
                  {"records", records}};
    std::ofstream idx(fs::path(dir) / "index.json");
    if (!idx) throw std::runtime_error("cannot write index.json in " + dir);
    idx << index.dump(2) << "\n";
    for (const auto& s : ds.samples) {
        std::ofstream f(fs::path(dir) / "patches" / (s.id + ".bin"), std::ios::binary);
        if (!f) throw std::runtime_error("cannot write patch file for " + s.id);
        write_floats(f, s.small);
        write_floats(f, s.large);
    }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream idx(fs::path(dir) / "index.json");
    if (!idx) throw DataError("no index.json in " + dir);
    json index;
    try {
        idx >> index;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed index.json: ") + e.what());
    }
    if (index.value("format", "") != "nodulenet-dataset-v1")
        throw FormatError("unrecognized dataset format in " + dir);
    Dataset ds;
    auto small = index.at("dims").at("small").get<std::vector<int64_t>>();
    auto large = index.at("dims").at("large").get<std::vector<int64_t>>();
    std::copy(small.begin(), small.end(), ds.dims.small.begin());
    std::copy(large.begin(), large.end(), ds.dims.large.begin());
    for (const auto& rec : index.at("records")) {
        Sample s;
        s.id = rec.at("id").get<std::string>();
        s.label = rec.at("label").get<std::string>() == "malignant" ? 1 : 0;
        std::ifstream f(fs::path(dir) / "patches" / (s.id + ".bin"), std::ios::binary);
        if (!f) throw DataError("missing patch file for " + s.id);
        s.small.resize(static_cast<size_t>(ds.dims.small_voxels()));
        s.large.resize(static_cast<size_t>(ds.dims.large_voxels()));
        f.read(reinterpret_cast<char*>(s.small.data()),
               static_cast<std::streamsize>(s.small.size() * sizeof(float)));
        f.read(reinterpret_cast<char*>(s.large.data()),
               static_cast<std::streamsize>(s.large.size() * sizeof(float)));
        if (!f) throw FormatError("patch file for " + s.id + " truncated");
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::vector<NoduleRecord> parse_annotations(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw DataError("cannot open annotations " + csv_path);
    std::string line;
    if (!std::getline(f, line)) throw DataError("empty annotations file");
    const std::string expected = "nodule_id,scan_id,x,y,z,g1,g2,g3,g4";
    if (line != expected)
        throw DataError("annotation header must be '" + expected + "'");
    std::vector<NoduleRecord> out;
    int64_t row = 1;
    while (std::getline(f, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 9)
            throw DataError("annotation row " + std::to_string(row) + ": expected 9 columns, got " +
                            std::to_string(cols.size()));
        NoduleRecord r;
        r.nodule_id = cols[0];
        r.scan_id = cols[1];
        try {
            r.cx = std::stoll(cols[2]);
            r.cy = std::stoll(cols[3]);
            r.cz = std::stoll(cols[4]);
            for (int g = 5; g < 9; ++g) r.grades.push_back(std::stoi(cols[g]));
        } catch (const std::exception&) {
            throw DataError("annotation row " + std::to_string(row) + ": non-numeric field");
        }
        out.push_back(std::move(r));
    }
    return out;
}

PrepStats prepare_dataset(const std::vector<NoduleRecord>& records,
                          const std::string& volumes_dir, const std::string& out_dir,
                          const PatchDims& dims) {
    PrepStats stats;
    Dataset ds;
    ds.dims = dims;
    std::unordered_map<std::string, Volume> volumes;
    for (NoduleRecord r : records) {
        const Consensus c = consensus_label(r.grades);
        if (c == Consensus::Excluded) {
            int raters = 0;
            for (int g : r.grades)
                if (g != 0) ++raters;
            (raters < 3 ? stats.excluded_few_graders : stats.excluded_median3)++;
            continue;
        }
        auto it = volumes.find(r.scan_id);
        if (it == volumes.end()) {
            const std::string base = (fs::path(volumes_dir) / r.scan_id).string();
            it = volumes.emplace(r.scan_id, load_volume(base + ".bin", base + ".json")).first;
        }
        const Volume& vol = it->second;
        r.thickness_mm = vol.thickness_mm;
        switch (scan_discard_reason(r)) {
            case DiscardReason::NonUniformThickness:
                ++stats.excluded_nonuniform;
                continue;
            case DiscardReason::MissingSlice:
                ++stats.excluded_missing_slice;
                continue;
            case DiscardReason::Kept:
                break;
        }
        Volume norm = vol; // normalize a copy; intensities may be raw HU
        for (float& v : norm.data) v = normalize_hu(v);
        Sample s = extract_patch_pair(norm, {r.cx, r.cy, r.cz}, dims);
        s.id = r.nodule_id;
        s.label = c == Consensus::Malignant ? 1 : 0;
        ds.samples.push_back(std::move(s));
        ++stats.kept;
    }
    save_dataset(ds, out_dir);
    return stats;
}

} // namespace nodulenet
