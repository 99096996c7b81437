#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace nodulenet {

/// One annotated nodule as read from the annotation CSV.
struct NoduleRecord {
    std::string nodule_id;
    std::string scan_id;
    int64_t cx = 0, cy = 0, cz = 0;       // voxel indices in the scan
    std::vector<int> grades;              // 0..5, 0 = unavailable diagnosis
    std::vector<double> thickness_mm;     // per-slice; <= 0 marks a missing slice
};

enum class Consensus { Benign, Malignant, Excluded };

/// Consensus labeling: drop zero grades, require >= 3 raters, median < 3
/// benign, > 3 malignant, == 3 excluded (even-count median = mean of the
/// central pair).
Consensus consensus_label(const std::vector<int>& grades);

/// Keep iff slice thickness is uniform (within 1e-6 mm) and the 10-slice
/// extraction window around cz contains no missing slices.
bool filter_scan(const NoduleRecord& record);
enum class DiscardReason { Kept, NonUniformThickness, MissingSlice };
DiscardReason scan_discard_reason(const NoduleRecord& record);

/// Raw volume: little-endian f32, row-major [x,y,z] (z fastest).
struct Volume {
    std::string id;
    int64_t X = 0, Y = 0, Z = 0;
    std::vector<float> data;
    std::vector<double> thickness_mm;

    float at(int64_t x, int64_t y, int64_t z) const { return data[(x * Y + y) * Z + z]; }
};

Volume load_volume(const std::string& bin_path, const std::string& sidecar_path);

/// Lung-window normalization: linear [-1000, 400] HU -> [0,1] with clipping.
float normalize_hu(float hu);

struct PatchDims {
    std::array<int64_t, 3> small;
    std::array<int64_t, 3> large;

    static PatchDims canonical() { return {{50, 50, 5}, {100, 100, 10}}; }
    /// Reduced geometry for fast dataset-tooling tests only.
    static PatchDims reduced() { return {{24, 24, 3}, {48, 48, 6}}; }

    int64_t small_voxels() const { return small[0] * small[1] * small[2]; }
    int64_t large_voxels() const { return large[0] * large[1] * large[2]; }
    bool operator==(const PatchDims&) const = default;
};

/// One labeled dual-scale sample, intensities in [0,1].
struct Sample {
    std::string id;
    int label = 0; // 1 = malignant
    std::vector<float> small;
    std::vector<float> large;
};

struct Dataset {
    PatchDims dims = PatchDims::canonical();
    std::vector<Sample> samples;

    std::pair<int64_t, int64_t> class_counts() const; // (benign, malignant)
};

/// Axis-aligned crops centered on `center`; even windows take the center at
/// offset ceil(len/2)-1, out-of-bounds voxels are zero-filled.
Sample extract_patch_pair(const Volume& volume, std::array<int64_t, 3> center,
                          const PatchDims& dims);

struct FoldAssignment {
    int k = 0;
    double validation_fraction = 0.0;
    std::unordered_map<std::string, int> fold_of;

    std::vector<int64_t> fold_sizes() const;
};

/// Deterministic shuffle of the sorted ids by seed, then round-robin folds.
FoldAssignment make_folds(std::vector<std::string> ids, int k, uint64_t seed,
                          double validation_fraction);

/// Deterministic validation holdout within one fold's training ids:
/// ceil(fraction * n), minimum 1.
std::vector<std::string> validation_holdout(const std::vector<std::string>& train_ids,
                                            double fraction, uint64_t seed, int fold);

/// Generator internals exposed for the boundary-gradient separability oracle.
struct SynthMeta {
    double rxy = 0, rz = 0, amp = 0;
    int n_spikes = 0;
};

/// Deterministic synthetic nodules: benign = smooth Gaussian-shell blob,
/// malignant = blob plus 6-12 radial spikes; additive noise sigma 0.05,
/// clipped to [0,1]. Both scales are crops of one rendered field.
Dataset generate_synthetic(int64_t n, double malignant_fraction, uint64_t seed,
                           const PatchDims& dims, std::vector<SynthMeta>* meta = nullptr);

/// Prepared dataset directory: index.json + patches/<id>.bin
/// (small patch then large patch, contiguous little-endian f32).
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct PrepStats {
    int64_t kept = 0;
    int64_t excluded_median3 = 0;
    int64_t excluded_few_graders = 0;
    int64_t excluded_nonuniform = 0;
    int64_t excluded_missing_slice = 0;
};

std::vector<NoduleRecord> parse_annotations(const std::string& csv_path);

/// Full preparation pipeline: label, filter, normalize, extract, save.
PrepStats prepare_dataset(const std::vector<NoduleRecord>& records,
                          const std::string& volumes_dir, const std::string& out_dir,
                          const PatchDims& dims = PatchDims::canonical());

} // namespace nodulenet
