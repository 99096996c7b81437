#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace nodulenet {

struct ScoredSample {
    std::string id;
    double score = 0.0; // in [0,1]
    int label = 0;      // 1 = malignant (positive)
};

struct RocPoint {
    double threshold;
    double fpr;
    double tpr;
};

struct EvalReport {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0; // at threshold 0.5
    std::optional<double> tpr, tnr, ppv;    // absent when undefined
    double acc = 0.0;
    std::vector<RocPoint> roc_points;       // starts (0,0), ends (1,1)
    std::optional<double> auc;              // absent for single-class input
    int64_t n_pos = 0, n_neg = 0;
};

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::optional<double> tpr, tnr, ppv;
    double acc = 0.0;
};

/// Predict positive iff score >= threshold. Undefined rates are absent.
ConfusionCounts confusion_metrics(const std::vector<ScoredSample>& samples, double threshold);

/// ROC by sweeping distinct score thresholds (equal scores grouped into one
/// step, giving a diagonal segment), and trapezoidal AUC. The trapezoid
/// equals the pairwise Mann-Whitney statistic with ties counted 1/2.
std::pair<std::vector<RocPoint>, double> roc_auc(const std::vector<ScoredSample>& samples);

/// Full report at threshold 0.5; AUC omitted (not an error) on single-class input.
EvalReport evaluate(const std::vector<ScoredSample>& samples);

nlohmann::json report_to_json(const EvalReport& report);
void write_roc_csv(const EvalReport& report, const std::string& path);
void write_roc_svg(const EvalReport& report, const std::string& path);

} // namespace nodulenet
