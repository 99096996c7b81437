#include "nodulenet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "nodulenet/errors.hpp"

namespace nodulenet {

ConfusionCounts confusion_metrics(const std::vector<ScoredSample>& samples, double threshold) {
    if (samples.empty()) throw ContractError("confusion_metrics: empty input");
    ConfusionCounts c;
    for (const auto& s : samples) {
        if (!std::isfinite(s.score)) throw ContractError("confusion_metrics: non-finite score");
        const bool pred = s.score >= threshold;
        if (s.label == 1)
            pred ? ++c.tp : ++c.fn;
        else
            pred ? ++c.fp : ++c.tn;
    }
    if (c.tp + c.fn > 0) c.tpr = static_cast<double>(c.tp) / (c.tp + c.fn);
    if (c.tn + c.fp > 0) c.tnr = static_cast<double>(c.tn) / (c.tn + c.fp);
    if (c.tp + c.fp > 0) c.ppv = static_cast<double>(c.tp) / (c.tp + c.fp);
    c.acc = static_cast<double>(c.tp + c.tn) / samples.size();
    return c;
}

std::pair<std::vector<RocPoint>, double> roc_auc(const std::vector<ScoredSample>& samples) {
    int64_t n_pos = 0, n_neg = 0;
    for (const auto& s : samples) (s.label == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw ContractError("roc_auc requires at least one sample of each class");

    std::vector<ScoredSample> sorted = samples;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoredSample& a, const ScoredSample& b) { return a.score > b.score; });

    std::vector<RocPoint> points;
    points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    int64_t tp = 0, fp = 0;
    double auc = 0.0;
    size_t i = 0;
    while (i < sorted.size()) {
        const double score = sorted[i].score;
        int64_t dp = 0, dn = 0;
        while (i < sorted.size() && sorted[i].score == score) {
            (sorted[i].label == 1 ? dp : dn)++;
            ++i;
        }
        const double fpr0 = static_cast<double>(fp) / n_neg;
        const double tpr0 = static_cast<double>(tp) / n_pos;
        tp += dp;
        fp += dn;
        const double fpr1 = static_cast<double>(fp) / n_neg;
        const double tpr1 = static_cast<double>(tp) / n_pos;
        auc += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0;
        points.push_back({score, fpr1, tpr1});
    }
    return {points, auc};
}

EvalReport evaluate(const std::vector<ScoredSample>& samples) {
    const ConfusionCounts c = confusion_metrics(samples, 0.5);
    EvalReport r;
    r.tp = c.tp;
    r.fp = c.fp;
    r.tn = c.tn;
    r.fn = c.fn;
    r.tpr = c.tpr;
    r.tnr = c.tnr;
    r.ppv = c.ppv;
    r.acc = c.acc;
    r.n_pos = c.tp + c.fn;
    r.n_neg = c.tn + c.fp;
    if (r.n_pos > 0 && r.n_neg > 0) {
        auto [points, auc] = roc_auc(samples);
        r.roc_points = std::move(points);
        r.auc = auc;
    }
    return r;
}

nlohmann::json report_to_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& p : r.roc_points)
        roc.push_back({{"threshold", std::isinf(p.threshold) ? nlohmann::json(nullptr)
                                                             : nlohmann::json(p.threshold)},
                       {"fpr", p.fpr},
                       {"tpr", p.tpr}});
    return {{"tp", r.tp},       {"fp", r.fp},       {"tn", r.tn},     {"fn", r.fn},
            {"tpr", opt(r.tpr)}, {"tnr", opt(r.tnr)}, {"ppv", opt(r.ppv)}, {"acc", r.acc},
            {"auc", opt(r.auc)}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}, {"roc", roc}};
}

void write_roc_csv(const EvalReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "threshold,fpr,tpr\n";
    for (const auto& p : r.roc_points) {
        if (std::isinf(p.threshold))
            f << "inf";
        else
            f << p.threshold;
        f << "," << p.fpr << "," << p.tpr << "\n";
    }
}

void write_roc_svg(const EvalReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    const int w = 480, h = 480, m = 40;
    auto px = [&](double fpr) { return m + fpr * (w - 2 * m); };
    auto py = [&](double tpr) { return h - m - tpr * (h - 2 * m); };
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    f << "<rect x='" << m << "' y='" << m << "' width='" << w - 2 * m << "' height='"
      << h - 2 * m << "' fill='white' stroke='black'/>\n";
    f << "<line x1='" << px(0) << "' y1='" << py(0) << "' x2='" << px(1) << "' y2='" << py(1)
      << "' stroke='lightgray' stroke-dasharray='4'/>\n";
    f << "<polyline fill='none' stroke='crimson' stroke-width='2' points='";
    for (const auto& p : r.roc_points) f << px(p.fpr) << "," << py(p.tpr) << " ";
    f << "'/>\n";
    f << "<text x='" << w / 2 - 60 << "' y='" << h - 8 << "'>false positive rate</text>\n";
    f << "<text x='12' y='" << h / 2 << "' transform='rotate(-90 12 " << h / 2
      << ")'>true positive rate</text>\n";
    if (r.auc)
        f << "<text x='" << w - 160 << "' y='" << h - m - 10 << "'>AUC = " << *r.auc
          << "</text>\n";
    f << "</svg>\n";
}

} // namespace nodulenet
