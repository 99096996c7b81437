#pragma once

#include "nodulenet/network.hpp"

namespace nodulenet {

struct LossConfig {
    double w_benign = 1.0;
    double w_malignant = 1.0;
    double lambda_aux = 0.3; // intermediate-head weight
    double l2_coeff = 1e-4;  // applied to kernels / weight matrices only

    void validate() const {
        if (!(w_benign > 0) || !(w_malignant > 0) || !std::isfinite(w_benign) ||
            !std::isfinite(w_malignant))
            throw ConfigError("class weights must be finite and positive");
        if (lambda_aux < 0 || l2_coeff < 0)
            throw ConfigError("lambda_aux and l2_coeff must be >= 0");
    }
};

/// Inverse-frequency weights w_c = N / (2 N_c); balanced data gives (1,1).
inline std::pair<double, double> class_weights_from_counts(int64_t n_benign,
                                                           int64_t n_malignant) {
    if (n_benign < 1 || n_malignant < 1)
        throw ConfigError("class weights require at least one sample of each class");
    const double n = static_cast<double>(n_benign + n_malignant);
    return {n / (2.0 * n_benign), n / (2.0 * n_malignant)};
}

/// Mean over the batch of -[w_pos y log p + w_neg (1-y) log(1-p)],
/// with p clamped to [1e-7, 1-1e-7]. Labels: 1 = malignant (positive).
template <typename T>
Tensor<T> weighted_bce(Tape<T>& tape, Tensor<T> prob, const std::vector<int>& labels,
                       double w_benign, double w_malignant) {
    if (labels.empty()) throw ContractError("weighted_bce: empty batch");
    if (prob.size() != static_cast<int64_t>(labels.size()))
        throw DimensionError("weighted_bce: " + std::to_string(prob.size()) +
                             " probabilities vs " + std::to_string(labels.size()) + " labels");
    constexpr double kClamp = 1e-7;
    const size_t n = labels.size();
    Tensor<T> y = detail::make_output<T>({1}, {prob});
    double acc = 0.0;
    std::vector<T> dp(n); // d(loss)/d(p) per sample, before the 1/n factor
    for (size_t i = 0; i < n; ++i) {
        const double p =
            std::clamp(static_cast<double>(prob.data()[i]), kClamp, 1.0 - kClamp);
        const bool clamped = static_cast<double>(prob.data()[i]) != p;
        if (labels[i] == 1) {
            acc += -w_malignant * std::log(p);
            dp[i] = clamped ? T(0) : static_cast<T>(-w_malignant / p);
        } else {
            acc += -w_benign * std::log(1.0 - p);
            dp[i] = clamped ? T(0) : static_cast<T>(w_benign / (1.0 - p));
        }
    }
    y.data()[0] = static_cast<T>(acc / n);
    if (y.requires_grad())
        tape.record([prob, y, dp, n]() mutable {
            const T g = y.grad()[0] / static_cast<T>(n);
            auto& gp = prob.grad();
            for (size_t i = 0; i < n; ++i) gp[i] += g * dp[i];
        });
    return y;
}

/// Sum of squared elements of each penalized tensor, scaled by coeff.
/// Gradient 2*coeff*w is added directly to the parameter grads.
template <typename T>
Tensor<T> l2_penalty(Tape<T>& tape, const std::vector<ParamRef<T>>& params, double coeff) {
    Tensor<T> y = Tensor<T>::zeros({1}, coeff > 0);
    if (coeff <= 0) return y;
    double acc = 0.0;
    std::vector<Tensor<T>> penalized;
    for (const auto& p : params) {
        if (!p.penalized) continue;
        for (T v : p.tensor.data()) acc += static_cast<double>(v) * v;
        if (p.tensor.requires_grad()) penalized.push_back(p.tensor);
    }
    y.data()[0] = static_cast<T>(coeff * acc);
    tape.record([penalized, y, coeff]() mutable {
        const T g = y.grad()[0] * static_cast<T>(2.0 * coeff);
        for (auto& w : penalized) {
            auto& gw = w.grad();
            const auto& wv = w.data();
            for (size_t i = 0; i < gw.size(); ++i) gw[i] += g * wv[i];
        }
    });
    return y;
}

/// bce(final) + lambda_aux * sum bce(head_i) + l2_coeff * sum ||w||^2.
template <typename T>
Tensor<T> total_loss(Tape<T>& tape, const NetOutput<T>& out, const std::vector<int>& labels,
                     const LossConfig& cfg, const std::vector<ParamRef<T>>& params) {
    cfg.validate();
    Tensor<T> loss = weighted_bce(tape, out.final_prob, labels, cfg.w_benign, cfg.w_malignant);
    if (cfg.lambda_aux > 0 && !out.head_probs.empty()) {
        Tensor<T> aux = weighted_bce(tape, out.head_probs[0], labels, cfg.w_benign,
                                     cfg.w_malignant);
        for (size_t h = 1; h < out.head_probs.size(); ++h)
            aux = add(tape, aux,
                      weighted_bce(tape, out.head_probs[h], labels, cfg.w_benign,
                                   cfg.w_malignant));
        loss = add(tape, loss, scale(tape, aux, static_cast<T>(cfg.lambda_aux)));
    }
    if (cfg.l2_coeff > 0) loss = add(tape, loss, l2_penalty(tape, params, cfg.l2_coeff));
    return loss;
}

} // namespace nodulenet
