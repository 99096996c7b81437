#pragma once

#include <unordered_map>

#include "nodulenet/network.hpp"

namespace nodulenet {

struct AdadeltaConfig {
    double rho = 0.95;
    double epsilon = 1e-6;
    double lr = 1.0;

    void validate() const {
        if (!(rho > 0 && rho < 1)) throw ConfigError("adadelta rho must be in (0,1)");
        if (!(epsilon > 0)) throw ConfigError("adadelta epsilon must be > 0");
        if (!(lr > 0)) throw ConfigError("adadelta lr must be > 0");
    }
};

/// Adadelta: per-element decaying averages of g^2 and dx^2.
///   E[g2]  <- rho E[g2] + (1-rho) g^2
///   dx     <- -lr * sqrt(E[dx2]+eps) / sqrt(E[g2]+eps) * g
///   E[dx2] <- rho E[dx2] + (1-rho) dx^2
/// Frozen (requires_grad == false) parameters are never touched.
template <typename T>
class Adadelta {
public:
    explicit Adadelta(AdadeltaConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    const AdadeltaConfig& config() const { return cfg_; }

    struct Slot {
        std::vector<double> acc_grad;   // E[g^2]
        std::vector<double> acc_update; // E[dx^2]
    };

    /// Applies one update to every trainable parameter with a grad buffer.
    void step(std::vector<ParamRef<T>>& params) {
        for (auto& p : params) {
            if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
            Slot& s = slots_[p.name];
            auto& w = p.tensor.data();
            const auto& g = p.tensor.grad();
            if (s.acc_grad.empty()) {
                s.acc_grad.assign(w.size(), 0.0);
                s.acc_update.assign(w.size(), 0.0);
            }
            if (s.acc_grad.size() != w.size())
                throw DimensionError("adadelta state size mismatch for " + p.name);
            for (size_t i = 0; i < w.size(); ++i) {
                const double gi = g[i];
                s.acc_grad[i] = cfg_.rho * s.acc_grad[i] + (1.0 - cfg_.rho) * gi * gi;
                const double dx = -cfg_.lr *
                                  std::sqrt(s.acc_update[i] + cfg_.epsilon) /
                                  std::sqrt(s.acc_grad[i] + cfg_.epsilon) * gi;
                s.acc_update[i] = cfg_.rho * s.acc_update[i] + (1.0 - cfg_.rho) * dx * dx;
                w[i] = static_cast<T>(w[i] + dx);
            }
        }
    }

    std::unordered_map<std::string, Slot>& slots() { return slots_; }
    const std::unordered_map<std::string, Slot>& slots() const { return slots_; }

private:
    AdadeltaConfig cfg_;
    std::unordered_map<std::string, Slot> slots_;
};

} // namespace nodulenet
