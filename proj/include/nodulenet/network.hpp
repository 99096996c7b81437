#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>

#include <json.hpp>

#include "nodulenet/layers.hpp"

namespace nodulenet {

enum class ArchKind { Basic, MultiOutput, DenseNet, MoDenseNet };

inline const char* arch_name(ArchKind k) {
    switch (k) {
        case ArchKind::Basic: return "basic";
        case ArchKind::MultiOutput: return "multi_output";
        case ArchKind::DenseNet: return "densenet";
        case ArchKind::MoDenseNet: return "modensenet";
    }
    return "?";
}

inline ArchKind parse_arch(const std::string& s) {
    if (s == "basic") return ArchKind::Basic;
    if (s == "multi_output") return ArchKind::MultiOutput;
    if (s == "densenet") return ArchKind::DenseNet;
    if (s == "modensenet") return ArchKind::MoDenseNet;
    throw ConfigError("unknown architecture '" + s +
                      "' (expected basic|multi_output|densenet|modensenet)");
}

inline bool arch_has_heads(ArchKind k) {
    return k == ArchKind::MultiOutput || k == ArchKind::MoDenseNet;
}
inline bool arch_is_dense(ArchKind k) {
    return k == ArchKind::DenseNet || k == ArchKind::MoDenseNet;
}

// Fixed dual-scale input geometry: local and context patches.
inline constexpr std::array<int64_t, 3> kSmallPatch{50, 50, 5};
inline constexpr std::array<int64_t, 3> kLargePatch{100, 100, 10};

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T> tensor;
    bool penalized; // conv kernels and FC weight matrices only
};

template <typename T>
struct NetOutput {
    Tensor<T> final_prob;                  // [b,1]
    std::vector<Tensor<T>> head_probs;     // one per intermediate head
};

/// One of the four two-pathway networks. Owns all parameters; parameter
/// names are hierarchical (pathway/block/layer/param) and unique.
template <typename T>
class Network {
public:
    Network(ArchKind kind, double width_scale, uint64_t seed)
        : kind_(kind), width_scale_(width_scale), seed_(seed) {
        if (width_scale <= 0) throw ConfigError("width_scale must be positive");
        build_pathway(small_, "small", false);
        build_pathway(large_, "large", true);
        build_classifier();
        register_params();
    }

    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    ArchKind kind() const { return kind_; }
    double width_scale() const { return width_scale_; }
    uint64_t seed() const { return seed_; }
    int num_heads() const { return static_cast<int>(heads_.size()); }
    int64_t final_in_features() const { return final_.in_features; }

    const std::vector<ParamRef<T>>& params() const { return params_; }
    LinearLayer<T>& final_fc() { return final_; }

    std::vector<ParamRef<T>> trainable_params() const {
        std::vector<ParamRef<T>> out;
        for (const auto& p : params_)
            if (p.tensor.requires_grad()) out.push_back(p);
        return out;
    }

    /// Per-channel running statistics, serialized alongside the parameters.
    std::vector<std::pair<std::string, std::vector<double>*>> buffers() {
        std::vector<std::pair<std::string, std::vector<double>*>> out;
        for (auto& [name, bn] : bn_layers_) {
            out.emplace_back(name + "/running_mean", &bn->running_mean);
            out.emplace_back(name + "/running_var", &bn->running_var);
        }
        return out;
    }

    NetOutput<T> forward(Tape<T>& tape, Tensor<T> small_in, Tensor<T> large_in, Mode mode) {
        check_input(small_in, 1, kSmallPatch, "small");
        check_input(large_in, 1, kLargePatch, "large");
        if (small_in.dim(0) != large_in.dim(0))
            throw DimensionError("pathway batch sizes differ");

        std::vector<Tensor<T>> taps;
        Tensor<T> fs = pathway_forward(tape, small_, small_in, mode, taps);
        Tensor<T> fl = pathway_forward(tape, large_, large_in, mode, taps);

        NetOutput<T> out;
        std::vector<Tensor<T>> descriptors;
        for (size_t h = 0; h < heads_.size(); ++h) {
            Tensor<T> g = global_avg_pool(tape, taps[h]);
            descriptors.push_back(g);
            out.head_probs.push_back(sigmoid(tape, heads_[h].forward(tape, g)));
        }
        const int64_t b = fs.dim(0);
        std::vector<Tensor<T>> feats = descriptors;
        feats.push_back(reshape(tape, fs, {b, fs.size() / b}));
        feats.push_back(reshape(tape, fl, {b, fl.size() / b}));
        Tensor<T> flat = feats.size() == 1 ? feats[0] : concat(tape, feats, 1);
        out.final_prob = sigmoid(tape, final_.forward(tape, flat));
        return out;
    }

    /// Marks everything except the final classifier non-trainable and pins
    /// the batch-norm running statistics. Idempotent.
    void freeze_convolutional() {
        for (auto& p : params_) p.tensor.set_requires_grad(false);
        final_.weight.set_requires_grad(true);
        final_.bias.set_requires_grad(true);
        for (auto& [name, bn] : bn_layers_) bn->frozen = true;
    }

    /// Re-draws the final classifier weights from (seed, name); used by the
    /// transfer procedure as a clean linear probe.
    void reinit_final_fc(uint64_t seed) {
        auto rng = detail::param_rng(seed, "final/fc/weight");
        detail::init_fan_in_uniform(final_.weight, final_.in_features, rng);
        std::fill(final_.bias.data().begin(), final_.bias.data().end(), T(0));
    }

    std::pair<int64_t, std::map<std::string, int64_t>> count_parameters() const {
        int64_t total = 0;
        std::map<std::string, int64_t> per_layer;
        for (const auto& p : params_) {
            total += p.tensor.size();
            per_layer[p.name] = p.tensor.size();
        }
        return {total, per_layer};
    }

    nlohmann::json manifest() const {
        nlohmann::json params = nlohmann::json::array();
        for (const auto& p : params_)
            params.push_back({{"name", p.name},
                              {"shape", p.tensor.shape()},
                              {"trainable", p.tensor.requires_grad()}});
        nlohmann::json buffers = nlohmann::json::array();
        for (const auto& [name, bn] : bn_layers_) {
            buffers.push_back({{"name", name + "/running_mean"}, {"shape", {bn->ch}}});
            buffers.push_back({{"name", name + "/running_var"}, {"shape", {bn->ch}}});
        }
        return {{"format", "nodulenet-arch-v1"},
                {"arch", arch_name(kind_)},
                {"width_scale", width_scale_},
                {"init_seed", seed_},
                {"intermediate_heads", static_cast<int>(heads_.size())},
                {"classifier_in_features", final_.in_features},
                {"layers", layer_descriptors_},
                {"params", params},
                {"buffers", buffers}};
    }

private:
    struct ConvUnit {
        Conv3d<T> conv;
        BatchNorm3d<T> bn;
    };
    struct DenseLayer {
        BatchNorm3d<T> bn;
        Conv3d<T> conv;
    };
    struct DenseBlock {
        std::vector<DenseLayer> layers;
    };
    struct Transition {
        BatchNorm3d<T> bn;
        Conv3d<T> conv; // 1x1x1, compression 0.5
    };
    struct Pathway {
        bool initial_pool = false;
        std::vector<ConvUnit> units;       // plain family
        std::optional<Conv3d<T>> stem;     // dense family
        std::vector<DenseBlock> blocks;
        std::vector<Transition> transitions;
        std::vector<int64_t> tap_channels; // channels at each head tap point
    };

    static constexpr MaxPool3d kPool221{2, 2, 1};
    static constexpr MaxPool3d kPool222{2, 2, 2};

    int64_t scaled(int64_t base) const {
        const int64_t v = std::llround(base * width_scale_);
        if (v < 1)
            throw ConfigError("width_scale " + std::to_string(width_scale_) +
                              " reduces a channel count of " + std::to_string(base) +
                              " below 1");
        return v;
    }

    void describe(const std::string& name, const std::string& type, nlohmann::json extra = {}) {
        nlohmann::json d = {{"name", name}, {"type", type}};
        d.update(extra);
        layer_descriptors_.push_back(std::move(d));
    }

    void build_pathway(Pathway& p, const std::string& prefix, bool initial_pool) {
        p.initial_pool = initial_pool;
        if (initial_pool) describe(prefix + "/pool0", "maxpool", {{"window", {2, 2, 2}}});
        if (!arch_is_dense(kind_)) {
            static constexpr std::array<int64_t, 10> kChannels{32, 32, 64, 64, 128,
                                                               128, 256, 256, 512, 512};
            int64_t in = 1;
            for (int i = 0; i < 10; ++i) {
                const int64_t out = scaled(kChannels[i]);
                const std::string name = prefix + "/unit" + std::to_string(i);
                ConvUnit u;
                u.conv = Conv3d<T>(in, out, seed_, name + "/conv");
                u.bn = BatchNorm3d<T>(out);
                p.units.push_back(std::move(u));
                describe(name, "conv_bn_relu", {{"in", in}, {"out", out}, {"kernel", {3, 3, 3}}});
                if (i % 2 == 1 && i < 9) {
                    describe(prefix + "/pool" + std::to_string(i / 2 + 1), "maxpool",
                             {{"window", {2, 2, 1}}});
                    p.tap_channels.push_back(out);
                }
                in = out;
            }
        } else {
            static constexpr std::array<int, 5> kBlockLayers{4, 10, 20, 20, 20};
            static constexpr std::array<int64_t, 5> kGrowth{12, 12, 12, 24, 48};
            int64_t ch = scaled(16);
            p.stem = Conv3d<T>(1, ch, seed_, prefix + "/stem");
            describe(prefix + "/stem", "conv", {{"in", 1}, {"out", ch}, {"kernel", {3, 3, 3}}});
            for (int b = 0; b < 5; ++b) {
                const int64_t growth = scaled(kGrowth[b]);
                DenseBlock blk;
                for (int l = 0; l < kBlockLayers[b]; ++l) {
                    const std::string name =
                        prefix + "/block" + std::to_string(b) + "/layer" + std::to_string(l);
                    DenseLayer dl;
                    dl.bn = BatchNorm3d<T>(ch);
                    dl.conv = Conv3d<T>(ch, growth, seed_, name + "/conv");
                    blk.layers.push_back(std::move(dl));
                    ch += growth;
                }
                p.blocks.push_back(std::move(blk));
                describe(prefix + "/block" + std::to_string(b), "dense_block",
                         {{"layers", kBlockLayers[b]}, {"growth", growth}, {"out", ch}});
                if (b < 4) {
                    const int64_t compressed = ch / 2;
                    if (compressed < 1)
                        throw ConfigError("dense transition compresses channels below 1");
                    Transition t;
                    t.bn = BatchNorm3d<T>(ch);
                    t.conv = Conv3d<T>(ch, compressed, seed_,
                                       prefix + "/transition" + std::to_string(b) + "/conv", 1);
                    p.transitions.push_back(std::move(t));
                    describe(prefix + "/transition" + std::to_string(b), "transition",
                             {{"in", ch}, {"out", compressed}, {"pool", {2, 2, 1}}});
                    ch = compressed;
                    p.tap_channels.push_back(ch);
                }
            }
        }
    }

    // Spatial size of the final feature map: four 2x2x1 pools from 50x50x5.
    static int64_t final_vox() {
        int64_t x = kSmallPatch[0], y = kSmallPatch[1], z = kSmallPatch[2];
        for (int i = 0; i < 4; ++i) {
            x /= 2;
            y /= 2;
        }
        return x * y * z;
    }

    int64_t pathway_out_channels(const Pathway& p) const {
        if (!arch_is_dense(kind_)) return p.units.back().conv.out_ch;
        int64_t ch = p.transitions.back().conv.out_ch;
        for (const auto& dl : p.blocks.back().layers) ch += dl.conv.out_ch;
        return ch;
    }

    void build_classifier() {
        int64_t in = 0;
        if (arch_has_heads(kind_)) {
            for (int64_t c : small_.tap_channels) in += c;
            for (int64_t c : large_.tap_channels) in += c;
            int head_idx = 0;
            for (const Pathway* p : {&small_, &large_})
                for (int64_t c : p->tap_channels) {
                    heads_.emplace_back(c, 1, seed_, "head" + std::to_string(head_idx) + "/fc");
                    describe("head" + std::to_string(head_idx), "intermediate_head",
                             {{"in", c}});
                    ++head_idx;
                }
        }
        in += (pathway_out_channels(small_) + pathway_out_channels(large_)) * final_vox();
        final_ = LinearLayer<T>(in, 1, seed_, "final/fc");
        describe("final", "classifier", {{"in", in}});
    }

    void add_param(const std::string& name, Tensor<T> t, bool penalized) {
        params_.push_back({name, std::move(t), penalized});
    }

    void register_bn(const std::string& name, BatchNorm3d<T>& bn) {
        add_param(name + "/gamma", bn.gamma, false);
        add_param(name + "/beta", bn.beta, false);
        bn_layers_.emplace_back(name, &bn);
    }

    void register_conv(const std::string& name, Conv3d<T>& c) {
        add_param(name + "/weight", c.weight, true);
        add_param(name + "/bias", c.bias, false);
    }

    void register_pathway(Pathway& p, const std::string& prefix) {
        for (size_t i = 0; i < p.units.size(); ++i) {
            const std::string name = prefix + "/unit" + std::to_string(i);
            register_conv(name + "/conv", p.units[i].conv);
            register_bn(name + "/bn", p.units[i].bn);
        }
        if (p.stem) register_conv(prefix + "/stem", *p.stem);
        for (size_t b = 0; b < p.blocks.size(); ++b)
            for (size_t l = 0; l < p.blocks[b].layers.size(); ++l) {
                const std::string name =
                    prefix + "/block" + std::to_string(b) + "/layer" + std::to_string(l);
                register_bn(name + "/bn", p.blocks[b].layers[l].bn);
                register_conv(name + "/conv", p.blocks[b].layers[l].conv);
            }
        for (size_t t = 0; t < p.transitions.size(); ++t) {
            const std::string name = prefix + "/transition" + std::to_string(t);
            register_bn(name + "/bn", p.transitions[t].bn);
            register_conv(name + "/conv", p.transitions[t].conv);
        }
    }

    void register_params() {
        register_pathway(small_, "small");
        register_pathway(large_, "large");
        for (size_t h = 0; h < heads_.size(); ++h) {
            add_param("head" + std::to_string(h) + "/fc/weight", heads_[h].weight, true);
            add_param("head" + std::to_string(h) + "/fc/bias", heads_[h].bias, false);
        }
        add_param("final/fc/weight", final_.weight, true);
        add_param("final/fc/bias", final_.bias, false);
    }

    void check_input(const Tensor<T>& x, int64_t ch, const std::array<int64_t, 3>& dims,
                     const char* which) const {
        if (x.rank() != 5 || x.dim(1) != ch || x.dim(2) != dims[0] || x.dim(3) != dims[1] ||
            x.dim(4) != dims[2])
            throw DimensionError(std::string(which) + " pathway input must be [b," +
                                 std::to_string(ch) + "," + std::to_string(dims[0]) + "," +
                                 std::to_string(dims[1]) + "," + std::to_string(dims[2]) +
                                 "], got " + shape_str(x.shape()));
    }

    Tensor<T> pathway_forward(Tape<T>& tape, Pathway& p, Tensor<T> x, Mode mode,
                              std::vector<Tensor<T>>& taps) {
        const bool collect = arch_has_heads(kind_);
        if (p.initial_pool) x = kPool222.forward(tape, x);
        if (!arch_is_dense(kind_)) {
            for (size_t i = 0; i < p.units.size(); ++i) {
                x = p.units[i].conv.forward(tape, x);
                x = p.units[i].bn.forward(tape, x, mode);
                x = relu(tape, x);
                if (i % 2 == 1 && i < 9) {
                    x = kPool221.forward(tape, x);
                    if (collect) taps.push_back(x);
                }
            }
        } else {
            x = p.stem->forward(tape, x);
            for (size_t b = 0; b < p.blocks.size(); ++b) {
                for (auto& dl : p.blocks[b].layers) {
                    Tensor<T> h = relu(tape, dl.bn.forward(tape, x, mode));
                    h = dl.conv.forward(tape, h);
                    x = concat(tape, {x, h}, 1);
                }
                if (b + 1 < p.blocks.size()) {
                    auto& t = p.transitions[b];
                    x = relu(tape, t.bn.forward(tape, x, mode));
                    x = t.conv.forward(tape, x);
                    x = kPool221.forward(tape, x);
                    if (collect) taps.push_back(x);
                }
            }
        }
        return x;
    }

    ArchKind kind_;
    double width_scale_;
    uint64_t seed_;
    Pathway small_, large_;
    std::vector<LinearLayer<T>> heads_;
    LinearLayer<T> final_;
    std::vector<ParamRef<T>> params_;
    std::vector<std::pair<std::string, BatchNorm3d<T>*>> bn_layers_;
    nlohmann::json layer_descriptors_ = nlohmann::json::array();
};

} // namespace nodulenet
