#include "nodulenet/train.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

namespace nodulenet {

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return detail::splitmix64(x);
}

Tensor<float> assemble(const SampleView& batch, const std::array<int64_t, 3>& dims, bool small) {
    const int64_t b = static_cast<int64_t>(batch.size());
    Tensor<float> t = Tensor<float>::zeros({b, 1, dims[0], dims[1], dims[2]});
    const size_t vox = static_cast<size_t>(dims[0] * dims[1] * dims[2]);
    for (int64_t i = 0; i < b; ++i) {
        const auto& src = small ? batch[i]->small : batch[i]->large;
        if (src.size() != vox)
            throw DimensionError("patch size mismatch for sample " + batch[i]->id);
        std::copy(src.begin(), src.end(), t.data().begin() + i * static_cast<int64_t>(vox));
    }
    return t;
}

std::vector<int> labels_of(const SampleView& batch) {
    std::vector<int> out(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) out[i] = batch[i]->label;
    return out;
}

LossConfig resolve_loss(const TrainConfig& cfg, const SampleView& train) {
    LossConfig loss = cfg.loss;
    if (cfg.auto_class_weights) {
        int64_t benign = 0, malignant = 0;
        for (const Sample* s : train) (s->label == 1 ? malignant : benign)++;
        if (benign >= 1 && malignant >= 1)
            std::tie(loss.w_benign, loss.w_malignant) = class_weights_from_counts(benign, malignant);
    }
    return loss;
}

void require_canonical_dims(const PatchDims& dims) {
    if (!(dims == PatchDims::canonical()))
        throw ConfigError("training requires the 50x50x5 / 100x100x10 patch geometry");
}

} // namespace

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch-norm constraint)");
    if (k_folds < 2) throw ConfigError("k_folds must be >= 2");
    if (validation_fraction < 0 || validation_fraction >= 1)
        throw ConfigError("validation_fraction must be in [0,1)");
    if (transfer_epochs < 1) throw ConfigError("transfer_epochs must be >= 1");
    loss.validate();
    adadelta.validate();
    (void)arch_name(arch);
    if (width_scale <= 0) throw ConfigError("width_scale must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"arch", arch_name(arch)},
            {"width_scale", width_scale},
            {"k_folds", k_folds},
            {"validation_fraction", validation_fraction},
            {"max_epochs", max_epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"auto_class_weights", auto_class_weights},
            {"loss",
             {{"w_benign", loss.w_benign},
              {"w_malignant", loss.w_malignant},
              {"lambda_aux", loss.lambda_aux},
              {"l2_coeff", loss.l2_coeff}}},
            {"adadelta",
             {{"rho", adadelta.rho}, {"epsilon", adadelta.epsilon}, {"lr", adadelta.lr}}},
            {"transfer_epochs", transfer_epochs},
            {"checkpoint_dir", checkpoint_dir}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    const nlohmann::json defaults = cfg.to_json();
    auto check_keys = [](const nlohmann::json& have, const nlohmann::json& allowed,
                         const std::string& scope) {
        for (auto it = have.begin(); it != have.end(); ++it)
            if (!allowed.contains(it.key()))
                throw ConfigError("unknown config key '" + scope + it.key() + "'");
    };
    check_keys(j, defaults, "");
    if (j.contains("loss")) check_keys(j.at("loss"), defaults.at("loss"), "loss.");
    if (j.contains("adadelta")) check_keys(j.at("adadelta"), defaults.at("adadelta"), "adadelta.");

    try {
        if (j.contains("arch")) cfg.arch = parse_arch(j.at("arch").get<std::string>());
        cfg.width_scale = j.value("width_scale", cfg.width_scale);
        cfg.k_folds = j.value("k_folds", cfg.k_folds);
        cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
        cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.auto_class_weights = j.value("auto_class_weights", cfg.auto_class_weights);
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            cfg.loss.w_benign = l.value("w_benign", cfg.loss.w_benign);
            cfg.loss.w_malignant = l.value("w_malignant", cfg.loss.w_malignant);
            cfg.loss.lambda_aux = l.value("lambda_aux", cfg.loss.lambda_aux);
            cfg.loss.l2_coeff = l.value("l2_coeff", cfg.loss.l2_coeff);
        }
        if (j.contains("adadelta")) {
            const auto& a = j.at("adadelta");
            cfg.adadelta.rho = a.value("rho", cfg.adadelta.rho);
            cfg.adadelta.epsilon = a.value("epsilon", cfg.adadelta.epsilon);
            cfg.adadelta.lr = a.value("lr", cfg.adadelta.lr);
        }
        cfg.transfer_epochs = j.value("transfer_epochs", cfg.transfer_epochs);
        cfg.checkpoint_dir = j.value("checkpoint_dir", cfg.checkpoint_dir);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

void write_epoch_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write log " + path);
    f << "epoch,train_loss,val_loss,val_acc\n";
    for (const auto& e : log)
        f << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.val_acc << "\n";
}

SampleView view_all(const Dataset& ds) {
    SampleView v;
    v.reserve(ds.samples.size());
    for (const auto& s : ds.samples) v.push_back(&s);
    return v;
}

double run_epoch(Network<float>& net, Adadelta<float>& opt, const TrainConfig& cfg,
                 const LossConfig& loss, const SampleView& train, const PatchDims& dims,
                 uint64_t shuffle_seed, const std::string& step_tag) {
    require_canonical_dims(dims);
    SampleView order = train;
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    int64_t steps = 0;
    auto params = net.params();
    for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
        SampleView batch(order.begin() + at,
                         order.begin() + std::min(order.size(), at + cfg.batch_size));
        if (batch.size() < 2) break; // batch-norm needs >= 2 samples
        Tensor<float> small = assemble(batch, dims.small, true);
        Tensor<float> large = assemble(batch, dims.large, false);
        Tape<float> tape;
        NetOutput<float> out = net.forward(tape, small, large, Mode::Train);
        Tensor<float> l = total_loss(tape, out, labels_of(batch), loss, params);
        const double lv = l.item();
        if (!std::isfinite(lv))
            throw DomainError("non-finite loss at " + step_tag + " step " + std::to_string(steps));
        for (auto& p : params) p.tensor.zero_grad();
        tape.backward(l);
        opt.step(params);
        total += lv;
        ++steps;
    }
    if (steps == 0) throw ContractError("training set too small for one batch");
    return total / static_cast<double>(steps);
}

std::vector<ScoredSample> score_dataset(Network<float>& net, const SampleView& samples,
                                        const PatchDims& dims, int batch_size) {
    require_canonical_dims(dims);
    std::vector<ScoredSample> out;
    for (size_t at = 0; at < samples.size(); at += batch_size) {
        SampleView batch(samples.begin() + at,
                         samples.begin() + std::min(samples.size(), at + batch_size));
        Tensor<float> small = assemble(batch, dims.small, true);
        Tensor<float> large = assemble(batch, dims.large, false);
        Tape<float> tape;
        NetOutput<float> res = net.forward(tape, small, large, Mode::Infer);
        for (size_t i = 0; i < batch.size(); ++i)
            out.push_back({batch[i]->id, static_cast<double>(res.final_prob.data()[i]),
                           batch[i]->label});
    }
    return out;
}

namespace {

double accuracy(const std::vector<ScoredSample>& scores) {
    if (scores.empty()) return 0.0;
    int64_t correct = 0;
    for (const auto& s : scores) correct += ((s.score >= 0.5) == (s.label == 1));
    return static_cast<double>(correct) / scores.size();
}

double mean_val_loss(Network<float>& net, const SampleView& val, const PatchDims& dims,
                     const LossConfig& loss, int batch_size) {
    double total = 0.0;
    int64_t n = 0;
    for (size_t at = 0; at < val.size(); at += batch_size) {
        SampleView batch(val.begin() + at, val.begin() + std::min(val.size(), at + batch_size));
        Tensor<float> small = assemble(batch, dims.small, true);
        Tensor<float> large = assemble(batch, dims.large, false);
        Tape<float> tape;
        NetOutput<float> res = net.forward(tape, small, large, Mode::Infer);
        Tape<float> ltape;
        total += weighted_bce(ltape, res.final_prob, labels_of(batch), loss.w_benign,
                              loss.w_malignant)
                     .item() *
                 static_cast<double>(batch.size());
        n += static_cast<int64_t>(batch.size());
    }
    return total / static_cast<double>(n);
}

FoldOutcome train_loop(const TrainConfig& cfg, Network<float>& net, Adadelta<float>& opt,
                       const Dataset& ds, const SampleView& train, const SampleView& val,
                       int fold_index, int epochs) {
    if (train.empty() || val.empty())
        throw ContractError("train and validation sets must be nonempty");
    const LossConfig loss = resolve_loss(cfg, train);
    FoldOutcome out;
    out.fold = fold_index;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        const uint64_t shuffle_seed =
            mix(cfg.seed + static_cast<uint64_t>(fold_index), static_cast<uint64_t>(epoch));
        const std::string tag = "fold " + std::to_string(fold_index) + " epoch " +
                                std::to_string(epoch);
        const double train_loss = run_epoch(net, opt, cfg, loss, train, ds.dims, shuffle_seed, tag);
        const double val_loss = mean_val_loss(net, val, ds.dims, loss, cfg.batch_size);
        const double val_acc = accuracy(score_dataset(net, val, ds.dims, cfg.batch_size));
        out.log.push_back({epoch, train_loss, val_loss, val_acc});
        if (val_loss < best_loss) {
            best_loss = val_loss;
            out.best = make_checkpoint(net, &opt, epoch, cfg.to_json());
            out.best_epoch = epoch;
        }
    }
    apply_checkpoint(out.best, net, &opt); // leave the network at its best epoch
    return out;
}

std::pair<SampleView, SampleView> split_validation(const TrainConfig& cfg,
                                                   const SampleView& pool, int fold_index) {
    std::vector<std::string> ids;
    std::unordered_map<std::string, const Sample*> by_id;
    for (const Sample* s : pool) {
        ids.push_back(s->id);
        by_id[s->id] = s;
    }
    const auto val_ids = validation_holdout(ids, cfg.validation_fraction, cfg.seed, fold_index);
    const std::set<std::string> val_set(val_ids.begin(), val_ids.end());
    SampleView train, val;
    for (const Sample* s : pool) (val_set.count(s->id) ? val : train).push_back(s);
    return {train, val};
}

} // namespace

FoldOutcome train_fold(const TrainConfig& cfg, const Dataset& ds, const SampleView& train,
                       const SampleView& val, int fold_index) {
    cfg.validate();
    Network<float> net(cfg.arch, cfg.width_scale,
                       cfg.seed + static_cast<uint64_t>(std::max(0, fold_index)));
    Adadelta<float> opt(cfg.adadelta);
    return train_loop(cfg, net, opt, ds, train, val, fold_index, cfg.max_epochs);
}

CvOutcome cross_validate(const TrainConfig& cfg, const Dataset& ds) {
    cfg.validate();
    std::vector<std::string> ids;
    std::unordered_map<std::string, const Sample*> by_id;
    for (const auto& s : ds.samples) {
        ids.push_back(s.id);
        by_id[s.id] = &s;
    }
    CvOutcome out;
    out.assignment = make_folds(ids, cfg.k_folds, cfg.seed, cfg.validation_fraction);
    std::vector<ScoredSample> pooled;
    for (int fold = 0; fold < cfg.k_folds; ++fold) {
        SampleView test, pool;
        for (const auto& s : ds.samples)
            (out.assignment.fold_of.at(s.id) == fold ? test : pool).push_back(&s);
        auto [train, val] = split_validation(cfg, pool, fold);
        // No test leakage: train/val/test must partition the dataset.
        std::set<const Sample*> train_val(train.begin(), train.end());
        train_val.insert(val.begin(), val.end());
        for (const Sample* t : test)
            if (train_val.count(t))
                throw ContractError("fold construction leaked a test sample into training");
        FoldOutcome fo = train_fold(cfg, ds, train, val, fold);
        Network<float> net(cfg.arch, cfg.width_scale, cfg.seed + static_cast<uint64_t>(fold));
        apply_checkpoint(fo.best, net, nullptr);
        fo.test_scores = score_dataset(net, test, ds.dims, cfg.batch_size);
        fo.report = evaluate(fo.test_scores);
        pooled.insert(pooled.end(), fo.test_scores.begin(), fo.test_scores.end());
        out.folds.push_back(std::move(fo));
    }
    out.pooled = evaluate(pooled);
    return out;
}

FoldOutcome transfer_fold(const TrainConfig& cfg, const Checkpoint& base, const Dataset& ds,
                          const SampleView& train, const SampleView& val, int fold_index,
                          int epochs) {
    cfg.validate();
    auto net = network_from_checkpoint(base);
    if (net->width_scale() != cfg.width_scale || net->kind() != cfg.arch)
        throw IncompatibilityError("transfer base does not match the configured architecture");
    apply_checkpoint(base, *net, nullptr);
    net->freeze_convolutional();
    net->reinit_final_fc(cfg.seed + static_cast<uint64_t>(std::max(0, fold_index)));
    Adadelta<float> opt(cfg.adadelta);
    return train_loop(cfg, *net, opt, ds, train, val, fold_index, epochs);
}

CvOutcome transfer_cross_validate(const TrainConfig& cfg, const Checkpoint& base,
                                  const Dataset& ds, int epochs) {
    cfg.validate();
    std::vector<std::string> ids;
    for (const auto& s : ds.samples) ids.push_back(s.id);
    CvOutcome out;
    out.assignment = make_folds(ids, cfg.k_folds, cfg.seed, cfg.validation_fraction);
    std::vector<ScoredSample> pooled;
    for (int fold = 0; fold < cfg.k_folds; ++fold) {
        SampleView test, pool;
        for (const auto& s : ds.samples)
            (out.assignment.fold_of.at(s.id) == fold ? test : pool).push_back(&s);
        auto [train, val] = split_validation(cfg, pool, fold);
        FoldOutcome fo = transfer_fold(cfg, base, ds, train, val, fold, epochs);
        auto net = network_from_checkpoint(fo.best);
        apply_checkpoint(fo.best, *net, nullptr);
        fo.test_scores = score_dataset(*net, test, ds.dims, cfg.batch_size);
        fo.report = evaluate(fo.test_scores);
        pooled.insert(pooled.end(), fo.test_scores.begin(), fo.test_scores.end());
        out.folds.push_back(std::move(fo));
    }
    out.pooled = evaluate(pooled);
    return out;
}

FoldOutcome pretrain(const TrainConfig& cfg, const Dataset& ds, double val_fraction) {
    cfg.validate();
    SampleView all = view_all(ds);
    TrainConfig c = cfg;
    c.validation_fraction = val_fraction;
    auto [train, val] = split_validation(c, all, -1);
    return train_fold(c, ds, train, val, -1);
}

} // namespace nodulenet
