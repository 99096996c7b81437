#pragma once

#include "nodulenet/checkpoint.hpp"
#include "nodulenet/dataset.hpp"
#include "nodulenet/loss.hpp"
#include "nodulenet/metrics.hpp"

namespace nodulenet {

struct TrainConfig {
    ArchKind arch = ArchKind::MoDenseNet;
    double width_scale = 1.0;
    int k_folds = 5;
    double validation_fraction = 0.025;
    int max_epochs = 150;
    int batch_size = 8;
    uint64_t seed = 0;
    bool auto_class_weights = true; // derive (w_benign, w_malignant) from counts
    LossConfig loss;
    AdadeltaConfig adadelta;
    int transfer_epochs = 20;
    std::string checkpoint_dir;

    void validate() const;
    nlohmann::json to_json() const;
    /// Strict parse: unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0, val_loss = 0, val_acc = 0;
};

void write_epoch_log(const std::vector<EpochLog>& log, const std::string& path);

using SampleView = std::vector<const Sample*>;

SampleView view_all(const Dataset& ds);

/// One seeded-shuffle pass over the training samples; returns the mean
/// minibatch loss. A trailing batch of one sample is dropped (batch-norm
/// needs at least two). Throws DomainError naming the step on NaN loss.
double run_epoch(Network<float>& net, Adadelta<float>& opt, const TrainConfig& cfg,
                 const LossConfig& loss, const SampleView& train, const PatchDims& dims,
                 uint64_t shuffle_seed, const std::string& step_tag);

/// Inference-mode probabilities for every sample.
std::vector<ScoredSample> score_dataset(Network<float>& net, const SampleView& samples,
                                        const PatchDims& dims, int batch_size);

struct FoldOutcome {
    int fold = -1;
    std::vector<EpochLog> log;
    Checkpoint best; // parameters at the best-validation-loss epoch
    int best_epoch = 0;
    std::vector<ScoredSample> test_scores;
    EvalReport report;
};

struct CvOutcome {
    FoldAssignment assignment;
    std::vector<FoldOutcome> folds;
    EvalReport pooled; // over the concatenated per-fold test scores
};

/// Trains for cfg.max_epochs, evaluating the validation split each epoch and
/// retaining the checkpoint with the best validation loss.
FoldOutcome train_fold(const TrainConfig& cfg, const Dataset& ds, const SampleView& train,
                       const SampleView& val, int fold_index);

/// k-fold protocol: per fold, train on the other folds minus a validation
/// holdout and test on the held-out fold. Every sample is tested once.
CvOutcome cross_validate(const TrainConfig& cfg, const Dataset& ds);

/// Transfer procedure: load the base network, freeze everything but the
/// final classifier, reinitialize it, and retrain it alone. All frozen
/// tensors are bit-identical to the base afterwards.
FoldOutcome transfer_fold(const TrainConfig& cfg, const Checkpoint& base, const Dataset& ds,
                          const SampleView& train, const SampleView& val, int fold_index,
                          int epochs);

CvOutcome transfer_cross_validate(const TrainConfig& cfg, const Checkpoint& base,
                                  const Dataset& ds, int epochs);

/// Pretraining run for the transfer base: single split with a validation
/// fraction, no folds.
FoldOutcome pretrain(const TrainConfig& cfg, const Dataset& ds, double val_fraction);

} // namespace nodulenet
