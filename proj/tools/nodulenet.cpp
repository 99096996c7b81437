// nodulenet: two-pathway volumetric nodule classifier toolkit.
//
// Subcommands:
//   synth    generate a synthetic labeled dataset
//   prep     build a dataset from annotation CSV + raw volumes
//   train    k-fold cross-validated training
//   eval     score a dataset with a checkpoint, write report/ROC
//   transfer retrain the final classifier of a pretrained checkpoint
//   summary  architecture parameter summary

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "nodulenet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nodulenet;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open " + path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << body;
}

struct ConfigFlags {
    std::string config_path, arch, checkpoint_dir;
    double width_scale = -1;
    int k_folds = -1, max_epochs = -1, batch_size = -1, transfer_epochs = -1;
    int64_t seed = -1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--arch", arch, "basic|multi_output|dense|mo_dense");
        cmd->add_option("--width-scale", width_scale, "channel width multiplier");
        cmd->add_option("--k-folds", k_folds);
        cmd->add_option("--max-epochs", max_epochs);
        cmd->add_option("--batch-size", batch_size);
        cmd->add_option("--transfer-epochs", transfer_epochs);
        cmd->add_option("--seed", seed);
        cmd->add_option("--checkpoint-dir", checkpoint_dir);
    }

    TrainConfig resolve() const {
        TrainConfig cfg = config_path.empty()
                              ? TrainConfig{}
                              : TrainConfig::from_json(read_json_file(config_path));
        if (!arch.empty()) cfg.arch = parse_arch(arch);
        if (width_scale > 0) cfg.width_scale = width_scale;
        if (k_folds > 0) cfg.k_folds = k_folds;
        if (max_epochs > 0) cfg.max_epochs = max_epochs;
        if (batch_size > 0) cfg.batch_size = batch_size;
        if (transfer_epochs > 0) cfg.transfer_epochs = transfer_epochs;
        if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
        if (!checkpoint_dir.empty()) cfg.checkpoint_dir = checkpoint_dir;
        cfg.validate();
        return cfg;
    }
};

json report_with_meta(const EvalReport& report, const json& extra) {
    json j = report_to_json(report);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    return j;
}

void write_cv_outputs(const CvOutcome& cv, const TrainConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    json assign;
    for (const auto& [id, fold] : cv.assignment.fold_of) assign[id] = fold;
    write_text(out_dir + "/fold_assignments.json", assign.dump(2) + "\n");
    json folds = json::array();
    for (const auto& fo : cv.folds) {
        write_epoch_log(fo.log, out_dir + "/fold" + std::to_string(fo.fold) + "_log.csv");
        save_checkpoint(fo.best, out_dir + "/fold" + std::to_string(fo.fold) + ".ckpt");
        folds.push_back(report_with_meta(
            fo.report, {{"fold", fo.fold}, {"best_epoch", fo.best_epoch}}));
    }
    json pooled = report_with_meta(cv.pooled, {{"config", cfg.to_json()}});
    pooled["folds"] = folds;
    write_text(out_dir + "/report.json", pooled.dump(2) + "\n");
    std::cout << "pooled auc: "
              << (cv.pooled.auc ? std::to_string(*cv.pooled.auc) : std::string("n/a")) << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"two-pathway 3D CNN lung nodule classifier"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out, synth_dims = "full";
    int synth_n = 100;
    double synth_frac = 0.5;
    int64_t synth_seed = 0;
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--n", synth_n);
    synth->add_option("--malignant-frac", synth_frac);
    synth->add_option("--seed", synth_seed);
    synth->add_option("--dims", synth_dims, "full|small");

    // prep
    auto* prep = app.add_subcommand("prep", "build a dataset from annotations + volumes");
    std::string prep_csv, prep_volumes, prep_out;
    prep->add_option("--annotations", prep_csv)->required();
    prep->add_option("--volumes", prep_volumes)->required();
    prep->add_option("--out", prep_out)->required();

    // train
    auto* train = app.add_subcommand("train", "k-fold cross-validated training");
    std::string train_data, train_out;
    ConfigFlags train_flags;
    train->add_option("--data", train_data)->required();
    train->add_option("--out", train_out)->required();
    train_flags.attach(train);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_data, eval_ckpt, eval_out;
    int eval_batch = 8;
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--out", eval_out)->required();
    eval->add_option("--batch-size", eval_batch);

    // transfer
    auto* transfer = app.add_subcommand("transfer", "retrain the final classifier");
    std::string tr_data, tr_base, tr_out;
    ConfigFlags tr_flags;
    transfer->add_option("--data", tr_data)->required();
    transfer->add_option("--base", tr_base)->required();
    transfer->add_option("--out", tr_out)->required();
    tr_flags.attach(transfer);

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "single-split run producing a transfer base");
    std::string pre_data, pre_out;
    double pre_val = 0.1;
    ConfigFlags pre_flags;
    pre->add_option("--data", pre_data)->required();
    pre->add_option("--out", pre_out)->required();
    pre->add_option("--val-fraction", pre_val);
    pre_flags.attach(pre);

    // summary
    auto* summary = app.add_subcommand("summary", "architecture parameter summary");
    std::string sum_arch = "all";
    double sum_scale = 1.0;
    bool sum_json = false;
    summary->add_option("--arch", sum_arch, "all|basic|multi_output|dense|mo_dense");
    summary->add_option("--width-scale", sum_scale);
    summary->add_flag("--json", sum_json);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (*synth) {
        PatchDims dims;
        if (synth_dims == "full")
            dims = PatchDims::canonical();
        else if (synth_dims == "small")
            dims = PatchDims::reduced();
        else
            throw ConfigError("--dims must be 'full' or 'small'");
        if (synth_n < 1 || synth_frac < 0 || synth_frac > 1 || synth_seed < 0)
            throw ConfigError("invalid synth parameters");
        Dataset ds = generate_synthetic(synth_n, synth_frac, static_cast<uint64_t>(synth_seed),
                                        dims, nullptr);
        save_dataset(ds, synth_out);
        std::cout << "wrote " << ds.samples.size() << " samples to " << synth_out << "\n";
    } else if (*prep) {
        auto records = parse_annotations(prep_csv);
        PrepStats stats = prepare_dataset(records, prep_volumes, prep_out, PatchDims::canonical());
        std::cout << "kept " << stats.kept << " (median 3: " << stats.excluded_median3
                  << ", <3 graders: " << stats.excluded_few_graders
                  << ", nonuniform: " << stats.excluded_nonuniform
                  << ", missing slice: " << stats.excluded_missing_slice << ")\n";
    } else if (*train) {
        TrainConfig cfg = train_flags.resolve();
        Dataset ds = load_dataset(train_data);
        CvOutcome cv = cross_validate(cfg, ds);
        write_cv_outputs(cv, cfg, train_out);
    } else if (*eval) {
        Dataset ds = load_dataset(eval_data);
        Checkpoint ckpt = load_checkpoint(eval_ckpt);
        auto net = network_from_checkpoint(ckpt);
        apply_checkpoint(ckpt, *net, nullptr);
        SampleView all = view_all(ds);
        auto scores = score_dataset(*net, all, ds.dims, eval_batch);
        EvalReport report = evaluate(scores);
        fs::create_directories(eval_out);
        write_text(eval_out + "/report.json", report_to_json(report).dump(2) + "\n");
        write_roc_csv(report, eval_out + "/roc.csv");
        write_roc_svg(report, eval_out + "/roc.svg");
        std::cout << "accuracy: " << report.acc << ", auc: "
                  << (report.auc ? std::to_string(*report.auc) : std::string("n/a")) << "\n";
    } else if (*transfer) {
        TrainConfig cfg = tr_flags.resolve();
        Dataset ds = load_dataset(tr_data);
        Checkpoint base = load_checkpoint(tr_base);
        CvOutcome cv = transfer_cross_validate(cfg, base, ds, cfg.transfer_epochs);
        write_cv_outputs(cv, cfg, tr_out);
    } else if (*pre) {
        TrainConfig cfg = pre_flags.resolve();
        if (pre_val <= 0 || pre_val >= 1) throw ConfigError("--val-fraction must be in (0,1)");
        Dataset ds = load_dataset(pre_data);
        FoldOutcome fo = pretrain(cfg, ds, pre_val);
        fs::create_directories(fs::path(pre_out).parent_path().empty()
                                   ? fs::path(".")
                                   : fs::path(pre_out).parent_path());
        save_checkpoint(fo.best, pre_out);
        write_epoch_log(fo.log, pre_out + ".log.csv");
        std::cout << "best epoch " << fo.best_epoch << " -> " << pre_out << "\n";
    } else if (*summary) {
        std::vector<ArchKind> kinds;
        if (sum_arch == "all")
            kinds = {ArchKind::Basic, ArchKind::MultiOutput, ArchKind::DenseNet,
                     ArchKind::MoDenseNet};
        else
            kinds = {parse_arch(sum_arch)};
        if (sum_scale <= 0) throw ConfigError("--width-scale must be positive");
        json out = json::array();
        for (ArchKind kind : kinds) {
            Network<float> net(kind, sum_scale, 0);
            auto [total, per_layer] = net.count_parameters();
            if (sum_json) {
                json layers = json::object();
                for (const auto& [name, n] : per_layer) layers[name] = n;
                out.push_back({{"arch", arch_name(kind)},
                               {"width_scale", sum_scale},
                               {"total_parameters", total},
                               {"per_layer", layers}});
            } else {
                std::cout << arch_name(kind) << " (width " << sum_scale << "): " << total
                          << " parameters\n";
            }
        }
        if (sum_json) std::cout << out.dump(2) << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
