// ssce — semi-supervised classification enhancement pipeline CLI
//
// exit codes: 0 success, 2 config error, 3 data error, 4 training failure,
// 5 IO error

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssce/checkpoint.hpp"
#include "ssce/config.hpp"
#include "ssce/data.hpp"
#include "ssce/metrics.hpp"
#include "ssce/models.hpp"
#include "ssce/orchestrator.hpp"
#include "ssce/train.hpp"

namespace fs = std::filesystem;
using namespace ssce;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::int64_t> resolution;
    std::optional<std::int64_t> gamma_max;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "experiment config file (key = value lines)");
    cmd->add_option("--seed", f.seed, "master seed override");
    cmd->add_option("--out", f.out, "output directory override");
    cmd->add_option("--resolution", f.resolution, "image resolution override");
    cmd->add_option("--gamma-max", f.gamma_max, "extension-factor cap override");
}

ExperimentConfig resolve_config(const CommonFlags& f) {
    ExperimentConfig cfg;
    if (!f.config_path.empty()) cfg = load_config(f.config_path);
    if (f.seed) cfg.seed = *f.seed;
    if (f.out) cfg.out_dir = *f.out;
    if (f.resolution) cfg.resolution = *f.resolution;
    if (f.gamma_max) cfg.gamma_max = *f.gamma_max;
    cfg.validate();
    return cfg;
}

int run_ingest_check(const ExperimentConfig& cfg) {
    LabeledDataset ds = ingest_directory(cfg.dataset_root, cfg.resolution, cfg.channels);
    auto counts = ds.class_counts();
    std::cout << "root: " << cfg.dataset_root << "\n";
    std::cout << "classes: " << ds.classes() << "\n";
    for (std::size_t c = 0; c < ds.class_names.size(); ++c)
        std::cout << "  " << ds.class_names[c] << ": " << counts[c] << "\n";
    std::cout << "total: " << ds.size() << " images, " << cfg.resolution << "x" << cfg.resolution
              << "x" << cfg.channels << "\n";
    return 0;
}

int run_train_cnn(const ExperimentConfig& cfg, const std::string& preset, bool wd) {
    LabeledDataset ds = ingest_directory(cfg.dataset_root, cfg.resolution, cfg.channels);
    SplitPair split = stratified_split(ds, cfg.split_ratio, stable_hash("split", cfg.seed));
    ClassifierModel model =
        build_classifier(preset, cfg.resolution, ds.classes(), cfg.channels, cfg.seed);
    OptimizerConfig ocfg;
    ocfg.kind = OptimizerKind::adam;
    ocfg.learning_rate = cfg.cnn_lr;
    ocfg.weight_decay = wd ? cfg.weight_decay : 0.0;
    AugmentConfig aug{cfg.augment_hflip, cfg.augment_rotate_deg};
    ClassifierTrainResult res = train_classifier(model, split, ocfg, cfg.cnn_epochs_base,
                                                 cfg.cnn_batch, aug, cfg.seed, cfg.timing);
    fs::create_directories(cfg.out_dir);
    std::string ckpt = (fs::path(cfg.out_dir) / (preset + ".ckpt")).string();
    save_checkpoint(snapshot_model(model.net, model.arch_id,
                                   static_cast<std::uint64_t>(cfg.cnn_epochs_base), cfg.seed,
                                   cfg.config_hash()),
                    ckpt);
    std::cout << "test accuracy: " << res.test_accuracy * 100.0 << "%\n";
    std::cout << "training time: " << res.seconds << " s\n";
    std::cout << "checkpoint: " << ckpt << "\n";
    return 0;
}

int run_train_gan(const ExperimentConfig& cfg, const std::string& class_name) {
    LabeledDataset ds = ingest_directory(cfg.dataset_root, cfg.resolution, cfg.channels);
    SplitPair split = stratified_split(ds, cfg.split_ratio, stable_hash("split", cfg.seed));
    std::int64_t cls = -1;
    for (std::size_t c = 0; c < ds.class_names.size(); ++c)
        if (ds.class_names[c] == class_name) cls = static_cast<std::int64_t>(c);
    if (cls < 0) throw DataError("unknown class name: " + class_name);
    LabeledDataset subset;
    subset.class_names = ds.class_names;
    subset.source = "train class " + class_name;
    for (const auto& it : split.train.items)
        if (it.label == cls) subset.items.push_back(it);

    GanPair gan = build_gan(gan_variant_from_name(cfg.gan_variant), cfg.latent_len,
                            cfg.resolution, cfg.channels, cfg.gan_base_width, cfg.seed);
    GanTrainConfig gcfg;
    gcfg.iterations = cfg.gan_iterations;
    gcfg.batch = cfg.gan_batch;
    gcfg.learning_rate = cfg.gan_learning_rate();
    gcfg.eval_every = cfg.gan_eval_every;
    gcfg.snapshot_iters = cfg.gan_snapshot_iters;
    gcfg.n_critic = cfg.n_critic;
    gcfg.gp_lambda = cfg.gp_lambda;
    gcfg.weight_clip = cfg.weight_clip;
    gcfg.fid_samples = cfg.fid_samples;
    gcfg.timing = cfg.timing;
    gcfg.snapshot_dir = (fs::path(cfg.out_dir) / ("gan-" + class_name)).string();
    fs::create_directories(gcfg.snapshot_dir);
    GanTrainResult res = train_gan(gan, subset, gcfg, cfg.seed);
    std::string ckpt = (fs::path(cfg.out_dir) / ("gan-" + class_name + ".gen.ckpt")).string();
    save_checkpoint(snapshot_model(gan.generator, gan.gen_arch_id,
                                   static_cast<std::uint64_t>(cfg.gan_iterations), cfg.seed,
                                   cfg.config_hash()),
                    ckpt);
    std::cout << "iterations: " << cfg.gan_iterations << ", snapshots: "
              << res.snapshot_paths.size() << "\n";
    std::cout << "generator checkpoint: " << ckpt << "\n";
    return 0;
}

int run_synthesize(const ExperimentConfig& cfg, const std::string& gan_dir, std::int64_t gamma) {
    LabeledDataset ds = ingest_directory(cfg.dataset_root, cfg.resolution, cfg.channels);
    SplitPair split = stratified_split(ds, cfg.split_ratio, stable_hash("split", cfg.seed));
    std::vector<GanPair> gans;
    std::vector<ClassGenerator> generators;
    for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
        std::string ckpt =
            (fs::path(gan_dir) / ("gan-" + ds.class_names[c] + ".gen.ckpt")).string();
        GanPair gan = build_gan(gan_variant_from_name(cfg.gan_variant), cfg.latent_len,
                                cfg.resolution, cfg.channels, cfg.gan_base_width, cfg.seed);
        transfer_init(gan.generator, load_checkpoint(ckpt));
        gans.push_back(std::move(gan));
    }
    for (auto& g : gans)
        generators.push_back([&g](std::size_t n, Rng& rng) {
            Tensor z = Tensor::randn({static_cast<std::int64_t>(n), g.latent_len}, rng);
            NoGradGuard ng;
            return g.generate(z);
        });
    ExtensionPlan plan = make_extension_plan(split.train.class_counts(), gamma);
    LabeledDataset synth = synthesize_pseudo_labeled(generators, ds.class_names, plan,
                                                     stable_hash("synth", cfg.seed));
    std::vector<std::int64_t> counter(ds.class_names.size(), 0);
    for (const auto& name : ds.class_names)
        fs::create_directories(fs::path(cfg.out_dir) / name);
    for (const auto& it : synth.items) {
        auto c = static_cast<std::size_t>(it.label);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth-%05lld.png", static_cast<long long>(counter[c]++));
        encode_png((fs::path(cfg.out_dir) / ds.class_names[c] / buf).string(), it.image);
    }
    std::cout << "synthesized " << synth.size() << " pseudo-labeled images (gamma=" << gamma
              << ") under " << cfg.out_dir << "\n";
    return 0;
}

int run_eval_metrics(const ExperimentConfig& cfg, const std::string& classifier_ckpt,
                     const std::string& preset, const std::string& real_dir,
                     const std::string& synth_dir) {
    LabeledDataset real = ingest_directory(real_dir, cfg.resolution, cfg.channels);
    LabeledDataset synth = ingest_directory(synth_dir, cfg.resolution, cfg.channels);
    ClassifierModel model =
        build_classifier(preset, cfg.resolution, real.classes(), cfg.channels, cfg.seed);
    transfer_init(model.net, load_checkpoint(classifier_ckpt));
    // standardization recomputed on the real set (documented convention for
    // stand-alone metric evaluation)
    ChannelStats st = channel_stats(real);
    Embedder emb = make_embedder(model, st);

    auto to_tensor = [](const LabeledDataset& ds) {
        std::vector<std::size_t> idx(ds.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return items_to_tensor(ds, idx);
    };
    Tensor real_t = to_tensor(real), synth_t = to_tensor(synth);
    std::vector<double> rf = emb.embed(real_t), sf = emb.embed(synth_t);
    double fid = frechet_distance(feature_stats(sf, synth.size(), emb.embed_dim),
                                  feature_stats(rf, real.size(), emb.embed_dim));
    std::vector<double> probs = emb.probs(synth_t);
    double is = inception_score(probs, synth.size(), emb.classes);
    std::cout << "embedder: " << emb.id << "\n";
    std::cout << "FID: " << fid << "\n";
    std::cout << "IS: " << is << "\n";
    return 0;
}

int run_report(const std::string& ledger_path, const std::string& out_dir, bool plots) {
    std::ifstream in(ledger_path);
    if (!in) throw IoError("cannot open ledger " + ledger_path);
    nlohmann::json j;
    in >> j;
    RunLedger ledger = ledger_from_json(j);
    for (const auto& f : emit_report(ledger, out_dir, plots)) std::cout << f << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-supervised classification enhancement pipeline"};
    app.require_subcommand(1);

    CommonFlags cf;
    std::string preset = "small-4conv";
    std::string class_name, gan_dir, classifier_ckpt, real_dir, synth_dir, ledger_path;
    std::string data_root;
    std::int64_t gamma = 1;
    std::int64_t toy_count = 120;
    bool wd = false, plots = false;

    auto* ingest = app.add_subcommand("ingest-check", "validate a dataset directory");
    add_common(ingest, cf);
    ingest->add_option("--data", data_root, "dataset root (overrides config)");

    auto* traincnn = app.add_subcommand("train-cnn", "train a baseline classifier");
    add_common(traincnn, cf);
    traincnn->add_option("--preset", preset, "classifier preset");
    traincnn->add_flag("--wd", wd, "enable weight decay");
    traincnn->add_option("--data", data_root, "dataset root (overrides config)");

    auto* traingan = app.add_subcommand("train-gan", "train a GAN on one class subset");
    add_common(traingan, cf);
    traingan->add_option("--class-name", class_name, "class to train on")->required();
    traingan->add_option("--data", data_root, "dataset root (overrides config)");

    auto* synth = app.add_subcommand("synthesize", "emit pseudo-labeled images");
    add_common(synth, cf);
    synth->add_option("--gan-dir", gan_dir, "directory with gan-<class>.gen.ckpt files")
        ->required();
    synth->add_option("--gamma", gamma, "extension factor");
    synth->add_option("--data", data_root, "dataset root (overrides config)");

    auto* evalm = app.add_subcommand("eval-metrics", "FID/IS between real and synthetic sets");
    add_common(evalm, cf);
    evalm->add_option("--classifier", classifier_ckpt, "embedder checkpoint")->required();
    evalm->add_option("--preset", preset, "classifier preset of the checkpoint");
    evalm->add_option("--real", real_dir, "real dataset root")->required();
    evalm->add_option("--synth", synth_dir, "synthetic dataset root")->required();

    auto* runssce = app.add_subcommand("run-ssce", "full pipeline: baselines, GANs, gamma search");
    add_common(runssce, cf);
    runssce->add_option("--data", data_root, "dataset root (overrides config)");

    auto* report = app.add_subcommand("report", "re-emit reports from a ledger");
    add_common(report, cf);
    report->add_option("--ledger", ledger_path, "ledger.json path")->required();
    report->add_flag("--plots", plots, "emit PGM plots");

    auto* maketoy = app.add_subcommand("make-toy", "write the procedural 3-class toy dataset");
    add_common(maketoy, cf);
    maketoy->add_option("--count", toy_count, "total image count (multiple of 3)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg = resolve_config(cf);
        if (!data_root.empty()) cfg.dataset_root = data_root;

        if (*ingest) return run_ingest_check(cfg);
        if (*traincnn) return run_train_cnn(cfg, preset, wd);
        if (*traingan) return run_train_gan(cfg, class_name);
        if (*synth) return run_synthesize(cfg, gan_dir, gamma);
        if (*evalm) return run_eval_metrics(cfg, classifier_ckpt, preset, real_dir, synth_dir);
        if (*runssce) {
            RunLedger ledger = run_experiment(cfg);
            std::cout << "report: " << (fs::path(cfg.out_dir) / "report.csv").string() << "\n";
            std::cout << "rows: " << ledger.rows.size() << "\n";
            return 0;
        }
        if (*report) return run_report(ledger_path, cf.out ? *cf.out : "out", plots);
        if (*maketoy) {
            write_toy_dataset(cfg.out_dir, toy_count, cfg.resolution, cfg.seed);
            std::cout << "wrote toy dataset (" << toy_count << " images) to " << cfg.out_dir
                      << "\n";
            return 0;
        }
    } catch (const StageError& e) {
        std::cerr << "error " << e.what() << "\n";
        return e.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const TrainingError& e) {
        std::cerr << "training failure: " << e.what() << "\n";
        return 4;
    } catch (const ModelError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 5;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 5;
    } catch (const MetricError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
