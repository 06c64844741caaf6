#ifndef SSCE_ORCHESTRATOR_HPP
#define SSCE_ORCHESTRATOR_HPP

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssce/checkpoint.hpp"
#include "ssce/config.hpp"
#include "ssce/data.hpp"
#include "ssce/metrics.hpp"
#include "ssce/models.hpp"
#include "ssce/train.hpp"

namespace ssce {

// exit codes: 0 success, 2 config error, 3 data error, 4 training failure,
// 5 IO error
struct StageError : std::runtime_error {
    std::string stage;
    int exit_code;
    StageError(std::string stage_, int code, const std::string& msg)
        : std::runtime_error("[" + stage_ + "] " + msg), stage(std::move(stage_)),
          exit_code(code) {}
};

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

struct LedgerRow {
    std::string structure;
    bool wd = false;
    std::int64_t gamma = 0;  // 0 marks a baseline row
    double acc = 0;          // fraction in [0,1]
    double macc = 0;         // max accuracy across gammas for this structure
    double seconds = 0;
    double acc_b = 0;  // baseline copies on gamma rows; == acc/seconds on baseline rows
    double t_b = 0;
    bool has_tei = false;  // baseline rows carry no TEI
    double tei_value = 0;
    std::string embedder_id;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
};

struct GanTraceEntry {
    std::string variant;
    std::string class_name;
    std::vector<GanEvalPoint> quality;
    std::vector<GanStepLog> losses;
};

struct RunLedger {
    std::vector<LedgerRow> rows;
    std::vector<GanTraceEntry> gan_traces;
    std::uint64_t config_hash = 0;

    const LedgerRow* find(const std::string& structure, bool wd, std::int64_t gamma) const {
        for (const auto& r : rows)
            if (r.structure == structure && r.wd == wd && r.gamma == gamma) return &r;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Gamma search
// ---------------------------------------------------------------------------

struct StructureSpec {
    std::string name;  // classifier preset
    bool wd = false;
};

struct BaselineRecord {
    double acc = 0;  // fraction
    double seconds = 0;
};

struct CellResult {
    double acc = 0;  // fraction
    double seconds = 0;
    bool failed = false;
    std::string error;
};

// per-cell seed fan-out: parallel execution order cannot change results
inline std::uint64_t cell_seed(const StructureSpec& s, std::int64_t gamma,
                               std::uint64_t master_seed) {
    return stable_hash(s.name + (s.wd ? "+wd" : "-wd") + ":gamma=" + std::to_string(gamma),
                       master_seed);
}

using CellTrainer =
    std::function<CellResult(const StructureSpec&, std::int64_t gamma, std::uint64_t seed)>;

struct StructureChoice {
    std::string structure;
    bool wd = false;
    std::int64_t chosen_gamma = 0;  // argmax TEI, smallest gamma on ties; 0 if all failed
    double best_tei = 0;
    double acc_at_chosen = 0;  // fraction
    double macc = 0;           // max accuracy over all gammas
};

struct GammaSearchOutcome {
    std::int64_t stop_gamma = 0;  // last gamma actually trained
    std::vector<StructureChoice> choices;
};

// The §-3.3 loop: gamma = 1, 2, ... — train every structure on the merged
// dataset, compute TEI, and continue while any structure's TEI strictly
// improved in the latest increment (gamma = 1 always runs; failed cells are
// excluded from the stop test and logged on their rows).
inline GammaSearchOutcome gamma_search(
    RunLedger& ledger, const std::vector<StructureSpec>& structures,
    const std::map<std::pair<std::string, bool>, BaselineRecord>& baselines,
    std::int64_t gamma_max, std::uint64_t master_seed, const CellTrainer& train_cell,
    const std::string& embedder_id) {
    if (gamma_max < 1) throw StageError("gamma-search", 2, "gamma_max must be >= 1");
    for (const auto& s : structures)
        if (!baselines.count({s.name, s.wd}))
            throw StageError("gamma-search", 4,
                             "missing baseline for structure " + s.name +
                                 (s.wd ? " (wd on)" : " (wd off)"));

    // per structure: TEI history indexed by gamma-1 (nullopt = failed cell)
    std::vector<std::vector<std::optional<double>>> history(structures.size());
    GammaSearchOutcome out;

    for (std::int64_t gamma = 1; gamma <= gamma_max; ++gamma) {
        bool any_improved = false;
        for (std::size_t si = 0; si < structures.size(); ++si) {
            const StructureSpec& s = structures[si];
            const BaselineRecord& base = baselines.at({s.name, s.wd});
            std::uint64_t seed = cell_seed(s, gamma, master_seed);
            CellResult cell = train_cell(s, gamma, seed);

            LedgerRow row;
            row.structure = s.name;
            row.wd = s.wd;
            row.gamma = gamma;
            row.acc = cell.acc;
            row.seconds = cell.seconds;
            row.acc_b = base.acc;
            row.t_b = base.seconds;
            row.embedder_id = embedder_id;
            row.seed = seed;
            row.failed = cell.failed;
            row.error = cell.error;
            if (!cell.failed) {
                try {
                    row.tei_value = tei({cell.acc * 100.0, base.acc * 100.0, cell.seconds,
                                         base.seconds});
                    row.has_tei = true;
                } catch (const MetricError& e) {
                    row.failed = true;
                    row.error = e.what();
                }
            }
            ledger.rows.push_back(row);

            history[si].push_back(row.has_tei ? std::optional<double>(row.tei_value)
                                              : std::nullopt);
            if (row.has_tei) {
                if (gamma == 1)
                    any_improved = true;  // first increment: vacuous improvement
                else if (history[si][static_cast<std::size_t>(gamma - 2)] &&
                         row.tei_value > *history[si][static_cast<std::size_t>(gamma - 2)])
                    any_improved = true;
            }
        }
        out.stop_gamma = gamma;
        if (!any_improved) break;
    }

    // per-structure choice: argmax TEI, smallest gamma on ties
    for (std::size_t si = 0; si < structures.size(); ++si) {
        StructureChoice ch;
        ch.structure = structures[si].name;
        ch.wd = structures[si].wd;
        for (std::size_t g = 0; g < history[si].size(); ++g) {
            const LedgerRow* row =
                ledger.find(ch.structure, ch.wd, static_cast<std::int64_t>(g + 1));
            if (!row || row->failed) continue;
            ch.macc = std::max(ch.macc, row->acc);
            if (history[si][g] && (ch.chosen_gamma == 0 || *history[si][g] > ch.best_tei)) {
                ch.best_tei = *history[si][g];
                ch.chosen_gamma = static_cast<std::int64_t>(g + 1);
                ch.acc_at_chosen = row->acc;
            }
        }
        out.choices.push_back(ch);
    }

    // backfill macc onto rows (baseline rows keep their own accuracy)
    for (auto& row : ledger.rows) {
        if (row.gamma == 0) {
            row.macc = row.acc;
            continue;
        }
        for (const auto& ch : out.choices)
            if (ch.structure == row.structure && ch.wd == row.wd) row.macc = ch.macc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ledger serialization and reports
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace detail

inline nlohmann::json ledger_to_json(const RunLedger& ledger) {
    nlohmann::json j;
    j["config_hash"] = ledger.config_hash;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : ledger.rows) {
        nlohmann::json row{{"structure", r.structure}, {"wd", r.wd},
                           {"gamma", r.gamma},         {"acc", r.acc},
                           {"macc", r.macc},           {"seconds", r.seconds},
                           {"acc_b", r.acc_b},         {"t_b", r.t_b},
                           {"embedder", r.embedder_id},{"seed", r.seed},
                           {"failed", r.failed},       {"error", r.error}};
        if (r.has_tei) row["tei"] = r.tei_value;
        j["rows"].push_back(row);
    }
    j["gan_traces"] = nlohmann::json::array();
    for (const auto& t : ledger.gan_traces) {
        nlohmann::json trace{{"variant", t.variant}, {"class", t.class_name}};
        trace["quality"] = nlohmann::json::array();
        for (const auto& q : t.quality)
            trace["quality"].push_back({{"iteration", q.iteration}, {"fid", q.fid}, {"is", q.is}});
        trace["losses"] = nlohmann::json::array();
        for (const auto& l : t.losses)
            trace["losses"].push_back({{"iteration", l.iteration},
                                       {"critic_loss", l.critic_loss},
                                       {"generator_loss", l.generator_loss},
                                       {"gradient_penalty", l.gradient_penalty}});
        j["gan_traces"].push_back(trace);
    }
    return j;
}

inline RunLedger ledger_from_json(const nlohmann::json& j) {
    RunLedger ledger;
    ledger.config_hash = j.at("config_hash").get<std::uint64_t>();
    for (const auto& row : j.at("rows")) {
        LedgerRow r;
        r.structure = row.at("structure").get<std::string>();
        r.wd = row.at("wd").get<bool>();
        r.gamma = row.at("gamma").get<std::int64_t>();
        r.acc = row.at("acc").get<double>();
        r.macc = row.at("macc").get<double>();
        r.seconds = row.at("seconds").get<double>();
        r.acc_b = row.at("acc_b").get<double>();
        r.t_b = row.at("t_b").get<double>();
        r.embedder_id = row.at("embedder").get<std::string>();
        r.seed = row.at("seed").get<std::uint64_t>();
        r.failed = row.at("failed").get<bool>();
        r.error = row.at("error").get<std::string>();
        if (row.contains("tei")) {
            r.has_tei = true;
            r.tei_value = row.at("tei").get<double>();
        }
        ledger.rows.push_back(r);
    }
    if (j.contains("gan_traces"))
        for (const auto& trace : j.at("gan_traces")) {
            GanTraceEntry t;
            t.variant = trace.at("variant").get<std::string>();
            t.class_name = trace.at("class").get<std::string>();
            for (const auto& q : trace.at("quality"))
                t.quality.push_back({q.at("iteration").get<std::int64_t>(),
                                     q.at("fid").get<double>(), q.at("is").get<double>()});
            for (const auto& l : trace.at("losses"))
                t.losses.push_back({l.at("iteration").get<std::int64_t>(),
                                    l.at("critic_loss").get<double>(),
                                    l.at("generator_loss").get<double>(),
                                    l.at("gradient_penalty").get<double>()});
            ledger.gan_traces.push_back(t);
        }
    return ledger;
}

namespace detail {

// minimal PGM scatter/line canvas for the optional report plots
struct PlotCanvas {
    Image img;
    double x0, x1, y0, y1;

    PlotCanvas(double xlo, double xhi, double ylo, double yhi) : x0(xlo), x1(xhi), y0(ylo), y1(yhi) {
        img.channels = 1;
        img.height = img.width = 256;
        img.pixels.assign(256 * 256, 1.0);
        if (x1 <= x0) x1 = x0 + 1;
        if (y1 <= y0) y1 = y0 + 1;
    }
    void mark(double x, double y, int radius = 2) {
        std::int64_t px = static_cast<std::int64_t>((x - x0) / (x1 - x0) * 235.0) + 10;
        std::int64_t py = 245 - static_cast<std::int64_t>((y - y0) / (y1 - y0) * 235.0);
        for (std::int64_t dy = -radius; dy <= radius; ++dy)
            for (std::int64_t dx = -radius; dx <= radius; ++dx) {
                std::int64_t yy = py + dy, xx = px + dx;
                if (yy >= 0 && yy < 256 && xx >= 0 && xx < 256) img.at(0, yy, xx) = 0.0;
            }
    }
};

}  // namespace detail

// one machine-readable table (CSV + JSON carry identical values); columns:
// structure, wd, gamma, acc, macc, t, t_b, acc_b, tei, embedder, seed,
// config_hash. Accuracies reported in percent; baseline rows leave tei empty.
inline std::vector<std::string> emit_report(const RunLedger& ledger, const std::string& out_dir,
                                            bool plots = false) {
    namespace fs = std::filesystem;
    if (ledger.rows.empty()) throw StageError("report", 5, "ledger is empty");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw StageError("report", 5, "cannot create output directory " + out_dir);

    std::vector<std::string> written;
    std::string csv_path = (fs::path(out_dir) / "report.csv").string();
    {
        std::ofstream csv(csv_path, std::ios::binary);
        if (!csv) throw StageError("report", 5, "cannot write " + csv_path);
        csv << "structure,wd,gamma,acc,macc,t,t_b,acc_b,tei,embedder,seed,config_hash\n";
        for (const auto& r : ledger.rows) {
            csv << r.structure << ',' << (r.wd ? "on" : "off") << ',' << r.gamma << ','
                << detail::fmt(r.acc * 100.0, 4) << ',' << detail::fmt(r.macc * 100.0, 4) << ','
                << detail::fmt(r.seconds, 3) << ',' << detail::fmt(r.t_b, 3) << ','
                << detail::fmt(r.acc_b * 100.0, 4) << ','
                << (r.has_tei ? detail::fmt(r.tei_value, 6) : "") << ',' << r.embedder_id << ','
                << r.seed << ',' << ledger.config_hash << '\n';
        }
    }
    written.push_back(csv_path);

    std::string json_path = (fs::path(out_dir) / "report.json").string();
    {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : ledger.rows) {
            nlohmann::json row{
                {"structure", r.structure},
                {"wd", r.wd ? "on" : "off"},
                {"gamma", r.gamma},
                {"acc", detail::fmt(r.acc * 100.0, 4)},
                {"macc", detail::fmt(r.macc * 100.0, 4)},
                {"t", detail::fmt(r.seconds, 3)},
                {"t_b", detail::fmt(r.t_b, 3)},
                {"acc_b", detail::fmt(r.acc_b * 100.0, 4)},
                {"tei", r.has_tei ? detail::fmt(r.tei_value, 6) : ""},
                {"embedder", r.embedder_id},
                {"seed", r.seed},
                {"config_hash", ledger.config_hash},
            };
            j.push_back(row);
        }
        std::ofstream out(json_path, std::ios::binary);
        if (!out) throw StageError("report", 5, "cannot write " + json_path);
        out << j.dump(2) << '\n';
    }
    written.push_back(json_path);

    if (plots) {
        // accuracy-vs-time scatter per WD variant
        for (bool wd : {true, false}) {
            double tmax = 1;
            bool any = false;
            for (const auto& r : ledger.rows)
                if (r.wd == wd && !r.failed) {
                    tmax = std::max(tmax, r.seconds);
                    any = true;
                }
            if (!any) continue;
            detail::PlotCanvas canvas(0, tmax, 0, 1);
            for (const auto& r : ledger.rows)
                if (r.wd == wd && !r.failed) canvas.mark(r.seconds, r.acc);
            std::string p =
                (fs::path(out_dir) / (std::string("accuracy-vs-time-wd-") + (wd ? "on" : "off") +
                                      ".pgm"))
                    .string();
            encode_pgm(p, canvas.img);
            written.push_back(p);
        }
        // FID trace per GAN
        for (const auto& t : ledger.gan_traces) {
            if (t.quality.empty()) continue;
            double fmax = 1, imax = 1;
            for (const auto& q : t.quality) {
                fmax = std::max(fmax, q.fid);
                imax = std::max(imax, static_cast<double>(q.iteration));
            }
            detail::PlotCanvas canvas(0, imax, 0, fmax);
            for (const auto& q : t.quality) canvas.mark(static_cast<double>(q.iteration), q.fid, 1);
            std::string p =
                (fs::path(out_dir) / ("fid-" + t.variant + "-" + t.class_name + ".pgm")).string();
            encode_pgm(p, canvas.img);
            written.push_back(p);
        }
    }
    return written;
}

// ---------------------------------------------------------------------------
// Full experiment
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<nlohmann::json> load_cached_json(const std::string& path, bool resume) {
    if (!resume || !std::filesystem::exists(path)) return std::nullopt;
    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    return j;
}

inline void store_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StageError("io", 5, "cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace detail

// baseline CNN runs -> per-class GAN training -> quality gate -> gamma search
// -> report; artifacts live under cfg.out_dir and finished stages are reused
// on rerun when cfg.resume is set
inline RunLedger run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw StageError("config", 2, e.what());
    }
    std::error_code ec;
    fs::create_directories(fs::path(cfg.out_dir) / "cells", ec);
    fs::create_directories(fs::path(cfg.out_dir) / "gan", ec);
    fs::create_directories(fs::path(cfg.out_dir) / "checkpoints", ec);
    if (ec) throw StageError("io", 5, "cannot create output directories under " + cfg.out_dir);

    RunLedger ledger;
    ledger.config_hash = cfg.config_hash();

    // ---- stage: ingest -------------------------------------------------------
    LabeledDataset base;
    try {
        base = ingest_directory(cfg.dataset_root, cfg.resolution, cfg.channels);
    } catch (const DataError& e) {
        throw StageError("ingest", 3, e.what());
    } catch (const IoError& e) {
        throw StageError("ingest", 5, e.what());
    }

    // ---- stage: split --------------------------------------------------------
    SplitPair split;
    try {
        split = stratified_split(base, cfg.split_ratio, stable_hash("split", cfg.seed));
    } catch (const DataError& e) {
        throw StageError("split", 3, e.what());
    }

    AugmentConfig aug{cfg.augment_hflip, cfg.augment_rotate_deg};

    // ---- stage: baseline -----------------------------------------------------
    std::vector<StructureSpec> structures;
    for (const auto& preset : cfg.classifier_presets)
        for (bool wd : cfg.wd_variants) structures.push_back({preset, wd});

    std::map<std::pair<std::string, bool>, BaselineRecord> baselines;
    ClassifierModel embed_model;   // first structure's baseline doubles as the embedder
    ChannelStats embed_norm;
    bool have_embedder = false;

    for (const auto& s : structures) {
        std::string tag = "base-" + s.name + (s.wd ? "-wd" : "-nowd");
        std::string cell_path = (fs::path(cfg.out_dir) / "cells" / (tag + ".json")).string();
        std::string ckpt_path =
            (fs::path(cfg.out_dir) / "checkpoints" / (tag + ".ckpt")).string();
        std::uint64_t seed = cell_seed(s, 0, cfg.seed);

        ClassifierModel model;
        try {
            model = build_classifier(s.name, cfg.resolution, base.classes(), cfg.channels, seed);
        } catch (const ValueError& e) {
            throw StageError("baseline", 2, e.what());
        }

        BaselineRecord rec;
        ChannelStats norm;
        auto cached = detail::load_cached_json(cell_path, cfg.resume);
        if (cached) {
            rec.acc = cached->at("acc").get<double>();
            rec.seconds = cached->at("seconds").get<double>();
            norm.mean = cached->at("norm_mean").get<std::vector<double>>();
            norm.stddev = cached->at("norm_std").get<std::vector<double>>();
            try {
                transfer_init(model.net, load_checkpoint(ckpt_path));
            } catch (const std::exception& e) {
                throw StageError("baseline", 5,
                                 "cannot restore cached checkpoint " + ckpt_path + ": " + e.what());
            }
        } else {
            OptimizerConfig ocfg;
            ocfg.kind = OptimizerKind::adam;
            ocfg.learning_rate = cfg.cnn_lr;
            ocfg.weight_decay = s.wd ? cfg.weight_decay : 0.0;
            ClassifierTrainResult tr;
            try {
                tr = train_classifier(model, split, ocfg, cfg.cnn_epochs_base, cfg.cnn_batch, aug,
                                      seed, cfg.timing);
            } catch (const TrainingError& e) {
                throw StageError("baseline", 4, tag + ": " + e.what());
            }
            rec.acc = tr.test_accuracy;
            rec.seconds = tr.seconds;
            norm = tr.norm;
            save_checkpoint(snapshot_model(model.net, model.arch_id,
                                           static_cast<std::uint64_t>(cfg.cnn_epochs_base), seed,
                                           ledger.config_hash),
                            ckpt_path);
            detail::store_json(cell_path, {{"acc", rec.acc},
                                           {"seconds", rec.seconds},
                                           {"norm_mean", norm.mean},
                                           {"norm_std", norm.stddev}});
        }
        baselines[{s.name, s.wd}] = rec;

        LedgerRow row;
        row.structure = s.name;
        row.wd = s.wd;
        row.gamma = 0;
        row.acc = row.macc = rec.acc;
        row.seconds = rec.seconds;
        row.acc_b = rec.acc;
        row.t_b = rec.seconds;
        row.seed = seed;
        ledger.rows.push_back(row);

        if (!have_embedder) {
            embed_model = std::move(model);
            embed_norm = norm;
            have_embedder = true;
        }
    }
    Embedder embedder = make_embedder(embed_model, embed_norm);
    for (auto& row : ledger.rows) row.embedder_id = embedder.id;

    // ---- stage: gan ----------------------------------------------------------
    GanVariant variant = gan_variant_from_name(cfg.gan_variant);
    std::vector<GanPair> gans;
    for (std::int64_t c = 0; c < base.classes(); ++c) {
        LabeledDataset subset;
        subset.class_names = base.class_names;
        subset.source = "train class " + base.class_names[static_cast<std::size_t>(c)];
        for (const auto& it : split.train.items)
            if (it.label == c) subset.items.push_back(it);
        if (subset.items.empty())
            throw StageError("gan", 3,
                             "no training items for class " +
                                 base.class_names[static_cast<std::size_t>(c)]);
        std::vector<std::size_t> all(subset.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        Tensor real_eval = items_to_tensor(subset, all);

        std::uint64_t seed = stable_hash("gan-class-" + std::to_string(c), cfg.seed);
        GanPair gan = build_gan(variant, cfg.latent_len, cfg.resolution, cfg.channels,
                                cfg.gan_base_width, seed);

        std::string tag = "gan-class" + std::to_string(c);
        std::string gen_ckpt = (fs::path(cfg.out_dir) / "gan" / (tag + ".gen.ckpt")).string();
        std::string trace_path = (fs::path(cfg.out_dir) / "gan" / (tag + ".json")).string();
        GanTraceEntry trace;
        trace.variant = cfg.gan_variant;
        trace.class_name = base.class_names[static_cast<std::size_t>(c)];

        auto cached = detail::load_cached_json(trace_path, cfg.resume);
        if (cached && fs::exists(gen_ckpt)) {
            try {
                transfer_init(gan.generator, load_checkpoint(gen_ckpt));
            } catch (const std::exception& e) {
                throw StageError("gan", 5,
                                 "cannot restore cached checkpoint " + gen_ckpt + ": " + e.what());
            }
            for (const auto& q : cached->at("quality"))
                trace.quality.push_back({q.at("iteration").get<std::int64_t>(),
                                         q.at("fid").get<double>(), q.at("is").get<double>()});
        } else {
            if (!cfg.transfer_checkpoint.empty()) {
                try {
                    transfer_init(gan.generator, load_checkpoint(cfg.transfer_checkpoint),
                                  /*allow_empty=*/true);
                } catch (const std::exception& e) {
                    throw StageError("gan", 5, std::string("transfer source: ") + e.what());
                }
            }
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
            gcfg.snapshot_dir = (fs::path(cfg.out_dir) / "gan" / tag).string();
            fs::create_directories(gcfg.snapshot_dir);
            GanTrainResult gr;
            try {
                gr = train_gan(gan, subset, gcfg, seed, &embedder, &real_eval);
            } catch (const TrainingError& e) {
                throw StageError("gan", 4, tag + ": " + e.what());
            }
            trace.quality = gr.quality_trace;
            trace.losses = gr.loss_trace;
            save_checkpoint(snapshot_model(gan.generator, gan.gen_arch_id,
                                           static_cast<std::uint64_t>(cfg.gan_iterations), seed,
                                           ledger.config_hash),
                            gen_ckpt);
            nlohmann::json tj;
            tj["quality"] = nlohmann::json::array();
            for (const auto& q : trace.quality)
                tj["quality"].push_back(
                    {{"iteration", q.iteration}, {"fid", q.fid}, {"is", q.is}});
            detail::store_json(trace_path, tj);
        }

        // quality gate: final FID within a multiple of the two-sample baseline
        if (cfg.quality_gate > 0) {
            if (trace.quality.empty())
                throw StageError("gan-quality", 4, tag + ": no quality trace for gating");
            std::vector<double> feats = embedder.embed(real_eval);
            double floor_fid = two_sample_baseline_fid(
                feats, subset.size(), embedder.embed_dim, stable_hash("gate", cfg.seed));
            double final_fid = trace.quality.back().fid;
            if (final_fid > cfg.quality_gate * std::max(floor_fid, 1e-12))
                throw StageError("gan-quality", 4,
                                 tag + ": final FID " + std::to_string(final_fid) +
                                     " exceeds gate " + std::to_string(cfg.quality_gate) +
                                     " x two-sample baseline " + std::to_string(floor_fid));
        }

        ledger.gan_traces.push_back(std::move(trace));
        gans.push_back(std::move(gan));
    }

    // ---- stage: gamma-search ---------------------------------------------
    std::vector<ClassGenerator> generators;
    for (auto& g : gans)
        generators.push_back([&g](std::size_t n, Rng& rng) {
            Tensor z = Tensor::randn({static_cast<std::int64_t>(n), g.latent_len}, rng);
            NoGradGuard ng;
            return g.generate(z);
        });

    std::map<std::int64_t, LabeledDataset> merged_cache;
    auto merged_for = [&](std::int64_t gamma) -> const LabeledDataset& {
        auto it = merged_cache.find(gamma);
        if (it != merged_cache.end()) return it->second;
        ExtensionPlan plan = make_extension_plan(split.train.class_counts(), gamma);
        LabeledDataset synth = synthesize_pseudo_labeled(
            generators, base.class_names, plan,
            stable_hash("synth-gamma-" + std::to_string(gamma), cfg.seed));
        return merged_cache.emplace(gamma, merge(split.train, synth)).first->second;
    };

    CellTrainer trainer = [&](const StructureSpec& s, std::int64_t gamma,
                              std::uint64_t seed) -> CellResult {
        std::string tag =
            "g" + std::to_string(gamma) + "-" + s.name + (s.wd ? "-wd" : "-nowd");
        std::string cell_path = (fs::path(cfg.out_dir) / "cells" / (tag + ".json")).string();
        auto cached = detail::load_cached_json(cell_path, cfg.resume);
        if (cached) {
            CellResult r;
            r.acc = cached->at("acc").get<double>();
            r.seconds = cached->at("seconds").get<double>();
            r.failed = cached->at("failed").get<bool>();
            r.error = cached->at("error").get<std::string>();
            return r;
        }
        CellResult r;
        try {
            SplitPair merged_split;
            merged_split.train = merged_for(gamma);
            merged_split.test = split.test;  // test stays real-only, from the base split
            ClassifierModel model =
                build_classifier(s.name, cfg.resolution, base.classes(), cfg.channels, seed);
            OptimizerConfig ocfg;
            ocfg.kind = OptimizerKind::adam;
            ocfg.learning_rate = cfg.cnn_lr;
            ocfg.weight_decay = s.wd ? cfg.weight_decay : 0.0;
            ClassifierTrainResult tr = train_classifier(
                model, merged_split, ocfg, cfg.cnn_epochs_merged, cfg.cnn_batch, aug, seed,
                cfg.timing);
            r.acc = tr.test_accuracy;
            r.seconds = tr.seconds;
        } catch (const TrainingError& e) {
            r.failed = true;
            r.error = e.what();
        }
        detail::store_json(cell_path, {{"acc", r.acc},
                                       {"seconds", r.seconds},
                                       {"failed", r.failed},
                                       {"error", r.error}});
        return r;
    };

    gamma_search(ledger, structures, baselines, cfg.gamma_max, cfg.seed, trainer, embedder.id);

    // ---- stage: report -------------------------------------------------------
    detail::store_json((fs::path(cfg.out_dir) / "ledger.json").string(), ledger_to_json(ledger));
    emit_report(ledger, cfg.out_dir, cfg.emit_plots);
    return ledger;
}

}  // namespace ssce

#endif  // SSCE_ORCHESTRATOR_HPP
