#ifndef SSCE_CONFIG_HPP
#define SSCE_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssce/rng.hpp"

namespace ssce {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TimingMode { wall, counted };

struct ExperimentConfig {
    // data
    std::string dataset_root;
    std::string out_dir = "out";
    std::int64_t resolution = 32;
    std::int64_t channels = 1;
    double split_ratio = 0.8;
    bool augment_hflip = true;
    double augment_rotate_deg = 10.0;

    // classifiers
    std::vector<std::string> classifier_presets{"small-4conv", "small-6conv"};
    std::vector<bool> wd_variants{true, false};  // on (0.001) and off
    double weight_decay = 0.001;
    double cnn_lr = 0.003;
    std::int64_t cnn_epochs_base = 30;
    std::int64_t cnn_epochs_merged = 60;
    std::int64_t cnn_batch = 32;

    // gan
    std::string gan_variant = "wgan-gp";
    double gan_lr = -1.0;  // negative -> per-variant default
    std::int64_t gan_iterations = 4000;
    std::int64_t gan_batch = 32;
    std::int64_t gan_eval_every = 200;
    std::vector<std::int64_t> gan_snapshot_iters{0, 8, 16, 32, 64, 128, 192};
    std::int64_t latent_len = 100;
    std::int64_t gan_base_width = 16;
    std::int64_t n_critic = 5;
    double gp_lambda = 10.0;
    double weight_clip = 0.01;
    std::string transfer_checkpoint;  // optional source for transfer_init

    // search / gating / reporting
    std::int64_t gamma_max = 8;
    double quality_gate = 5.0;  // FID <= gate * two-sample baseline; 0 disables
    std::int64_t fid_samples = 128;
    std::uint64_t seed = 1;
    TimingMode timing = TimingMode::wall;
    bool emit_plots = false;
    bool resume = true;

    double gan_learning_rate() const {
        if (gan_lr > 0) return gan_lr;
        if (gan_variant == "dcgan") return 2e-4;
        if (gan_variant == "wgan") return 5e-5;
        return 1e-4;  // wgan-gp
    }

    void validate() const {
        if (resolution < 16) throw ConfigError("resolution must be >= 16");
        if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
        if (split_ratio <= 0 || split_ratio >= 1) throw ConfigError("split_ratio must be in (0,1)");
        if (classifier_presets.empty()) throw ConfigError("classifier_presets must be non-empty");
        if (wd_variants.empty()) throw ConfigError("wd_variants must be non-empty");
        if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
        if (cnn_lr <= 0 || cnn_epochs_base < 1 || cnn_epochs_merged < 1 || cnn_batch < 1)
            throw ConfigError("cnn hyperparameters must be positive");
        if (gan_variant != "dcgan" && gan_variant != "wgan" && gan_variant != "wgan-gp")
            throw ConfigError("gan_variant must be one of dcgan|wgan|wgan-gp");
        if (gan_iterations < 1 || gan_batch < 1 || gan_eval_every < 1 || latent_len < 1 ||
            gan_base_width < 1 || n_critic < 1)
            throw ConfigError("gan hyperparameters must be positive");
        if (gp_lambda < 0 || weight_clip <= 0) throw ConfigError("bad gan regularization values");
        if (gamma_max < 1) throw ConfigError("gamma_max must be >= 1");
        if (quality_gate < 0) throw ConfigError("quality_gate must be non-negative");
        if (fid_samples < 4) throw ConfigError("fid_samples must be >= 4");
    }

    // canonical dump; config_hash() omits out_dir so the hash identifies the
    // experiment, not where its artifacts land
    std::string serialize(bool include_out_dir = true) const {
        std::ostringstream os;
        auto list = [](const auto& v) {
            std::ostringstream s;
            for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
            return s.str();
        };
        std::string wd;
        for (std::size_t i = 0; i < wd_variants.size(); ++i)
            wd += std::string(i ? "," : "") + (wd_variants[i] ? "on" : "off");
        os << "dataset_root = " << dataset_root << "\n";
        if (include_out_dir) os << "out_dir = " << out_dir << "\n";
        os << "resolution = " << resolution << "\n";
        os << "channels = " << channels << "\n";
        os << "split_ratio = " << split_ratio << "\n";
        os << "augment_hflip = " << (augment_hflip ? "true" : "false") << "\n";
        os << "augment_rotate_deg = " << augment_rotate_deg << "\n";
        os << "classifier_presets = " << list(classifier_presets) << "\n";
        os << "wd_variants = " << wd << "\n";
        os << "weight_decay = " << weight_decay << "\n";
        os << "cnn_lr = " << cnn_lr << "\n";
        os << "cnn_epochs_base = " << cnn_epochs_base << "\n";
        os << "cnn_epochs_merged = " << cnn_epochs_merged << "\n";
        os << "cnn_batch = " << cnn_batch << "\n";
        os << "gan_variant = " << gan_variant << "\n";
        os << "gan_lr = " << gan_learning_rate() << "\n";
        os << "gan_iterations = " << gan_iterations << "\n";
        os << "gan_batch = " << gan_batch << "\n";
        os << "gan_eval_every = " << gan_eval_every << "\n";
        os << "gan_snapshot_iters = " << list(gan_snapshot_iters) << "\n";
        os << "latent_len = " << latent_len << "\n";
        os << "gan_base_width = " << gan_base_width << "\n";
        os << "n_critic = " << n_critic << "\n";
        os << "gp_lambda = " << gp_lambda << "\n";
        os << "weight_clip = " << weight_clip << "\n";
        os << "transfer_checkpoint = " << transfer_checkpoint << "\n";
        os << "gamma_max = " << gamma_max << "\n";
        os << "quality_gate = " << quality_gate << "\n";
        os << "fid_samples = " << fid_samples << "\n";
        os << "seed = " << seed << "\n";
        os << "timing = " << (timing == TimingMode::wall ? "wall" : "counted") << "\n";
        os << "emit_plots = " << (emit_plots ? "true" : "false") << "\n";
        os << "resume = " << (resume ? "true" : "false") << "\n";
        return os.str();
    }

    std::uint64_t config_hash() const { return stable_hash(serialize(false), 0); }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        std::int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

}  // namespace detail

// flat `key = value` grammar, one pair per line, '#' comments, unknown keys
// rejected
inline ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"dataset_root", [](auto& c, auto&, auto& v) { c.dataset_root = v; }},
        {"out_dir", [](auto& c, auto&, auto& v) { c.out_dir = v; }},
        {"resolution", [](auto& c, auto& k, auto& v) { c.resolution = detail::parse_int(k, v); }},
        {"channels", [](auto& c, auto& k, auto& v) { c.channels = detail::parse_int(k, v); }},
        {"split_ratio", [](auto& c, auto& k, auto& v) { c.split_ratio = detail::parse_real(k, v); }},
        {"augment_hflip",
         [](auto& c, auto& k, auto& v) { c.augment_hflip = detail::parse_bool(k, v); }},
        {"augment_rotate_deg",
         [](auto& c, auto& k, auto& v) { c.augment_rotate_deg = detail::parse_real(k, v); }},
        {"classifier_presets",
         [](auto& c, auto&, auto& v) { c.classifier_presets = detail::split_list(v); }},
        {"wd_variants",
         [](auto& c, auto& k, auto& v) {
             c.wd_variants.clear();
             for (const auto& tok : detail::split_list(v))
                 c.wd_variants.push_back(detail::parse_bool(k, tok));
         }},
        {"weight_decay",
         [](auto& c, auto& k, auto& v) { c.weight_decay = detail::parse_real(k, v); }},
        {"cnn_lr", [](auto& c, auto& k, auto& v) { c.cnn_lr = detail::parse_real(k, v); }},
        {"cnn_epochs_base",
         [](auto& c, auto& k, auto& v) { c.cnn_epochs_base = detail::parse_int(k, v); }},
        {"cnn_epochs_merged",
         [](auto& c, auto& k, auto& v) { c.cnn_epochs_merged = detail::parse_int(k, v); }},
        {"cnn_batch", [](auto& c, auto& k, auto& v) { c.cnn_batch = detail::parse_int(k, v); }},
        {"gan_variant", [](auto& c, auto&, auto& v) { c.gan_variant = v; }},
        {"gan_lr", [](auto& c, auto& k, auto& v) { c.gan_lr = detail::parse_real(k, v); }},
        {"gan_iterations",
         [](auto& c, auto& k, auto& v) { c.gan_iterations = detail::parse_int(k, v); }},
        {"gan_batch", [](auto& c, auto& k, auto& v) { c.gan_batch = detail::parse_int(k, v); }},
        {"gan_eval_every",
         [](auto& c, auto& k, auto& v) { c.gan_eval_every = detail::parse_int(k, v); }},
        {"gan_snapshot_iters",
         [](auto& c, auto& k, auto& v) {
             c.gan_snapshot_iters.clear();
             for (const auto& tok : detail::split_list(v))
                 c.gan_snapshot_iters.push_back(detail::parse_int(k, tok));
         }},
        {"latent_len", [](auto& c, auto& k, auto& v) { c.latent_len = detail::parse_int(k, v); }},
        {"gan_base_width",
         [](auto& c, auto& k, auto& v) { c.gan_base_width = detail::parse_int(k, v); }},
        {"n_critic", [](auto& c, auto& k, auto& v) { c.n_critic = detail::parse_int(k, v); }},
        {"gp_lambda", [](auto& c, auto& k, auto& v) { c.gp_lambda = detail::parse_real(k, v); }},
        {"weight_clip",
         [](auto& c, auto& k, auto& v) { c.weight_clip = detail::parse_real(k, v); }},
        {"transfer_checkpoint", [](auto& c, auto&, auto& v) { c.transfer_checkpoint = v; }},
        {"gamma_max", [](auto& c, auto& k, auto& v) { c.gamma_max = detail::parse_int(k, v); }},
        {"quality_gate",
         [](auto& c, auto& k, auto& v) { c.quality_gate = detail::parse_real(k, v); }},
        {"fid_samples",
         [](auto& c, auto& k, auto& v) { c.fid_samples = detail::parse_int(k, v); }},
        {"seed",
         [](auto& c, auto& k, auto& v) {
             c.seed = static_cast<std::uint64_t>(detail::parse_int(k, v));
         }},
        {"timing",
         [](auto& c, auto& k, auto& v) {
             if (v == "wall")
                 c.timing = TimingMode::wall;
             else if (v == "counted")
                 c.timing = TimingMode::counted;
             else
                 throw ConfigError("key '" + k + "': expected wall|counted, got '" + v + "'");
         }},
        {"emit_plots", [](auto& c, auto& k, auto& v) { c.emit_plots = detail::parse_bool(k, v); }},
        {"resume", [](auto& c, auto& k, auto& v) { c.resume = detail::parse_bool(k, v); }},
    };

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end())
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_config(in);
}

}  // namespace ssce

#endif  // SSCE_CONFIG_HPP
