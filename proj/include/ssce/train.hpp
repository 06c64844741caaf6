#ifndef SSCE_TRAIN_HPP
#define SSCE_TRAIN_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ssce/config.hpp"
#include "ssce/data.hpp"
#include "ssce/metrics.hpp"
#include "ssce/models.hpp"
#include "ssce/nn.hpp"

namespace ssce {

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

// Wall mode measures the monotone clock. Counted mode charges a fixed
// 0.01 s per training sample processed instead, so reruns with one seed
// produce bit-identical time columns (and therefore TEI values).
class TrainClock {
public:
    explicit TrainClock(TimingMode mode)
        : mode_(mode), start_(std::chrono::steady_clock::now()) {}

    void charge_samples(std::int64_t n) { units_ += static_cast<double>(n); }

    double seconds() const {
        if (mode_ == TimingMode::counted) return units_ * 0.01;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    TimingMode mode_;
    std::chrono::steady_clock::time_point start_;
    double units_ = 0;
};

// ---------------------------------------------------------------------------
// Classifier training
// ---------------------------------------------------------------------------

struct EpochStats {
    std::int64_t epoch = 0;
    double mean_loss = 0;
    double train_accuracy = 0;
    double test_accuracy = 0;
};

struct ClassifierTrainResult {
    double test_accuracy = 0;
    double seconds = 0;
    std::vector<EpochStats> trace;
    ChannelStats norm;  // training-split standardization used by the model
};

namespace detail {

inline Tensor standardize(const Tensor& batch01, const ChannelStats& st) {
    std::int64_t c = batch01.dim(1);
    std::vector<double> data = batch01.data();
    std::int64_t per = batch01.dim(2) * batch01.dim(3);
    std::int64_t n = batch01.dim(0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double m = st.mean[static_cast<std::size_t>(ch)];
            double s = st.stddev[static_cast<std::size_t>(ch)];
            double* p = data.data() + (i * c + ch) * per;
            for (std::int64_t j = 0; j < per; ++j) p[j] = (p[j] - m) / s;
        }
    return Tensor::from_data(batch01.shape(), std::move(data));
}

inline std::vector<std::int64_t> argmax_rows(const Tensor& t) {
    std::vector<std::int64_t> out(static_cast<std::size_t>(t.dim(0)));
    std::int64_t k = t.dim(1);
    for (std::int64_t i = 0; i < t.dim(0); ++i) {
        const double* row = t.data().data() + i * k;
        out[static_cast<std::size_t>(i)] =
            std::max_element(row, row + k) - row;
    }
    return out;
}

}  // namespace detail

// eval-mode accuracy over a dataset with the given standardization
inline double evaluate_classifier(const ClassifierModel& model, const LabeledDataset& ds,
                                  const ChannelStats& st, std::size_t batch = 32) {
    std::vector<std::int64_t> preds, labels;
    NoGradGuard ng;
    for (std::size_t i = 0; i < ds.size(); i += batch) {
        std::size_t b = std::min(batch, ds.size() - i);
        std::vector<std::size_t> idx(b);
        std::iota(idx.begin(), idx.end(), i);
        Tensor x = detail::standardize(items_to_tensor(ds, idx), st);
        Rng dummy(0);
        Tensor logits = model.logits(x, /*training=*/false, dummy);
        auto p = detail::argmax_rows(logits);
        preds.insert(preds.end(), p.begin(), p.end());
        for (std::size_t j = 0; j < b; ++j) labels.push_back(ds.items[i + j].label);
    }
    return accuracy(preds, labels);
}

// epoch loop with shuffled mini-batches, train-time augmentation, and a
// per-epoch train/test accuracy trace; aborts on non-finite loss
inline ClassifierTrainResult train_classifier(ClassifierModel& model, const SplitPair& split,
                                              const OptimizerConfig& ocfg, std::int64_t epochs,
                                              std::int64_t batch, const AugmentConfig& aug,
                                              std::uint64_t seed,
                                              TimingMode timing = TimingMode::wall) {
    if (epochs < 1) throw TrainingError("train_classifier: epochs must be >= 1");
    if (batch < 1) throw TrainingError("train_classifier: batch must be >= 1");
    split.train.validate();
    if (split.train.items.empty()) throw TrainingError("train_classifier: empty training split");

    ClassifierTrainResult res;
    res.norm = channel_stats(split.train);
    Optimizer opt(model.net.params(), ocfg);
    Rng shuffle_rng(stable_hash("cnn-shuffle", seed));
    Rng aug_rng(stable_hash("cnn-augment", seed));
    Rng drop_rng(stable_hash("cnn-dropout", seed));
    TrainClock clock(timing);

    std::size_t n = split.train.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        double loss_sum = 0;
        std::int64_t steps = 0;
        for (std::size_t off = 0; off < n; off += static_cast<std::size_t>(batch)) {
            std::size_t b = std::min(static_cast<std::size_t>(batch), n - off);
            const Image& probe = split.train.items[order[off]].image;
            std::vector<double> data;
            data.reserve(b * static_cast<std::size_t>(probe.channels * probe.height * probe.width));
            std::vector<std::int64_t> labels;
            for (std::size_t j = 0; j < b; ++j) {
                const DataItem& item = split.train.items[order[off + j]];
                Image img = augment_image(item.image, aug, aug_rng);
                data.insert(data.end(), img.pixels.begin(), img.pixels.end());
                labels.push_back(item.label);
            }
            Tensor x = detail::standardize(
                Tensor::from_data({static_cast<std::int64_t>(b), probe.channels, probe.height,
                                   probe.width},
                                  std::move(data)),
                res.norm);
            Tensor logits = model.logits(x, /*training=*/true, drop_rng);
            Tensor loss = cross_entropy(logits, labels);
            double lv = loss.data()[0];
            if (!std::isfinite(lv)) {
                std::ostringstream os;
                os << "train_classifier: loss diverged at epoch " << epoch + 1 << " step "
                   << steps + 1 << "; trace:";
                for (const auto& e : res.trace)
                    os << " [epoch " << e.epoch << " loss " << e.mean_loss << "]";
                throw TrainingError(os.str());
            }
            model.net.zero_grads();
            backward(loss);
            opt.step();
            clock.charge_samples(static_cast<std::int64_t>(b));
            loss_sum += lv;
            ++steps;
        }
        EpochStats es;
        es.epoch = epoch + 1;
        es.mean_loss = loss_sum / static_cast<double>(steps);
        es.train_accuracy = evaluate_classifier(model, split.train, res.norm);
        es.test_accuracy = evaluate_classifier(model, split.test, res.norm);
        res.trace.push_back(es);
    }
    res.seconds = clock.seconds();
    res.test_accuracy = res.trace.back().test_accuracy;
    return res;
}

// wraps a trained classifier (+ its standardization) as the FID/IS embedder
inline Embedder make_embedder(const ClassifierModel& model, const ChannelStats& st) {
    Embedder e;
    e.id = model.arch_id;
    e.embed_dim = 256;
    e.classes = static_cast<std::size_t>(model.classes);
    e.embed = [&model, st](const Tensor& x01) {
        return model.embed(detail::standardize(x01, st)).data();
    };
    e.probs = [&model, st](const Tensor& x01) {
        return model.predict_probs(detail::standardize(x01, st)).data();
    };
    return e;
}

// ---------------------------------------------------------------------------
// GAN training
// ---------------------------------------------------------------------------

struct GanTrainConfig {
    std::int64_t iterations = 4000;
    std::int64_t batch = 32;
    double learning_rate = 1e-4;
    std::int64_t eval_every = 200;
    std::vector<std::int64_t> snapshot_iters{0, 8, 16, 32, 64, 128, 192};
    std::int64_t n_critic = 5;  // wgan / wgan-gp
    double gp_lambda = 10.0;    // wgan-gp
    double weight_clip = 0.01;  // wgan
    std::string snapshot_dir;   // empty disables sample grids
    std::int64_t fid_samples = 128;
    TimingMode timing = TimingMode::wall;
};

struct GanEvalPoint {
    std::int64_t iteration = 0;
    double fid = 0;
    double is = 0;
};

struct GanStepLog {
    std::int64_t iteration = 0;
    double critic_loss = 0;
    double generator_loss = 0;
    double gradient_penalty = 0;  // wgan-gp only, else 0
};

struct GanTrainResult {
    std::vector<GanEvalPoint> quality_trace;
    std::vector<GanStepLog> loss_trace;  // sampled at eval_every multiples
    std::vector<std::string> snapshot_paths;
    double seconds = 0;
};

namespace detail {

// tiled sample grid written as PGM (first channel when multi-channel)
inline std::string write_sample_grid(const GanPair& gan, const Tensor& fixed_latents,
                                     const std::string& dir, std::int64_t iteration) {
    NoGradGuard ng;
    Tensor imgs = gan.generate(fixed_latents);
    std::int64_t n = imgs.dim(0), h = imgs.dim(2), w = imgs.dim(3);
    std::int64_t cols = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    std::int64_t rows = (n + cols - 1) / cols;
    Image grid;
    grid.channels = 1;
    grid.height = rows * h;
    grid.width = cols * w;
    grid.pixels.assign(static_cast<std::size_t>(grid.height * grid.width), 0.0);
    std::int64_t per = imgs.dim(1) * h * w;
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t r0 = (i / cols) * h, c0 = (i % cols) * w;
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                grid.at(0, r0 + y, c0 + x) = std::clamp(
                    (imgs.data()[static_cast<std::size_t>(i * per + y * w + x)] + 1.0) * 0.5, 0.0,
                    1.0);
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "samples-%06lld.pgm", static_cast<long long>(iteration));
    std::string path = (std::filesystem::path(dir) / buf).string();
    encode_pgm(path, grid);
    return path;
}

inline Tensor real_batch_pm1(const LabeledDataset& ds, std::int64_t batch, Rng& rng) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = rng.below(ds.size());
    Tensor x01 = items_to_tensor(ds, idx);
    return x01 * 2.0 - 1.0;
}

}  // namespace detail

// generic GAN loop covering the three variants; the subset's images are
// mapped to [-1,1] to match the generator's tanh range
inline GanTrainResult train_gan(GanPair& gan, const LabeledDataset& subset,
                                const GanTrainConfig& cfg, std::uint64_t seed,
                                const Embedder* embedder = nullptr,
                                const Tensor* real_eval_set = nullptr) {
    if (subset.items.empty()) throw TrainingError("train_gan: empty training subset");
    if (cfg.iterations < 1) throw TrainingError("train_gan: iterations must be >= 1");

    OptimizerConfig gen_cfg, critic_cfg;
    switch (gan.variant) {
        case GanVariant::dcgan:
            gen_cfg.kind = critic_cfg.kind = OptimizerKind::adam;
            gen_cfg.beta1 = critic_cfg.beta1 = 0.5;
            break;
        case GanVariant::wgan:
            gen_cfg.kind = critic_cfg.kind = OptimizerKind::rmsprop;
            break;
        case GanVariant::wgan_gp:
            gen_cfg.kind = critic_cfg.kind = OptimizerKind::adam;
            gen_cfg.beta1 = critic_cfg.beta1 = 0.5;
            break;
    }
    gen_cfg.learning_rate = critic_cfg.learning_rate = cfg.learning_rate;
    Optimizer gen_opt(gan.generator.params(), gen_cfg);
    Optimizer critic_opt(gan.critic.params(), critic_cfg);

    Rng data_rng(stable_hash("gan-data", seed));
    Rng latent_rng(stable_hash("gan-latent", seed));
    Rng interp_rng(stable_hash("gan-interp", seed));
    Rng grid_rng(stable_hash("gan-grid", seed));
    TrainClock clock(cfg.timing);

    Tensor fixed_latents = Tensor::randn({16, gan.latent_len}, grid_rng);
    GanTrainResult res;

    auto check_finite = [&](double v, const char* what, std::int64_t iter) {
        if (!std::isfinite(v))
            throw TrainingError(std::string("train_gan: non-finite ") + what + " at iteration " +
                                std::to_string(iter));
    };
    auto snapshot_due = [&](std::int64_t iter) {
        return !cfg.snapshot_dir.empty() &&
               (std::find(cfg.snapshot_iters.begin(), cfg.snapshot_iters.end(), iter) !=
                    cfg.snapshot_iters.end() ||
                iter == cfg.iterations);
    };
    auto maybe_eval = [&](std::int64_t iter) {
        if (!embedder || !real_eval_set) return;
        if (iter % cfg.eval_every != 0 && iter != cfg.iterations) return;
        auto synth = [&gan](std::size_t b, Rng& r) {
            Tensor z = Tensor::randn({static_cast<std::int64_t>(b), gan.latent_len}, r);
            NoGradGuard ng;
            return (gan.generate(z) + 1.0) * 0.5;
        };
        GanQuality q = evaluate_gan_quality(synth, static_cast<std::size_t>(cfg.fid_samples),
                                            *embedder, *real_eval_set,
                                            stable_hash("gan-eval", seed) + static_cast<std::uint64_t>(iter));
        res.quality_trace.push_back({iter, q.fid, q.is});
    };

    if (snapshot_due(0))
        res.snapshot_paths.push_back(
            detail::write_sample_grid(gan, fixed_latents, cfg.snapshot_dir, 0));

    for (std::int64_t iter = 1; iter <= cfg.iterations; ++iter) {
        // ---- critic / discriminator step -----------------------------------
        Tensor real = detail::real_batch_pm1(subset, cfg.batch, data_rng);
        Tensor z = Tensor::randn({cfg.batch, gan.latent_len}, latent_rng);
        Tensor fake = gan.generate(z, /*training=*/true).detach();

        Tensor critic_loss;
        double gp_value = 0;
        if (gan.variant == GanVariant::dcgan) {
            Tensor loss_real = binary_cross_entropy(gan.criticize(real), 1.0);
            Tensor loss_fake = binary_cross_entropy(gan.criticize(fake), 0.0);
            critic_loss = loss_real + loss_fake;
        } else {
            critic_loss = mean_all(gan.criticize(fake)) - mean_all(gan.criticize(real));
            if (gan.variant == GanVariant::wgan_gp) {
                // per-sample interpolates x_hat = eps*real + (1-eps)*fake
                std::vector<double> eps(static_cast<std::size_t>(cfg.batch));
                for (auto& e : eps) e = interp_rng.uniform();
                Tensor eps_t = Tensor::from_data({cfg.batch, 1, 1, 1}, std::move(eps));
                Tensor x_hat =
                    (real * eps_t + fake * (Tensor::scalar(1.0) - eps_t)).detach();
                x_hat.set_requires_grad(true);
                Tensor d_hat = mean_all(gan.criticize(x_hat)) * static_cast<double>(cfg.batch);
                std::vector<Tensor> gx = grad(d_hat, {x_hat}, /*create_graph=*/true);
                Tensor norms = l2_norm_per_sample(gx[0]);
                Tensor penalty = mean_all((norms - 1.0) * (norms - 1.0)) * cfg.gp_lambda;
                gp_value = penalty.data()[0];
                critic_loss = critic_loss + penalty;
            }
        }
        double cl = critic_loss.data()[0];
        check_finite(cl, "critic loss", iter);
        gan.critic.zero_grads();
        backward(critic_loss);
        critic_opt.step();
        if (gan.variant == GanVariant::wgan) clip_weights(gan.critic.params(), cfg.weight_clip);
        clock.charge_samples(cfg.batch);

        // ---- generator step -------------------------------------------------
        bool gen_turn = gan.variant == GanVariant::dcgan || iter % cfg.n_critic == 0;
        double gl = 0;
        if (gen_turn) {
            Tensor z2 = Tensor::randn({cfg.batch, gan.latent_len}, latent_rng);
            Tensor fake2 = gan.generate(z2, /*training=*/true);
            Tensor gen_loss;
            if (gan.variant == GanVariant::dcgan)
                gen_loss = binary_cross_entropy(gan.criticize(fake2), 1.0);  // non-saturating
            else
                gen_loss = neg(mean_all(gan.criticize(fake2)));
            gl = gen_loss.data()[0];
            check_finite(gl, "generator loss", iter);
            gan.generator.zero_grads();
            gan.critic.zero_grads();
            backward(gen_loss);
            gen_opt.step();
            clock.charge_samples(cfg.batch);
        }

        if (iter % cfg.eval_every == 0 || iter == cfg.iterations)
            res.loss_trace.push_back({iter, cl, gl, gp_value});
        maybe_eval(iter);
        if (snapshot_due(iter))
            res.snapshot_paths.push_back(
                detail::write_sample_grid(gan, fixed_latents, cfg.snapshot_dir, iter));
    }
    res.seconds = clock.seconds();
    return res;
}

}  // namespace ssce

#endif  // SSCE_TRAIN_HPP
