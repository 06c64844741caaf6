#ifndef SSCE_METRICS_HPP
#define SSCE_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssce/rng.hpp"
#include "ssce/tensor.hpp"

namespace ssce {

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Dense symmetric eigensolver (cyclic Jacobi)
// ---------------------------------------------------------------------------

namespace detail {

inline double frobenius(const std::vector<double>& a) {
    double s = 0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

inline double off_diagonal_norm(const std::vector<double>& a, std::size_t d) {
    double s = 0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (i != j) s += a[i * d + j] * a[i * d + j];
    return std::sqrt(s);
}

}  // namespace detail

// eigenvalues (and optionally eigenvectors, column-major in `vecs`) of a
// symmetric matrix; sweeps until the off-diagonal norm drops below
// 1e-12 * ||A||_F, capped at 100 sweeps
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t d,
                                              std::vector<double>* vecs = nullptr) {
    if (a.size() != d * d) throw MetricError("jacobi: matrix size mismatch");
    if (vecs) {
        vecs->assign(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i) (*vecs)[i * d + i] = 1.0;
    }
    const double norm = detail::frobenius(a);
    const double tol = 1e-12 * (norm > 0 ? norm : 1.0);
    for (int sweep = 0; sweep < 100; ++sweep) {
        if (detail::off_diagonal_norm(a, d) < tol) {
            std::vector<double> eig(d);
            for (std::size_t i = 0; i < d; ++i) eig[i] = a[i * d + i];
            return eig;
        }
        for (std::size_t p = 0; p + 1 < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) {
                double apq = a[p * d + q];
                if (std::abs(apq) < 1e-300) continue;
                double app = a[p * d + p], aqq = a[q * d + q];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    double akp = a[k * d + p], akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    double apk = a[p * d + k], aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                if (vecs)
                    for (std::size_t k = 0; k < d; ++k) {
                        double vkp = (*vecs)[k * d + p], vkq = (*vecs)[k * d + q];
                        (*vecs)[k * d + p] = c * vkp - s * vkq;
                        (*vecs)[k * d + q] = s * vkp + c * vkq;
                    }
            }
    }
    if (detail::off_diagonal_norm(a, d) >= tol)
        throw MetricError("jacobi: no convergence after 100 sweeps");
    std::vector<double> eig(d);
    for (std::size_t i = 0; i < d; ++i) eig[i] = a[i * d + i];
    return eig;
}

namespace detail {

// V f(Lambda) V^T for a symmetric matrix
inline std::vector<double> sym_apply(const std::vector<double>& a, std::size_t d,
                                     const std::function<double(double)>& f) {
    std::vector<double> vecs;
    std::vector<double> eig = jacobi_eigenvalues(a, d, &vecs);
    std::vector<double> out(d * d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        double fk = f(eig[k]);
        if (fk == 0.0) continue;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                out[i * d + j] += fk * vecs[i * d + k] * vecs[j * d + k];
    }
    return out;
}

inline std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b,
                                   std::size_t d) {
    std::vector<double> out(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            double aik = a[i * d + k];
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) out[i * d + j] += aik * b[k * d + j];
        }
    return out;
}

inline void check_sym_psd(const std::vector<double>& c, std::size_t d, const char* who) {
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j)
            if (std::abs(c[i * d + j] - c[j * d + i]) > 1e-9)
                throw MetricError(std::string(who) + ": matrix not symmetric");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Feature statistics and Frechet distance
// ---------------------------------------------------------------------------

struct FeatureStatistics {
    std::vector<double> mean;  // length d
    std::vector<double> cov;   // d*d, row-major, symmetric
    std::size_t d = 0;
    std::size_t n = 0;
};

// column mean and unbiased covariance (two-pass)
inline FeatureStatistics feature_stats(const std::vector<double>& features, std::size_t n,
                                       std::size_t d) {
    if (n < 2) throw MetricError("feature_stats: need at least 2 samples, got " + std::to_string(n));
    if (features.size() != n * d) throw MetricError("feature_stats: size mismatch");
    FeatureStatistics st;
    st.d = d;
    st.n = n;
    st.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) st.mean[j] += features[i * d + j];
    for (auto& m : st.mean) m /= static_cast<double>(n);
    st.cov.assign(d * d, 0.0);
    std::vector<double> centered(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) centered[j] = features[i * d + j] - st.mean[j];
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = j; k < d; ++k) st.cov[j * d + k] += centered[j] * centered[k];
    }
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = j; k < d; ++k) {
            st.cov[j * d + k] /= static_cast<double>(n - 1);
            st.cov[k * d + j] = st.cov[j * d + k];
        }
    return st;
}

// Tr((Ca Cb)^{1/2}) via the symmetric reformulation sqrt(Ca)^T Cb sqrt(Ca);
// if either matrix dips below -1e-9 in eigenvalue after symmetrization, a
// 1e-10 ridge is added before square-rooting
inline double trace_sqrt_product(const std::vector<double>& ca, const std::vector<double>& cb,
                                 std::size_t d) {
    detail::check_sym_psd(ca, d, "trace_sqrt_product(Ca)");
    detail::check_sym_psd(cb, d, "trace_sqrt_product(Cb)");
    auto ridge_if_needed = [&](std::vector<double> c) {
        std::vector<double> eig = jacobi_eigenvalues(c, d);
        double mn = *std::min_element(eig.begin(), eig.end());
        if (mn < -1e-9)
            for (std::size_t i = 0; i < d; ++i) c[i * d + i] += 1e-10;
        return c;
    };
    std::vector<double> a = ridge_if_needed(ca);
    std::vector<double> b = ridge_if_needed(cb);
    std::vector<double> sa = detail::sym_apply(a, d, [](double x) {
        return x > 0 ? std::sqrt(x) : 0.0;
    });
    std::vector<double> inner = detail::mat_mul(detail::mat_mul(sa, b, d), sa, d);
    // symmetrize against rounding
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) {
            double v = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = inner[j * d + i] = v;
        }
    std::vector<double> eig = jacobi_eigenvalues(inner, d);
    double tr = 0;
    for (double v : eig) tr += v > 0 ? std::sqrt(v) : 0.0;
    return tr;
}

// ||m_a - m_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^{1/2}); clamped at zero when the
// rounding error leaves it within -1e-6
inline double frechet_distance(const FeatureStatistics& a, const FeatureStatistics& b) {
    if (a.d != b.d)
        throw MetricError("frechet_distance: dimension mismatch " + std::to_string(a.d) + " vs " +
                          std::to_string(b.d));
    std::size_t d = a.d;
    double mean_term = 0;
    for (std::size_t i = 0; i < d; ++i) {
        double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }
    double tr_a = 0, tr_b = 0;
    for (std::size_t i = 0; i < d; ++i) {
        tr_a += a.cov[i * d + i];
        tr_b += b.cov[i * d + i];
    }
    double fid = mean_term + tr_a + tr_b - 2.0 * trace_sqrt_product(a.cov, b.cov, d);
    if (fid < 0) {
        if (fid < -1e-6) throw MetricError("frechet_distance: negative beyond tolerance");
        fid = 0.0;
    }
    return fid;
}

// Tr(sqrt(Ca Cb)) — the square-root contribution in the Frechet formula
inline double psd_sqrt_of_product(const std::vector<double>& ca, const std::vector<double>& cb,
                                  std::size_t d) {
    return trace_sqrt_product(ca, cb, d);
}

// ---------------------------------------------------------------------------
// Inception score
// ---------------------------------------------------------------------------

// rows: per-image class distributions, flattened n x k
inline double inception_score(const std::vector<double>& probs, std::size_t n, std::size_t k) {
    if (n < 1) throw MetricError("inception_score: empty probability matrix");
    if (probs.size() != n * k) throw MetricError("inception_score: size mismatch");
    std::vector<double> marginal(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < k; ++j) {
            double p = probs[i * k + j];
            if (p < 0) throw MetricError("inception_score: negative probability");
            row += p;
            marginal[j] += p;
        }
        if (std::abs(row - 1.0) > 1e-9)
            throw MetricError("inception_score: row " + std::to_string(i) + " sums to " +
                              std::to_string(row));
    }
    for (auto& m : marginal) m /= static_cast<double>(n);
    double mean_kl = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double kl = 0;
        for (std::size_t j = 0; j < k; ++j) {
            double p = std::max(probs[i * k + j], 1e-12);
            double q = std::max(marginal[j], 1e-12);
            kl += probs[i * k + j] > 0 ? probs[i * k + j] * std::log(p / q) : 0.0;
        }
        mean_kl += kl;
    }
    mean_kl /= static_cast<double>(n);
    return std::exp(mean_kl);
}

// ---------------------------------------------------------------------------
// Accuracy and the training efficiency index
// ---------------------------------------------------------------------------

inline double accuracy(const std::vector<std::int64_t>& predictions,
                       const std::vector<std::int64_t>& labels) {
    if (predictions.size() != labels.size() || predictions.empty())
        throw MetricError("accuracy: length mismatch or empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

struct TEIInputs {
    double acc = 0;    // percentage points
    double acc_b = 0;  // baseline accuracy, percentage points
    double t = 0;      // seconds
    double t_b = 0;    // baseline seconds
};

// (acc - acc_b) / ln(t - t_b); accuracies in percentage points, time in
// seconds. The metric is undefined when the excess time is within one second.
inline double tei(const TEIInputs& in) {
    if (in.acc < 0 || in.acc > 100 || in.acc_b < 0 || in.acc_b > 100)
        throw MetricError("tei: accuracies must be percentages in [0,100]");
    double dt = in.t - in.t_b;
    if (dt <= 1.0)
        throw MetricError("tei: t - t_b must exceed 1 second, got " + std::to_string(dt));
    return (in.acc - in.acc_b) / std::log(dt);
}

// ---------------------------------------------------------------------------
// GAN quality evaluation
// ---------------------------------------------------------------------------

struct GanQuality {
    double fid = 0;
    double is = 0;
    std::size_t n_synth = 0;
    std::string embedder_id;
};

// embeds both sets with a trained in-repo classifier (256-wide penultimate
// output) and scores the synthetic set's softmax rows
struct Embedder {
    std::string id;
    std::size_t embed_dim = 0;
    std::size_t classes = 0;
    // batch of images in [0,1], NCHW -> [B, embed_dim] features
    std::function<std::vector<double>(const Tensor&)> embed;
    // batch of images in [0,1], NCHW -> [B, classes] probabilities
    std::function<std::vector<double>(const Tensor&)> probs;
};

inline GanQuality evaluate_gan_quality(
    const std::function<Tensor(std::size_t, Rng&)>& synthesize_batch01, std::size_t n_synth,
    const Embedder& embedder, const Tensor& real_images01, std::uint64_t seed,
    std::size_t batch = 32) {
    if (n_synth < 2) throw MetricError("evaluate_gan_quality: need n_synth >= 2");
    Rng rng(stable_hash("gan-quality", seed));

    std::vector<double> synth_feats;
    std::vector<double> synth_probs;
    std::size_t done = 0;
    while (done < n_synth) {
        std::size_t b = std::min(batch, n_synth - done);
        Tensor imgs = synthesize_batch01(b, rng);
        auto f = embedder.embed(imgs);
        auto p = embedder.probs(imgs);
        synth_feats.insert(synth_feats.end(), f.begin(), f.end());
        synth_probs.insert(synth_probs.end(), p.begin(), p.end());
        done += b;
    }

    std::vector<double> real_feats;
    std::size_t n_real = static_cast<std::size_t>(real_images01.dim(0));
    for (std::size_t i = 0; i < n_real; i += batch) {
        std::size_t b = std::min(batch, n_real - i);
        Shape s = real_images01.shape();
        std::int64_t stride = numel(Shape(s.begin() + 1, s.end()));
        std::vector<double> chunk(real_images01.data().begin() + i * stride,
                                  real_images01.data().begin() + (i + b) * stride);
        Shape bs = s;
        bs[0] = static_cast<std::int64_t>(b);
        auto f = embedder.embed(Tensor::from_data(bs, std::move(chunk)));
        real_feats.insert(real_feats.end(), f.begin(), f.end());
    }

    GanQuality q;
    q.n_synth = n_synth;
    q.embedder_id = embedder.id;
    FeatureStatistics fs = feature_stats(synth_feats, n_synth, embedder.embed_dim);
    FeatureStatistics fr = feature_stats(real_feats, n_real, embedder.embed_dim);
    q.fid = frechet_distance(fs, fr);
    q.is = inception_score(synth_probs, n_synth, embedder.classes);
    return q;
}

// FID between two disjoint halves of the real set: the sampling-noise floor
// used for generator quality gating
inline double two_sample_baseline_fid(const std::vector<double>& real_feats, std::size_t n,
                                      std::size_t d, std::uint64_t seed) {
    if (n < 4) throw MetricError("two_sample_baseline_fid: need at least 4 samples");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(stable_hash("two-sample", seed));
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    std::size_t half = n / 2;
    std::vector<double> a, b;
    for (std::size_t i = 0; i < half; ++i)
        a.insert(a.end(), real_feats.begin() + idx[i] * d, real_feats.begin() + (idx[i] + 1) * d);
    for (std::size_t i = half; i < 2 * half; ++i)
        b.insert(b.end(), real_feats.begin() + idx[i] * d, real_feats.begin() + (idx[i] + 1) * d);
    return frechet_distance(feature_stats(a, half, d), feature_stats(b, half, d));
}

}  // namespace ssce

#endif  // SSCE_METRICS_HPP
