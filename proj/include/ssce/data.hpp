#ifndef SSCE_DATA_HPP
#define SSCE_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssce/image.hpp"
#include "ssce/rng.hpp"
#include "ssce/tensor.hpp"

namespace ssce {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Provenance { real, synthesized };

struct DataItem {
    Image image;
    std::int64_t label = 0;
    Provenance provenance = Provenance::real;
    std::string source_path;  // empty for synthesized items
};

struct LabeledDataset {
    std::vector<DataItem> items;
    std::vector<std::string> class_names;
    std::string source;

    std::size_t size() const { return items.size(); }
    std::int64_t classes() const { return static_cast<std::int64_t>(class_names.size()); }

    std::vector<std::int64_t> class_counts() const {
        std::vector<std::int64_t> counts(class_names.size(), 0);
        for (const auto& it : items) counts.at(static_cast<std::size_t>(it.label))++;
        return counts;
    }

    std::int64_t count_provenance(Provenance p) const {
        std::int64_t n = 0;
        for (const auto& it : items)
            if (it.provenance == p) ++n;
        return n;
    }

    void validate() const {
        if (class_names.size() < 2) throw DataError("dataset needs K >= 2 classes");
        if (items.empty()) return;
        const Image& first = items.front().image;
        for (const auto& it : items) {
            if (it.label < 0 || it.label >= classes())
                throw DataError("class index " + std::to_string(it.label) + " out of range");
            if (it.image.channels != first.channels || it.image.height != first.height ||
                it.image.width != first.width)
                throw DataError("dataset images do not share one shape");
        }
    }
};

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

// layout: <root>/<class_name>/*.{png,pgm,ppm}; classes ordered
// lexicographically by directory name
inline LabeledDataset ingest_directory(const std::string& root, std::int64_t resolution,
                                       std::int64_t channels, bool skip_undecodable = false,
                                       std::vector<std::string>* skipped = nullptr) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root);
    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.size() < 2)
        throw DataError("dataset root " + root + " must contain at least 2 class directories");

    LabeledDataset ds;
    ds.class_names = class_dirs;
    ds.source = root;
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[c])) {
            if (!e.is_regular_file()) continue;
            std::string ext = e.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(),
                           [](unsigned char ch) { return std::tolower(ch); });
            if (ext == ".png" || ext == ".pgm" || ext == ".ppm")
                files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        std::size_t loaded = 0;
        for (const auto& path : files) {
            DataItem item;
            try {
                item.image = bilinear_resize(convert_channels(decode_image(path), channels),
                                             resolution, resolution);
            } catch (const IoError& err) {
                if (skip_undecodable) {
                    if (skipped) skipped->push_back(path);
                    continue;
                }
                throw DataError(std::string("undecodable file: ") + err.what());
            }
            item.label = static_cast<std::int64_t>(c);
            item.provenance = Provenance::real;
            item.source_path = path;
            ds.items.push_back(std::move(item));
            ++loaded;
        }
        if (loaded == 0)
            throw DataError("class directory '" + class_dirs[c] + "' contains no usable images");
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

struct SplitPair {
    LabeledDataset train;
    LabeledDataset test;
    std::uint64_t seed = 0;
    double ratio = 0.8;
};

// per-class seeded shuffle; floor(ratio*n_c) per class with largest-remainder
// top-up so the overall train count equals round-down of ratio*N plus the
// apportioned remainder
inline SplitPair stratified_split(const LabeledDataset& ds, double ratio, std::uint64_t seed) {
    if (ratio <= 0.0 || ratio >= 1.0) throw DataError("split ratio must lie in (0,1)");
    ds.validate();
    std::size_t k = ds.class_names.size();
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < ds.items.size(); ++i)
        by_class[static_cast<std::size_t>(ds.items[i].label)].push_back(i);
    for (std::size_t c = 0; c < k; ++c)
        if (by_class[c].size() < 2)
            throw DataError("class '" + ds.class_names[c] + "' has fewer than 2 items");

    // per-class floor plus largest fractional remainders until the overall
    // train size hits floor(ratio * N + 0.5 rounding-free target)
    std::vector<std::size_t> take(k);
    std::vector<double> frac(k);
    std::size_t total_take = 0;
    for (std::size_t c = 0; c < k; ++c) {
        double exact = ratio * static_cast<double>(by_class[c].size());
        take[c] = static_cast<std::size_t>(std::floor(exact));
        frac[c] = exact - static_cast<double>(take[c]);
        total_take += take[c];
    }
    std::size_t target = static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(ds.items.size()) + 1e-9));
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; i < k && total_take < target; ++i) {
        std::size_t c = order[i];
        if (take[c] + 1 < by_class[c].size()) {
            ++take[c];
            ++total_take;
        }
    }
    for (std::size_t c = 0; c < k; ++c)
        if (take[c] == 0 || take[c] == by_class[c].size())
            throw DataError("class '" + ds.class_names[c] +
                            "' too small for ratio " + std::to_string(ratio));

    SplitPair sp;
    sp.seed = seed;
    sp.ratio = ratio;
    sp.train.class_names = sp.test.class_names = ds.class_names;
    sp.train.source = ds.source + " [train]";
    sp.test.source = ds.source + " [test]";
    for (std::size_t c = 0; c < k; ++c) {
        auto idx = by_class[c];
        Rng rng(stable_hash("split-class-" + std::to_string(c), seed));
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < take[c] ? sp.train : sp.test).items.push_back(ds.items[idx[i]]);
    }
    return sp;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    bool hflip = true;
    double rotate_deg = 10.0;  // uniform in +/- this range; 0 disables
};

inline Image hflip_image(const Image& img) {
    Image out = img;
    for (std::int64_t c = 0; c < img.channels; ++c)
        for (std::int64_t y = 0; y < img.height; ++y)
            for (std::int64_t x = 0; x < img.width; ++x)
                out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    return out;
}

// rotation about the image center, bilinear sampling, edge-replicate fill
inline Image rotate_image(const Image& img, double degrees) {
    if (degrees == 0.0) return img;
    double rad = degrees * M_PI / 180.0;
    double cs = std::cos(rad), sn = std::sin(rad);
    double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
    double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
    Image out = img;
    for (std::int64_t y = 0; y < img.height; ++y)
        for (std::int64_t x = 0; x < img.width; ++x) {
            // inverse map output -> input
            double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            double sy = cs * dy + sn * dx + cy;
            double sx = -sn * dy + cs * dx + cx;
            sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
            sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
            std::int64_t y0 = static_cast<std::int64_t>(sy);
            std::int64_t x0 = static_cast<std::int64_t>(sx);
            std::int64_t y1 = std::min(y0 + 1, img.height - 1);
            std::int64_t x1 = std::min(x0 + 1, img.width - 1);
            double wy = sy - static_cast<double>(y0), wx = sx - static_cast<double>(x0);
            for (std::int64_t c = 0; c < img.channels; ++c) {
                double top = (1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
                double bot = (1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
                out.at(c, y, x) = (1 - wy) * top + wy * bot;
            }
        }
    return out;
}

// per-image independent flip (p = 0.5) and rotation uniform in +/- range
inline Image augment_image(const Image& img, const AugmentConfig& cfg, Rng& rng) {
    Image out = img;
    if (cfg.hflip && rng.bernoulli(0.5)) out = hflip_image(out);
    if (cfg.rotate_deg != 0.0) out = rotate_image(out, rng.uniform(-cfg.rotate_deg, cfg.rotate_deg));
    return out;
}

// ---------------------------------------------------------------------------
// Extension plan and pseudo-labeled synthesis
// ---------------------------------------------------------------------------

struct ExtensionPlan {
    std::int64_t gamma = 1;
    std::vector<std::int64_t> counts;  // per class

    std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }
};

// largest-remainder apportionment of gamma * N_base by base class proportions
inline ExtensionPlan make_extension_plan(const std::vector<std::int64_t>& base_counts,
                                         std::int64_t gamma) {
    if (gamma < 1) throw DataError("extension factor must be a positive integer");
    std::int64_t n_base = std::accumulate(base_counts.begin(), base_counts.end(), std::int64_t{0});
    if (n_base <= 0) throw DataError("extension plan needs a non-empty base dataset");
    std::int64_t total = gamma * n_base;
    ExtensionPlan plan;
    plan.gamma = gamma;
    plan.counts.resize(base_counts.size());
    std::vector<double> frac(base_counts.size());
    std::int64_t assigned = 0;
    for (std::size_t c = 0; c < base_counts.size(); ++c) {
        double exact = static_cast<double>(total) * static_cast<double>(base_counts[c]) /
                       static_cast<double>(n_base);
        plan.counts[c] = static_cast<std::int64_t>(std::floor(exact + 1e-9));
        frac[c] = exact - static_cast<double>(plan.counts[c]);
        assigned += plan.counts[c];
    }
    std::vector<std::size_t> order(base_counts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; assigned < total; ++i, assigned++) plan.counts[order[i]]++;
    return plan;
}

// one generator per class: batch size + rng -> images in [-1,1], NCHW
using ClassGenerator = std::function<Tensor(std::size_t, Rng&)>;

inline LabeledDataset synthesize_pseudo_labeled(const std::vector<ClassGenerator>& generators,
                                                const std::vector<std::string>& class_names,
                                                const ExtensionPlan& plan, std::uint64_t seed,
                                                std::size_t batch = 32) {
    if (generators.size() != class_names.size() || plan.counts.size() != class_names.size())
        throw DataError("synthesize: one generator and one plan count per class required");
    for (std::size_t c = 0; c < generators.size(); ++c)
        if (!generators[c])
            throw DataError("synthesize: missing generator for class '" + class_names[c] + "'");
    LabeledDataset ds;
    ds.class_names = class_names;
    ds.source = "synthesized (gamma=" + std::to_string(plan.gamma) + ")";
    NoGradGuard ng;
    for (std::size_t c = 0; c < generators.size(); ++c) {
        Rng rng(stable_hash("synthesize-class-" + std::to_string(c), seed));
        std::int64_t remaining = plan.counts[c];
        while (remaining > 0) {
            std::size_t b = static_cast<std::size_t>(
                std::min<std::int64_t>(remaining, static_cast<std::int64_t>(batch)));
            Tensor imgs = generators[c](b, rng);
            if (imgs.ndim() != 4 || imgs.dim(0) != static_cast<std::int64_t>(b))
                throw DataError("synthesize: generator returned a malformed batch");
            std::int64_t ch = imgs.dim(1), h = imgs.dim(2), w = imgs.dim(3);
            std::int64_t stride = ch * h * w;
            for (std::size_t i = 0; i < b; ++i) {
                DataItem item;
                item.image.channels = ch;
                item.image.height = h;
                item.image.width = w;
                item.image.pixels.resize(static_cast<std::size_t>(stride));
                for (std::int64_t p = 0; p < stride; ++p)
                    item.image.pixels[static_cast<std::size_t>(p)] = std::clamp(
                        (imgs.data()[static_cast<std::size_t>(i * stride + p)] + 1.0) * 0.5, 0.0,
                        1.0);
                item.label = static_cast<std::int64_t>(c);
                item.provenance = Provenance::synthesized;
                ds.items.push_back(std::move(item));
            }
            remaining -= static_cast<std::int64_t>(b);
        }
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Merge
// ---------------------------------------------------------------------------

inline LabeledDataset merge(const LabeledDataset& base, const LabeledDataset& extended) {
    if (base.class_names != extended.class_names)
        throw DataError("merge: class name mismatch");
    if (!base.items.empty() && !extended.items.empty()) {
        const Image& a = base.items.front().image;
        const Image& b = extended.items.front().image;
        if (a.channels != b.channels || a.height != b.height || a.width != b.width)
            throw DataError("merge: image shape mismatch");
    }
    LabeledDataset out = base;
    out.source = base.source + " + " + extended.source;
    out.items.insert(out.items.end(), extended.items.begin(), extended.items.end());
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Tensor conversion and normalization
// ---------------------------------------------------------------------------

// NCHW batch from the given item indices, pixels in [0,1]
inline Tensor items_to_tensor(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw DataError("items_to_tensor: empty index list");
    const Image& first = ds.items.at(idx[0]).image;
    std::int64_t stride = first.channels * first.height * first.width;
    std::vector<double> data;
    data.reserve(idx.size() * static_cast<std::size_t>(stride));
    for (std::size_t i : idx) {
        const auto& px = ds.items.at(i).image.pixels;
        data.insert(data.end(), px.begin(), px.end());
    }
    return Tensor::from_data({static_cast<std::int64_t>(idx.size()), first.channels, first.height,
                              first.width},
                             std::move(data));
}

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

// per-channel mean/std over a dataset (for classifier-side standardization)
inline ChannelStats channel_stats(const LabeledDataset& ds) {
    if (ds.items.empty()) throw DataError("channel_stats: empty dataset");
    std::int64_t c = ds.items.front().image.channels;
    std::int64_t per = ds.items.front().image.height * ds.items.front().image.width;
    ChannelStats st;
    st.mean.assign(static_cast<std::size_t>(c), 0.0);
    st.stddev.assign(static_cast<std::size_t>(c), 0.0);
    double n = static_cast<double>(ds.items.size() * static_cast<std::size_t>(per));
    for (const auto& it : ds.items)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t p = 0; p < per; ++p)
                st.mean[static_cast<std::size_t>(ch)] +=
                    it.image.pixels[static_cast<std::size_t>(ch * per + p)];
    for (auto& m : st.mean) m /= n;
    for (const auto& it : ds.items)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t p = 0; p < per; ++p) {
                double d = it.image.pixels[static_cast<std::size_t>(ch * per + p)] -
                           st.mean[static_cast<std::size_t>(ch)];
                st.stddev[static_cast<std::size_t>(ch)] += d * d;
            }
    for (auto& s : st.stddev) s = std::sqrt(std::max(s / n, 1e-12));
    return st;
}

// ---------------------------------------------------------------------------
// Procedural toy dataset (3 shape classes)
// ---------------------------------------------------------------------------

// classes (lexicographic): "circle", "square", "stripes" — each image is one
// shape with jittered position/size/intensity on a dark noisy background
inline Image make_toy_image(std::int64_t cls, std::int64_t resolution, Rng& rng) {
    Image img;
    img.channels = 1;
    img.height = img.width = resolution;
    img.pixels.assign(static_cast<std::size_t>(resolution * resolution), 0.0);
    for (auto& p : img.pixels) p = std::clamp(0.1 + 0.03 * rng.normal(), 0.0, 1.0);
    double fg = 0.75 + 0.2 * rng.uniform();
    double r = static_cast<double>(resolution);
    double cy = r * (0.4 + 0.2 * rng.uniform());
    double cx = r * (0.4 + 0.2 * rng.uniform());
    double sz = r * (0.2 + 0.1 * rng.uniform());
    for (std::int64_t y = 0; y < resolution; ++y)
        for (std::int64_t x = 0; x < resolution; ++x) {
            double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            bool on = false;
            if (cls == 0) {
                on = dy * dy + dx * dx <= sz * sz;
            } else if (cls == 1) {
                on = std::abs(dy) <= sz && std::abs(dx) <= sz;
            } else {
                std::int64_t period = std::max<std::int64_t>(4, resolution / 8);
                on = (y / (period / 2)) % 2 == 0;
            }
            if (on) img.at(0, y, x) = std::clamp(fg + 0.03 * rng.normal(), 0.0, 1.0);
        }
    return img;
}

inline LabeledDataset make_toy_dataset(std::int64_t n_total, std::int64_t resolution,
                                       std::uint64_t seed) {
    if (n_total < 6 || n_total % 3 != 0)
        throw DataError("toy dataset size must be a positive multiple of 3 (>= 6)");
    LabeledDataset ds;
    ds.class_names = {"circle", "square", "stripes"};
    ds.source = "procedural toy (n=" + std::to_string(n_total) + ")";
    for (std::int64_t c = 0; c < 3; ++c) {
        Rng rng(stable_hash("toy-class-" + std::to_string(c), seed));
        for (std::int64_t i = 0; i < n_total / 3; ++i) {
            DataItem item;
            item.image = make_toy_image(c, resolution, rng);
            item.label = c;
            item.provenance = Provenance::real;
            ds.items.push_back(std::move(item));
        }
    }
    ds.validate();
    return ds;
}

// writes the toy dataset as PNGs in the ingest layout
inline void write_toy_dataset(const std::string& root, std::int64_t n_total,
                              std::int64_t resolution, std::uint64_t seed) {
    namespace fs = std::filesystem;
    LabeledDataset ds = make_toy_dataset(n_total, resolution, seed);
    std::vector<std::int64_t> counter(3, 0);
    for (const auto& name : ds.class_names) fs::create_directories(fs::path(root) / name);
    for (const auto& it : ds.items) {
        auto c = static_cast<std::size_t>(it.label);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%04lld.png",
                      static_cast<long long>(counter[c]++));
        encode_png((fs::path(root) / ds.class_names[c] / buf).string(), it.image);
    }
}

}  // namespace ssce

#endif  // SSCE_DATA_HPP
