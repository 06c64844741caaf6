#ifndef SSCE_MODELS_HPP
#define SSCE_MODELS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ssce/nn.hpp"
#include "ssce/tensor.hpp"

namespace ssce {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Classifier: small conv backbone + fixed custom head
// (linear->512, ReLU, dropout 0.5, linear->256, ReLU, dropout 0.5, linear->K)
// ---------------------------------------------------------------------------

struct ClassifierModel {
    Sequential net;
    std::string arch_id;
    std::int64_t classes = 0;
    std::int64_t resolution = 0;
    std::int64_t channels = 1;
    std::size_t embed_tap = 0;  // layer index of the 256-wide embedding output

    Tensor logits(const Tensor& x, bool training, Rng& rng) const {
        return net.forward(x, training, rng);
    }
    // penultimate 256-wide activation, evaluation mode; FID embedder contract
    Tensor embed(const Tensor& x) const {
        Rng dummy(0);
        return net.forward_with_tap(x, embed_tap, /*training=*/false, dummy).second;
    }
    // softmax class probabilities in evaluation mode
    Tensor predict_probs(const Tensor& x) const {
        Rng dummy(0);
        return softmax(net.forward(x, /*training=*/false, dummy));
    }
};

namespace detail {

inline void append_conv_block(std::vector<LayerSpec>& specs, std::int64_t in_ch,
                              std::int64_t out_ch, std::int64_t stride) {
    specs.push_back(ConvSpec{in_ch, out_ch, 3, stride, 1});
    specs.push_back(NormSpec{NormKind::batch, out_ch});
    specs.push_back(ActivationSpec{ActKind::relu});
}

}  // namespace detail

inline ClassifierModel build_classifier(const std::string& preset, std::int64_t resolution,
                                        std::int64_t k, std::int64_t channels = 1,
                                        std::uint64_t seed = 0) {
    if (k < 2) throw ModelError("classifier: class count must be >= 2, got " + std::to_string(k));
    if (resolution != 32 && resolution != 64)
        throw ModelError("classifier: preset resolutions are 32 and 64, got " +
                         std::to_string(resolution));

    std::vector<LayerSpec> specs;
    std::int64_t ch = channels;
    if (preset == "small-4conv") {
        // four stride-2 blocks with channel doubling: res -> res/16
        std::int64_t widths[] = {8, 16, 32, 64};
        for (std::int64_t w : widths) {
            detail::append_conv_block(specs, ch, w, 2);
            ch = w;
        }
    } else if (preset == "small-6conv") {
        std::int64_t widths[] = {8, 8, 16, 16, 32, 64};
        std::int64_t strides[] = {2, 1, 2, 1, 2, 2};
        for (int i = 0; i < 6; ++i) {
            detail::append_conv_block(specs, ch, widths[i], strides[i]);
            ch = widths[i];
        }
    } else {
        throw ModelError("unknown classifier preset: " + preset);
    }
    specs.push_back(FlattenSpec{});
    std::int64_t spatial = resolution / 16;
    std::int64_t feat = ch * spatial * spatial;
    specs.push_back(LinearSpec{feat, 512});
    specs.push_back(ActivationSpec{ActKind::relu});
    specs.push_back(DropoutSpec{0.5});
    specs.push_back(LinearSpec{512, 256});
    specs.push_back(ActivationSpec{ActKind::relu});
    specs.push_back(DropoutSpec{0.5});
    specs.push_back(LinearSpec{256, k});

    ClassifierModel m;
    m.net = build_layers(specs, seed, "clf.");
    m.net.validate({1, channels, resolution, resolution});
    m.arch_id = preset + "/r" + std::to_string(resolution) + "/c" + std::to_string(channels) +
                "/k" + std::to_string(k);
    m.classes = k;
    m.resolution = resolution;
    m.channels = channels;
    // embedding = ReLU after the 512->256 linear (layer order: ... linear, relu, dropout, linear)
    m.embed_tap = m.net.layer_count() - 3;
    return m;
}

// ---------------------------------------------------------------------------
// GAN builders
// ---------------------------------------------------------------------------

enum class GanVariant { dcgan, wgan, wgan_gp };

inline const char* gan_variant_name(GanVariant v) {
    switch (v) {
        case GanVariant::dcgan: return "dcgan";
        case GanVariant::wgan: return "wgan";
        case GanVariant::wgan_gp: return "wgan-gp";
    }
    return "?";
}

inline GanVariant gan_variant_from_name(const std::string& s) {
    if (s == "dcgan") return GanVariant::dcgan;
    if (s == "wgan") return GanVariant::wgan;
    if (s == "wgan-gp" || s == "wgan_gp") return GanVariant::wgan_gp;
    throw ModelError("unknown GAN variant: " + s);
}

struct GanPair {
    GanVariant variant = GanVariant::dcgan;
    std::int64_t latent_len = 100;
    std::int64_t resolution = 0;
    std::int64_t channels = 1;
    Sequential generator;
    Sequential critic;
    std::string gen_arch_id;
    std::string critic_arch_id;

    // z: [N, latent_len] -> images [N,C,res,res] in [-1,1]
    Tensor generate(const Tensor& z, bool training = false) const {
        Rng dummy(0);
        return generator.forward(z, training, dummy);
    }
    Tensor criticize(const Tensor& x, bool training = true) const {
        Rng dummy(0);
        return critic.forward(x, training, dummy);
    }
};

// DCGAN-style pair at reduced scale. Generator: linear to 4x4 feature maps,
// stride-2 transposed-conv upsampling, tanh output. Critic: stride-2 convs
// with leaky ReLU; dcgan ends in sigmoid, wgan/wgan-gp end unbounded;
// wgan-gp normalizes with layer norm, the others with batch norm.
inline GanPair build_gan(GanVariant variant, std::int64_t latent_len, std::int64_t resolution,
                         std::int64_t channels = 1, std::int64_t base_width = 16,
                         std::uint64_t seed = 0) {
    if (resolution < 16 || (resolution & (resolution - 1)) != 0)
        throw ModelError("gan: resolution must be a power of two >= 16, got " +
                         std::to_string(resolution));
    if (latent_len < 1) throw ModelError("gan: latent length must be positive");

    int up_blocks = 0;
    for (std::int64_t r = 4; r < resolution; r *= 2) ++up_blocks;

    GanPair g;
    g.variant = variant;
    g.latent_len = latent_len;
    g.resolution = resolution;
    g.channels = channels;

    // generator: widest at 4x4, halving per upsample
    std::int64_t c0 = base_width << (up_blocks - 1);
    std::vector<LayerSpec> gen;
    gen.push_back(LinearSpec{latent_len, c0 * 16});
    gen.push_back(ReshapeSpec{{c0, 4, 4}});
    gen.push_back(NormSpec{NormKind::batch, c0});
    gen.push_back(ActivationSpec{ActKind::relu});
    std::int64_t ch = c0;
    for (int b = 1; b < up_blocks; ++b) {
        std::int64_t next = ch / 2;
        gen.push_back(ConvTransposeSpec{ch, next, 4, 2, 1});
        gen.push_back(NormSpec{NormKind::batch, next});
        gen.push_back(ActivationSpec{ActKind::relu});
        ch = next;
    }
    gen.push_back(ConvTransposeSpec{ch, channels, 4, 2, 1});
    gen.push_back(ActivationSpec{ActKind::tanh});
    g.generator = build_layers(gen, stable_hash("gen", seed), "gen.");
    g.generator.validate({1, latent_len});

    // critic: mirror of the generator
    std::vector<LayerSpec> crit;
    crit.push_back(ConvSpec{channels, base_width, 4, 2, 1});
    crit.push_back(ActivationSpec{ActKind::leaky_relu, 0.2});
    ch = base_width;
    for (int b = 1; b < up_blocks; ++b) {
        std::int64_t next = ch * 2;
        crit.push_back(ConvSpec{ch, next, 4, 2, 1});
        if (variant == GanVariant::wgan_gp)
            crit.push_back(NormSpec{NormKind::layer, next});
        else
            crit.push_back(NormSpec{NormKind::batch, next});
        crit.push_back(ActivationSpec{ActKind::leaky_relu, 0.2});
        ch = next;
    }
    crit.push_back(FlattenSpec{});
    crit.push_back(LinearSpec{ch * 16, 1});
    if (variant == GanVariant::dcgan) crit.push_back(ActivationSpec{ActKind::sigmoid});
    g.critic = build_layers(crit, stable_hash("critic", seed), "critic.");
    g.critic.validate({1, channels, resolution, resolution});

    std::string tag = std::string(gan_variant_name(variant)) + "/r" + std::to_string(resolution) +
                      "/c" + std::to_string(channels) + "/w" + std::to_string(base_width) + "/L" +
                      std::to_string(latent_len);
    g.gen_arch_id = tag + "/G";
    g.critic_arch_id = tag + "/D";
    return g;
}

}  // namespace ssce

#endif  // SSCE_MODELS_HPP
