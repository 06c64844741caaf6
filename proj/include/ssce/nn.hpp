#ifndef SSCE_NN_HPP
#define SSCE_NN_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ssce/tensor.hpp"

namespace ssce {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Layer specs
// ---------------------------------------------------------------------------

struct LinearSpec {
    std::int64_t in = 0, out = 0;
};
struct ConvSpec {
    std::int64_t in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;
};
struct ConvTransposeSpec {
    std::int64_t in_ch = 0, out_ch = 0, kernel = 4, stride = 2, pad = 1;
};
enum class NormKind { batch, layer };
struct NormSpec {
    NormKind kind = NormKind::batch;
    std::int64_t channels = 0;
};
enum class ActKind { relu, leaky_relu, tanh, sigmoid };
struct ActivationSpec {
    ActKind kind = ActKind::relu;
    double slope = 0.2;  // leaky_relu only
};
struct DropoutSpec {
    double p = 0.5;
};
struct PoolSpec {
    std::int64_t kernel = 2, stride = 2;
};
struct FlattenSpec {};
struct ReshapeSpec {
    Shape dims;  // per-sample shape; batch extent is preserved
};

using LayerSpec = std::variant<LinearSpec, ConvSpec, ConvTransposeSpec, NormSpec, ActivationSpec,
                               DropoutSpec, PoolSpec, FlattenSpec, ReshapeSpec>;

// ---------------------------------------------------------------------------
// Parameters and layers
// ---------------------------------------------------------------------------

struct Param {
    std::string name;
    Tensor value;
    bool norm_or_bias = false;  // weight-decay exemption candidates
};

class Layer {
public:
    virtual ~Layer() = default;
    // rng drives dropout masks; unused by deterministic layers
    virtual Tensor forward(const Tensor& x, bool training, Rng& rng) = 0;
    virtual void params(std::vector<Param*>& out) {}
    // extra non-trainable state that must survive checkpointing (norm running stats)
    virtual void buffers(std::vector<Param*>& out) {}
    virtual Shape output_shape(const Shape& in) const = 0;
};

namespace detail {

inline Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
    double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    return Tensor::rand_uniform(std::move(shape), -bound, bound, rng, /*requires_grad=*/true);
}

}  // namespace detail

class LinearLayer final : public Layer {
public:
    LinearLayer(const std::string& name, LinearSpec s, Rng& rng) : spec_(s) {
        weight_ = {name + ".weight", detail::fan_in_uniform({s.in, s.out}, s.in, rng), false};
        bias_ = {name + ".bias", Tensor::zeros({s.out}, true), true};
    }
    Tensor forward(const Tensor& x, bool, Rng&) override {
        return add(matmul(x, weight_.value), reshape(bias_.value, {1, spec_.out}));
    }
    void params(std::vector<Param*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 2 || in[1] != spec_.in)
            shape_fail("linear", "expected [*," + std::to_string(spec_.in) + "], got " + shape_str(in));
        return {in[0], spec_.out};
    }

private:
    LinearSpec spec_;
    Param weight_, bias_;
};

class ConvLayer final : public Layer {
public:
    ConvLayer(const std::string& name, ConvSpec s, Rng& rng) : spec_(s) {
        std::int64_t fan_in = s.in_ch * s.kernel * s.kernel;
        weight_ = {name + ".weight",
                   detail::fan_in_uniform({s.out_ch, s.in_ch, s.kernel, s.kernel}, fan_in, rng),
                   false};
        bias_ = {name + ".bias", Tensor::zeros({s.out_ch}, true), true};
    }
    Tensor forward(const Tensor& x, bool, Rng&) override {
        Tensor y = conv2d(x, weight_.value, {.stride = spec_.stride, .pad = spec_.pad});
        return add(y, reshape(bias_.value, {1, spec_.out_ch, 1, 1}));
    }
    void params(std::vector<Param*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4 || in[1] != spec_.in_ch)
            shape_fail("conv", "expected [N," + std::to_string(spec_.in_ch) + ",H,W], got " +
                                   shape_str(in));
        std::int64_t oh = (in[2] + 2 * spec_.pad - spec_.kernel) / spec_.stride + 1;
        std::int64_t ow = (in[3] + 2 * spec_.pad - spec_.kernel) / spec_.stride + 1;
        if (oh < 1 || ow < 1) shape_fail("conv", "kernel too large for " + shape_str(in));
        return {in[0], spec_.out_ch, oh, ow};
    }

private:
    ConvSpec spec_;
    Param weight_, bias_;
};

class ConvTransposeLayer final : public Layer {
public:
    ConvTransposeLayer(const std::string& name, ConvTransposeSpec s, Rng& rng) : spec_(s) {
        // kernel stored OIHW with O = input channels of the transposed conv,
        // matching the adjoint-of-conv primitive
        std::int64_t fan_in = s.in_ch * s.kernel * s.kernel;
        weight_ = {name + ".weight",
                   detail::fan_in_uniform({s.in_ch, s.out_ch, s.kernel, s.kernel}, fan_in, rng),
                   false};
        bias_ = {name + ".bias", Tensor::zeros({s.out_ch}, true), true};
    }
    Tensor forward(const Tensor& x, bool, Rng&) override {
        std::int64_t oh = (x.dim(2) - 1) * spec_.stride - 2 * spec_.pad + spec_.kernel;
        std::int64_t ow = (x.dim(3) - 1) * spec_.stride - 2 * spec_.pad + spec_.kernel;
        Tensor y = conv2d_transpose(x, weight_.value, {.stride = spec_.stride, .pad = spec_.pad},
                                    oh, ow);
        return add(y, reshape(bias_.value, {1, spec_.out_ch, 1, 1}));
    }
    void params(std::vector<Param*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4 || in[1] != spec_.in_ch)
            shape_fail("conv_transpose", "expected [N," + std::to_string(spec_.in_ch) +
                                             ",H,W], got " + shape_str(in));
        std::int64_t oh = (in[2] - 1) * spec_.stride - 2 * spec_.pad + spec_.kernel;
        std::int64_t ow = (in[3] - 1) * spec_.stride - 2 * spec_.pad + spec_.kernel;
        return {in[0], spec_.out_ch, oh, ow};
    }

private:
    ConvTransposeSpec spec_;
    Param weight_, bias_;
};

// batch statistics while training, tracked running statistics (momentum 0.1)
// in evaluation mode
class BatchNormLayer final : public Layer {
public:
    BatchNormLayer(const std::string& name, std::int64_t channels) : c_(channels) {
        gain_ = {name + ".gain", Tensor::ones({channels}, true), true};
        bias_ = {name + ".bias", Tensor::zeros({channels}, true), true};
        running_mean_ = {name + ".running_mean", Tensor::zeros({channels}), true};
        running_var_ = {name + ".running_var", Tensor::ones({channels}), true};
    }
    Tensor forward(const Tensor& x, bool training, Rng&) override {
        Tensor g = reshape(gain_.value, {1, c_, 1, 1});
        Tensor b = reshape(bias_.value, {1, c_, 1, 1});
        if (training) {
            Tensor mu = mean_axes(x, {0, 2, 3}, true);
            Tensor centered = sub(x, mu);
            Tensor var = mean_axes(mul(centered, centered), {0, 2, 3}, true);
            {
                NoGradGuard ng;
                for (std::int64_t i = 0; i < c_; ++i) {
                    auto& rm = running_mean_.value.mutable_data()[i];
                    auto& rv = running_var_.value.mutable_data()[i];
                    rm = (1 - momentum_) * rm + momentum_ * mu.data()[i];
                    rv = (1 - momentum_) * rv + momentum_ * var.data()[i];
                }
            }
            Tensor norm = div(centered, sqrt(add(var, Tensor::scalar(eps_))));
            return add(mul(norm, g), b);
        }
        Tensor mu = reshape(running_mean_.value.detach(), {1, c_, 1, 1});
        Tensor var = reshape(running_var_.value.detach(), {1, c_, 1, 1});
        Tensor norm = div(sub(x, mu), sqrt(add(var, Tensor::scalar(eps_))));
        return add(mul(norm, g), b);
    }
    void params(std::vector<Param*>& out) override {
        out.push_back(&gain_);
        out.push_back(&bias_);
    }
    void buffers(std::vector<Param*>& out) override {
        out.push_back(&running_mean_);
        out.push_back(&running_var_);
    }
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4 || in[1] != c_)
            shape_fail("batch_norm", "expected [N," + std::to_string(c_) + ",H,W], got " +
                                         shape_str(in));
        return in;
    }

private:
    std::int64_t c_;
    double momentum_ = 0.1;
    double eps_ = 1e-5;
    Param gain_, bias_, running_mean_, running_var_;
};

// per-sample normalization over (C,H,W) with per-channel affine
class LayerNormLayer final : public Layer {
public:
    LayerNormLayer(const std::string& name, std::int64_t channels) : c_(channels) {
        gain_ = {name + ".gain", Tensor::ones({channels}, true), true};
        bias_ = {name + ".bias", Tensor::zeros({channels}, true), true};
    }
    Tensor forward(const Tensor& x, bool, Rng&) override {
        Tensor mu = mean_axes(x, {1, 2, 3}, true);
        Tensor centered = sub(x, mu);
        Tensor var = mean_axes(mul(centered, centered), {1, 2, 3}, true);
        Tensor norm = div(centered, sqrt(add(var, Tensor::scalar(eps_))));
        Tensor g = reshape(gain_.value, {1, c_, 1, 1});
        Tensor b = reshape(bias_.value, {1, c_, 1, 1});
        return add(mul(norm, g), b);
    }
    void params(std::vector<Param*>& out) override {
        out.push_back(&gain_);
        out.push_back(&bias_);
    }
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4 || in[1] != c_)
            shape_fail("layer_norm", "expected [N," + std::to_string(c_) + ",H,W], got " +
                                         shape_str(in));
        return in;
    }

private:
    std::int64_t c_;
    double eps_ = 1e-5;
    Param gain_, bias_;
};

class ActivationLayer final : public Layer {
public:
    explicit ActivationLayer(ActivationSpec s) : spec_(s) {}
    Tensor forward(const Tensor& x, bool, Rng&) override {
        switch (spec_.kind) {
            case ActKind::relu: return relu(x);
            case ActKind::leaky_relu: return leaky_relu(x, spec_.slope);
            case ActKind::tanh: return tanh(x);
            case ActKind::sigmoid: return sigmoid(x);
        }
        throw ValueError("unknown activation");
    }
    Shape output_shape(const Shape& in) const override { return in; }

private:
    ActivationSpec spec_;
};

class DropoutLayer final : public Layer {
public:
    explicit DropoutLayer(DropoutSpec s) : spec_(s) {}
    Tensor forward(const Tensor& x, bool training, Rng& rng) override {
        return dropout(x, spec_.p, rng, training);
    }
    Shape output_shape(const Shape& in) const override { return in; }

private:
    DropoutSpec spec_;
};

class PoolLayer final : public Layer {
public:
    explicit PoolLayer(PoolSpec s) : spec_(s) {}
    Tensor forward(const Tensor& x, bool, Rng&) override {
        return max_pool(x, spec_.kernel, spec_.stride);
    }
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4) shape_fail("pool", "expected NCHW, got " + shape_str(in));
        return {in[0], in[1], (in[2] - spec_.kernel) / spec_.stride + 1,
                (in[3] - spec_.kernel) / spec_.stride + 1};
    }

private:
    PoolSpec spec_;
};

class FlattenLayer final : public Layer {
public:
    Tensor forward(const Tensor& x, bool, Rng&) override {
        return reshape(x, {x.dim(0), -1});
    }
    Shape output_shape(const Shape& in) const override {
        std::int64_t n = 1;
        for (std::size_t i = 1; i < in.size(); ++i) n *= in[i];
        return {in[0], n};
    }
};

class ReshapeLayer final : public Layer {
public:
    explicit ReshapeLayer(ReshapeSpec s) : spec_(std::move(s)) {}
    Tensor forward(const Tensor& x, bool, Rng&) override {
        Shape target = {x.dim(0)};
        target.insert(target.end(), spec_.dims.begin(), spec_.dims.end());
        return reshape(x, target);
    }
    Shape output_shape(const Shape& in) const override {
        Shape target = {in[0]};
        target.insert(target.end(), spec_.dims.begin(), spec_.dims.end());
        if (numel(target) != numel(in))
            shape_fail("reshape", shape_str(in) + " -> " + shape_str(target));
        return target;
    }

private:
    ReshapeSpec spec_;
};

// ---------------------------------------------------------------------------
// Sequential model
// ---------------------------------------------------------------------------

class Sequential {
public:
    Sequential() = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& x, bool training, Rng& rng) const {
        Tensor h = x;
        for (auto& l : layers_) h = l->forward(h, training, rng);
        return h;
    }

    // forward that also returns the activation after layer `tap` (embedding output)
    std::pair<Tensor, Tensor> forward_with_tap(const Tensor& x, std::size_t tap, bool training,
                                               Rng& rng) const {
        Tensor h = x;
        Tensor tapped;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i]->forward(h, training, rng);
            if (i == tap) tapped = h;
        }
        return {h, tapped};
    }

    std::vector<Param*> params() const {
        std::vector<Param*> out;
        for (auto& l : layers_) l->params(out);
        return out;
    }
    std::vector<Param*> buffers() const {
        std::vector<Param*> out;
        for (auto& l : layers_) l->buffers(out);
        return out;
    }
    std::size_t layer_count() const { return layers_.size(); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (auto* p : params()) n += p->value.size();
        return n;
    }

    void zero_grads() const {
        for (auto* p : params()) p->value.zero_grad();
    }

    Shape validate(Shape in) const {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            try {
                in = layers_[i]->output_shape(in);
            } catch (const ShapeError& e) {
                throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
            }
        }
        return in;
    }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// instantiates a validated spec chain with fan-in-scaled uniform weights and
// zero biases, deterministic per seed
inline Sequential build_layers(const std::vector<LayerSpec>& specs, std::uint64_t seed,
                               const std::string& name_prefix = "layer") {
    Rng rng(stable_hash("init", seed));
    Sequential model;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const std::string name = name_prefix + std::to_string(i);
        const LayerSpec& s = specs[i];
        if (auto* l = std::get_if<LinearSpec>(&s))
            model.add(std::make_unique<LinearLayer>(name, *l, rng));
        else if (auto* c = std::get_if<ConvSpec>(&s))
            model.add(std::make_unique<ConvLayer>(name, *c, rng));
        else if (auto* ct = std::get_if<ConvTransposeSpec>(&s))
            model.add(std::make_unique<ConvTransposeLayer>(name, *ct, rng));
        else if (auto* n = std::get_if<NormSpec>(&s)) {
            if (n->kind == NormKind::batch)
                model.add(std::make_unique<BatchNormLayer>(name, n->channels));
            else
                model.add(std::make_unique<LayerNormLayer>(name, n->channels));
        } else if (auto* a = std::get_if<ActivationSpec>(&s))
            model.add(std::make_unique<ActivationLayer>(*a));
        else if (auto* d = std::get_if<DropoutSpec>(&s))
            model.add(std::make_unique<DropoutLayer>(*d));
        else if (auto* p = std::get_if<PoolSpec>(&s))
            model.add(std::make_unique<PoolLayer>(*p));
        else if (std::get_if<FlattenSpec>(&s))
            model.add(std::make_unique<FlattenLayer>());
        else if (auto* r = std::get_if<ReshapeSpec>(&s))
            model.add(std::make_unique<ReshapeLayer>(*r));
        else
            throw ValueError("unknown layer spec");
    }
    return model;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// mean over the batch of -log softmax(logits)[label]; probabilities are
// clamped below at 1e-12 before the log
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
    if (logits.ndim() != 2)
        shape_fail("cross_entropy", "logits must be [B,K], got " + shape_str(logits.shape()));
    std::int64_t k = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != logits.dim(0))
        shape_fail("cross_entropy", "label count does not match batch");
    for (auto l : labels)
        if (l < 0 || l >= k)
            throw ValueError("cross_entropy: label " + std::to_string(l) + " out of [0," +
                             std::to_string(k) + ")");
    auto idx = std::make_shared<const std::vector<std::int64_t>>(labels);
    Tensor p = gather_rows(softmax(logits), idx);
    return neg(mean_all(log(clamp_min(p, 1e-12))));
}

// binary cross-entropy on probabilities in (0,1); targets are 0/1 constants
inline Tensor binary_cross_entropy(const Tensor& probs, double target) {
    Tensor p = clamp_min(probs, 1e-12);
    Tensor q = clamp_min(sub(Tensor::scalar(1.0), probs), 1e-12);
    if (target >= 0.5) return neg(mean_all(log(p)));
    return neg(mean_all(log(q)));
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { adam, rmsprop };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;  // coupled L2: added to the gradient
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double alpha = 0.99;  // rmsprop accumulator
    bool decay_norm_and_bias = true;
};

class Optimizer {
public:
    Optimizer(std::vector<Param*> params, OptimizerConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        if (cfg_.learning_rate <= 0) throw ValueError("optimizer: learning rate must be positive");
        if (cfg_.weight_decay < 0) throw ValueError("optimizer: weight decay must be non-negative");
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->value.data().size(), 0.0);
            v_[i].assign(params_[i]->value.data().size(), 0.0);
        }
    }

    std::int64_t step_count() const { return step_; }
    const OptimizerConfig& config() const { return cfg_; }

    void step() {
        ++step_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Param& p = *params_[i];
            Tensor g = p.value.grad();
            if (!g.defined()) continue;
            const auto& gd = g.data();
            auto& pd = p.value.mutable_data();
            for (double gv : gd)
                if (!std::isfinite(gv))
                    throw TrainingError("optimizer step " + std::to_string(step_) +
                                        ": non-finite gradient in " + p.name);
            bool decay = cfg_.weight_decay > 0.0 && (cfg_.decay_norm_and_bias || !p.norm_or_bias);
            if (cfg_.kind == OptimizerKind::adam) {
                double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
                double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
                for (std::size_t j = 0; j < pd.size(); ++j) {
                    double grad = gd[j] + (decay ? cfg_.weight_decay * pd[j] : 0.0);
                    m_[i][j] = cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * grad;
                    v_[i][j] = cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * grad * grad;
                    double mhat = m_[i][j] / bc1;
                    double vhat = v_[i][j] / bc2;
                    pd[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
                }
            } else {
                for (std::size_t j = 0; j < pd.size(); ++j) {
                    double grad = gd[j] + (decay ? cfg_.weight_decay * pd[j] : 0.0);
                    v_[i][j] = cfg_.alpha * v_[i][j] + (1 - cfg_.alpha) * grad * grad;
                    pd[j] -= cfg_.learning_rate * grad / (std::sqrt(v_[i][j]) + cfg_.eps);
                }
            }
        }
    }

    void zero_grads() {
        for (auto* p : params_) p->value.zero_grad();
    }

private:
    std::vector<Param*> params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t step_ = 0;
};

// clamps every parameter entry into [-c, c]; idempotent
inline void clip_weights(const std::vector<Param*>& params, double c) {
    if (c <= 0) throw ValueError("clip_weights: bound must be positive");
    for (auto* p : params)
        for (auto& x : p->value.mutable_data()) x = std::clamp(x, -c, c);
}

}  // namespace ssce

#endif  // SSCE_NN_HPP
