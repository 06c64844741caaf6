#ifndef SSCE_TENSOR_HPP
#define SSCE_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ssce/rng.hpp"

namespace ssce {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void shape_fail(const std::string& op, const std::string& what) {
    throw ShapeError(op + ": " + what);
}

// ---------------------------------------------------------------------------
// Graph node / Tensor handle
// ---------------------------------------------------------------------------

class Tensor;
namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::string op;                 // empty for leaves
    std::vector<Tensor> parents;    // filled only when recorded on the graph
    // computes per-parent gradients from the upstream gradient; entries may be
    // default (null) tensors when a parent needs no gradient
    std::function<std::vector<Tensor>(const Tensor&)> backward;
    std::shared_ptr<Node> grad;     // accumulated leaf gradient
};

inline thread_local bool grad_enabled = true;

}  // namespace detail

// Scoped switch that stops graph recording; used for evaluation passes and
// for first-order backward traversals.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (numel(shape) != static_cast<std::int64_t>(data.size()))
            shape_fail("tensor", "data length " + std::to_string(data.size()) +
                                     " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> d(static_cast<std::size_t>(numel(shape)), value);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor ones(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 1.0, requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, bool requires_grad = false) {
        std::vector<double> d(static_cast<std::size_t>(numel(shape)));
        for (auto& x : d) x = rng.normal();
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor rand_uniform(Shape shape, double lo, double hi, Rng& rng,
                               bool requires_grad = false) {
        std::vector<double> d(static_cast<std::size_t>(numel(shape)));
        for (auto& x : d) x = rng.uniform(lo, hi);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    explicit operator bool() const { return defined(); }

    const Shape& shape() const { return n_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(n_->data.size()); }
    std::int64_t dim(std::size_t i) const { return n_->shape.at(i); }
    std::size_t ndim() const { return n_->shape.size(); }

    const std::vector<double>& data() const { return n_->data; }
    std::vector<double>& mutable_data() { return n_->data; }

    double item() const {
        if (n_->data.size() != 1)
            shape_fail("item", "tensor has " + std::to_string(n_->data.size()) + " elements");
        return n_->data[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool v) { n_->requires_grad = v; }

    bool is_leaf() const { return n_->parents.empty(); }
    const std::string& op() const { return n_->op; }

    Tensor grad() const {
        Tensor g;
        g.n_ = n_->grad;
        return g;
    }
    void zero_grad() { n_->grad.reset(); }
    void set_grad(std::vector<double> g) {
        if (static_cast<std::int64_t>(g.size()) != size())
            shape_fail("set_grad", "length mismatch");
        auto n = std::make_shared<detail::Node>();
        n->shape = n_->shape;
        n->data = std::move(g);
        n_->grad = std::move(n);
    }

    // detached copy sharing no graph history (shares nothing; copies data)
    Tensor detach() const { return from_data(n_->shape, n_->data, false); }

    detail::Node* node() const { return n_.get(); }

    friend Tensor make_op(std::string op, Shape shape, std::vector<double> data,
                          std::vector<Tensor> parents,
                          std::function<std::vector<Tensor>(const Tensor&)> backward);
    friend void backward(const Tensor& root, bool create_graph);
    friend std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& inputs,
                                    bool create_graph);

private:
    std::shared_ptr<detail::Node> n_;
};

inline Tensor make_op(std::string op, Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<std::vector<Tensor>(const Tensor&)> backward) {
    Tensor t = Tensor::from_data(std::move(shape), std::move(data), false);
    bool record = detail::grad_enabled &&
                  std::any_of(parents.begin(), parents.end(),
                              [](const Tensor& p) { return p.defined() && p.requires_grad(); });
    if (record) {
        t.n_->requires_grad = true;
        t.n_->op = std::move(op);
        t.n_->parents = std::move(parents);
        t.n_->backward = std::move(backward);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Backward engine
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);

namespace detail {

inline void topo_order(Node* root, std::vector<Node*>& order) {
    // iterative post-order DFS
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].node();
            ++next;
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Computes d(root)/d(input) for each requested input. root must be scalar.
// With create_graph the returned gradients are themselves recorded on the
// graph, so they can be differentiated again.
inline std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& inputs,
                                bool create_graph = false) {
    if (!root.defined()) throw ValueError("backward: undefined root");
    if (root.size() != 1) shape_fail("backward", "root must be scalar, got " + shape_str(root.shape()));

    std::unordered_map<detail::Node*, Tensor> gmap;
    gmap[root.node()] = Tensor::ones(root.shape());

    std::vector<detail::Node*> order;
    if (root.requires_grad()) detail::topo_order(root.node(), order);

    auto run = [&]() {
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* node = *it;
            if (!node->backward) continue;
            auto git = gmap.find(node);
            if (git == gmap.end()) continue;
            Tensor gout = git->second;
            std::vector<Tensor> pgrads = node->backward(gout);
            for (std::size_t i = 0; i < node->parents.size(); ++i) {
                const Tensor& p = node->parents[i];
                if (!p.defined() || !p.requires_grad()) continue;
                if (i >= pgrads.size() || !pgrads[i].defined()) continue;
                auto pit = gmap.find(p.node());
                if (pit == gmap.end())
                    gmap[p.node()] = pgrads[i];
                else
                    pit->second = add(pit->second, pgrads[i]);
            }
        }
    };

    if (create_graph) {
        run();
    } else {
        NoGradGuard ng;
        run();
    }

    std::vector<Tensor> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) {
        auto it = gmap.find(in.node());
        out.push_back(it == gmap.end() ? Tensor() : it->second);
    }
    // stash leaf grads for backward()
    if (inputs.empty()) {
        NoGradGuard ng;
        for (detail::Node* node : order) {
            if (!node->requires_grad || !node->parents.empty()) continue;
            auto it = gmap.find(node);
            if (it == gmap.end()) continue;
            if (node->grad) {
                Tensor acc;
                // accumulate additively
                Tensor prev;
                prev = Tensor::from_data(node->shape, node->grad->data);
                acc = add(prev, it->second);
                node->grad = std::make_shared<detail::Node>();
                node->grad->shape = node->shape;
                node->grad->data = acc.data();
            } else {
                node->grad = std::make_shared<detail::Node>();
                node->grad->shape = node->shape;
                node->grad->data = it->second.data();
            }
        }
    }
    return out;
}

// Accumulates gradients on every requires_grad leaf reachable from root.
inline void backward(const Tensor& root, bool create_graph = false) {
    grad(root, {}, create_graph);
}

// ---------------------------------------------------------------------------
// Broadcasting helpers
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    Shape out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::int64_t da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
        std::int64_t db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
        if (da != db && da != 1 && db != 1)
            shape_fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// row-major strides with 0 for broadcast dimensions, aligned to out rank
inline std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::int64_t> st(out.size(), 0);
    std::int64_t stride = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        std::size_t oi = i + (out.size() - s.size());
        st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : stride;
        stride *= s[i];
    }
    return st;
}

template <class F>
inline std::vector<double> ew_binary(const Tensor& a, const Tensor& b, const Shape& out, F f) {
    std::size_t n = static_cast<std::size_t>(numel(out));
    std::vector<double> r(n);
    const auto& da = a.data();
    const auto& db = b.data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < n; ++i) r[i] = f(da[i], db[i]);
        return r;
    }
    if (a.size() == 1) {
        double x = da[0];
        for (std::size_t i = 0; i < n; ++i) r[i] = f(x, db[i]);
        return r;
    }
    if (b.size() == 1) {
        double y = db[0];
        for (std::size_t i = 0; i < n; ++i) r[i] = f(da[i], y);
        return r;
    }
    auto sa = broadcast_strides(a.shape(), out);
    auto sb = broadcast_strides(b.shape(), out);
    std::vector<std::int64_t> idx(out.size(), 0);
    std::int64_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        r[i] = f(da[ia], db[ib]);
        for (std::size_t d = out.size(); d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
    return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reductions / shape ops (declared early; backwards are mutually recursive)
// ---------------------------------------------------------------------------

Tensor sum_axes(const Tensor& x, std::vector<std::size_t> axes, bool keepdims);
Tensor broadcast_to(const Tensor& x, const Shape& target);
Tensor reshape(const Tensor& x, Shape target);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);

// sums a broadcast gradient back down to the given shape
inline Tensor reduce_to(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    std::vector<std::size_t> axes;
    std::size_t extra = g.ndim() - target.size();
    for (std::size_t i = 0; i < g.ndim(); ++i) {
        if (i < extra || (target[i - extra] == 1 && g.shape()[i] != 1)) axes.push_back(i);
    }
    Tensor s = sum_axes(g, axes, /*keepdims=*/false);
    if (s.shape() != target) s = reshape(s, target);
    return s;
}

inline Tensor sum_axes(const Tensor& x, std::vector<std::size_t> axes, bool keepdims) {
    std::sort(axes.begin(), axes.end());
    for (auto a : axes)
        if (a >= x.ndim()) shape_fail("sum", "axis out of range");
    Shape out;
    Shape keep = x.shape();
    for (auto a : axes) keep[a] = 1;
    for (std::size_t i = 0; i < x.ndim(); ++i) {
        bool reduced = std::binary_search(axes.begin(), axes.end(), i);
        if (!reduced)
            out.push_back(x.shape()[i]);
        else if (keepdims)
            out.push_back(1);
    }
    std::vector<double> r(static_cast<std::size_t>(numel(keep)), 0.0);
    // accumulate with strides of the kept shape
    auto st = detail::broadcast_strides(keep, x.shape());
    const auto& dx = x.data();
    std::vector<std::int64_t> idx(x.ndim(), 0);
    std::int64_t io = 0;
    std::size_t n = dx.size();
    for (std::size_t i = 0; i < n; ++i) {
        r[io] += dx[i];
        for (std::size_t d = x.ndim(); d-- > 0;) {
            ++idx[d];
            io += st[d];
            if (idx[d] < x.shape()[d]) break;
            io -= st[d] * x.shape()[d];
            idx[d] = 0;
        }
    }
    Shape xshape = x.shape();
    Shape keepshape = keep;
    return make_op("sum", keepdims ? keep : out, std::move(r), {x},
                   [xshape, keepshape](const Tensor& g) -> std::vector<Tensor> {
                       Tensor gr = reshape(g, keepshape);
                       return {broadcast_to(gr, xshape)};
                   });
}

inline Tensor sum_all(const Tensor& x) {
    std::vector<std::size_t> axes(x.ndim());
    std::iota(axes.begin(), axes.end(), std::size_t{0});
    Tensor s = sum_axes(x, axes, false);
    return s;
}

inline Tensor broadcast_to(const Tensor& x, const Shape& target) {
    if (x.shape() == target) return x;
    Shape xshape = x.shape();
    detail::broadcast_shape(xshape, target, "broadcast");  // validates
    std::size_t n = static_cast<std::size_t>(numel(target));
    std::vector<double> r(n);
    auto st = detail::broadcast_strides(xshape, target);
    const auto& dx = x.data();
    std::vector<std::int64_t> idx(target.size(), 0);
    std::int64_t ix = 0;
    for (std::size_t i = 0; i < n; ++i) {
        r[i] = dx[ix];
        for (std::size_t d = target.size(); d-- > 0;) {
            ++idx[d];
            ix += st[d];
            if (idx[d] < target[d]) break;
            ix -= st[d] * target[d];
            idx[d] = 0;
        }
    }
    return make_op("broadcast", target, std::move(r), {x},
                   [xshape](const Tensor& g) -> std::vector<Tensor> {
                       return {reduce_to(g, xshape)};
                   });
}

inline Tensor reshape(const Tensor& x, Shape target) {
    // one extent may be -1 (inferred)
    std::int64_t known = 1;
    int infer = -1;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] == -1) {
            if (infer >= 0) shape_fail("reshape", "multiple -1 extents");
            infer = static_cast<int>(i);
        } else {
            known *= target[i];
        }
    }
    if (infer >= 0) target[infer] = x.size() / known;
    if (numel(target) != x.size())
        shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(target) +
                                  " changes element count");
    Shape xshape = x.shape();
    return make_op("reshape", target, x.data(), {x},
                   [xshape](const Tensor& g) -> std::vector<Tensor> {
                       return {reshape(g, xshape)};
                   });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    Shape out = detail::broadcast_shape(a.shape(), b.shape(), "add");
    auto r = detail::ew_binary(a, b, out, [](double x, double y) { return x + y; });
    Shape sa = a.shape(), sb = b.shape();
    return make_op("add", out, std::move(r), {a, b},
                   [sa, sb](const Tensor& g) -> std::vector<Tensor> {
                       return {reduce_to(g, sa), reduce_to(g, sb)};
                   });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    Shape out = detail::broadcast_shape(a.shape(), b.shape(), "sub");
    auto r = detail::ew_binary(a, b, out, [](double x, double y) { return x - y; });
    Shape sa = a.shape(), sb = b.shape();
    return make_op("sub", out, std::move(r), {a, b},
                   [sa, sb](const Tensor& g) -> std::vector<Tensor> {
                       return {reduce_to(g, sa), reduce_to(neg(g), sb)};
                   });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    Shape out = detail::broadcast_shape(a.shape(), b.shape(), "mul");
    auto r = detail::ew_binary(a, b, out, [](double x, double y) { return x * y; });
    Shape sa = a.shape(), sb = b.shape();
    return make_op("mul", out, std::move(r), {a, b},
                   [sa, sb, a, b](const Tensor& g) -> std::vector<Tensor> {
                       return {reduce_to(mul(g, b), sa), reduce_to(mul(g, a), sb)};
                   });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    Shape out = detail::broadcast_shape(a.shape(), b.shape(), "div");
    auto r = detail::ew_binary(a, b, out, [](double x, double y) { return x / y; });
    Shape sa = a.shape(), sb = b.shape();
    return make_op("div", out, std::move(r), {a, b},
                   [sa, sb, a, b](const Tensor& g) -> std::vector<Tensor> {
                       Tensor ga = reduce_to(div(g, b), sa);
                       Tensor gb = reduce_to(neg(div(mul(g, a), mul(b, b))), sb);
                       return {ga, gb};
                   });
}

inline Tensor neg(const Tensor& a) {
    std::vector<double> r(a.data().size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = -a.data()[i];
    return make_op("neg", a.shape(), std::move(r), {a},
                   [](const Tensor& g) -> std::vector<Tensor> { return {neg(g)}; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator/(const Tensor& a, double s) { return div(a, Tensor::scalar(s)); }
inline Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Elementwise functions
// ---------------------------------------------------------------------------

// backwards recompute from the input rather than capturing the output, so the
// closures hold no reference cycle and stay differentiable
inline Tensor exp(const Tensor& x) {
    std::vector<double> r(x.data().size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::exp(x.data()[i]);
    return make_op("exp", x.shape(), std::move(r), {x},
                   [x](const Tensor& g) -> std::vector<Tensor> { return {mul(g, exp(x))}; });
}

inline Tensor log(const Tensor& x) {
    std::vector<double> r(x.data().size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::log(x.data()[i]);
    return make_op("log", x.shape(), std::move(r), {x},
                   [x](const Tensor& g) -> std::vector<Tensor> { return {div(g, x)}; });
}

inline Tensor sqrt(const Tensor& x) {
    std::vector<double> r(x.data().size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::sqrt(x.data()[i]);
    return make_op("sqrt", x.shape(), std::move(r), {x},
                   [x](const Tensor& g) -> std::vector<Tensor> {
                       return {div(mul(g, Tensor::scalar(0.5)), sqrt(x))};
                   });
}

inline Tensor tanh(const Tensor& x) {
    std::vector<double> r(x.data().size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::tanh(x.data()[i]);
    return make_op("tanh", x.shape(), std::move(r), {x},
                   [x](const Tensor& g) -> std::vector<Tensor> {
                       Tensor y = tanh(x);
                       return {mul(g, sub(Tensor::scalar(1.0), mul(y, y)))};
                   });
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> r(x.data().size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        double v = x.data()[i];
        r[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return make_op("sigmoid", x.shape(), std::move(r), {x},
                   [x](const Tensor& g) -> std::vector<Tensor> {
                       Tensor y = sigmoid(x);
                       return {mul(g, mul(y, sub(Tensor::scalar(1.0), y)))};
                   });
}

// backward scales by a constant 0/1 (or slope) mask; the second derivative is
// zero everywhere including the kink
inline Tensor leaky_relu(const Tensor& x, double slope) {
    std::vector<double> r(x.data().size());
    std::vector<double> mask(x.data().size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        double v = x.data()[i];
        mask[i] = v > 0 ? 1.0 : slope;
        r[i] = v * mask[i];
    }
    Tensor m = Tensor::from_data(x.shape(), std::move(mask));
    return make_op(slope == 0.0 ? "relu" : "leaky_relu", x.shape(), std::move(r), {x},
                   [m](const Tensor& g) -> std::vector<Tensor> { return {mul(g, m)}; });
}

inline Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

// elementwise max(x, lo) with straight-through mask where x > lo
inline Tensor clamp_min(const Tensor& x, double lo) {
    std::vector<double> r(x.data().size());
    std::vector<double> mask(x.data().size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        double v = x.data()[i];
        if (v > lo) {
            r[i] = v;
            mask[i] = 1.0;
        } else {
            r[i] = lo;
            mask[i] = 0.0;
        }
    }
    Tensor m = Tensor::from_data(x.shape(), std::move(mask));
    return make_op("clamp_min", x.shape(), std::move(r), {x},
                   [m](const Tensor& g) -> std::vector<Tensor> { return {mul(g, m)}; });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

inline Tensor transpose(const Tensor& x) {
    if (x.ndim() != 2) shape_fail("transpose", "expected rank 2, got " + shape_str(x.shape()));
    std::int64_t m = x.dim(0), n = x.dim(1);
    std::vector<double> r(static_cast<std::size_t>(m * n));
    const auto& d = x.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) r[j * m + i] = d[i * n + j];
    return make_op("transpose", {n, m}, std::move(r), {x},
                   [](const Tensor& g) -> std::vector<Tensor> { return {transpose(g)}; });
}

namespace detail {

// C[m,n] += A[m,k] * B[k,n], row-major, ikj order
inline void gemm(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                 std::int64_t n) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (m * n * k > 65536)
#endif
    for (std::int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            double aip = a[i * k + p];
            if (aip == 0.0) continue;
            const double* bp = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        shape_fail("matmul", "expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                                 shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        shape_fail("matmul", "inner extents differ: " + shape_str(a.shape()) + " x " +
                                 shape_str(b.shape()));
    std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> r(static_cast<std::size_t>(m * n), 0.0);
    detail::gemm(a.data().data(), b.data().data(), r.data(), m, k, n);
    return make_op("matmul", {m, n}, std::move(r), {a, b},
                   [a, b](const Tensor& g) -> std::vector<Tensor> {
                       return {matmul(g, transpose(b)), matmul(transpose(a), g)};
                   });
}

// ---------------------------------------------------------------------------
// Row gather/scatter (cross-entropy picks, one-hot style adjoints)
// ---------------------------------------------------------------------------

Tensor scatter_rows(const Tensor& v, std::shared_ptr<const std::vector<std::int64_t>> idx,
                    std::int64_t k);

// x: [B,K], idx: length B -> [B]
inline Tensor gather_rows(const Tensor& x, std::shared_ptr<const std::vector<std::int64_t>> idx) {
    if (x.ndim() != 2) shape_fail("gather_rows", "expected rank 2, got " + shape_str(x.shape()));
    std::int64_t b = x.dim(0), k = x.dim(1);
    if (static_cast<std::int64_t>(idx->size()) != b)
        shape_fail("gather_rows", "index count does not match batch");
    std::vector<double> r(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        std::int64_t j = (*idx)[i];
        if (j < 0 || j >= k)
            throw ValueError("gather_rows: index " + std::to_string(j) + " out of range [0," +
                             std::to_string(k) + ")");
        r[i] = x.data()[i * k + j];
    }
    return make_op("gather_rows", {b}, std::move(r), {x},
                   [idx, k](const Tensor& g) -> std::vector<Tensor> {
                       return {scatter_rows(g, idx, k)};
                   });
}

// v: [B] -> [B,K] with v[i] placed at column idx[i]
inline Tensor scatter_rows(const Tensor& v, std::shared_ptr<const std::vector<std::int64_t>> idx,
                           std::int64_t k) {
    std::int64_t b = v.dim(0);
    std::vector<double> r(static_cast<std::size_t>(b * k), 0.0);
    for (std::int64_t i = 0; i < b; ++i) r[i * k + (*idx)[i]] = v.data()[i];
    return make_op("scatter_rows", {b, k}, std::move(r), {v},
                   [idx](const Tensor& g) -> std::vector<Tensor> {
                       return {gather_rows(g, idx)};
                   });
}

// ---------------------------------------------------------------------------
// Spatial padding / cropping (NCHW, last two dims)
// ---------------------------------------------------------------------------

Tensor crop2d(const Tensor& x, std::int64_t top, std::int64_t left, std::int64_t h,
              std::int64_t w);

inline Tensor pad2d(const Tensor& x, std::int64_t pt, std::int64_t pb, std::int64_t pl,
                    std::int64_t pr) {
    if (x.ndim() != 4) shape_fail("pad", "expected NCHW, got " + shape_str(x.shape()));
    std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::int64_t oh = h + pt + pb, ow = w + pl + pr;
    std::vector<double> r(static_cast<std::size_t>(n * c * oh * ow), 0.0);
    const auto& d = x.data();
    for (std::int64_t nc = 0; nc < n * c; ++nc)
        for (std::int64_t i = 0; i < h; ++i) {
            const double* src = d.data() + (nc * h + i) * w;
            double* dst = r.data() + (nc * oh + i + pt) * ow + pl;
            std::copy(src, src + w, dst);
        }
    return make_op("pad", {n, c, oh, ow}, std::move(r), {x},
                   [pt, pl, h, w](const Tensor& g) -> std::vector<Tensor> {
                       return {crop2d(g, pt, pl, h, w)};
                   });
}

inline Tensor crop2d(const Tensor& x, std::int64_t top, std::int64_t left, std::int64_t h,
                     std::int64_t w) {
    if (x.ndim() != 4) shape_fail("crop", "expected NCHW, got " + shape_str(x.shape()));
    std::int64_t n = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
    std::vector<double> r(static_cast<std::size_t>(n * c * h * w));
    const auto& d = x.data();
    for (std::int64_t nc = 0; nc < n * c; ++nc)
        for (std::int64_t i = 0; i < h; ++i) {
            const double* src = d.data() + (nc * ih + i + top) * iw + left;
            std::copy(src, src + w, r.data() + (nc * h + i) * w);
        }
    std::int64_t pb = ih - top - h, pr = iw - left - w;
    return make_op("crop", {n, c, h, w}, std::move(r), {x},
                   [top, left, pb, pr](const Tensor& g) -> std::vector<Tensor> {
                       return {pad2d(g, top, pb, left, pr)};
                   });
}

// ---------------------------------------------------------------------------
// Convolution triangle: conv2d / conv2d_transpose / conv2d_kernel_grad.
// Each one's backward is expressed with the other two, so gradients of any
// order are available (the WGAN-GP penalty differentiates through the first
// backward pass).
// ---------------------------------------------------------------------------

struct ConvAttrs {
    std::int64_t stride = 1;
    std::int64_t pad = 0;
};

Tensor conv2d(const Tensor& x, const Tensor& w, ConvAttrs attrs);
Tensor conv2d_transpose(const Tensor& y, const Tensor& w, ConvAttrs attrs, std::int64_t out_h,
                        std::int64_t out_w);
Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& y, ConvAttrs attrs, std::int64_t kh,
                          std::int64_t kw);

namespace detail {

// x: [C,H,W] -> cols [C*kh*kw, oh*ow]
inline void im2col(const double* x, std::int64_t c, std::int64_t h, std::int64_t w,
                   std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                   std::int64_t oh, std::int64_t ow, double* cols) {
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t ki = 0; ki < kh; ++ki)
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                double* row = cols + ((ci * kh + ki) * kw + kj) * oh * ow;
                for (std::int64_t oi = 0; oi < oh; ++oi) {
                    std::int64_t ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= h) {
                        std::fill(row + oi * ow, row + (oi + 1) * ow, 0.0);
                        continue;
                    }
                    for (std::int64_t oj = 0; oj < ow; ++oj) {
                        std::int64_t jj = oj * stride + kj - pad;
                        row[oi * ow + oj] = (jj < 0 || jj >= w) ? 0.0 : x[(ci * h + ii) * w + jj];
                    }
                }
            }
}

// adjoint of im2col: cols [C*kh*kw, oh*ow] accumulated into x [C,H,W]
inline void col2im(const double* cols, std::int64_t c, std::int64_t h, std::int64_t w,
                   std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                   std::int64_t oh, std::int64_t ow, double* x) {
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t ki = 0; ki < kh; ++ki)
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                const double* row = cols + ((ci * kh + ki) * kw + kj) * oh * ow;
                for (std::int64_t oi = 0; oi < oh; ++oi) {
                    std::int64_t ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= h) continue;
                    for (std::int64_t oj = 0; oj < ow; ++oj) {
                        std::int64_t jj = oj * stride + kj - pad;
                        if (jj < 0 || jj >= w) continue;
                        x[(ci * h + ii) * w + jj] += row[oi * ow + oj];
                    }
                }
            }
}

inline void conv_check(const char* op, const Tensor& x, const Tensor& w, const ConvAttrs& a) {
    if (x.ndim() != 4) shape_fail(op, "input must be NCHW, got " + shape_str(x.shape()));
    if (w.ndim() != 4) shape_fail(op, "kernel must be OIHW, got " + shape_str(w.shape()));
    if (a.stride < 1 || a.pad < 0) shape_fail(op, "stride must be >= 1 and pad >= 0");
}

}  // namespace detail

// x: [N,Cin,H,W], w: [Cout,Cin,KH,KW]
inline Tensor conv2d(const Tensor& x, const Tensor& w, ConvAttrs attrs) {
    detail::conv_check("conv2d", x, w, attrs);
    std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    std::int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin)
        shape_fail("conv2d", "kernel expects " + std::to_string(w.dim(1)) + " channels, input has " +
                                 std::to_string(cin));
    std::int64_t oh = (h + 2 * attrs.pad - kh) / attrs.stride + 1;
    std::int64_t ow = (wd + 2 * attrs.pad - kw) / attrs.stride + 1;
    if (oh < 1 || ow < 1)
        shape_fail("conv2d", "kernel " + shape_str(w.shape()) + " too large for input " +
                                 shape_str(x.shape()));
    std::int64_t ck = cin * kh * kw;
    std::vector<double> out(static_cast<std::size_t>(n * cout * oh * ow), 0.0);
    std::vector<double> cols(static_cast<std::size_t>(ck * oh * ow));
    for (std::int64_t ni = 0; ni < n; ++ni) {
        detail::im2col(x.data().data() + ni * cin * h * wd, cin, h, wd, kh, kw, attrs.stride,
                       attrs.pad, oh, ow, cols.data());
        detail::gemm(w.data().data(), cols.data(), out.data() + ni * cout * oh * ow, cout, ck,
                     oh * ow);
    }
    std::int64_t xh = h, xw = wd;
    return make_op("conv2d", {n, cout, oh, ow}, std::move(out), {x, w},
                   [x, w, attrs, xh, xw, kh, kw](const Tensor& g) -> std::vector<Tensor> {
                       return {conv2d_transpose(g, w, attrs, xh, xw),
                               conv2d_kernel_grad(x, g, attrs, kh, kw)};
                   });
}

// adjoint of conv2d with respect to its input; y: [N,Cout,YH,YW] -> [N,Cin,out_h,out_w]
inline Tensor conv2d_transpose(const Tensor& y, const Tensor& w, ConvAttrs attrs,
                               std::int64_t out_h, std::int64_t out_w) {
    detail::conv_check("conv2d_transpose", y, w, attrs);
    std::int64_t n = y.dim(0), cout = y.dim(1), yh = y.dim(2), yw = y.dim(3);
    std::int64_t cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(0) != cout)
        shape_fail("conv2d_transpose", "kernel expects " + std::to_string(w.dim(0)) +
                                           " output channels, input has " + std::to_string(cout));
    // consistency: conv2d of the result must give back y's spatial extents
    if ((out_h + 2 * attrs.pad - kh) / attrs.stride + 1 != yh ||
        (out_w + 2 * attrs.pad - kw) / attrs.stride + 1 != yw)
        shape_fail("conv2d_transpose", "output size " + std::to_string(out_h) + "x" +
                                           std::to_string(out_w) + " inconsistent with input " +
                                           shape_str(y.shape()));
    std::int64_t ck = cin * kh * kw;
    std::vector<double> out(static_cast<std::size_t>(n * cin * out_h * out_w), 0.0);
    // wT: [ck, cout]
    std::vector<double> wt(static_cast<std::size_t>(ck * cout));
    for (std::int64_t o = 0; o < cout; ++o)
        for (std::int64_t q = 0; q < ck; ++q) wt[q * cout + o] = w.data()[o * ck + q];
    std::vector<double> cols(static_cast<std::size_t>(ck * yh * yw));
    for (std::int64_t ni = 0; ni < n; ++ni) {
        std::fill(cols.begin(), cols.end(), 0.0);
        detail::gemm(wt.data(), y.data().data() + ni * cout * yh * yw, cols.data(), ck, cout,
                     yh * yw);
        detail::col2im(cols.data(), cin, out_h, out_w, kh, kw, attrs.stride, attrs.pad, yh, yw,
                       out.data() + ni * cin * out_h * out_w);
    }
    return make_op("conv2d_transpose", {n, cin, out_h, out_w}, std::move(out), {y, w},
                   [y, w, attrs, kh, kw](const Tensor& g) -> std::vector<Tensor> {
                       return {conv2d(g, w, attrs), conv2d_kernel_grad(g, y, attrs, kh, kw)};
                   });
}

// adjoint of conv2d with respect to its kernel; x: [N,Cin,H,W], y: [N,Cout,OH,OW]
inline Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& y, ConvAttrs attrs,
                                 std::int64_t kh, std::int64_t kw) {
    std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    std::int64_t cout = y.dim(1), oh = y.dim(2), ow = y.dim(3);
    if (y.dim(0) != n) shape_fail("conv2d_kernel_grad", "batch mismatch");
    std::int64_t ck = cin * kh * kw;
    std::vector<double> out(static_cast<std::size_t>(cout * ck), 0.0);
    std::vector<double> cols(static_cast<std::size_t>(ck * oh * ow));
    std::vector<double> colsT(static_cast<std::size_t>(oh * ow * ck));
    for (std::int64_t ni = 0; ni < n; ++ni) {
        detail::im2col(x.data().data() + ni * cin * h * wd, cin, h, wd, kh, kw, attrs.stride,
                       attrs.pad, oh, ow, cols.data());
        for (std::int64_t q = 0; q < ck; ++q)
            for (std::int64_t t = 0; t < oh * ow; ++t) colsT[t * ck + q] = cols[q * oh * ow + t];
        detail::gemm(y.data().data() + ni * cout * oh * ow, colsT.data(), out.data(), cout,
                     oh * ow, ck);
    }
    std::int64_t xh = h, xw = wd;
    return make_op("conv2d_kernel_grad", {cout, cin, kh, kw}, std::move(out), {x, y},
                   [x, y, attrs, xh, xw](const Tensor& gk) -> std::vector<Tensor> {
                       return {conv2d_transpose(y, gk, attrs, xh, xw), conv2d(x, gk, attrs)};
                   });
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

Tensor pool_scatter(const Tensor& g, std::shared_ptr<const std::vector<std::int64_t>> idx,
                    Shape in_shape);
Tensor pool_gather(const Tensor& x, std::shared_ptr<const std::vector<std::int64_t>> idx,
                   Shape out_shape);

inline Tensor max_pool(const Tensor& x, std::int64_t k, std::int64_t stride) {
    if (x.ndim() != 4) shape_fail("max_pool", "expected NCHW, got " + shape_str(x.shape()));
    std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::int64_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    if (oh < 1 || ow < 1) shape_fail("max_pool", "window larger than input");
    std::size_t on = static_cast<std::size_t>(n * c * oh * ow);
    std::vector<double> r(on);
    auto idx = std::make_shared<std::vector<std::int64_t>>(on);
    const auto& d = x.data();
    std::size_t o = 0;
    for (std::int64_t nc = 0; nc < n * c; ++nc)
        for (std::int64_t oi = 0; oi < oh; ++oi)
            for (std::int64_t oj = 0; oj < ow; ++oj, ++o) {
                std::int64_t best = -1;
                double bv = -1e300;
                for (std::int64_t ki = 0; ki < k; ++ki)
                    for (std::int64_t kj = 0; kj < k; ++kj) {
                        std::int64_t p = (nc * h + oi * stride + ki) * w + oj * stride + kj;
                        if (d[p] > bv) {
                            bv = d[p];
                            best = p;
                        }
                    }
                r[o] = bv;
                (*idx)[o] = best;
            }
    Shape in_shape = x.shape();
    return make_op("max_pool", {n, c, oh, ow}, std::move(r), {x},
                   [idx, in_shape](const Tensor& g) -> std::vector<Tensor> {
                       return {pool_scatter(g, idx, in_shape)};
                   });
}

inline Tensor pool_scatter(const Tensor& g, std::shared_ptr<const std::vector<std::int64_t>> idx,
                           Shape in_shape) {
    std::vector<double> r(static_cast<std::size_t>(numel(in_shape)), 0.0);
    for (std::size_t i = 0; i < idx->size(); ++i) r[(*idx)[i]] += g.data()[i];
    Shape out_shape = g.shape();
    return make_op("pool_scatter", in_shape, std::move(r), {g},
                   [idx, out_shape](const Tensor& gg) -> std::vector<Tensor> {
                       return {pool_gather(gg, idx, out_shape)};
                   });
}

inline Tensor pool_gather(const Tensor& x, std::shared_ptr<const std::vector<std::int64_t>> idx,
                          Shape out_shape) {
    std::vector<double> r(idx->size());
    for (std::size_t i = 0; i < idx->size(); ++i) r[i] = x.data()[(*idx)[i]];
    Shape in_shape = x.shape();
    return make_op("pool_gather", out_shape, std::move(r), {x},
                   [idx, in_shape](const Tensor& g) -> std::vector<Tensor> {
                       return {pool_scatter(g, idx, in_shape)};
                   });
}

// ---------------------------------------------------------------------------
// Composite ops
// ---------------------------------------------------------------------------

inline Tensor mean_all(const Tensor& x) {
    return sum_all(x) / static_cast<double>(x.size());
}

inline Tensor mean_axes(const Tensor& x, std::vector<std::size_t> axes, bool keepdims) {
    std::int64_t n = 1;
    for (auto a : axes) n *= x.shape()[a];
    return sum_axes(x, std::move(axes), keepdims) / static_cast<double>(n);
}

// rows of the last axis sum to one; shifted by the detached row max (the shift
// does not change the function value, so gradients stay exact)
inline Tensor softmax(const Tensor& x) {
    if (x.ndim() < 1) shape_fail("softmax", "scalar input");
    std::size_t last = x.ndim() - 1;
    std::int64_t k = x.shape()[last];
    std::int64_t rows = x.size() / k;
    std::vector<double> mx(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
        double m = x.data()[i * k];
        for (std::int64_t j = 1; j < k; ++j) m = std::max(m, x.data()[i * k + j]);
        mx[i] = m;
    }
    Shape mshape = x.shape();
    mshape[last] = 1;
    Tensor shift = Tensor::from_data(mshape, std::move(mx));
    Tensor e = exp(sub(x, shift));
    Tensor denom = sum_axes(e, {last}, /*keepdims=*/true);
    return div(e, denom);
}

// Euclidean norm over all entries except the leading (batch) axis -> [N]
inline Tensor l2_norm_per_sample(const Tensor& x) {
    Tensor x2 = mul(x, x);
    std::vector<std::size_t> axes;
    for (std::size_t i = 1; i < x.ndim(); ++i) axes.push_back(i);
    Tensor s = sum_axes(x2, axes, false);
    return sqrt(clamp_min(s, 1e-24));
}

inline Tensor l2_norm(const Tensor& x) { return sqrt(clamp_min(sum_all(mul(x, x)), 1e-24)); }

// inverted dropout: kept activations are scaled by 1/keep so evaluation mode
// is the identity
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ValueError("dropout: probability must be in [0,1)");
    if (!training || p == 0.0) return x;
    double keep = 1.0 - p;
    std::vector<double> mask(x.data().size());
    for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Tensor m = Tensor::from_data(x.shape(), std::move(mask));
    return mul(x, m);
}

}  // namespace ssce

#endif  // SSCE_TENSOR_HPP
