#include "doctest.h"

#include <cmath>

#include "ssce/nn.hpp"

using namespace ssce;

namespace {

Sequential make_linear(std::int64_t in, std::int64_t out, std::uint64_t seed) {
    return build_layers({LinearSpec{in, out}}, seed);
}

}  // namespace

TEST_CASE("init is deterministic per seed, biases zero") {
    Sequential a = make_linear(4, 2, 7);
    Sequential b = make_linear(4, 2, 7);
    auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        CHECK(pa[i]->value.data() == pb[i]->value.data());
    for (auto* p : pa)
        if (p->name.ends_with(".bias"))
            for (double v : p->value.data()) CHECK(v == 0.0);
    Sequential c = make_linear(4, 2, 8);
    CHECK(c.params()[0]->value.data() != pa[0]->value.data());
}

TEST_CASE("fan-in uniform init variance close to 1/(3 fan_in)") {
    Sequential big = make_linear(1000, 1000, 3);
    const auto& w = big.params()[0]->value.data();
    double mean = 0, var = 0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    for (double v : w) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size() - 1);
    double expected = 1.0 / 3000.0;
    CHECK(std::abs(var - expected) < 0.1 * expected);
}

TEST_CASE("incompatible spec chain reports layer index") {
    Sequential m = build_layers({LinearSpec{4, 8}, LinearSpec{16, 2}}, 1);
    CHECK_THROWS_WITH_AS(m.validate({1, 4}), doctest::Contains("layer 1"), ShapeError);
}

TEST_CASE("cross entropy values") {
    // near-certain correct prediction
    Tensor confident = Tensor::from_data({1, 3}, {30.0, 0.0, 0.0});
    CHECK(cross_entropy(confident, {0}).item() < 1e-9);
    // uniform predictive distribution
    Tensor uniform = Tensor::zeros({2, 3});
    CHECK(cross_entropy(uniform, {0, 2}).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    // direct evaluation of -log softmax
    Tensor logits = Tensor::from_data({1, 3}, {2.0, 1.0, 0.0});
    CHECK(cross_entropy(logits, {0}).item() == doctest::Approx(0.4076).epsilon(1e-3));
    // out-of-range label
    CHECK_THROWS_AS(cross_entropy(logits, {3}), ValueError);
    CHECK(cross_entropy(uniform, {1, 1}).item() >= 0.0);
}

TEST_CASE("adam single-step closed forms") {
    Param theta{"w", Tensor::zeros({1}, true), false};
    OptimizerConfig cfg{.kind = OptimizerKind::adam, .learning_rate = 0.003};
    Optimizer opt({&theta}, cfg);
    theta.value.set_grad({1.0});
    opt.step();
    CHECK(theta.value.data()[0] == doctest::Approx(-0.003).epsilon(1e-6));
}

TEST_CASE("optimizer step with zero gradient is the identity") {
    for (auto kind : {OptimizerKind::adam, OptimizerKind::rmsprop}) {
        Param theta{"w", Tensor::from_data({2}, {1.5, -0.25}, true), false};
        Optimizer opt({&theta}, {.kind = kind, .learning_rate = 0.01});
        theta.value.set_grad({0.0, 0.0});
        opt.step();
        CHECK(theta.value.data()[0] == 1.5);
        CHECK(theta.value.data()[1] == -0.25);
    }
}

TEST_CASE("coupled weight decay moves parameters toward zero") {
    Param theta{"w", Tensor::from_data({1}, {1.0}, true), false};
    Optimizer opt({&theta}, {.kind = OptimizerKind::adam, .learning_rate = 0.003,
                             .weight_decay = 0.001});
    theta.value.set_grad({0.0});
    opt.step();
    // effective gradient is weight_decay * theta = 0.001 > 0
    CHECK(theta.value.data()[0] < 1.0);
}

TEST_CASE("adam step magnitude bounded by lr after bias correction") {
    Rng rng(17);
    Param theta{"w", Tensor::zeros({32}, true), false};
    Optimizer opt({&theta}, {.kind = OptimizerKind::adam, .learning_rate = 0.01});
    for (int s = 0; s < 20; ++s) {
        auto prev = theta.value.data();
        std::vector<double> g(32);
        for (auto& x : g) x = rng.normal();
        theta.value.set_grad(std::move(g));
        opt.step();
        for (std::size_t i = 0; i < 32; ++i)
            CHECK(std::abs(theta.value.data()[i] - prev[i]) <= 0.01 * 1.10);
    }
}

TEST_CASE("rmsprop single-step closed form and oracle match") {
    Param theta{"w", Tensor::zeros({1}, true), false};
    Optimizer opt({&theta}, {.kind = OptimizerKind::rmsprop, .learning_rate = 5e-5});
    auto set_grad = [&](double g) {
        theta.value.set_grad({g});
    };
    set_grad(1.0);
    opt.step();
    // v = 0.01, step = lr / (0.1 + eps)
    CHECK(theta.value.data()[0] == doctest::Approx(-5e-4).epsilon(1e-4));

    // two identical steps against an independent scalar re-implementation
    double v = 0.0, x = 0.0;
    const double lr = 5e-5, alpha = 0.99, eps = 1e-8;
    for (int i = 0; i < 2; ++i) {
        v = alpha * v + (1 - alpha) * 1.0;
        x -= lr * 1.0 / (std::sqrt(v) + eps);
    }
    set_grad(1.0);
    opt.step();
    CHECK(theta.value.data()[0] == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("non-finite gradient aborts the step") {
    Param theta{"w", Tensor::zeros({1}, true), false};
    Optimizer opt({&theta}, {.kind = OptimizerKind::adam});
    theta.value.set_grad({std::nan("")});
    CHECK_THROWS_AS(opt.step(), TrainingError);
}

TEST_CASE("clip_weights") {
    Param p{"w", Tensor::from_data({3}, {-0.5, 0.005, 0.5}, true), false};
    clip_weights({&p}, 0.01);
    CHECK(p.value.data() == std::vector<double>{-0.01, 0.005, 0.01});
    // idempotent
    auto before = p.value.data();
    clip_weights({&p}, 0.01);
    CHECK(p.value.data() == before);

    Rng rng(5);
    Param q{"w", Tensor::randn({64}, rng, true), false};
    clip_weights({&q}, 0.01);
    double mx = 0;
    for (double v : q.value.data()) mx = std::max(mx, std::abs(v));
    CHECK(mx == doctest::Approx(0.01));
}
