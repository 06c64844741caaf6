#ifndef SSCE_TESTS_HELPERS_HPP
#define SSCE_TESTS_HELPERS_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "ssce/tensor.hpp"

namespace ssce::testing {

// Central finite differences against reverse-mode gradients. `build` must
// construct the scalar loss from the given leaves on every call; leaf data is
// perturbed in place between calls.
inline double gradcheck_max_rel_err(
    const std::function<Tensor(const std::vector<Tensor>&)>& build,
    std::vector<Tensor>& leaves, double h = 1e-5) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    Tensor loss = build(leaves);
    backward(loss);

    double worst = 0.0;
    for (auto& leaf : leaves) {
        Tensor g = leaf.grad();
        for (std::size_t i = 0; i < leaf.data().size(); ++i) {
            double saved = leaf.data()[i];
            leaf.mutable_data()[i] = saved + h;
            double fp = build(leaves).item();
            leaf.mutable_data()[i] = saved - h;
            double fm = build(leaves).item();
            leaf.mutable_data()[i] = saved;
            double numeric = (fp - fm) / (2.0 * h);
            double analytic = g.defined() ? g.data()[i] : 0.0;
            double rel = std::abs(analytic - numeric) /
                         (std::abs(analytic) + std::abs(numeric) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace ssce::testing

#endif
