#pragma once

#include <cmath>
#include <cstddef>

#include "mfdon/tape.hpp"

namespace testutil {

// Central finite differences of a scalar root with respect to one leaf,
// via rebind + replay. Independent of the reverse path it is used to check.
inline mfdon::Tensor fd_grad(mfdon::ad::Tape& tape, mfdon::ad::Var root, mfdon::ad::Var leaf,
                             double h) {
    const mfdon::Tensor x0 = tape.value(leaf);
    mfdon::Tensor g(x0.shape());
    mfdon::Tensor xp = x0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        xp[i] = x0[i] + h;
        tape.rebind(leaf, xp);
        tape.replay();
        const double fp = tape.scalar_value(root);
        xp[i] = x0[i] - h;
        tape.rebind(leaf, xp);
        tape.replay();
        const double fm = tape.scalar_value(root);
        xp[i] = x0[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    tape.rebind(leaf, x0);
    tape.replay();
    return g;
}

inline double max_rel_err(const mfdon::Tensor& ad, const mfdon::Tensor& fd) {
    double worst = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) {
        const double rel = std::fabs(ad[i] - fd[i]) / (std::fabs(fd[i]) + 1e-12);
        if (rel > worst) worst = rel;
    }
    return worst;
}

}  // namespace testutil
