#pragma once

// Brute-force reference evaluations used to check the tape-based forward
// passes. Everything here is plain double loops over the parameter tensors,
// written directly from the layer recurrences, with no tape involvement.

#include <cmath>
#include <vector>

#include "mfdon/deeponet.hpp"

namespace oracle {

using mfdon::Tensor;
using mfdon::deeponet::Activation;
using mfdon::deeponet::MLPStack;
using mfdon::deeponet::ModifiedDeepONetParams;
using mfdon::deeponet::StandardDeepONetParams;

inline double act(Activation a, double v) {
    switch (a) {
        case Activation::Tanh: return std::tanh(v);
        case Activation::Relu: return v > 0 ? v : 0.0;
        case Activation::None: return v;
    }
    return v;
}

inline std::vector<double> affine(const Tensor& w, const Tensor& b, const std::vector<double>& h) {
    std::vector<double> out(w.cols(), 0.0);
    for (std::size_t j = 0; j < w.cols(); ++j) {
        double s = b[j];
        for (std::size_t i = 0; i < w.rows(); ++i) s += h[i] * w.at(i, j);
        out[j] = s;
    }
    return out;
}

inline std::vector<double> activated(Activation a, std::vector<double> v) {
    for (double& x : v) x = act(a, x);
    return v;
}

// Plain stack: hidden layers activated, last layer linear.
inline std::vector<double> plain_stack(const MLPStack& s, std::vector<double> h) {
    for (std::size_t l = 0; l < s.weights.size(); ++l) {
        h = affine(s.weights[l], s.biases[l], h);
        if (l + 1 < s.weights.size()) h = activated(s.act, h);
    }
    return h;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double standard_forward(const StandardDeepONetParams& p, const std::vector<double>& u,
                               const std::vector<double>& x) {
    return dot(plain_stack(p.branch, u), plain_stack(p.trunk, x));
}

// Dual-encoder forward, spelled out layer by layer:
//   U = phi(W_u u + b_u), V = phi(W_x x + b_x)
//   Z^(1) = phi(W^(1) in + b^(1));  H^(l) = (1-Z^(l)) . U + Z^(l) . V
//   Z^(l) = phi(W^(l) H^(l-1) + b^(l)), l = 2..L-1
//   H^(L) = W^(L) H^(L-1) + b^(L)  (optionally activated)
//   out = <H_u^(L), H_x^(L)>
inline double modified_forward(const ModifiedDeepONetParams& p, const std::vector<double>& u,
                               const std::vector<double>& x) {
    const std::size_t L = p.branch.weights.size();
    const Activation a = p.branch.act;
    if (L == 1) {
        std::vector<double> hu = affine(p.branch.weights[0], p.branch.biases[0], u);
        std::vector<double> hx = affine(p.trunk.weights[0], p.trunk.biases[0], x);
        if (p.final_activation) {
            hu = activated(a, hu);
            hx = activated(a, hx);
        }
        return dot(hu, hx);
    }
    std::vector<double> U = activated(a, affine(p.enc_branch_w, p.enc_branch_b, u));
    std::vector<double> V = activated(a, affine(p.enc_trunk_w, p.enc_trunk_b, x));
    auto mix = [&](const std::vector<double>& z) {
        std::vector<double> h(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) h[i] = (1.0 - z[i]) * U[i] + z[i] * V[i];
        return h;
    };
    std::vector<double> hu = mix(activated(a, affine(p.branch.weights[0], p.branch.biases[0], u)));
    std::vector<double> hx = mix(activated(a, affine(p.trunk.weights[0], p.trunk.biases[0], x)));
    for (std::size_t l = 1; l + 1 < L; ++l) {
        hu = mix(activated(a, affine(p.branch.weights[l], p.branch.biases[l], hu)));
        hx = mix(activated(a, affine(p.trunk.weights[l], p.trunk.biases[l], hx)));
    }
    hu = affine(p.branch.weights[L - 1], p.branch.biases[L - 1], hu);
    hx = affine(p.trunk.weights[L - 1], p.trunk.biases[L - 1], hx);
    if (p.final_activation) {
        hu = activated(a, hu);
        hx = activated(a, hx);
    }
    return dot(hu, hx);
}

}  // namespace oracle
