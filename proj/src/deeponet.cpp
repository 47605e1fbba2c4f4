#include "mfdon/deeponet.hpp"

#include <cmath>
#include <stdexcept>

namespace mfdon::deeponet {

using ad::JetVar;
using ad::Tape;
using ad::Var;

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    if (s == "none") return Activation::None;
    throw std::invalid_argument("unknown activation: " + s);
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::None: return "none";
    }
    return "?";
}

MLPStack init_stack(std::size_t in_dim, const NetSpec& spec, Activation act, Rng& rng) {
    if (in_dim == 0 || spec.width == 0 || spec.layers == 0)
        throw std::invalid_argument("init_stack: zero-width layer");
    MLPStack s;
    s.act = act;
    std::size_t prev = in_dim;
    for (std::size_t l = 0; l < spec.layers; ++l) {
        const std::size_t next = spec.width;
        const double limit = std::sqrt(6.0 / static_cast<double>(prev + next));
        Tensor w({prev, next});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
        s.weights.push_back(std::move(w));
        s.biases.push_back(Tensor({1, next}));
        prev = next;
    }
    return s;
}

namespace {

void init_encoder(std::size_t in_dim, std::size_t width, Rng& rng, Tensor& w, Tensor& b) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + width));
    w = Tensor({in_dim, width});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
    b = Tensor({1, width});
}

void check_components(std::size_t width, std::size_t components) {
    if (components == 0 || width % components != 0)
        throw std::invalid_argument("final width must be divisible by the component count");
}

}  // namespace

ModifiedDeepONetParams init_modified(std::size_t branch_in, std::size_t trunk_in, const NetSpec& spec,
                                     Activation act, bool final_activation, std::size_t components,
                                     std::uint64_t seed) {
    check_components(spec.width, components);
    Rng rng(seed);
    ModifiedDeepONetParams p;
    p.branch = init_stack(branch_in, spec, act, rng);
    p.trunk = init_stack(trunk_in, spec, act, rng);
    if (spec.layers > 1) {
        init_encoder(branch_in, spec.width, rng, p.enc_branch_w, p.enc_branch_b);
        init_encoder(trunk_in, spec.width, rng, p.enc_trunk_w, p.enc_trunk_b);
    }
    p.final_activation = final_activation;
    p.components = components;
    return p;
}

StandardDeepONetParams init_standard(std::size_t branch_in, std::size_t trunk_in, const NetSpec& spec,
                                     Activation act, std::size_t components, std::uint64_t seed) {
    check_components(spec.width, components);
    Rng rng(seed);
    StandardDeepONetParams p;
    p.branch = init_stack(branch_in, spec, act, rng);
    p.trunk = init_stack(trunk_in, spec, act, rng);
    p.components = components;
    return p;
}

std::size_t param_count(const ModifiedDeepONetParams& p) {
    std::size_t n = 0;
    for (const Tensor& w : p.branch.weights) n += w.size();
    for (const Tensor& b : p.branch.biases) n += b.size();
    for (const Tensor& w : p.trunk.weights) n += w.size();
    for (const Tensor& b : p.trunk.biases) n += b.size();
    n += p.enc_branch_w.size() + p.enc_branch_b.size();
    n += p.enc_trunk_w.size() + p.enc_trunk_b.size();
    return n;
}

std::size_t param_count(const StandardDeepONetParams& p) {
    std::size_t n = 0;
    for (const Tensor& w : p.branch.weights) n += w.size();
    for (const Tensor& b : p.branch.biases) n += b.size();
    for (const Tensor& w : p.trunk.weights) n += w.size();
    for (const Tensor& b : p.trunk.biases) n += b.size();
    return n;
}

void visit_params(MLPStack& s, const std::string& prefix, const ParamVisitor& f) {
    for (std::size_t l = 0; l < s.weights.size(); ++l) {
        f(prefix + ".w" + std::to_string(l), s.weights[l]);
        f(prefix + ".b" + std::to_string(l), s.biases[l]);
    }
}

void visit_params(ModifiedDeepONetParams& p, const std::string& prefix, const ParamVisitor& f) {
    visit_params(p.branch, prefix + ".branch", f);
    visit_params(p.trunk, prefix + ".trunk", f);
    if (p.enc_branch_w.size()) {
        f(prefix + ".enc_u.w", p.enc_branch_w);
        f(prefix + ".enc_u.b", p.enc_branch_b);
        f(prefix + ".enc_x.w", p.enc_trunk_w);
        f(prefix + ".enc_x.b", p.enc_trunk_b);
    }
}

void visit_params(StandardDeepONetParams& p, const std::string& prefix, const ParamVisitor& f) {
    visit_params(p.branch, prefix + ".branch", f);
    visit_params(p.trunk, prefix + ".trunk", f);
}

StackVars bind_params(Tape& t, const MLPStack& s, const std::string& prefix, bool trainable) {
    StackVars v;
    v.act = s.act;
    for (std::size_t l = 0; l < s.weights.size(); ++l) {
        v.weights.push_back(t.leaf(s.weights[l], trainable, prefix + ".w" + std::to_string(l)));
        v.biases.push_back(t.leaf(s.biases[l], trainable, prefix + ".b" + std::to_string(l)));
    }
    return v;
}

ModifiedVars bind_params(Tape& t, const ModifiedDeepONetParams& p, const std::string& prefix, bool trainable) {
    if (p.branch.out_dim() != p.trunk.out_dim())
        throw std::invalid_argument("modified DeepONet: branch/trunk final widths differ");
    ModifiedVars v;
    v.branch = bind_params(t, p.branch, prefix + ".branch", trainable);
    v.trunk = bind_params(t, p.trunk, prefix + ".trunk", trainable);
    if (p.enc_branch_w.size()) {
        if (p.enc_branch_w.cols() != p.branch.weights[0].cols() ||
            p.enc_trunk_w.cols() != p.trunk.weights[0].cols())
            throw std::invalid_argument("modified DeepONet: encoder width differs from hidden width");
        v.enc_branch_w = t.leaf(p.enc_branch_w, trainable, prefix + ".enc_u.w");
        v.enc_branch_b = t.leaf(p.enc_branch_b, trainable, prefix + ".enc_u.b");
        v.enc_trunk_w = t.leaf(p.enc_trunk_w, trainable, prefix + ".enc_x.w");
        v.enc_trunk_b = t.leaf(p.enc_trunk_b, trainable, prefix + ".enc_x.b");
    }
    v.final_activation = p.final_activation;
    v.components = p.components;
    return v;
}

StandardVars bind_params(Tape& t, const StandardDeepONetParams& p, const std::string& prefix, bool trainable) {
    if (p.branch.out_dim() != p.trunk.out_dim())
        throw std::invalid_argument("standard DeepONet: branch/trunk final widths differ");
    StandardVars v;
    v.branch = bind_params(t, p.branch, prefix + ".branch", trainable);
    v.trunk = bind_params(t, p.trunk, prefix + ".trunk", trainable);
    v.components = p.components;
    return v;
}

// --------------------------------------------------------------------------
// Adapters so one forward implementation serves Var and JetVar.
// --------------------------------------------------------------------------

namespace {

Var v_matmul(Tape& t, Var a, Var w) { return t.matmul(a, w); }
JetVar v_matmul(Tape& t, const JetVar& a, Var w) { return ad::jet_matmul(t, a, w); }

Var v_add_row(Tape& t, Var a, Var b) { return t.add_row(a, b); }
JetVar v_add_row(Tape& t, const JetVar& a, Var b) { return ad::jet_add_row(t, a, b); }

Var v_add(Tape& t, Var a, Var b) { return t.add(a, b); }
JetVar v_add(Tape& t, const JetVar& a, const JetVar& b) { return ad::jet_add(t, a, b); }

Var v_sub(Tape& t, Var a, Var b) { return t.sub(a, b); }
JetVar v_sub(Tape& t, const JetVar& a, const JetVar& b) { return ad::jet_sub(t, a, b); }

Var v_mul(Tape& t, Var a, Var b) { return t.mul(a, b); }
JetVar v_mul(Tape& t, const JetVar& a, const JetVar& b) { return ad::jet_mul(t, a, b); }

Var v_row_dot(Tape& t, Var a, Var b, std::uint32_t chunks) { return t.row_dot(a, b, chunks); }
JetVar v_row_dot(Tape& t, const JetVar& a, const JetVar& b, std::uint32_t chunks) {
    return ad::jet_row_dot(t, a, b, chunks);
}

Var v_repeat(Tape& t, Var a, std::uint32_t k) { return t.repeat_rows(a, k); }
JetVar v_repeat(Tape& t, const JetVar& a, std::uint32_t k) { return ad::jet_repeat_rows(t, a, k); }

Var v_tile(Tape& t, Var a, std::uint32_t k) { return t.tile_rows(a, k); }
JetVar v_tile(Tape& t, const JetVar& a, std::uint32_t k) { return ad::jet_tile_rows(t, a, k); }

Var v_act(Tape& t, Var a, Activation act) {
    switch (act) {
        case Activation::Tanh: return t.tanh_(a);
        case Activation::Relu: return t.relu_(a);
        case Activation::None: return a;
    }
    return a;
}
JetVar v_act(Tape& t, const JetVar& a, Activation act) {
    switch (act) {
        case Activation::Tanh: return ad::jet_tanh(t, a);
        case Activation::Relu: return ad::jet_relu(t, a);
        case Activation::None: return a;
    }
    return a;
}

template <class V>
V affine_layer(Tape& t, const StackVars& s, std::size_t l, const V& h) {
    return v_add_row(t, v_matmul(t, h, s.weights[l]), s.biases[l]);
}

// H = U + Z (V - U); D = V - U precomputed per network evaluation.
template <class V>
V mix(Tape& t, const V& z, const V& u, const V& d) {
    return v_add(t, u, v_mul(t, z, d));
}

template <class V>
struct ModifiedCore {
    // State shared between the two stacks after pair expansion.
    V enc_u, enc_v, diff;
};

template <class V>
V plain_stack_rows(Tape& t, const StackVars& s, const V& in_rows, bool act_on_last) {
    const std::size_t L = s.weights.size();
    V h = in_rows;
    for (std::size_t l = 0; l < L; ++l) {
        h = affine_layer(t, s, l, h);
        if (l + 1 < L || act_on_last) h = v_act(t, h, s.act);
    }
    return h;
}

}  // namespace

template <class V>
static V modified_stacks_to_dot(Tape& t, const ModifiedVars& p, const V& u_rows, const V& x_rows,
                                const V& enc_u, const V& enc_v) {
    const std::size_t L = p.branch.weights.size();
    V d = v_sub(t, enc_v, enc_u);
    V hu = mix(t, v_act(t, affine_layer(t, p.branch, 0, u_rows), p.branch.act), enc_u, d);
    V hx = mix(t, v_act(t, affine_layer(t, p.trunk, 0, x_rows), p.trunk.act), enc_u, d);
    for (std::size_t l = 1; l + 1 < L; ++l) {
        V zu = v_act(t, affine_layer(t, p.branch, l, hu), p.branch.act);
        V zx = v_act(t, affine_layer(t, p.trunk, l, hx), p.trunk.act);
        hu = mix(t, zu, enc_u, d);
        hx = mix(t, zx, enc_u, d);
    }
    hu = affine_layer(t, p.branch, L - 1, hu);
    hx = affine_layer(t, p.trunk, L - 1, hx);
    if (p.final_activation) {
        hu = v_act(t, hu, p.branch.act);
        hx = v_act(t, hx, p.trunk.act);
    }
    return v_row_dot(t, hu, hx, static_cast<std::uint32_t>(p.components));
}

template <class V>
V modified_forward_rows(Tape& t, const ModifiedVars& p, const V& u_rows, const V& x_rows) {
    const std::size_t L = p.branch.weights.size();
    if (L == 1) {
        V hu = affine_layer(t, p.branch, 0, u_rows);
        V hx = affine_layer(t, p.trunk, 0, x_rows);
        if (p.final_activation) {
            hu = v_act(t, hu, p.branch.act);
            hx = v_act(t, hx, p.trunk.act);
        }
        return v_row_dot(t, hu, hx, static_cast<std::uint32_t>(p.components));
    }
    V enc_u = v_act(t, v_add_row(t, v_matmul(t, u_rows, p.enc_branch_w), p.enc_branch_b), p.branch.act);
    V enc_v = v_act(t, v_add_row(t, v_matmul(t, x_rows, p.enc_trunk_w), p.enc_trunk_b), p.trunk.act);
    return modified_stacks_to_dot(t, p, u_rows, x_rows, enc_u, enc_v);
}

template <class V>
V modified_forward_grid(Tape& t, const ModifiedVars& p, const V& u_compact, const V& x_compact,
                        std::size_t n_u, std::size_t n_x) {
    const std::size_t L = p.branch.weights.size();
    const auto rep = static_cast<std::uint32_t>(n_x);
    const auto til = static_cast<std::uint32_t>(n_u);
    if (L == 1) {
        V hu = v_repeat(t, affine_layer(t, p.branch, 0, u_compact), rep);
        V hx = v_tile(t, affine_layer(t, p.trunk, 0, x_compact), til);
        if (p.final_activation) {
            hu = v_act(t, hu, p.branch.act);
            hx = v_act(t, hx, p.trunk.act);
        }
        return v_row_dot(t, hu, hx, static_cast<std::uint32_t>(p.components));
    }
    // Encoders and layer-1 preactivations depend on one side only; evaluate
    // them compactly and expand to pair rows before the first mixing.
    V enc_u_c = v_act(t, v_add_row(t, v_matmul(t, u_compact, p.enc_branch_w), p.enc_branch_b),
                      p.branch.act);
    V enc_v_c = v_act(t, v_add_row(t, v_matmul(t, x_compact, p.enc_trunk_w), p.enc_trunk_b),
                      p.trunk.act);
    V zu_c = v_act(t, affine_layer(t, p.branch, 0, u_compact), p.branch.act);
    V zx_c = v_act(t, affine_layer(t, p.trunk, 0, x_compact), p.trunk.act);

    V enc_u = v_repeat(t, enc_u_c, rep);
    V enc_v = v_tile(t, enc_v_c, til);
    V d = v_sub(t, enc_v, enc_u);
    V hu = mix(t, v_repeat(t, zu_c, rep), enc_u, d);
    V hx = mix(t, v_tile(t, zx_c, til), enc_u, d);
    for (std::size_t l = 1; l + 1 < L; ++l) {
        V zu = v_act(t, affine_layer(t, p.branch, l, hu), p.branch.act);
        V zx = v_act(t, affine_layer(t, p.trunk, l, hx), p.trunk.act);
        hu = mix(t, zu, enc_u, d);
        hx = mix(t, zx, enc_u, d);
    }
    hu = affine_layer(t, p.branch, L - 1, hu);
    hx = affine_layer(t, p.trunk, L - 1, hx);
    if (p.final_activation) {
        hu = v_act(t, hu, p.branch.act);
        hx = v_act(t, hx, p.trunk.act);
    }
    return v_row_dot(t, hu, hx, static_cast<std::uint32_t>(p.components));
}

template <class V>
V standard_forward_rows(Tape& t, const StandardVars& p, const V& u_rows, const V& x_rows) {
    V hu = plain_stack_rows(t, p.branch, u_rows, false);
    V hx = plain_stack_rows(t, p.trunk, x_rows, false);
    return v_row_dot(t, hu, hx, static_cast<std::uint32_t>(p.components));
}

template <class V>
V standard_forward_grid(Tape& t, const StandardVars& p, const V& u_compact, const V& x_compact,
                        std::size_t n_u, std::size_t n_x) {
    V hu = v_repeat(t, plain_stack_rows(t, p.branch, u_compact, false), static_cast<std::uint32_t>(n_x));
    V hx = v_tile(t, plain_stack_rows(t, p.trunk, x_compact, false), static_cast<std::uint32_t>(n_u));
    return v_row_dot(t, hu, hx, static_cast<std::uint32_t>(p.components));
}

template Var modified_forward_rows<Var>(Tape&, const ModifiedVars&, const Var&, const Var&);
template JetVar modified_forward_rows<JetVar>(Tape&, const ModifiedVars&, const JetVar&, const JetVar&);
template Var standard_forward_rows<Var>(Tape&, const StandardVars&, const Var&, const Var&);
template JetVar standard_forward_rows<JetVar>(Tape&, const StandardVars&, const JetVar&, const JetVar&);
template Var modified_forward_grid<Var>(Tape&, const ModifiedVars&, const Var&, const Var&, std::size_t,
                                        std::size_t);
template JetVar modified_forward_grid<JetVar>(Tape&, const ModifiedVars&, const JetVar&, const JetVar&,
                                              std::size_t, std::size_t);
template Var standard_forward_grid<Var>(Tape&, const StandardVars&, const Var&, const Var&, std::size_t,
                                        std::size_t);
template JetVar standard_forward_grid<JetVar>(Tape&, const StandardVars&, const JetVar&, const JetVar&,
                                              std::size_t, std::size_t);

std::vector<double> modified_forward_components(const ModifiedDeepONetParams& p,
                                                std::span<const double> u, std::span<const double> x) {
    Tape t;
    ModifiedVars v= bind_params(t, p, "net", false);
    Var ur = t.constant(Tensor({1, u.size()}, std::vector<double>(u.begin(), u.end())));
    Var xr = t.constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
    Var out = modified_forward_rows(t, v, ur, xr);
    return t.value(out).vec();
}

double modified_forward(const ModifiedDeepONetParams& p, std::span<const double> u,
                        std::span<const double> x) {
    return modified_forward_components(p, u, x).at(0);
}

double standard_forward(const StandardDeepONetParams& p, std::span<const double> u,
                        std::span<const double> x) {
    Tape t;
    StandardVars v= bind_params(t, p, "net", false);
    Var ur = t.constant(Tensor({1, u.size()}, std::vector<double>(u.begin(), u.end())));
    Var xr = t.constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
    Var out = standard_forward_rows(t, v, ur, xr);
    return t.scalar_value(out);
}

}  // namespace mfdon::deeponet
