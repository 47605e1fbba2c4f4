#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfdon/jet.hpp"
#include "mfdon/rng.hpp"
#include "mfdon/tape.hpp"
#include "mfdon/tensor.hpp"

namespace mfdon::deeponet {

enum class Activation { Tanh, Relu, None };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

/// One feed-forward stack. Weights are stored (in x out) for row-batch
/// evaluation h' = h W + b; biases are (1 x out).
struct MLPStack {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    Activation act = Activation::Tanh;

    std::size_t layer_count() const { return weights.size(); }
    std::size_t in_dim() const { return weights.front().rows(); }
    std::size_t out_dim() const { return weights.back().cols(); }
};

/// Dual-encoder DeepONet: both stacks mix the branch-input encoder U and the
/// trunk-input encoder V into every hidden layer, so branch and trunk are
/// coupled per query and a (u, x) pair must be evaluated jointly.
struct ModifiedDeepONetParams {
    MLPStack branch;
    MLPStack trunk;
    Tensor enc_branch_w, enc_branch_b;
    Tensor enc_trunk_w, enc_trunk_b;
    bool final_activation = false;  // nonlinear-correlation mode
    std::size_t components = 1;

    std::size_t branch_in() const { return branch.in_dim(); }
    std::size_t trunk_in() const { return trunk.in_dim(); }
};

/// Plain two-stack DeepONet (used with Activation::None as the linear block).
struct StandardDeepONetParams {
    MLPStack branch;
    MLPStack trunk;
    std::size_t components = 1;

    std::size_t branch_in() const { return branch.in_dim(); }
    std::size_t trunk_in() const { return trunk.in_dim(); }
};

/// Layer layout in "n layers, m neurons" form: n affine maps, every hidden and
/// final width equal to m.
struct NetSpec {
    std::size_t layers = 1;
    std::size_t width = 1;
};

MLPStack init_stack(std::size_t in_dim, const NetSpec& spec, Activation act, Rng& rng);

ModifiedDeepONetParams init_modified(std::size_t branch_in, std::size_t trunk_in, const NetSpec& spec,
                                     Activation act, bool final_activation, std::size_t components,
                                     std::uint64_t seed);

StandardDeepONetParams init_standard(std::size_t branch_in, std::size_t trunk_in, const NetSpec& spec,
                                     Activation act, std::size_t components, std::uint64_t seed);

std::size_t param_count(const ModifiedDeepONetParams& p);
std::size_t param_count(const StandardDeepONetParams& p);

/// Visit every tensor with a stable dotted name (checkpointing, flattening).
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
void visit_params(MLPStack& s, const std::string& prefix, const ParamVisitor& f);
void visit_params(ModifiedDeepONetParams& p, const std::string& prefix, const ParamVisitor& f);
void visit_params(StandardDeepONetParams& p, const std::string& prefix, const ParamVisitor& f);

// ---------------------------------------------------------------------------
// Tape-bound forms. Parameters become leaves (trainable or constant) so the
// same forward code serves training, inference and jet evaluation.
// ---------------------------------------------------------------------------

struct StackVars {
    std::vector<ad::Var> weights, biases;
    Activation act = Activation::Tanh;
};

struct ModifiedVars {
    StackVars branch, trunk;
    ad::Var enc_branch_w, enc_branch_b, enc_trunk_w, enc_trunk_b;
    bool final_activation = false;
    std::size_t components = 1;
};

struct StandardVars {
    StackVars branch, trunk;
    std::size_t components = 1;
};

StackVars bind_params(ad::Tape& t, const MLPStack& s, const std::string& prefix, bool trainable);
ModifiedVars bind_params(ad::Tape& t, const ModifiedDeepONetParams& p, const std::string& prefix, bool trainable);
StandardVars bind_params(ad::Tape& t, const StandardDeepONetParams& p, const std::string& prefix, bool trainable);

/// Joint forward over pre-paired rows: u_rows and x_rows have equal row
/// counts, one output row per pair. V is ad::Var or ad::JetVar.
template <class V>
V modified_forward_rows(ad::Tape& t, const ModifiedVars& p, const V& u_rows, const V& x_rows);

template <class V>
V standard_forward_rows(ad::Tape& t, const StandardVars& p, const V& u_rows, const V& x_rows);

/// Dense-grid forward: u_compact (N rows) x x_compact (P rows) evaluated over
/// all N*P pairs in row-major (i*P + j) order. Encoders and first layers run
/// on the compact inputs before pair expansion.
template <class V>
V modified_forward_grid(ad::Tape& t, const ModifiedVars& p, const V& u_compact, const V& x_compact,
                        std::size_t n_u, std::size_t n_x);

template <class V>
V standard_forward_grid(ad::Tape& t, const StandardVars& p, const V& u_compact, const V& x_compact,
                        std::size_t n_u, std::size_t n_x);

// Single-query conveniences (components == 1).
double modified_forward(const ModifiedDeepONetParams& p, std::span<const double> u,
                        std::span<const double> x);
double standard_forward(const StandardDeepONetParams& p, std::span<const double> u,
                        std::span<const double> x);

std::vector<double> modified_forward_components(const ModifiedDeepONetParams& p,
                                                std::span<const double> u, std::span<const double> x);

}  // namespace mfdon::deeponet
