#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfdon/tensor.hpp"

namespace mfdon::ad {

struct TapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    AffineScalar,  // alpha * a + beta
    MatMul,
    AddRow,  // matrix + broadcast row bias
    Tanh,
    Relu,
    Abs,
    Square,
    RowDot,      // per-row inner product, optionally split into chunks
    RepeatRows,  // each row repeated k consecutive times
    TileRows,    // whole block repeated k times
    ConcatCols,
    Reshape,
    SumAll,
    // Fused derivative-channel kernels (product/chain rules as single nodes).
    MulJ1,     // ad.b + a.bd
    MulJ2,     // add.b + 2 ad.bd + a.bdd
    TanhJet1,  // (1-y^2).d
    TanhJet2,  // (1-y^2).d2 - 2 y (1-y^2).d1^2
    StepMul,   // [a>0].d  (relu gate; gate derivative taken as 0)
};

const char* op_name(Op op);

/// Handle into a Tape. Default-constructed handles are "structural zeros":
/// jet helpers use them for derivative channels that are identically zero.
struct Var {
    static constexpr std::uint32_t npos = 0xffffffffu;
    std::uint32_t idx = npos;
    bool valid() const { return idx != npos; }
};

struct Node {
    Op op = Op::Leaf;
    std::vector<std::uint32_t> parents;
    Tensor value;
    Tensor adjoint;  // allocated on first backward pass touching this node
    double alpha = 0.0, beta = 0.0;
    std::uint32_t iattr = 0;  // repeat/tile factor or row-dot chunk count
    bool requires_grad = false;
    std::string name;  // leaves only
};

/// Define-by-run reverse-mode tape over dense tensors. Values are computed
/// eagerly at construction; `rebind` + `replay` re-evaluates the same graph
/// with fresh leaf contents, which is how training steps and finite-difference
/// probes reuse a built loss graph.
class Tape {
public:
    Var leaf(Tensor v, bool requires_grad = false, std::string name = {});
    Var param(std::string name, Tensor v) { return leaf(std::move(v), true, std::move(name)); }
    Var constant(Tensor v, std::string name = {}) { return leaf(std::move(v), false, std::move(name)); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var affine(Var a, double alpha, double beta);
    Var neg(Var a) { return affine(a, -1.0, 0.0); }
    Var matmul(Var a, Var b);
    Var add_row(Var a, Var bias);
    Var tanh_(Var a);
    Var relu_(Var a);
    Var abs_(Var a);
    Var square(Var a);
    Var row_dot(Var a, Var b, std::uint32_t chunks = 1);
    Var repeat_rows(Var a, std::uint32_t k);
    Var tile_rows(Var a, std::uint32_t k);
    Var concat_cols(Var a, Var b);
    Var reshape(Var a, std::vector<std::size_t> shape);
    Var sum_all(Var a);
    Var mul_j1(Var a, Var b, Var ad, Var bd);
    Var mul_j2(Var a, Var b, Var ad, Var bd, Var add_, Var bdd);
    Var tanh_jet1(Var y, Var d);
    Var tanh_jet2(Var y, Var d1, Var d2);
    Var step_mul(Var a, Var d);

    const Tensor& value(Var v) const { return node(v).value; }
    double scalar_value(Var v) const;

    /// Replace a leaf's contents (same shape) without touching the graph.
    void rebind(Var leaf, const Tensor& v);
    void rebind(Var leaf, const double* data, std::size_t n);

    /// Recompute all non-leaf values in construction order.
    void replay();

    /// Recompute and verify every value on the path is finite.
    /// Throws TapeError naming the offending node otherwise.
    const Tensor& forward(Var root);

    /// Reverse pass from a scalar root. Leaves adjoints in place.
    void backward(Var root);

    /// Adjoint of a node after backward(); zero tensor if grad never flowed.
    Tensor grad(Var v) const;

    /// Gradients of all named trainable leaves after backward().
    std::map<std::string, Tensor> named_grads() const;

    bool requires_grad(Var v) const { return node(v).requires_grad; }
    std::size_t num_nodes() const { return nodes_.size(); }
    std::string node_desc(std::uint32_t i) const;

    const Node& node(Var v) const;
    Node& node(Var v);

private:
    Var push(Node n);
    void eval_node(std::uint32_t i);
    void back_node(std::uint32_t i);
    Tensor& adjoint_of(std::uint32_t i);

    std::vector<Node> nodes_;
    bool backward_ran_ = false;
};

/// Gradients of a scalar root with respect to every named trainable leaf.
/// Throws if the root is not scalar.
std::map<std::string, Tensor> backward_grad(Tape& tape, Var root);

/// Max over components of |AD - central difference| / (|central difference| + 1e-12)
/// for a scalar-valued graph builder evaluated at `x`.
double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step);

}  // namespace mfdon::ad
