#include "mfdon/tape.hpp"

#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mfdon::ad {

namespace {

// Threads pay off only on large row blocks (physics batches); the small
// analytic benchmarks run faster single-threaded.
constexpr std::size_t kParallelWork = 1u << 22;

// C += A(r x k) * B(k x c). Four-row blocks share each B row from registers.
void mm_nn(double* C, const double* A, const double* B, std::size_t r, std::size_t k, std::size_t c,
           bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * r * c);
#ifdef _OPENMP
#pragma omp parallel if (r * k * c > kParallelWork)
#endif
    {
        std::size_t lo = 0, hi = r;
#ifdef _OPENMP
        if (r * k * c > kParallelWork) {
            const std::size_t nt = static_cast<std::size_t>(omp_get_num_threads());
            const std::size_t id = static_cast<std::size_t>(omp_get_thread_num());
            const std::size_t blocks = (r + 3) / 4;
            lo = 4 * (blocks * id / nt);
            hi = std::min(r, 4 * (blocks * (id + 1) / nt));
        }
#endif
        std::size_t i = lo;
        for (; i + 4 <= hi; i += 4) {
            const double* a0 = A + i * k;
            const double* a1 = a0 + k;
            const double* a2 = a1 + k;
            const double* a3 = a2 + k;
            double* c0 = C + i * c;
            double* c1 = c0 + c;
            double* c2 = c1 + c;
            double* c3 = c2 + c;
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = B + p * c;
                const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
                for (std::size_t j = 0; j < c; ++j) {
                    const double b = brow[j];
                    c0[j] += x0 * b;
                    c1[j] += x1 * b;
                    c2[j] += x2 * b;
                    c3[j] += x3 * b;
                }
            }
        }
        for (; i < hi; ++i) {
            double* crow = C + i * c;
            const double* arow = A + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double a = arow[p];
                const double* brow = B + p * c;
                for (std::size_t j = 0; j < c; ++j) crow[j] += a * brow[j];
            }
        }
    }
}

// C += A(r x k) * B(c x k)^T
void mm_nt(double* C, const double* A, const double* B, std::size_t r, std::size_t k, std::size_t c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (r * k * c > kParallelWork)
#endif
    for (std::size_t i = 0; i < r; ++i) {
        double* crow = C + i * c;
        const double* arow = A + i * k;
        for (std::size_t j = 0; j < c; ++j) {
            const double* brow = B + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C += A(r x k)^T * B(r x c)   (C is k x c)
void mm_tn(double* C, const double* A, const double* B, std::size_t r, std::size_t k, std::size_t c) {
#ifdef _OPENMP
#pragma omp parallel if (r * k * c > kParallelWork)
#endif
    {
        std::size_t lo = 0, hi = k;
#ifdef _OPENMP
        if (r * k * c > kParallelWork) {
            const std::size_t nt = static_cast<std::size_t>(omp_get_num_threads());
            const std::size_t id = static_cast<std::size_t>(omp_get_thread_num());
            const std::size_t blocks = (k + 3) / 4;
            lo = 4 * (blocks * id / nt);
            hi = std::min(k, 4 * (blocks * (id + 1) / nt));
        }
#endif
        std::size_t p = lo;
        for (; p + 4 <= hi; p += 4) {
            double* c0 = C + p * c;
            double* c1 = c0 + c;
            double* c2 = c1 + c;
            double* c3 = c2 + c;
            for (std::size_t i = 0; i < r; ++i) {
                const double* arow = A + i * k + p;
                const double* brow = B + i * c;
                const double x0 = arow[0], x1 = arow[1], x2 = arow[2], x3 = arow[3];
                for (std::size_t j = 0; j < c; ++j) {
                    const double b = brow[j];
                    c0[j] += x0 * b;
                    c1[j] += x1 * b;
                    c2[j] += x2 * b;
                    c3[j] += x3 * b;
                }
            }
        }
        for (; p < hi; ++p) {
            double* crow = C + p * c;
            for (std::size_t i = 0; i < r; ++i) {
                const double a = A[i * k + p];
                const double* brow = B + i * c;
                for (std::size_t j = 0; j < c; ++j) crow[j] += a * brow[j];
            }
        }
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "Leaf";
        case Op::Add: return "Add";
        case Op::Sub: return "Sub";
        case Op::Mul: return "Mul";
        case Op::AffineScalar: return "AffineScalar";
        case Op::MatMul: return "MatMul";
        case Op::AddRow: return "AddRow";
        case Op::Tanh: return "Tanh";
        case Op::Relu: return "Relu";
        case Op::Abs: return "Abs";
        case Op::Square: return "Square";
        case Op::RowDot: return "RowDot";
        case Op::RepeatRows: return "RepeatRows";
        case Op::TileRows: return "TileRows";
        case Op::ConcatCols: return "ConcatCols";
        case Op::Reshape: return "Reshape";
        case Op::SumAll: return "SumAll";
        case Op::MulJ1: return "MulJ1";
        case Op::MulJ2: return "MulJ2";
        case Op::TanhJet1: return "TanhJet1";
        case Op::TanhJet2: return "TanhJet2";
        case Op::StepMul: return "StepMul";
    }
    return "?";
}

const Node& Tape::node(Var v) const {
    if (!v.valid() || v.idx >= nodes_.size()) throw TapeError("invalid tape handle");
    return nodes_[v.idx];
}

Node& Tape::node(Var v) {
    if (!v.valid() || v.idx >= nodes_.size()) throw TapeError("invalid tape handle");
    return nodes_[v.idx];
}

std::string Tape::node_desc(std::uint32_t i) const {
    const Node& n = nodes_[i];
    std::string s = "node #" + std::to_string(i) + " (" + op_name(n.op);
    if (!n.name.empty()) s += " '" + n.name + "'";
    for (std::uint32_t p : n.parents) s += " <-#" + std::to_string(p);
    s += ")";
    return s;
}

Var Tape::push(Node n) {
    for (std::uint32_t p : n.parents) {
        if (p >= nodes_.size()) throw TapeError("parent handle out of range");
        if (nodes_[p].requires_grad) n.requires_grad = true;
    }
    nodes_.push_back(std::move(n));
    std::uint32_t i = static_cast<std::uint32_t>(nodes_.size() - 1);
    eval_node(i);
    return Var{i};
}

Var Tape::leaf(Tensor v, bool requires_grad, std::string name) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

namespace {
void require(bool cond, const std::string& msg) {
    if (!cond) throw TapeError(msg);
}
}  // namespace

Var Tape::add(Var a, Var b) {
    require(node(a).value.same_shape(node(b).value),
            "Add: shape mismatch " + Tensor::shape_str(node(a).value.shape()) + " vs " +
                Tensor::shape_str(node(b).value.shape()));
    Node n;
    n.op = Op::Add;
    n.parents = {a.idx, b.idx};
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    require(node(a).value.same_shape(node(b).value), "Sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.parents = {a.idx, b.idx};
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    require(node(a).value.same_shape(node(b).value), "Mul: shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.parents = {a.idx, b.idx};
    return push(std::move(n));
}

Var Tape::affine(Var a, double alpha, double beta) {
    Node n;
    n.op = Op::AffineScalar;
    n.parents = {a.idx};
    n.alpha = alpha;
    n.beta = beta;
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(),
            "MatMul: incompatible shapes " + Tensor::shape_str(A.shape()) + " * " +
                Tensor::shape_str(B.shape()));
    Node n;
    n.op = Op::MatMul;
    n.parents = {a.idx, b.idx};
    return push(std::move(n));
}

Var Tape::add_row(Var a, Var bias) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(bias).value;
    require(A.rank() == 2 && B.rank() == 2 && B.rows() == 1 && B.cols() == A.cols(),
            "AddRow: bias shape mismatch");
    Node n;
    n.op = Op::AddRow;
    n.parents = {a.idx, bias.idx};
    return push(std::move(n));
}

Var Tape::tanh_(Var a) {
    Node n;
    n.op = Op::Tanh;
    n.parents = {a.idx};
    return push(std::move(n));
}

Var Tape::relu_(Var a) {
    Node n;
    n.op = Op::Relu;
    n.parents = {a.idx};
    return push(std::move(n));
}

Var Tape::abs_(Var a) {
    Node n;
    n.op = Op::Abs;
    n.parents = {a.idx};
    return push(std::move(n));
}

Var Tape::square(Var a) {
    Node n;
    n.op = Op::Square;
    n.parents = {a.idx};
    return push(std::move(n));
}

Var Tape::row_dot(Var a, Var b, std::uint32_t chunks) {
    const Tensor& A = node(a).value;
    require(A.same_shape(node(b).value) && A.rank() == 2, "RowDot: shape mismatch");
    require(chunks >= 1 && A.cols() % chunks == 0, "RowDot: columns not divisible by chunks");
    Node n;
    n.op = Op::RowDot;
    n.parents = {a.idx, b.idx};
    n.iattr = chunks;
    return push(std::move(n));
}

Var Tape::repeat_rows(Var a, std::uint32_t k) {
    require(node(a).value.rank() == 2 && k >= 1, "RepeatRows: bad arguments");
    Node n;
    n.op = Op::RepeatRows;
    n.parents = {a.idx};
    n.iattr = k;
    return push(std::move(n));
}

Var Tape::tile_rows(Var a, std::uint32_t k) {
    require(node(a).value.rank() == 2 && k >= 1, "TileRows: bad arguments");
    Node n;
    n.op = Op::TileRows;
    n.parents = {a.idx};
    n.iattr = k;
    return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    require(A.rank() == 2 && B.rank() == 2 && A.rows() == B.rows(), "ConcatCols: row mismatch");
    Node n;
    n.op = Op::ConcatCols;
    n.parents = {a.idx, b.idx};
    return push(std::move(n));
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
    require(Tensor::count(shape) == node(a).value.size(), "Reshape: element count mismatch");
    Node n;
    n.op = Op::Reshape;
    n.parents = {a.idx};
    n.value = Tensor(shape);  // shape carrier; data filled by eval
    return push(std::move(n));
}

Var Tape::sum_all(Var a) {
    Node n;
    n.op = Op::SumAll;
    n.parents = {a.idx};
    return push(std::move(n));
}

Var Tape::mul_j1(Var a, Var b, Var ad, Var bd) {
    require(node(a).value.same_shape(node(b).value) && node(a).value.same_shape(node(ad).value) &&
                node(a).value.same_shape(node(bd).value),
            "MulJ1: shape mismatch");
    Node n;
    n.op = Op::MulJ1;
    n.parents = {a.idx, b.idx, ad.idx, bd.idx};
    return push(std::move(n));
}

Var Tape::mul_j2(Var a, Var b, Var ad, Var bd, Var add_, Var bdd) {
    const Tensor& A = node(a).value;
    require(A.same_shape(node(b).value) && A.same_shape(node(ad).value) && A.same_shape(node(bd).value) &&
                A.same_shape(node(add_).value) && A.same_shape(node(bdd).value),
            "MulJ2: shape mismatch");
    Node n;
    n.op = Op::MulJ2;
    n.parents = {a.idx, b.idx, ad.idx, bd.idx, add_.idx, bdd.idx};
    return push(std::move(n));
}

Var Tape::tanh_jet1(Var y, Var d) {
    require(node(y).value.same_shape(node(d).value), "TanhJet1: shape mismatch");
    Node n;
    n.op = Op::TanhJet1;
    n.parents = {y.idx, d.idx};
    return push(std::move(n));
}

Var Tape::tanh_jet2(Var y, Var d1, Var d2) {
    require(node(y).value.same_shape(node(d1).value) && node(y).value.same_shape(node(d2).value),
            "TanhJet2: shape mismatch");
    Node n;
    n.op = Op::TanhJet2;
    n.parents = {y.idx, d1.idx, d2.idx};
    return push(std::move(n));
}

Var Tape::step_mul(Var a, Var d) {
    require(node(a).value.same_shape(node(d).value), "StepMul: shape mismatch");
    Node n;
    n.op = Op::StepMul;
    n.parents = {a.idx, d.idx};
    return push(std::move(n));
}

double Tape::scalar_value(Var v) const {
    const Tensor& t = node(v).value;
    require(t.size() == 1, "expected scalar node");
    return t[0];
}

void Tape::rebind(Var leaf_, const Tensor& v) {
    Node& n = node(leaf_);
    require(n.op == Op::Leaf, "rebind: not a leaf");
    require(n.value.same_shape(v), "rebind: shape mismatch on leaf '" + n.name + "'");
    n.value = v;
}

void Tape::rebind(Var leaf_, const double* data, std::size_t count) {
    Node& n = node(leaf_);
    require(n.op == Op::Leaf, "rebind: not a leaf");
    require(n.value.size() == count, "rebind: size mismatch on leaf '" + n.name + "'");
    std::memcpy(n.value.data(), data, count * sizeof(double));
}

void Tape::eval_node(std::uint32_t i) {
    Node& n = nodes_[i];
    if (n.op == Op::Leaf) return;
    auto val = [&](std::size_t p) -> const Tensor& { return nodes_[n.parents[p]].value; };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = a[j] + b[j];
            break;
        }
        case Op::Sub: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = a[j] - b[j];
            break;
        }
        case Op::Mul: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = a[j] * b[j];
            break;
        }
        case Op::AffineScalar: {
            const Tensor& a = val(0);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = n.alpha * a[j] + n.beta;
            break;
        }
        case Op::MatMul: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            std::vector<std::size_t> shp{a.rows(), b.cols()};
            if (n.value.shape() != shp) n.value = Tensor(shp);
            mm_nn(n.value.data(), a.data(), b.data(), a.rows(), a.cols(), b.cols(), false);
            break;
        }
        case Op::AddRow: {
            const Tensor& a = val(0);
            const Tensor& bias = val(1);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            const std::size_t c = a.cols();
            for (std::size_t r = 0; r < a.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j) n.value[r * c + j] = a[r * c + j] + bias[j];
            break;
        }
        case Op::Tanh: {
            const Tensor& a = val(0);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = std::tanh(a[j]);
            break;
        }
        case Op::Relu: {
            const Tensor& a = val(0);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = a[j] > 0.0 ? a[j] : 0.0;
            break;
        }
        case Op::Abs: {
            const Tensor& a = val(0);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = std::fabs(a[j]);
            break;
        }
        case Op::Square: {
            const Tensor& a = val(0);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = a[j] * a[j];
            break;
        }
        case Op::RowDot: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            const std::size_t r = a.rows(), w = a.cols(), C = n.iattr, cw = w / C;
            std::vector<std::size_t> shp{r, C};
            if (n.value.shape() != shp) n.value = Tensor(shp);
            for (std::size_t i2 = 0; i2 < r; ++i2) {
                const double* ar = a.data() + i2 * w;
                const double* br = b.data() + i2 * w;
                for (std::size_t c = 0; c < C; ++c) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < cw; ++k) s += ar[c * cw + k] * br[c * cw + k];
                    n.value[i2 * C + c] = s;
                }
            }
            break;
        }
        case Op::RepeatRows: {
            const Tensor& a = val(0);
            const std::size_t r = a.rows(), c = a.cols(), k = n.iattr;
            std::vector<std::size_t> shp{r * k, c};
            if (n.value.shape() != shp) n.value = Tensor(shp);
            for (std::size_t i2 = 0; i2 < r; ++i2)
                for (std::size_t t = 0; t < k; ++t)
                    std::memcpy(n.value.data() + (i2 * k + t) * c, a.data() + i2 * c, c * sizeof(double));
            break;
        }
        case Op::TileRows: {
            const Tensor& a = val(0);
            const std::size_t r = a.rows(), c = a.cols(), k = n.iattr;
            std::vector<std::size_t> shp{r * k, c};
            if (n.value.shape() != shp) n.value = Tensor(shp);
            for (std::size_t t = 0; t < k; ++t)
                std::memcpy(n.value.data() + t * r * c, a.data(), r * c * sizeof(double));
            break;
        }
        case Op::ConcatCols: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
            std::vector<std::size_t> shp{r, ca + cb};
            if (n.value.shape() != shp) n.value = Tensor(shp);
            for (std::size_t i2 = 0; i2 < r; ++i2) {
                std::memcpy(n.value.data() + i2 * (ca + cb), a.data() + i2 * ca, ca * sizeof(double));
                std::memcpy(n.value.data() + i2 * (ca + cb) + ca, b.data() + i2 * cb, cb * sizeof(double));
            }
            break;
        }
        case Op::Reshape: {
            const Tensor& a = val(0);
            std::vector<std::size_t> shp = n.value.shape();
            n.value = Tensor(shp, a.vec());
            break;
        }
        case Op::SumAll: {
            const Tensor& a = val(0);
            if (n.value.size() != 1) n.value = Tensor::scalar(0.0);
            double s = 0.0;
            for (std::size_t j = 0; j < a.size(); ++j) s += a[j];
            n.value[0] = s;
            break;
        }
        case Op::MulJ1: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            const Tensor& ad = val(2);
            const Tensor& bd = val(3);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = ad[j] * b[j] + a[j] * bd[j];
            break;
        }
        case Op::MulJ2: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            const Tensor& ad = val(2);
            const Tensor& bd = val(3);
            const Tensor& add_ = val(4);
            const Tensor& bdd = val(5);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j)
                n.value[j] = add_[j] * b[j] + 2.0 * ad[j] * bd[j] + a[j] * bdd[j];
            break;
        }
        case Op::TanhJet1: {
            const Tensor& y = val(0);
            const Tensor& d = val(1);
            if (!n.value.same_shape(y)) n.value = Tensor(y.shape());
            for (std::size_t j = 0; j < y.size(); ++j) n.value[j] = (1.0 - y[j] * y[j]) * d[j];
            break;
        }
        case Op::TanhJet2: {
            const Tensor& y = val(0);
            const Tensor& d1 = val(1);
            const Tensor& d2 = val(2);
            if (!n.value.same_shape(y)) n.value = Tensor(y.shape());
            for (std::size_t j = 0; j < y.size(); ++j) {
                const double sech2 = 1.0 - y[j] * y[j];
                n.value[j] = sech2 * d2[j] - 2.0 * y[j] * sech2 * d1[j] * d1[j];
            }
            break;
        }
        case Op::StepMul: {
            const Tensor& a = val(0);
            const Tensor& d = val(1);
            if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
            for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = a[j] > 0.0 ? d[j] : 0.0;
            break;
        }
    }
}

void Tape::replay() {
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) eval_node(i);
}

const Tensor& Tape::forward(Var root) {
    replay();
    for (std::uint32_t i = 0; i <= root.idx; ++i) {
        if (!nodes_[i].value.all_finite())
            throw TapeError("non-finite value at " + node_desc(i));
    }
    return node(root).value;
}

Tensor& Tape::adjoint_of(std::uint32_t i) {
    Node& n = nodes_[i];
    if (!n.adjoint.same_shape(n.value)) n.adjoint = Tensor(n.value.shape());
    return n.adjoint;
}

void Tape::backward(Var root) {
    const Node& r = node(root);
    require(r.value.size() == 1, "backward: root is not scalar");
    for (Node& n : nodes_) {
        if (n.adjoint.size()) n.adjoint.fill(0.0);
    }
    adjoint_of(root.idx)[0] = 1.0;
    backward_ran_ = true;
    for (std::uint32_t i = root.idx + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.op == Op::Leaf) continue;
        if (!n.adjoint.same_shape(n.value)) continue;  // no gradient reached this node
        back_node(i);
    }
}

void Tape::back_node(std::uint32_t i) {
    Node& n = nodes_[i];
    const Tensor& g = n.adjoint;
    auto val = [&](std::size_t p) -> const Tensor& { return nodes_[n.parents[p]].value; };
    auto needs = [&](std::size_t p) { return nodes_[n.parents[p]].requires_grad; };
    auto adj = [&](std::size_t p) -> Tensor& { return adjoint_of(n.parents[p]); };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            for (int p = 0; p < 2; ++p)
                if (needs(p)) {
                    Tensor& ga = adj(p);
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
                }
            break;
        }
        case Op::Sub: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
            }
            if (needs(1)) {
                Tensor& gb = adj(1);
                for (std::size_t j = 0; j < g.size(); ++j) gb[j] -= g[j];
            }
            break;
        }
        case Op::Mul: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                const Tensor& b = val(1);
                for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * b[j];
            }
            if (needs(1)) {
                Tensor& gb = adj(1);
                const Tensor& a = val(0);
                for (std::size_t j = 0; j < g.size(); ++j) gb[j] += g[j] * a[j];
            }
            break;
        }
        case Op::AffineScalar: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                for (std::size_t j = 0; j < g.size(); ++j) ga[j] += n.alpha * g[j];
            }
            break;
        }
        case Op::MatMul: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            if (needs(0)) mm_nt(adj(0).data(), g.data(), b.data(), a.rows(), b.cols(), a.cols());
            if (needs(1)) mm_tn(adj(1).data(), a.data(), g.data(), a.rows(), a.cols(), b.cols());
            break;
        }
        case Op::AddRow: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
            }
            if (needs(1)) {
                Tensor& gb = adj(1);
                const std::size_t c = val(0).cols();
                for (std::size_t r = 0; r < val(0).rows(); ++r)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
            break;
        }
        case Op::Tanh: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                const Tensor& y = n.value;
                for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * (1.0 - y[j] * y[j]);
            }
            break;
        }
        case Op::Relu: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                const Tensor& a = val(0);
                for (std::size_t j = 0; j < g.size(); ++j)
                    if (a[j] > 0.0) ga[j] += g[j];
            }
            break;
        }
        case Op::Abs: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                const Tensor& a = val(0);
                for (std::size_t j = 0; j < g.size(); ++j) {
                    if (a[j] > 0.0)
                        ga[j] += g[j];
                    else if (a[j] < 0.0)
                        ga[j] -= g[j];
                }
            }
            break;
        }
        case Op::Square: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                const Tensor& a = val(0);
                for (std::size_t j = 0; j < g.size(); ++j) ga[j] += 2.0 * g[j] * a[j];
            }
            break;
        }
        case Op::RowDot: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            const std::size_t r = a.rows(), w = a.cols(), C = n.iattr, cw = w / C;
            if (needs(0)) {
                Tensor& ga = adj(0);
                for (std::size_t i2 = 0; i2 < r; ++i2)
                    for (std::size_t k = 0; k < w; ++k) ga[i2 * w + k] += g[i2 * C + k / cw] * b[i2 * w + k];
            }
            if (needs(1)) {
                Tensor& gb = adj(1);
                for (std::size_t i2 = 0; i2 < r; ++i2)
                    for (std::size_t k = 0; k < w; ++k) gb[i2 * w + k] += g[i2 * C + k / cw] * a[i2 * w + k];
            }
            break;
        }
        case Op::RepeatRows: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                const std::size_t r = val(0).rows(), c = val(0).cols(), k = n.iattr;
                for (std::size_t i2 = 0; i2 < r; ++i2)
                    for (std::size_t t = 0; t < k; ++t)
                        for (std::size_t j = 0; j < c; ++j) ga[i2 * c + j] += g[(i2 * k + t) * c + j];
            }
            break;
        }
        case Op::TileRows: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                const std::size_t r = val(0).rows(), c = val(0).cols(), k = n.iattr;
                for (std::size_t t = 0; t < k; ++t)
                    for (std::size_t j = 0; j < r * c; ++j) ga[j] += g[t * r * c + j];
            }
            break;
        }
        case Op::ConcatCols: {
            const std::size_t r = val(0).rows(), ca = val(0).cols(), cb = val(1).cols();
            if (needs(0)) {
                Tensor& ga = adj(0);
                for (std::size_t i2 = 0; i2 < r; ++i2)
                    for (std::size_t j = 0; j < ca; ++j) ga[i2 * ca + j] += g[i2 * (ca + cb) + j];
            }
            if (needs(1)) {
                Tensor& gb = adj(1);
                for (std::size_t i2 = 0; i2 < r; ++i2)
                    for (std::size_t j = 0; j < cb; ++j) gb[i2 * cb + j] += g[i2 * (ca + cb) + ca + j];
            }
            break;
        }
        case Op::Reshape: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
            }
            break;
        }
        case Op::SumAll: {
            if (needs(0)) {
                Tensor& ga = adj(0);
                const double gv = g[0];
                for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += gv;
            }
            break;
        }
        case Op::MulJ1: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            const Tensor& ad = val(2);
            const Tensor& bd = val(3);
            if (needs(0)) {
                Tensor& t = adj(0);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * bd[j];
            }
            if (needs(1)) {
                Tensor& t = adj(1);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * ad[j];
            }
            if (needs(2)) {
                Tensor& t = adj(2);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * b[j];
            }
            if (needs(3)) {
                Tensor& t = adj(3);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * a[j];
            }
            break;
        }
        case Op::MulJ2: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            const Tensor& ad = val(2);
            const Tensor& bd = val(3);
            const Tensor& add_ = val(4);
            const Tensor& bdd = val(5);
            if (needs(0)) {
                Tensor& t = adj(0);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * bdd[j];
            }
            if (needs(1)) {
                Tensor& t = adj(1);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * add_[j];
            }
            if (needs(2)) {
                Tensor& t = adj(2);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += 2.0 * g[j] * bd[j];
            }
            if (needs(3)) {
                Tensor& t = adj(3);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += 2.0 * g[j] * ad[j];
            }
            if (needs(4)) {
                Tensor& t = adj(4);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * b[j];
            }
            if (needs(5)) {
                Tensor& t = adj(5);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * a[j];
            }
            break;
        }
        case Op::TanhJet1: {
            const Tensor& y = val(0);
            const Tensor& d = val(1);
            if (needs(0)) {
                Tensor& t = adj(0);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += -2.0 * g[j] * y[j] * d[j];
            }
            if (needs(1)) {
                Tensor& t = adj(1);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * (1.0 - y[j] * y[j]);
            }
            break;
        }
        case Op::TanhJet2: {
            const Tensor& y = val(0);
            const Tensor& d1 = val(1);
            const Tensor& d2 = val(2);
            if (needs(0)) {
                Tensor& t = adj(0);
                for (std::size_t j = 0; j < g.size(); ++j) {
                    const double yj = y[j];
                    t[j] += g[j] * (-2.0 * yj * d2[j] - 2.0 * (1.0 - 3.0 * yj * yj) * d1[j] * d1[j]);
                }
            }
            if (needs(1)) {
                Tensor& t = adj(1);
                for (std::size_t j = 0; j < g.size(); ++j) {
                    const double sech2 = 1.0 - y[j] * y[j];
                    t[j] += g[j] * (-4.0 * y[j] * sech2 * d1[j]);
                }
            }
            if (needs(2)) {
                Tensor& t = adj(2);
                for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j] * (1.0 - y[j] * y[j]);
            }
            break;
        }
        case Op::StepMul: {
            // Gate input gets no gradient: the step derivative is taken as 0.
            if (needs(1)) {
                Tensor& t = adj(1);
                const Tensor& a = val(0);
                for (std::size_t j = 0; j < g.size(); ++j)
                    if (a[j] > 0.0) t[j] += g[j];
            }
            break;
        }
    }
}

Tensor Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.adjoint.same_shape(n.value)) return n.adjoint;
    return Tensor(n.value.shape());
}

std::map<std::string, Tensor> Tape::named_grads() const {
    std::map<std::string, Tensor> out;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.op == Op::Leaf && n.requires_grad && !n.name.empty()) out[n.name] = grad(Var{i});
    }
    return out;
}

std::map<std::string, Tensor> backward_grad(Tape& tape, Var root) {
    tape.backward(root);
    return tape.named_grads();
}

double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step) {
    Tape tape;
    Var xin = tape.param("x", x);
    Var root = f(tape, xin);
    if (tape.value(root).size() != 1) throw TapeError("finite_diff_check: f is not scalar-valued");
    tape.backward(root);
    Tensor g = tape.grad(xin);

    Tensor xp = x;
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + step;
        tape.rebind(xin, xp);
        tape.replay();
        const double fp = tape.scalar_value(root);
        xp[i] = x[i] - step;
        tape.rebind(xin, xp);
        tape.replay();
        const double fm = tape.scalar_value(root);
        xp[i] = x[i];
        const double fd = (fp - fm) / (2.0 * step);
        const double rel = std::fabs(g[i] - fd) / (std::fabs(fd) + 1e-12);
        if (rel > worst) worst = rel;
    }
    tape.rebind(xin, x);
    tape.replay();
    return worst;
}

}  // namespace mfdon::ad
