#include "mfdon/jet.hpp"

#include <algorithm>

namespace mfdon::ad {

namespace {

Var zero_like(Tape& t, Var ref) { return t.constant(Tensor(t.value(ref).shape())); }

// Combine up to three optional terms into a sum; invalid terms are skipped.
Var sum_terms(Tape& t, std::initializer_list<Var> terms) {
    Var acc;
    for (Var v : terms) {
        if (!v.valid()) continue;
        acc = acc.valid() ? t.add(acc, v) : v;
    }
    return acc;
}

}  // namespace

JetVar jet_const(Var v, std::size_t n1, std::size_t n2) {
    JetVar j;
    j.v = v;
    j.d1.assign(n1, Var{});
    j.d2.assign(n2, Var{});
    return j;
}

JetVar jet_seed_coords(Tape& t, Var coords, const std::vector<std::size_t>& first,
                       std::size_t second_count) {
    // Copy the shape up front: pushing constants may reallocate the node arena.
    const std::vector<std::size_t> shape = t.value(coords).shape();
    JetVar j;
    j.v = coords;
    for (std::size_t ch = 0; ch < first.size(); ++ch) {
        Tensor onehot(shape);
        for (std::size_t r = 0; r < shape[0]; ++r) onehot.at(r, first[ch]) = 1.0;
        j.d1.push_back(t.constant(std::move(onehot)));
    }
    j.d2.assign(second_count, Var{});
    return j;
}

Var jet_d1(Tape& t, const JetVar& a, std::size_t i) {
    return a.d1[i].valid() ? a.d1[i] : zero_like(t, a.v);
}

Var jet_d2(Tape& t, const JetVar& a, std::size_t i) {
    return a.d2[i].valid() ? a.d2[i] : zero_like(t, a.v);
}

JetVar jet_add(Tape& t, const JetVar& a, const JetVar& b) {
    JetVar o;
    o.v = t.add(a.v, b.v);
    for (std::size_t i = 0; i < a.n1(); ++i) {
        if (a.d1[i].valid() && b.d1[i].valid())
            o.d1.push_back(t.add(a.d1[i], b.d1[i]));
        else
            o.d1.push_back(a.d1[i].valid() ? a.d1[i] : b.d1[i]);
    }
    for (std::size_t i = 0; i < a.n2(); ++i) {
        if (a.d2[i].valid() && b.d2[i].valid())
            o.d2.push_back(t.add(a.d2[i], b.d2[i]));
        else
            o.d2.push_back(a.d2[i].valid() ? a.d2[i] : b.d2[i]);
    }
    return o;
}

JetVar jet_sub(Tape& t, const JetVar& a, const JetVar& b) {
    JetVar o;
    o.v = t.sub(a.v, b.v);
    for (std::size_t i = 0; i < a.n1(); ++i) {
        if (a.d1[i].valid() && b.d1[i].valid())
            o.d1.push_back(t.sub(a.d1[i], b.d1[i]));
        else if (a.d1[i].valid())
            o.d1.push_back(a.d1[i]);
        else
            o.d1.push_back(b.d1[i].valid() ? t.neg(b.d1[i]) : Var{});
    }
    for (std::size_t i = 0; i < a.n2(); ++i) {
        if (a.d2[i].valid() && b.d2[i].valid())
            o.d2.push_back(t.sub(a.d2[i], b.d2[i]));
        else if (a.d2[i].valid())
            o.d2.push_back(a.d2[i]);
        else
            o.d2.push_back(b.d2[i].valid() ? t.neg(b.d2[i]) : Var{});
    }
    return o;
}

JetVar jet_mul(Tape& t, const JetVar& a, const JetVar& b) {
    JetVar o;
    o.v = t.mul(a.v, b.v);
    for (std::size_t i = 0; i < a.n1(); ++i) {
        const bool av = a.d1[i].valid(), bv = b.d1[i].valid();
        if (av && bv)
            o.d1.push_back(t.mul_j1(a.v, b.v, a.d1[i], b.d1[i]));
        else if (av)
            o.d1.push_back(t.mul(a.d1[i], b.v));
        else if (bv)
            o.d1.push_back(t.mul(a.v, b.d1[i]));
        else
            o.d1.push_back(Var{});
    }
    for (std::size_t i = 0; i < a.n2(); ++i) {
        const bool a1 = a.d1[i].valid(), b1 = b.d1[i].valid();
        const bool a2 = a.d2[i].valid(), b2 = b.d2[i].valid();
        if (a1 && b1 && a2 && b2) {
            o.d2.push_back(t.mul_j2(a.v, b.v, a.d1[i], b.d1[i], a.d2[i], b.d2[i]));
            continue;
        }
        // d2(ab) = a''b + 2 a'b' + ab''; assemble the surviving terms.
        Var term_aa = a2 ? t.mul(a.d2[i], b.v) : Var{};
        Var term_bb = b2 ? t.mul(a.v, b.d2[i]) : Var{};
        Var term_cross;
        if (a1 && b1) term_cross = t.affine(t.mul(a.d1[i], b.d1[i]), 2.0, 0.0);
        o.d2.push_back(sum_terms(t, {term_aa, term_cross, term_bb}));
    }
    return o;
}

JetVar jet_affine(Tape& t, const JetVar& a, double alpha, double beta) {
    JetVar o;
    o.v = t.affine(a.v, alpha, beta);
    for (Var d : a.d1) o.d1.push_back(d.valid() ? t.affine(d, alpha, 0.0) : Var{});
    for (Var d : a.d2) o.d2.push_back(d.valid() ? t.affine(d, alpha, 0.0) : Var{});
    return o;
}

JetVar jet_matmul(Tape& t, const JetVar& a, Var w) {
    JetVar o;
    o.v = t.matmul(a.v, w);
    for (Var d : a.d1) o.d1.push_back(d.valid() ? t.matmul(d, w) : Var{});
    for (Var d : a.d2) o.d2.push_back(d.valid() ? t.matmul(d, w) : Var{});
    return o;
}

JetVar jet_add_row(Tape& t, const JetVar& a, Var bias) {
    JetVar o = a;
    o.v = t.add_row(a.v, bias);
    return o;
}

JetVar jet_tanh(Tape& t, const JetVar& a) {
    JetVar o;
    o.v = t.tanh_(a.v);
    for (Var d : a.d1) o.d1.push_back(d.valid() ? t.tanh_jet1(o.v, d) : Var{});
    for (std::size_t i = 0; i < a.n2(); ++i) {
        if (!a.d1[i].valid() && !a.d2[i].valid()) {
            o.d2.push_back(Var{});
            continue;
        }
        Var d1 = jet_d1(t, a, i);
        Var d2 = jet_d2(t, a, i);
        o.d2.push_back(t.tanh_jet2(o.v, d1, d2));
    }
    return o;
}

JetVar jet_relu(Tape& t, const JetVar& a) {
    JetVar o;
    o.v = t.relu_(a.v);
    for (Var d : a.d1) o.d1.push_back(d.valid() ? t.step_mul(a.v, d) : Var{});
    for (Var d : a.d2) o.d2.push_back(d.valid() ? t.step_mul(a.v, d) : Var{});
    return o;
}

JetVar jet_row_dot(Tape& t, const JetVar& a, const JetVar& b, std::uint32_t chunks) {
    JetVar o;
    o.v = t.row_dot(a.v, b.v, chunks);
    for (std::size_t i = 0; i < a.n1(); ++i) {
        Var ta = a.d1[i].valid() ? t.row_dot(a.d1[i], b.v, chunks) : Var{};
        Var tb = b.d1[i].valid() ? t.row_dot(a.v, b.d1[i], chunks) : Var{};
        o.d1.push_back(sum_terms(t, {ta, tb}));
    }
    for (std::size_t i = 0; i < a.n2(); ++i) {
        Var taa = a.d2[i].valid() ? t.row_dot(a.d2[i], b.v, chunks) : Var{};
        Var tbb = b.d2[i].valid() ? t.row_dot(a.v, b.d2[i], chunks) : Var{};
        Var cross;
        if (a.d1[i].valid() && b.d1[i].valid())
            cross = t.affine(t.row_dot(a.d1[i], b.d1[i], chunks), 2.0, 0.0);
        o.d2.push_back(sum_terms(t, {taa, cross, tbb}));
    }
    return o;
}

JetVar jet_concat_cols(Tape& t, const JetVar& a, const JetVar& b) {
    JetVar o;
    o.v = t.concat_cols(a.v, b.v);
    for (std::size_t i = 0; i < a.n1(); ++i) {
        if (!a.d1[i].valid() && !b.d1[i].valid()) {
            o.d1.push_back(Var{});
            continue;
        }
        o.d1.push_back(t.concat_cols(jet_d1(t, a, i), jet_d1(t, b, i)));
    }
    for (std::size_t i = 0; i < a.n2(); ++i) {
        if (!a.d2[i].valid() && !b.d2[i].valid()) {
            o.d2.push_back(Var{});
            continue;
        }
        o.d2.push_back(t.concat_cols(jet_d2(t, a, i), jet_d2(t, b, i)));
    }
    return o;
}

JetVar jet_repeat_rows(Tape& t, const JetVar& a, std::uint32_t k) {
    JetVar o;
    o.v = t.repeat_rows(a.v, k);
    for (Var d : a.d1) o.d1.push_back(d.valid() ? t.repeat_rows(d, k) : Var{});
    for (Var d : a.d2) o.d2.push_back(d.valid() ? t.repeat_rows(d, k) : Var{});
    return o;
}

JetVar jet_tile_rows(Tape& t, const JetVar& a, std::uint32_t k) {
    JetVar o;
    o.v = t.tile_rows(a.v, k);
    for (Var d : a.d1) o.d1.push_back(d.valid() ? t.tile_rows(d, k) : Var{});
    for (Var d : a.d2) o.d2.push_back(d.valid() ? t.tile_rows(d, k) : Var{});
    return o;
}

CoordJet coord_jet_eval(const std::function<JetVar(Tape&, const JetVar&)>& f,
                        const std::vector<double>& coords, std::vector<std::size_t> first,
                        std::vector<std::size_t> second) {
    // Move coordinates with second-derivative channels to the front.
    std::vector<std::size_t> order;
    for (std::size_t c : second) {
        if (std::find(first.begin(), first.end(), c) == first.end())
            throw TapeError("coord_jet_eval: second-derivative coordinate not tracked in first");
        order.push_back(c);
    }
    for (std::size_t c : first)
        if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);

    Tape tape;
    Var x = tape.constant(Tensor({1, coords.size()}, std::vector<double>(coords)));
    JetVar seeded = jet_seed_coords(tape, x, order, second.size());
    JetVar out = f(tape, seeded);
    if (tape.value(out.v).size() != 1) throw TapeError("coord_jet_eval: f is not scalar-valued");

    CoordJet jet;
    jet.value = tape.scalar_value(out.v);
    // Report channels in the caller's original `first` order.
    for (std::size_t c : first) {
        const std::size_t pos =
            static_cast<std::size_t>(std::find(order.begin(), order.end(), c) - order.begin());
        jet.d1.push_back(out.d1[pos].valid() ? tape.scalar_value(out.d1[pos]) : 0.0);
    }
    for (std::size_t i = 0; i < second.size(); ++i)
        jet.d2.push_back(out.d2[i].valid() ? tape.scalar_value(out.d2[i]) : 0.0);
    return jet;
}

}  // namespace mfdon::ad
