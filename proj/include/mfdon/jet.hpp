#pragma once

#include <functional>
#include <vector>

#include "mfdon/tape.hpp"

namespace mfdon::ad {

/// A tape value together with its derivative channels with respect to tracked
/// trunk coordinates. d1[i] is d/dcoord_i; d2[i] is d^2/dcoord_i^2 and is
/// tracked only for the first n2 <= n1 coordinates (aligned prefix). Invalid
/// handles mark channels that are identically zero by construction, so purely
/// affine paths (the linear correlation block) never materialize them.
struct JetVar {
    Var v;
    std::vector<Var> d1;
    std::vector<Var> d2;

    std::size_t n1() const { return d1.size(); }
    std::size_t n2() const { return d2.size(); }
};

/// Constant-with-respect-to-coordinates jet (all channels structurally zero).
JetVar jet_const(Var v, std::size_t n1, std::size_t n2);

/// Seed a (rows x dim) coordinate block: channel i carries a one-hot column
/// matrix selecting coordinate coord_index[i]; second channels start at zero.
JetVar jet_seed_coords(Tape& t, Var coords, const std::vector<std::size_t>& first,
                       std::size_t second_count);

JetVar jet_add(Tape& t, const JetVar& a, const JetVar& b);
JetVar jet_sub(Tape& t, const JetVar& a, const JetVar& b);
JetVar jet_mul(Tape& t, const JetVar& a, const JetVar& b);
JetVar jet_affine(Tape& t, const JetVar& a, double alpha, double beta);
JetVar jet_matmul(Tape& t, const JetVar& a, Var w);
JetVar jet_add_row(Tape& t, const JetVar& a, Var bias);
JetVar jet_tanh(Tape& t, const JetVar& a);
JetVar jet_relu(Tape& t, const JetVar& a);
JetVar jet_row_dot(Tape& t, const JetVar& a, const JetVar& b, std::uint32_t chunks = 1);
JetVar jet_concat_cols(Tape& t, const JetVar& a, const JetVar& b);
JetVar jet_repeat_rows(Tape& t, const JetVar& a, std::uint32_t k);
JetVar jet_tile_rows(Tape& t, const JetVar& a, std::uint32_t k);

/// Channel accessors that materialize a zero constant when the channel is
/// structurally absent (so callers can mix channels freely).
Var jet_d1(Tape& t, const JetVar& a, std::size_t i);
Var jet_d2(Tape& t, const JetVar& a, std::size_t i);

/// Evaluated jet of a scalar function at one point.
struct CoordJet {
    double value = 0.0;
    std::vector<double> d1;
    std::vector<double> d2;
};

/// Evaluate `f` at `coords` with exact derivative channels for the listed
/// coordinates. `second` must be a subset of `first` and is re-ordered to the
/// front internally. The builder `f` receives the seeded (1 x dim) jet.
CoordJet coord_jet_eval(const std::function<JetVar(Tape&, const JetVar&)>& f,
                        const std::vector<double>& coords, std::vector<std::size_t> first,
                        std::vector<std::size_t> second);

}  // namespace mfdon::ad
