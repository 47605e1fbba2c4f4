#pragma once

#include <functional>
#include <optional>
#include <span>

#include "mfdon/dataset.hpp"
#include "mfdon/multifidelity.hpp"

namespace mfdon::losses {

using ad::JetVar;
using ad::Tape;
using ad::Var;
using multifidelity::CompositeParams;
using multifidelity::CompositeVars;
using multifidelity::ProbeGrid;

/// Weights of the composite objectives; indices follow the loss formulas:
/// l1 high-fidelity data / physics, l2 low-fidelity data, l3 nonlinear-branch
/// regularization, l4 low-fidelity-branch regularization, l5 initial
/// condition, l6 boundary condition.
struct LossWeights {
    double l1 = 0, l2 = 0, l3 = 0, l4 = 0, l5 = 0, l6 = 0;

    void validate() const;
};

enum class ResidualNorm { L1, L2 };

enum class PdeKind { None, Burgers, CosineOde };

struct ResidualSpec {
    PdeKind kind = PdeKind::None;
    double viscosity = 0.0;  // Burgers only, > 0
    ResidualNorm norm = ResidualNorm::L2;

    void validate() const;
};

enum class BcKind { None, PeriodicBurgers, DirichletValue };

/// Fixed point sets a physics-informed run evaluates on.
struct CollocationSet {
    Tensor interior;     // P_p x d
    Tensor ic_points;    // P_IC x d (full coordinates, e.g. (x, 0)); may be empty
    Tensor bc_points_a;  // P_BC x d; Dirichlet points, or the first periodic face
    Tensor bc_points_b;  // P_BC x d; second periodic face (periodic only)
    BcKind bc = BcKind::None;
};

// ---------------------------------------------------------------------------
// Pointwise residual operations (value level).
// ---------------------------------------------------------------------------

/// Prediction jet at one coordinate; channel order (d/dx, d/dt, d2/dx2).
using JetPredictFn = std::function<ad::CoordJet(std::span<const double> coords)>;

/// s_t + s s_x - nu s_xx at (x, t).
double residual_burgers(const JetPredictFn& predict, std::span<const double> xt, double viscosity);

/// dy/dx + 4 pi sin(4 pi x + a).
double residual_ode_3_1(const JetPredictFn& predict, double a, double x);

// ---------------------------------------------------------------------------
// Tape pieces shared by the value-level losses and the training programs.
// ---------------------------------------------------------------------------

/// Mean over all entries of (pred - targets)^2.
Var sq_mean(Tape& t, Var pred, Var targets);

/// Mean over all entries of |r| (L1) or r^2 (L2).
Var norm_mean(Tape& t, Var residual_rows, ResidualNorm norm);

/// Sum of squared weights and biases of one stack (branch regularizer).
Var l2_reg_vars(Tape& t, const deeponet::StackVars& s);

/// Branch-side regularizer of a dual-encoder net: branch stack plus branch
/// encoder. The encoder feeds every hidden layer, so leaving it out lets the
/// net keep a large output with a zeroed stack.
Var l2_reg_branch(Tape& t, const deeponet::ModifiedVars& v);

/// Batched predictor abstraction: composite (F_nl + F_l) or a single modified
/// net, evaluated over an n-samples x p-points grid.
struct GridPredictor {
    std::function<Var(Tape&, Var x_points, std::size_t p)> plain;
    std::function<JetVar(Tape&, const JetVar& x_points, std::size_t p)> jet;
    std::size_t n_samples = 0;
};

GridPredictor composite_predictor(Tape& t, const CompositeVars& c, Var u_sensors_h,
                                  Var u_sensors_l, Var probes_mat, std::size_t n);
GridPredictor sf_predictor(Tape& t, const deeponet::ModifiedVars& net, Var u_sensors, std::size_t n);

struct PiFeeds {
    Var colloc;       // (P_p x d) leaf, rebindable
    Var ode_forcing;  // (n*P_p x C) for CosineOde; invalid otherwise
    Var ic_targets;   // (n*P_IC x C); invalid if no IC term
    Var bc_targets;   // (n*P_BC x C) Dirichlet targets; invalid otherwise
};

struct PiPieceVars {
    Var physics;  // unweighted means
    Var ic;
    Var bc;
};

/// Residual rows for the physics term given jet prediction rows.
Var residual_rows(Tape& t, const JetVar& pred, const ResidualSpec& spec, Var ode_forcing);

PiPieceVars build_pi_pieces(Tape& t, const GridPredictor& predict, const ResidualSpec& spec,
                            const CollocationSet& colloc, const PiFeeds& feeds);

/// lambda-weighted total from named pieces; invalid vars contribute nothing.
struct WeightedPieces {
    Var hf_or_physics, lf, ic, bc, reg_nl, reg_lf;
};
Var weighted_total(Tape& t, const WeightedPieces& p, const LossWeights& lw);

// ---------------------------------------------------------------------------
// Value-level loss functionals (full-batch, spec surface).
// ---------------------------------------------------------------------------

double l2_reg(const deeponet::MLPStack& branch);
double l2_reg_branch(const deeponet::ModifiedDeepONetParams& p);

double loss_lf(const deeponet::ModifiedDeepONetParams& lf, const FidelityDataset& lf_ds);

double loss_sf_data(const deeponet::ModifiedDeepONetParams& sf, const FidelityDataset& hf_ds);

/// Composite data loss; hf_ds.lf_sensor_inputs must carry u at the
/// low-fidelity sensors (falls back to hf_ds.inputs when empty and the
/// widths agree).
double loss_hf_data(const CompositeParams& p, const FidelityDataset& hf_ds, const ProbeGrid& probes);

struct DataDrivenBreakdown {
    double hf = 0, lf = 0, reg_nl = 0, reg_lf = 0, total = 0;
};
DataDrivenBreakdown loss_data_driven(const CompositeParams& p, const FidelityDataset& lf_ds,
                                     const FidelityDataset& hf_ds, const ProbeGrid& probes,
                                     const LossWeights& lw);

struct PiBreakdown {
    double physics = 0, lf = 0, ic = 0, bc = 0, reg_nl = 0, reg_lf = 0, total = 0;
};

/// Physics-informed composite loss. `hf_samples` carries the input functions
/// physics is enforced for (inputs at M_H sensors may be absent) plus
/// per-sample data needed by the residual/BC (metadata "a" for the ODE).
PiBreakdown loss_pi_multifidelity(const CompositeParams& p, const FidelityDataset& lf_ds,
                                  const FidelityDataset& hf_samples, const ProbeGrid& probes,
                                  const ResidualSpec& spec, const CollocationSet& colloc,
                                  const LossWeights& lw);

double loss_pi_sf(const deeponet::ModifiedDeepONetParams& sf, const FidelityDataset& hf_samples,
                  const ResidualSpec& spec, const CollocationSet& colloc, const LossWeights& lw);

double loss_physics_mf(const CompositeParams& p, const FidelityDataset& hf_samples,
                       const ProbeGrid& probes, const ResidualSpec& spec, const Tensor& interior);

double loss_noncomposite(const deeponet::ModifiedDeepONetParams& nonlinear,
                         const deeponet::StandardDeepONetParams& linear, const Tensor& oracle_probes,
                         const Tensor& oracle_lf_at_queries, const FidelityDataset& hf_ds,
                         double lambda1, double lambda3);

/// Per-sample targets and helper tensors the PI losses need.
Tensor ode_forcing_rows(const std::vector<double>& a_values, const Tensor& points);
Tensor dirichlet_cos_targets(const std::vector<double>& a_values, std::size_t pts);
Tensor ic_target_rows(const FidelityDataset& hf_samples, const Tensor& ic_points);

}  // namespace mfdon::losses
