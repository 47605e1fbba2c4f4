#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfdon/dataset.hpp"
#include "mfdon/deeponet.hpp"

namespace mfdon::multifidelity {

/// Fixed coordinates at which the low-fidelity prediction is evaluated to
/// form the branch inputs of the correlation blocks.
struct ProbeGrid {
    Tensor points;  // Q x dim

    std::size_t count() const { return points.rank() == 2 ? points.rows() : 0; }
    std::size_t dim() const { return points.rank() == 2 ? points.cols() : 0; }
};

/// The three simultaneously trained subnets.
struct CompositeParams {
    deeponet::ModifiedDeepONetParams lf;
    deeponet::ModifiedDeepONetParams nonlinear;  // final_activation set
    deeponet::StandardDeepONetParams linear;     // no activations
};

/// Throws unless the branch widths obey the composite wiring: the linear
/// branch consumes the low-fidelity prediction at the query point (width =
/// component count), the nonlinear branch consumes m_h sensor values plus the
/// probe vector.
void validate_wiring(const CompositeParams& p, const ProbeGrid& probes, std::size_t m_h);

/// Whether the nonlinear branch input includes sensor values of u in addition
/// to the probe vector (m_h > 0), deduced from the parameter widths.
bool wiring_uses_hf_sensors(const CompositeParams& p, const ProbeGrid& probes);

CompositeParams init_composite(std::size_t m_l, std::size_t m_h, std::size_t trunk_dim,
                               const deeponet::NetSpec& lf_spec, const deeponet::NetSpec& linear_spec,
                               const deeponet::NetSpec& nonlinear_spec, deeponet::Activation act,
                               std::size_t probe_count, std::size_t components, std::uint64_t seed);

void visit_params(CompositeParams& p, const deeponet::ParamVisitor& f);

// ---------------------------------------------------------------------------
// Value-level operations (single sample / single query), used by tests and
// small-scale evaluation.
// ---------------------------------------------------------------------------

double lf_predict(const deeponet::ModifiedDeepONetParams& lf, std::span<const double> u_sensors,
                  std::span<const double> x);

std::vector<double> probe_vector(const deeponet::ModifiedDeepONetParams& lf,
                                 std::span<const double> u_sensors, const ProbeGrid& probes);

struct HfParts {
    std::vector<double> linear;     // per component
    std::vector<double> nonlinear;  // per component
    std::vector<double> total;      // per component
};

/// Composite high-fidelity prediction F_l + F_nl at one query. u_sensors_h
/// feeds the nonlinear branch (may be empty when that branch consumes only
/// probes); u_sensors_l feeds the low-fidelity subnet, which supplies both the
/// probe vector and the pointwise value driving the linear branch.
HfParts hf_predict_parts(const CompositeParams& p, std::span<const double> u_sensors_h,
                         std::span<const double> u_sensors_l, const ProbeGrid& probes,
                         std::span<const double> x);

/// Shared-sensor convenience: the same u values feed both branches.
double hf_predict(const CompositeParams& p, std::span<const double> u_sensors_h,
                  const ProbeGrid& probes, std::span<const double> x);

/// Exact low-fidelity function on a coordinate.
using LfOracle = std::function<double(std::span<const double> x)>;

/// Non-composite variant: the probe vector comes from an exact low-fidelity
/// solver instead of a trained subnet; only the correlation nets are involved.
double noncomposite_hf_predict(const LfOracle& lf_oracle,
                               const deeponet::ModifiedDeepONetParams& nonlinear,
                               const deeponet::StandardDeepONetParams& linear,
                               std::span<const double> u_sensors_h, const ProbeGrid& probes,
                               std::span<const double> x);

// ---------------------------------------------------------------------------
// Tape-level wiring used by losses, training and batched evaluation.
// ---------------------------------------------------------------------------

struct CompositeVars {
    deeponet::ModifiedVars lf;
    deeponet::ModifiedVars nonlinear;
    deeponet::StandardVars linear;
    // When probe gradients are detached, the probe path runs through this
    // constant mirror of the low-fidelity parameters instead of `lf`.
    deeponet::ModifiedVars lf_probe_view;
    bool probe_gradient = true;

    const deeponet::ModifiedVars& probe_net() const { return probe_gradient ? lf : lf_probe_view; }
};

CompositeVars bind_composite(ad::Tape& t, const CompositeParams& p, bool trainable,
                             bool probe_gradient);

/// (N x Q) matrix of low-fidelity predictions at the probe points.
ad::Var probe_matrix(ad::Tape& t, const deeponet::ModifiedVars& lf, ad::Var u_sensors,
                     ad::Var probe_points, std::size_t n_samples, std::size_t n_probes);

/// Composite correlation-block outputs over an N x P grid. `u_sensors_h` is
/// invalid when m_h == 0; `u_sensors_l` feeds the low-fidelity evaluation at
/// the query points. Row order is (sample * P + query); columns are output
/// components.
template <class V>
struct HfGrid {
    V lf_at_queries;  // low-fidelity prediction rows feeding the linear branch
    V linear;
    V nonlinear;
    V total;
};

HfGrid<ad::Var> hf_forward_grid(ad::Tape& t, const CompositeVars& c, ad::Var u_sensors_h,
                                ad::Var u_sensors_l, ad::Var probes_mat, ad::Var x_compact,
                                std::size_t n, std::size_t p);

HfGrid<ad::JetVar> hf_forward_grid_jet(ad::Tape& t, const CompositeVars& c, ad::Var u_sensors_h,
                                       ad::Var u_sensors_l, ad::Var probes_mat,
                                       const ad::JetVar& x_compact, std::size_t n, std::size_t p);

// ---------------------------------------------------------------------------
// Linear-correlation extraction.
// ---------------------------------------------------------------------------

/// Least-squares fit of the linear block's output against the basis
/// { F_LF(u)(x), x_1..x_d, 1, x_1 F_LF .. x_d F_LF } over a samples x queries
/// grid. The block's output lies exactly in this span, so the residual is ~0
/// up to conditioning.
struct CorrelationFit {
    double c_lf = 0.0;            // coefficient on F_LF(u)(x)
    std::vector<double> c_coord;  // per query coordinate
    double c_const = 0.0;
    std::vector<double> c_cross;  // per coordinate, on x_i * F_LF
    double residual_rms = 0.0;
};

CorrelationFit extract_linear_correlation(const deeponet::StandardDeepONetParams& linear,
                                          const Tensor& lf_at_queries,  // N x P
                                          const Tensor& queries);       // P x d

}  // namespace mfdon::multifidelity
