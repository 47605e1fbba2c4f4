#include "mfdon/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace mfdon::losses {

namespace {
constexpr double kFourPi = 12.566370614359172953850573533118;
}

void LossWeights::validate() const {
    for (double v : {l1, l2, l3, l4, l5, l6})
        if (!(v >= 0.0) || !std::isfinite(v))
            throw std::invalid_argument("loss weights must be finite and non-negative");
}

void ResidualSpec::validate() const {
    if (kind == PdeKind::Burgers && !(viscosity > 0.0))
        throw std::invalid_argument("Burgers residual requires viscosity > 0");
}

double residual_burgers(const JetPredictFn& predict, std::span<const double> xt, double viscosity) {
    ad::CoordJet j = predict(xt);
    if (j.d1.size() < 2 || j.d2.empty())
        throw std::invalid_argument("residual_burgers: jet must carry dx, dt and dxx channels");
    const double r = j.d1[1] + j.value * j.d1[0] - viscosity * j.d2[0];
    if (!std::isfinite(r)) throw std::runtime_error("residual_burgers: non-finite residual channel");
    return r;
}

double residual_ode_3_1(const JetPredictFn& predict, double a, double x) {
    ad::CoordJet j = predict(std::span<const double>(&x, 1));
    if (j.d1.empty()) throw std::invalid_argument("residual_ode_3_1: jet must carry a dx channel");
    return j.d1[0] + kFourPi * std::sin(kFourPi * x + a);
}

Var sq_mean(Tape& t, Var pred, Var targets) {
    Var diff = t.sub(pred, targets);
    const double n = static_cast<double>(t.value(pred).size());
    return t.affine(t.sum_all(t.square(diff)), 1.0 / n, 0.0);
}

Var norm_mean(Tape& t, Var residual_rows, ResidualNorm norm) {
    const double n = static_cast<double>(t.value(residual_rows).size());
    Var body = norm == ResidualNorm::L2 ? t.square(residual_rows) : t.abs_(residual_rows);
    return t.affine(t.sum_all(body), 1.0 / n, 0.0);
}

Var l2_reg_vars(Tape& t, const deeponet::StackVars& s) {
    Var acc;
    for (Var w : s.weights) {
        Var sq = t.sum_all(t.square(w));
        acc = acc.valid() ? t.add(acc, sq) : sq;
    }
    for (Var b : s.biases) {
        Var sq = t.sum_all(t.square(b));
        acc = acc.valid() ? t.add(acc, sq) : sq;
    }
    return acc;
}

Var l2_reg_branch(Tape& t, const deeponet::ModifiedVars& v) {
    Var acc = l2_reg_vars(t, v.branch);
    if (v.enc_branch_w.valid()) {
        acc = t.add(acc, t.sum_all(t.square(v.enc_branch_w)));
        acc = t.add(acc, t.sum_all(t.square(v.enc_branch_b)));
    }
    return acc;
}

GridPredictor composite_predictor(Tape& t, const CompositeVars& c, Var u_sensors_h,
                                  Var u_sensors_l, Var probes_mat, std::size_t n) {
    GridPredictor g;
    g.n_samples = n;
    g.plain = [&t, &c, u_sensors_h, u_sensors_l, probes_mat, n](Tape&, Var x, std::size_t p) {
        return multifidelity::hf_forward_grid(t, c, u_sensors_h, u_sensors_l, probes_mat, x, n, p)
            .total;
    };
    g.jet = [&t, &c, u_sensors_h, u_sensors_l, probes_mat, n](Tape&, const JetVar& x,
                                                              std::size_t p) {
        return multifidelity::hf_forward_grid_jet(t, c, u_sensors_h, u_sensors_l, probes_mat, x, n,
                                                  p)
            .total;
    };
    return g;
}

GridPredictor sf_predictor(Tape& t, const deeponet::ModifiedVars& net, Var u_sensors, std::size_t n) {
    GridPredictor g;
    g.n_samples = n;
    g.plain = [&t, &net, u_sensors, n](Tape&, Var x, std::size_t p) {
        return deeponet::modified_forward_grid(t, net, u_sensors, x, n, p);
    };
    g.jet = [&t, &net, u_sensors, n](Tape&, const JetVar& x, std::size_t p) {
        ad::JetVar uj = ad::jet_const(u_sensors, x.n1(), x.n2());
        return deeponet::modified_forward_grid(t, net, uj, x, n, p);
    };
    return g;
}

Var residual_rows(Tape& t, const JetVar& pred, const ResidualSpec& spec, Var ode_forcing) {
    switch (spec.kind) {
        case PdeKind::Burgers: {
            // s_t + s s_x - nu s_xx; channels seeded as (x, t) with dxx tracked.
            Var advect = t.mul(pred.v, pred.d1[0]);
            Var r = t.add(pred.d1[1], advect);
            if (pred.d2[0].valid()) r = t.sub(r, t.affine(pred.d2[0], spec.viscosity, 0.0));
            return r;
        }
        case PdeKind::CosineOde:
            // dy/dx + 4 pi sin(4 pi x + a); the forcing rows are precomputed.
            return t.add(pred.d1[0], ode_forcing);
        case PdeKind::None:
            break;
    }
    throw std::invalid_argument("residual_rows: no PDE kind configured");
}

PiPieceVars build_pi_pieces(Tape& t, const GridPredictor& predict, const ResidualSpec& spec,
                            const CollocationSet& colloc, const PiFeeds& feeds) {
    PiPieceVars out;
    const std::size_t p_p = t.value(feeds.colloc).rows();

    // Physics residual: (x[, t]) channels, second derivative only for Burgers.
    {
        std::vector<std::size_t> first{0};
        std::size_t second = 0;
        if (spec.kind == PdeKind::Burgers) {
            first = {0, 1};
            second = 1;
        }
        JetVar xj = ad::jet_seed_coords(t, feeds.colloc, first, second);
        JetVar pred = predict.jet(t, xj, p_p);
        out.physics = norm_mean(t, residual_rows(t, pred, spec, feeds.ode_forcing), spec.norm);
    }

    if (colloc.ic_points.size() && feeds.ic_targets.valid()) {
        Var pts = t.constant(colloc.ic_points);
        Var pred = predict.plain(t, pts, colloc.ic_points.rows());
        out.ic = norm_mean(t, t.sub(pred, feeds.ic_targets), spec.norm);
    }

    switch (colloc.bc) {
        case BcKind::PeriodicBurgers: {
            // Value and first-derivative matching across the periodic faces.
            JetVar xa = ad::jet_seed_coords(t, t.constant(colloc.bc_points_a), {0}, 0);
            JetVar xb = ad::jet_seed_coords(t, t.constant(colloc.bc_points_b), {0}, 0);
            JetVar pa = predict.jet(t, xa, colloc.bc_points_a.rows());
            JetVar pb = predict.jet(t, xb, colloc.bc_points_b.rows());
            Var value_gap = norm_mean(t, t.sub(pa.v, pb.v), spec.norm);
            Var slope_gap = norm_mean(t, t.sub(pa.d1[0], pb.d1[0]), spec.norm);
            out.bc = t.add(value_gap, slope_gap);
            break;
        }
        case BcKind::DirichletValue: {
            Var pts = t.constant(colloc.bc_points_a);
            Var pred = predict.plain(t, pts, colloc.bc_points_a.rows());
            out.bc = norm_mean(t, t.sub(pred, feeds.bc_targets), spec.norm);
            break;
        }
        case BcKind::None:
            break;
    }
    return out;
}

Var weighted_total(Tape& t, const WeightedPieces& p, const LossWeights& lw) {
    Var acc;
    auto push = [&](Var piece, double w) {
        if (!piece.valid() || w == 0.0) return;
        Var term = t.affine(piece, w, 0.0);
        acc = acc.valid() ? t.add(acc, term) : term;
    };
    push(p.hf_or_physics, lw.l1);
    push(p.lf, lw.l2);
    push(p.reg_nl, lw.l3);
    push(p.reg_lf, lw.l4);
    push(p.ic, lw.l5);
    push(p.bc, lw.l6);
    if (!acc.valid()) acc = t.constant(Tensor::scalar(0.0));
    return acc;
}

// ---------------------------------------------------------------------------
// Value-level losses.
// ---------------------------------------------------------------------------

namespace {

Tensor flat_outputs(const FidelityDataset& ds) {
    return Tensor({ds.num_samples() * ds.num_queries(), ds.components()}, ds.outputs.vec());
}

void require_nonempty(const FidelityDataset& ds, const char* who) {
    if (ds.num_samples() == 0 || ds.num_queries() == 0)
        throw std::invalid_argument(std::string(who) + ": empty dataset");
}

double dataset_mse(const deeponet::ModifiedDeepONetParams& net, const FidelityDataset& ds,
                   const char* who) {
    require_nonempty(ds, who);
    ds.validate();
    Tape t;
    auto v = deeponet::bind_params(t, net, "net", false);
    Var pred = deeponet::modified_forward_grid(t, v, t.constant(ds.inputs), t.constant(ds.queries),
                                               ds.num_samples(), ds.num_queries());
    Var loss = sq_mean(t, pred, t.constant(flat_outputs(ds)));
    return t.scalar_value(loss);
}

}  // namespace

double l2_reg(const deeponet::MLPStack& branch) {
    double s = 0.0;
    for (const Tensor& w : branch.weights)
        for (double v : w.vec()) s += v * v;
    for (const Tensor& b : branch.biases)
        for (double v : b.vec()) s += v * v;
    return s;
}

double l2_reg_branch(const deeponet::ModifiedDeepONetParams& p) {
    double s = l2_reg(p.branch);
    for (double v : p.enc_branch_w.vec()) s += v * v;
    for (double v : p.enc_branch_b.vec()) s += v * v;
    return s;
}

double loss_lf(const deeponet::ModifiedDeepONetParams& lf, const FidelityDataset& lf_ds) {
    return dataset_mse(lf, lf_ds, "loss_lf");
}

double loss_sf_data(const deeponet::ModifiedDeepONetParams& sf, const FidelityDataset& hf_ds) {
    return dataset_mse(sf, hf_ds, "loss_sf_data");
}

namespace {

struct HfGraph {
    Tape tape;
    CompositeVars vars;
    Var hf_loss;
};

// Shared assembly of the composite data term.
void build_hf_data_term(Tape& t, const CompositeParams& params, const CompositeVars& cv,
                        const FidelityDataset& hf_ds, const ProbeGrid& probes, Var& out_loss) {
    const std::size_t n = hf_ds.num_samples(), p = hf_ds.num_queries();
    const Tensor& lf_in = hf_ds.lf_sensor_inputs();
    Var u_l = t.constant(lf_in);
    Var pm = multifidelity::probe_matrix(t, cv.probe_net(), u_l, t.constant(probes.points), n,
                                         probes.count());
    Var u_h;
    if (multifidelity::wiring_uses_hf_sensors(params, probes)) u_h = t.constant(hf_ds.inputs);
    auto grid =
        multifidelity::hf_forward_grid(t, cv, u_h, u_l, pm, t.constant(hf_ds.queries), n, p);
    out_loss = sq_mean(t, grid.total, t.constant(flat_outputs(hf_ds)));
}

}  // namespace

double loss_hf_data(const CompositeParams& p, const FidelityDataset& hf_ds, const ProbeGrid& probes) {
    require_nonempty(hf_ds, "loss_hf_data");
    hf_ds.validate();
    Tape t;
    CompositeVars cv = multifidelity::bind_composite(t, p, false, true);
    Var loss;
    build_hf_data_term(t, p, cv, hf_ds, probes, loss);
    return t.scalar_value(loss);
}

DataDrivenBreakdown loss_data_driven(const CompositeParams& p, const FidelityDataset& lf_ds,
                                     const FidelityDataset& hf_ds, const ProbeGrid& probes,
                                     const LossWeights& lw) {
    lw.validate();
    DataDrivenBreakdown b;
    b.hf = loss_hf_data(p, hf_ds, probes);
    b.lf = loss_lf(p.lf, lf_ds);
    b.reg_nl = l2_reg_branch(p.nonlinear);
    b.reg_lf = l2_reg_branch(p.lf);
    b.total = lw.l1 * b.hf + lw.l2 * b.lf + lw.l3 * b.reg_nl + lw.l4 * b.reg_lf;
    return b;
}

Tensor ode_forcing_rows(const std::vector<double>& a_values, const Tensor& points) {
    const std::size_t n = a_values.size(), p = points.rows();
    Tensor rows({n * p, 1});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j)
            rows[i * p + j] = kFourPi * std::sin(kFourPi * points.at(j, 0) + a_values[i]);
    return rows;
}

Tensor dirichlet_cos_targets(const std::vector<double>& a_values, std::size_t pts) {
    Tensor rows({a_values.size() * pts, 1});
    for (std::size_t i = 0; i < a_values.size(); ++i)
        for (std::size_t j = 0; j < pts; ++j) rows[i * pts + j] = std::cos(a_values[i]);
    return rows;
}

Tensor ic_target_rows(const FidelityDataset& hf_samples, const Tensor& ic_points) {
    const Tensor* ic = hf_samples.extra_or_null("ic_values");
    if (!ic) throw std::invalid_argument("physics dataset lacks 'ic_values' rows");
    if (ic->cols() != ic_points.rows())
        throw std::invalid_argument("'ic_values' width differs from the IC point count");
    return Tensor({ic->rows() * ic->cols(), 1}, ic->vec());
}

namespace {

PiFeeds make_pi_feeds_const(Tape& t, const FidelityDataset& hf_samples, const ResidualSpec& spec,
                            const CollocationSet& colloc) {
    PiFeeds feeds;
    feeds.colloc = t.constant(colloc.interior);
    if (spec.kind == PdeKind::CosineOde) {
        const auto& a = hf_samples.sample_meta.at("a");
        feeds.ode_forcing = t.constant(ode_forcing_rows(a, colloc.interior));
        if (colloc.bc == BcKind::DirichletValue)
            feeds.bc_targets = t.constant(dirichlet_cos_targets(a, colloc.bc_points_a.rows()));
    }
    if (colloc.ic_points.size())
        feeds.ic_targets = t.constant(ic_target_rows(hf_samples, colloc.ic_points));
    return feeds;
}

}  // namespace

PiBreakdown loss_pi_multifidelity(const CompositeParams& p, const FidelityDataset& lf_ds,
                                  const FidelityDataset& hf_samples, const ProbeGrid& probes,
                                  const ResidualSpec& spec, const CollocationSet& colloc,
                                  const LossWeights& lw) {
    lw.validate();
    spec.validate();
    PiBreakdown b;
    {
        Tape t;
        CompositeVars cv = multifidelity::bind_composite(t, p, false, true);
        const std::size_t n = hf_samples.num_samples();
        Var u_l = t.constant(hf_samples.lf_sensor_inputs());
        Var pm = multifidelity::probe_matrix(t, cv.probe_net(), u_l, t.constant(probes.points), n,
                                             probes.count());
        Var u_h;
        if (multifidelity::wiring_uses_hf_sensors(p, probes)) u_h = t.constant(hf_samples.inputs);
        GridPredictor predictor = composite_predictor(t, cv, u_h, u_l, pm, n);
        PiFeeds feeds = make_pi_feeds_const(t, hf_samples, spec, colloc);
        PiPieceVars pieces = build_pi_pieces(t, predictor, spec, colloc, feeds);
        b.physics = t.scalar_value(pieces.physics);
        if (pieces.ic.valid()) b.ic = t.scalar_value(pieces.ic);
        if (pieces.bc.valid()) b.bc = t.scalar_value(pieces.bc);
    }
    b.lf = loss_lf(p.lf, lf_ds);
    b.reg_nl = l2_reg_branch(p.nonlinear);
    b.reg_lf = l2_reg_branch(p.lf);
    b.total = lw.l1 * b.physics + lw.l2 * b.lf + lw.l5 * b.ic + lw.l6 * b.bc + lw.l3 * b.reg_nl +
              lw.l4 * b.reg_lf;
    return b;
}

double loss_pi_sf(const deeponet::ModifiedDeepONetParams& sf, const FidelityDataset& hf_samples,
                  const ResidualSpec& spec, const CollocationSet& colloc, const LossWeights& lw) {
    lw.validate();
    spec.validate();
    Tape t;
    auto v = deeponet::bind_params(t, sf, "sf", false);
    Var u = t.constant(hf_samples.inputs);
    GridPredictor predictor = sf_predictor(t, v, u, hf_samples.num_samples());
    PiFeeds feeds = make_pi_feeds_const(t, hf_samples, spec, colloc);
    PiPieceVars pieces = build_pi_pieces(t, predictor, spec, colloc, feeds);
    double total = lw.l1 * t.scalar_value(pieces.physics);
    if (pieces.ic.valid()) total += lw.l5 * t.scalar_value(pieces.ic);
    if (pieces.bc.valid()) total += lw.l6 * t.scalar_value(pieces.bc);
    return total;
}

double loss_physics_mf(const CompositeParams& p, const FidelityDataset& hf_samples,
                       const ProbeGrid& probes, const ResidualSpec& spec, const Tensor& interior) {
    spec.validate();
    CollocationSet colloc;
    colloc.interior = interior;
    Tape t;
    CompositeVars cv = multifidelity::bind_composite(t, p, false, true);
    const std::size_t n = hf_samples.num_samples();
    Var u_l = t.constant(hf_samples.lf_sensor_inputs());
    Var pm = multifidelity::probe_matrix(t, cv.probe_net(), u_l, t.constant(probes.points), n,
                                         probes.count());
    Var u_h;
    if (multifidelity::wiring_uses_hf_sensors(p, probes)) u_h = t.constant(hf_samples.inputs);
    GridPredictor predictor = composite_predictor(t, cv, u_h, u_l, pm, n);
    PiFeeds feeds = make_pi_feeds_const(t, hf_samples, spec, colloc);
    PiPieceVars pieces = build_pi_pieces(t, predictor, spec, colloc, feeds);
    return t.scalar_value(pieces.physics);
}

double loss_noncomposite(const deeponet::ModifiedDeepONetParams& nonlinear,
                         const deeponet::StandardDeepONetParams& linear, const Tensor& oracle_probes,
                         const Tensor& oracle_lf_at_queries, const FidelityDataset& hf_ds,
                         double lambda1, double lambda3) {
    require_nonempty(hf_ds, "loss_noncomposite");
    Tape t;
    auto nv = deeponet::bind_params(t, nonlinear, "nl", false);
    auto lv = deeponet::bind_params(t, linear, "lin", false);
    const std::size_t n = hf_ds.num_samples(), p = hf_ds.num_queries();
    Var pm = t.constant(oracle_probes);
    const bool use_uh = nonlinear.branch_in() > oracle_probes.cols();
    Var nl_branch = use_uh ? t.concat_cols(t.constant(hf_ds.inputs), pm) : pm;
    Var xq = t.constant(hf_ds.queries);
    Var lf_rows = t.constant(Tensor({n * p, 1}, oracle_lf_at_queries.vec()));
    Var x_rows = t.tile_rows(xq, static_cast<std::uint32_t>(n));
    Var pred = t.add(deeponet::modified_forward_grid(t, nv, nl_branch, xq, n, p),
                     deeponet::standard_forward_rows(t, lv, lf_rows, x_rows));
    Var loss = sq_mean(t, pred, t.constant(flat_outputs(hf_ds)));
    return lambda1 * t.scalar_value(loss) + lambda3 * l2_reg_branch(nonlinear);
}

}  // namespace mfdon::losses
