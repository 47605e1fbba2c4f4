#include "mfdon/multifidelity.hpp"

#include <cmath>
#include <stdexcept>

namespace mfdon::multifidelity {

using ad::JetVar;
using ad::Tape;
using ad::Var;
using deeponet::ModifiedVars;

void validate_wiring(const CompositeParams& p, const ProbeGrid& probes, std::size_t m_h) {
    if (probes.count() == 0) throw std::invalid_argument("composite wiring: empty probe grid");
    if (p.linear.branch_in() != p.lf.components)
        throw std::invalid_argument(
            "composite wiring: linear branch width != output component count");
    if (p.nonlinear.branch_in() != m_h + probes.count() * p.lf.components)
        throw std::invalid_argument("composite wiring: nonlinear branch width != sensors + probes");
    if (p.lf.trunk_in() != probes.dim() || p.linear.trunk_in() != probes.dim() ||
        p.nonlinear.trunk_in() != probes.dim())
        throw std::invalid_argument("composite wiring: trunk dimension != probe coordinate dimension");
}

bool wiring_uses_hf_sensors(const CompositeParams& p, const ProbeGrid& probes) {
    return p.nonlinear.branch_in() > probes.count() * p.lf.components;
}

CompositeParams init_composite(std::size_t m_l, std::size_t m_h, std::size_t trunk_dim,
                               const deeponet::NetSpec& lf_spec, const deeponet::NetSpec& linear_spec,
                               const deeponet::NetSpec& nonlinear_spec, deeponet::Activation act,
                               std::size_t probe_count, std::size_t components, std::uint64_t seed) {
    CompositeParams p;
    p.lf = deeponet::init_modified(m_l, trunk_dim, lf_spec, act, false, components, seed);
    p.nonlinear = deeponet::init_modified(m_h + probe_count * components, trunk_dim, nonlinear_spec,
                                          act, true, components, seed + 1);
    p.linear = deeponet::init_standard(components, trunk_dim, linear_spec,
                                       deeponet::Activation::None, components, seed + 2);
    return p;
}

void visit_params(CompositeParams& p, const deeponet::ParamVisitor& f) {
    deeponet::visit_params(p.lf, "lf", f);
    deeponet::visit_params(p.nonlinear, "nl", f);
    deeponet::visit_params(p.linear, "lin", f);
}

double lf_predict(const deeponet::ModifiedDeepONetParams& lf, std::span<const double> u_sensors,
                  std::span<const double> x) {
    return deeponet::modified_forward(lf, u_sensors, x);
}

std::vector<double> probe_vector(const deeponet::ModifiedDeepONetParams& lf,
                                 std::span<const double> u_sensors, const ProbeGrid& probes) {
    const std::size_t q = probes.count(), d = probes.dim(), c = lf.components;
    std::vector<double> out;
    out.reserve(q * c);
    for (std::size_t i = 0; i < q; ++i) {
        std::span<const double> x(probes.points.data() + i * d, d);
        std::vector<double> v = deeponet::modified_forward_components(lf, u_sensors, x);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

HfParts hf_predict_parts(const CompositeParams& p, std::span<const double> u_sensors_h,
                         std::span<const double> u_sensors_l, const ProbeGrid& probes,
                         std::span<const double> x) {
    std::vector<double> pv = probe_vector(p.lf, u_sensors_l, probes);
    std::vector<double> nl_in;
    nl_in.reserve(u_sensors_h.size() + pv.size());
    nl_in.insert(nl_in.end(), u_sensors_h.begin(), u_sensors_h.end());
    nl_in.insert(nl_in.end(), pv.begin(), pv.end());

    HfParts parts;
    parts.nonlinear = deeponet::modified_forward_components(p.nonlinear, nl_in, x);
    // The linear branch consumes the low-fidelity prediction at the query.
    const std::vector<double> lf_here = deeponet::modified_forward_components(p.lf, u_sensors_l, x);
    Tape t;
    auto lv = deeponet::bind_params(t, p.linear, "lin", false);
    Var ur = t.constant(Tensor({1, lf_here.size()}, std::vector<double>(lf_here)));
    Var xr = t.constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
    Var out = deeponet::standard_forward_rows(t, lv, ur, xr);
    parts.linear = t.value(out).vec();
    parts.total.resize(parts.linear.size());
    for (std::size_t i = 0; i < parts.total.size(); ++i)
        parts.total[i] = parts.linear[i] + parts.nonlinear[i];
    return parts;
}

double hf_predict(const CompositeParams& p, std::span<const double> u_sensors_h,
                  const ProbeGrid& probes, std::span<const double> x) {
    return hf_predict_parts(p, u_sensors_h, u_sensors_h, probes, x).total.at(0);
}

double noncomposite_hf_predict(const LfOracle& lf_oracle,
                               const deeponet::ModifiedDeepONetParams& nonlinear,
                               const deeponet::StandardDeepONetParams& linear,
                               std::span<const double> u_sensors_h, const ProbeGrid& probes,
                               std::span<const double> x) {
    const std::size_t q = probes.count(), d = probes.dim();
    std::vector<double> pv(q);
    for (std::size_t i = 0; i < q; ++i)
        pv[i] = lf_oracle(std::span<const double>(probes.points.data() + i * d, d));

    std::vector<double> nl_in;
    nl_in.insert(nl_in.end(), u_sensors_h.begin(), u_sensors_h.end());
    nl_in.insert(nl_in.end(), pv.begin(), pv.end());
    const double nl = deeponet::modified_forward(nonlinear, nl_in, x);
    const std::vector<double> lf_here{lf_oracle(x)};
    const double lin = deeponet::standard_forward(linear, lf_here, x);
    return nl + lin;
}

CompositeVars bind_composite(Tape& t, const CompositeParams& p, bool trainable, bool probe_gradient) {
    CompositeVars c;
    c.lf = deeponet::bind_params(t, p.lf, "lf", trainable);
    c.nonlinear = deeponet::bind_params(t, p.nonlinear, "nl", trainable);
    c.linear = deeponet::bind_params(t, p.linear, "lin", trainable);
    c.probe_gradient = probe_gradient;
    if (!probe_gradient) c.lf_probe_view = deeponet::bind_params(t, p.lf, "lfview", false);
    return c;
}

Var probe_matrix(Tape& t, const ModifiedVars& lf, Var u_sensors, Var probe_points,
                 std::size_t n_samples, std::size_t n_probes) {
    Var flat = deeponet::modified_forward_grid(t, lf, u_sensors, probe_points, n_samples, n_probes);
    const std::size_t c = t.value(flat).cols();
    return t.reshape(flat, {n_samples, n_probes * c});
}

HfGrid<Var> hf_forward_grid(Tape& t, const CompositeVars& c, Var u_sensors_h, Var u_sensors_l,
                            Var probes_mat, Var x_compact, std::size_t n, std::size_t p) {
    Var nl_branch = u_sensors_h.valid() ? t.concat_cols(u_sensors_h, probes_mat) : probes_mat;
    HfGrid<Var> out;
    out.nonlinear = deeponet::modified_forward_grid(t, c.nonlinear, nl_branch, x_compact, n, p);
    out.lf_at_queries =
        deeponet::modified_forward_grid(t, c.probe_net(), u_sensors_l, x_compact, n, p);
    Var x_rows = t.tile_rows(x_compact, static_cast<std::uint32_t>(n));
    out.linear = deeponet::standard_forward_rows(t, c.linear, out.lf_at_queries, x_rows);
    out.total = t.add(out.linear, out.nonlinear);
    return out;
}

HfGrid<JetVar> hf_forward_grid_jet(Tape& t, const CompositeVars& c, Var u_sensors_h, Var u_sensors_l,
                                   Var probes_mat, const JetVar& x_compact, std::size_t n,
                                   std::size_t p) {
    Var nl_branch = u_sensors_h.valid() ? t.concat_cols(u_sensors_h, probes_mat) : probes_mat;
    const std::size_t n1 = x_compact.n1(), n2 = x_compact.n2();
    JetVar nl_branch_jet = ad::jet_const(nl_branch, n1, n2);
    JetVar u_l_jet = ad::jet_const(u_sensors_l, n1, n2);
    HfGrid<JetVar> out;
    out.nonlinear = deeponet::modified_forward_grid(t, c.nonlinear, nl_branch_jet, x_compact, n, p);
    // Query-coordinate channels flow through the low-fidelity net into the
    // linear branch, whose input is the pointwise low-fidelity prediction.
    out.lf_at_queries =
        deeponet::modified_forward_grid(t, c.probe_net(), u_l_jet, x_compact, n, p);
    JetVar x_rows = ad::jet_tile_rows(t, x_compact, static_cast<std::uint32_t>(n));
    out.linear = deeponet::standard_forward_rows(t, c.linear, out.lf_at_queries, x_rows);
    out.total = ad::jet_add(t, out.linear, out.nonlinear);
    return out;
}

namespace {

// Solve the symmetric positive definite normal equations by Gaussian
// elimination with partial pivoting; near-zero pivots mean the evaluation
// grid cannot separate the basis functions.
std::vector<double> solve_normal(std::vector<std::vector<double>> ata, std::vector<double> atb) {
    const std::size_t n = atb.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(ata[r][col]) > std::fabs(ata[pivot][col])) pivot = r;
        if (std::fabs(ata[pivot][col]) < 1e-12)
            throw std::runtime_error(
                "extract_linear_correlation: singular regression (degenerate probe/query grid)");
        std::swap(ata[pivot], ata[col]);
        std::swap(atb[pivot], atb[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = ata[r][col] / ata[col][col];
            for (std::size_t k = col; k < n; ++k) ata[r][k] -= f * ata[col][k];
            atb[r] -= f * atb[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t r = n; r-- > 0;) {
        double s = atb[r];
        for (std::size_t k = r + 1; k < n; ++k) s -= ata[r][k] * x[k];
        x[r] = s / ata[r][r];
    }
    return x;
}

}  // namespace

CorrelationFit extract_linear_correlation(const deeponet::StandardDeepONetParams& linear,
                                          const Tensor& lf_at_queries, const Tensor& queries) {
    const std::size_t n = lf_at_queries.rows();
    const std::size_t p = queries.rows();
    const std::size_t d = queries.cols();
    if (lf_at_queries.cols() != p)
        throw std::invalid_argument("extract_linear_correlation: lf_at_queries shape mismatch");

    // Evaluate the linear block over the full grid in one pass: branch rows
    // are the pointwise low-fidelity values, trunk rows the tiled queries.
    Tape t;
    auto lv = deeponet::bind_params(t, linear, "lin", false);
    Var lf_rows = t.constant(Tensor({n * p, 1}, lf_at_queries.vec()));
    Var x_rows = t.tile_rows(t.constant(queries), static_cast<std::uint32_t>(n));
    Var targets = deeponet::standard_forward_rows(t, lv, lf_rows, x_rows);
    const Tensor& y = t.value(targets);

    const std::size_t nb = 2 + 2 * d;  // F_LF, coords..., 1, coord*F_LF...
    std::vector<std::vector<double>> ata(nb, std::vector<double>(nb, 0.0));
    std::vector<double> atb(nb, 0.0);
    std::vector<double> row(nb);

    auto accumulate = [&](const double* xq, double flf, double target) {
        row[0] = flf;
        for (std::size_t j = 0; j < d; ++j) row[1 + j] = xq[j];
        row[1 + d] = 1.0;
        for (std::size_t j = 0; j < d; ++j) row[2 + d + j] = xq[j] * flf;
        for (std::size_t a = 0; a < nb; ++a) {
            for (std::size_t b = 0; b < nb; ++b) ata[a][b] += row[a] * row[b];
            atb[a] += row[a] * target;
        }
    };

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < p; ++k)
            accumulate(queries.data() + k * d, lf_at_queries.at(i, k), y[i * p + k]);

    const std::vector<double> coef = solve_normal(ata, atb);

    CorrelationFit fit;
    fit.c_lf = coef[0];
    fit.c_coord.assign(coef.begin() + 1, coef.begin() + 1 + d);
    fit.c_const = coef[1 + d];
    fit.c_cross.assign(coef.begin() + 2 + d, coef.end());

    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < p; ++k) {
            const double* xq = queries.data() + k * d;
            double fitv = fit.c_lf * lf_at_queries.at(i, k) + fit.c_const;
            for (std::size_t j = 0; j < d; ++j)
                fitv += fit.c_coord[j] * xq[j] + fit.c_cross[j] * xq[j] * lf_at_queries.at(i, k);
            const double r = fitv - y[i * p + k];
            ss += r * r;
        }
    fit.residual_rms = std::sqrt(ss / static_cast<double>(n * p));
    return fit;
}

}  // namespace mfdon::multifidelity
