#include "mfdon/optimize.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mfdon/rng.hpp"

namespace mfdon::optimize {

using ad::Tape;
using ad::Var;
using losses::GridPredictor;
using losses::PiFeeds;
using losses::PiPieceVars;
using multifidelity::CompositeVars;

void ExpDecaySchedule::validate() const {
    if (!(initial > 0.0) || !(decay_steps > 0.0) || !(decay_rate > 0.0) || decay_rate > 1.0)
        throw std::invalid_argument("learning-rate schedule: need initial > 0, decay_steps > 0, "
                                    "0 < decay_rate <= 1");
}

double lr_at(const ExpDecaySchedule& s, std::size_t step) {
    double e = static_cast<double>(step) / s.decay_steps;
    if (s.staircase) e = std::floor(e);
    return s.initial * std::pow(s.decay_rate, e);
}

const ParamLayout::Entry* ParamLayout::find(const std::string& name) const {
    for (const Entry& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

std::string ParamLayout::name_at(std::size_t flat_index) const {
    for (const Entry& e : entries)
        if (flat_index >= e.offset && flat_index < e.offset + e.size)
            return e.name + "[" + std::to_string(flat_index - e.offset) + "]";
    return "<unknown parameter>";
}

ParamLayout ParamRefs::layout() const {
    ParamLayout l;
    std::size_t off = 0;
    for (const auto& [name, t] : items) {
        l.entries.push_back({name, off, t->size()});
        off += t->size();
    }
    l.total = off;
    return l;
}

std::vector<double> ParamRefs::flatten() const {
    std::vector<double> flat;
    for (const auto& [name, t] : items) flat.insert(flat.end(), t->vec().begin(), t->vec().end());
    return flat;
}

void ParamRefs::scatter(const std::vector<double>& flat) {
    std::size_t off = 0;
    for (auto& [name, t] : items) {
        std::memcpy(t->data(), flat.data() + off, t->size() * sizeof(double));
        off += t->size();
    }
}

ParamRefs collect_refs(multifidelity::CompositeParams& p) {
    ParamRefs refs;
    multifidelity::visit_params(p, [&](const std::string& n, Tensor& t) {
        refs.items.emplace_back(n, &t);
    });
    return refs;
}

ParamRefs collect_refs(deeponet::ModifiedDeepONetParams& p, const std::string& prefix) {
    ParamRefs refs;
    deeponet::visit_params(p, prefix, [&](const std::string& n, Tensor& t) {
        refs.items.emplace_back(n, &t);
    });
    return refs;
}

ParamRefs collect_refs_noncomposite(multifidelity::CompositeParams& p) {
    ParamRefs refs;
    deeponet::visit_params(p.nonlinear, "nl", [&](const std::string& n, Tensor& t) {
        refs.items.emplace_back(n, &t);
    });
    deeponet::visit_params(p.linear, "lin", [&](const std::string& n, Tensor& t) {
        refs.items.emplace_back(n, &t);
    });
    return refs;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               double lr, const AdamConfig& cfg, const ParamLayout* layout) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: size mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw std::runtime_error("adam_step: non-finite gradient at " +
                                     (layout ? layout->name_at(i) : std::to_string(i)));
    state.step += 1;
    const double b1c = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double b2c = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / b1c;
        const double vhat = state.v[i] / b2c;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "sf-data") return ModelKind::SfData;
    if (s == "mf-data") return ModelKind::MfData;
    if (s == "sf-pi") return ModelKind::SfPi;
    if (s == "mf-pi") return ModelKind::MfPi;
    if (s == "noncomposite") return ModelKind::NonComposite;
    throw std::invalid_argument("unknown model kind: " + s);
}

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::SfData: return "sf-data";
        case ModelKind::MfData: return "mf-data";
        case ModelKind::SfPi: return "sf-pi";
        case ModelKind::MfPi: return "mf-pi";
        case ModelKind::NonComposite: return "noncomposite";
    }
    return "?";
}

namespace {

// Seeded per-epoch shuffler yielding fixed-size index batches.
class BatchStream {
public:
    BatchStream(std::size_t n, std::size_t batch, Rng rng)
        : n_(n), batch_(batch == 0 || batch >= n ? n : batch), rng_(rng) {
        perm_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
        if (batch_ < n_) rng_.shuffle(perm_);
    }

    bool full_batch() const { return batch_ == n_; }
    std::size_t batch_size() const { return batch_; }

    const std::vector<std::size_t>& next() {
        current_.clear();
        if (full_batch()) {
            current_ = perm_;
            return current_;
        }
        while (current_.size() < batch_) {
            if (cursor_ == n_) {
                rng_.shuffle(perm_);
                cursor_ = 0;
            }
            current_.push_back(perm_[cursor_++]);
        }
        return current_;
    }

private:
    std::size_t n_, batch_, cursor_ = 0;
    std::vector<std::size_t> perm_, current_;
    Rng rng_;
};

void gather_rows(Tensor& dst, const Tensor& src, const std::vector<std::size_t>& idx) {
    const std::size_t c = src.cols();
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::memcpy(dst.data() + i * c, src.data() + idx[i] * c, c * sizeof(double));
}

void gather_output_rows(Tensor& dst, const FidelityDataset& ds, const std::vector<std::size_t>& idx) {
    const std::size_t block = ds.num_queries() * ds.components();
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::memcpy(dst.data() + i * block, ds.outputs.data() + idx[i] * block,
                    block * sizeof(double));
}

std::vector<double> gather_meta(const std::vector<double>& src, const std::vector<std::size_t>& idx) {
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = src[idx[i]];
    return out;
}

// One assembled loss graph plus the leaves that are refreshed every step.
struct Program {
    Tape tape;
    // parameter leaves -> offsets into the flat vector
    std::vector<std::tuple<Var, std::size_t, std::size_t>> param_slots;
    // loss pieces (invalid when absent)
    Var total, hf_or_physics, lf, ic, bc, reg_nl, reg_lf;

    // feeds
    Var lf_u, lf_targets;
    Var hf_u_h, hf_u_l, hf_targets;
    Var colloc_pts, ode_forcing, ic_targets, bc_targets;
    Var oracle_probe_rows, oracle_lf_rows;

    void bind_param_slots(const ParamLayout& layout, const std::string& view_prefix = {}) {
        for (std::uint32_t i = 0; i < tape.num_nodes(); ++i) {
            const ad::Node& n = tape.node(Var{i});
            if (n.op != ad::Op::Leaf || n.name.empty()) continue;
            std::string key = n.name;
            if (!view_prefix.empty() && key.rfind(view_prefix, 0) == 0)
                key = "lf" + key.substr(view_prefix.size());
            else if (!n.requires_grad)
                continue;
            const ParamLayout::Entry* e = layout.find(key);
            if (!e) continue;
            param_slots.emplace_back(Var{i}, e->offset, e->size);
        }
    }

    void push_params(const std::vector<double>& flat) {
        for (auto& [v, off, size] : param_slots) tape.rebind(v, flat.data() + off, size);
    }

    void accumulate_grads(std::vector<double>& flat_grad) {
        for (auto& [v, off, size] : param_slots) {
            if (!tape.requires_grad(v)) continue;
            const Tensor g = tape.grad(v);
            for (std::size_t i = 0; i < size; ++i) flat_grad[off + i] += g[i];
        }
    }

    double piece(Var v) const { return v.valid() ? tape.node(v).value[0] : 0.0; }
};

struct TrainContext {
    TrainSetup& setup;
    ParamRefs refs;
    ParamLayout layout;
    std::vector<double> flat;
    Program prog;
    std::size_t b_lf = 0, b_hf = 0, b_cp = 0;
};

void build_program(TrainContext& ctx) {
    TrainSetup& s = ctx.setup;
    Tape& t = ctx.prog.tape;
    Program& P = ctx.prog;
    const bool is_mf = s.kind == ModelKind::MfData || s.kind == ModelKind::MfPi;
    const bool is_pi = s.kind == ModelKind::SfPi || s.kind == ModelKind::MfPi;

    const std::size_t n_hf = s.hf_data.num_samples();
    const std::size_t n_lf = s.lf_data.num_samples();
    ctx.b_hf = (s.batch.hf == 0 || s.batch.hf >= n_hf) ? n_hf : s.batch.hf;
    ctx.b_lf = (s.batch.lf == 0 || s.batch.lf >= n_lf) ? n_lf : s.batch.lf;
    const std::size_t n_cp = s.colloc.interior.size() ? s.colloc.interior.rows() : 0;
    ctx.b_cp = (s.batch.collocation == 0 || s.batch.collocation >= n_cp) ? n_cp
                                                                         : s.batch.collocation;

    losses::WeightedPieces pieces;

    if (s.kind == ModelKind::SfData || s.kind == ModelKind::SfPi) {
        auto sv = deeponet::bind_params(t, s.sf, "sf", true);
        P.hf_u_h = t.constant(Tensor({ctx.b_hf, s.hf_data.inputs.cols()}), "feed.u");
        if (s.kind == ModelKind::SfData) {
            P.hf_targets = t.constant(
                Tensor({ctx.b_hf * s.hf_data.num_queries(), s.hf_data.components()}), "feed.y");
            Var pred = deeponet::modified_forward_grid(t, sv, P.hf_u_h, t.constant(s.hf_data.queries),
                                                       ctx.b_hf, s.hf_data.num_queries());
            P.hf_or_physics = losses::sq_mean(t, pred, P.hf_targets);
            P.total = P.hf_or_physics;
            return;
        }
        // SfPi
        GridPredictor predictor = losses::sf_predictor(t, sv, P.hf_u_h, ctx.b_hf);
        PiFeeds feeds;
        P.colloc_pts = t.constant(Tensor({ctx.b_cp, s.colloc.interior.cols()}), "feed.colloc");
        feeds.colloc = P.colloc_pts;
        if (s.residual.kind == losses::PdeKind::CosineOde) {
            P.ode_forcing = t.constant(Tensor({ctx.b_hf * ctx.b_cp, 1}), "feed.forcing");
            feeds.ode_forcing = P.ode_forcing;
            if (s.colloc.bc == losses::BcKind::DirichletValue) {
                P.bc_targets =
                    t.constant(Tensor({ctx.b_hf * s.colloc.bc_points_a.rows(), 1}), "feed.bc");
                feeds.bc_targets = P.bc_targets;
            }
        }
        if (s.colloc.ic_points.size()) {
            P.ic_targets = t.constant(
                Tensor({ctx.b_hf * s.colloc.ic_points.rows(), s.hf_data.components()}), "feed.ic");
            feeds.ic_targets = P.ic_targets;
        }
        PiPieceVars pv = losses::build_pi_pieces(t, predictor, s.residual, s.colloc, feeds);
        P.hf_or_physics = pv.physics;
        P.ic = pv.ic;
        P.bc = pv.bc;
        pieces.hf_or_physics = pv.physics;
        pieces.ic = pv.ic;
        pieces.bc = pv.bc;
        P.total = losses::weighted_total(t, pieces, s.lambda);
        return;
    }

    if (s.kind == ModelKind::NonComposite) {
        auto nv = deeponet::bind_params(t, s.composite.nonlinear, "nl", true);
        auto lv = deeponet::bind_params(t, s.composite.linear, "lin", true);
        const std::size_t q = s.oracle_probes.cols();
        const std::size_t comp = s.hf_data.components();
        P.oracle_probe_rows = t.constant(Tensor({ctx.b_hf, q}), "feed.probes");
        P.oracle_lf_rows =
            t.constant(Tensor({ctx.b_hf * s.hf_data.num_queries(), comp}), "feed.lfq");
        const bool use_uh = s.composite.nonlinear.branch_in() > q;
        Var nl_branch = P.oracle_probe_rows;
        if (use_uh) {
            P.hf_u_h = t.constant(Tensor({ctx.b_hf, s.hf_data.inputs.cols()}), "feed.u");
            nl_branch = t.concat_cols(P.hf_u_h, P.oracle_probe_rows);
        }
        P.hf_targets = t.constant(Tensor({ctx.b_hf * s.hf_data.num_queries(), comp}), "feed.y");
        Var xq = t.constant(s.hf_data.queries);
        Var x_rows = t.tile_rows(xq, static_cast<std::uint32_t>(ctx.b_hf));
        Var pred = t.add(
            deeponet::modified_forward_grid(t, nv, nl_branch, xq, ctx.b_hf, s.hf_data.num_queries()),
            deeponet::standard_forward_rows(t, lv, P.oracle_lf_rows, x_rows));
        P.hf_or_physics = losses::sq_mean(t, pred, P.hf_targets);
        P.reg_nl = losses::l2_reg_branch(t, nv);
        pieces.hf_or_physics = P.hf_or_physics;
        pieces.reg_nl = P.reg_nl;
        P.total = losses::weighted_total(t, pieces, s.lambda);
        return;
    }

    // Composite kinds.
    CompositeVars cv = multifidelity::bind_composite(t, s.composite, true, s.probe_gradient);

    // Low-fidelity data term.
    P.lf_u = t.constant(Tensor({ctx.b_lf, s.lf_data.inputs.cols()}), "feed.lfu");
    P.lf_targets =
        t.constant(Tensor({ctx.b_lf * s.lf_data.num_queries(), s.lf_data.components()}), "feed.lfy");
    Var lf_pred = deeponet::modified_forward_grid(t, cv.lf, P.lf_u, t.constant(s.lf_data.queries),
                                                  ctx.b_lf, s.lf_data.num_queries());
    P.lf = losses::sq_mean(t, lf_pred, P.lf_targets);

    // Probe matrix for the high-fidelity samples.
    const Tensor& lf_in = s.hf_data.lf_sensor_inputs();
    P.hf_u_l = t.constant(Tensor({ctx.b_hf, lf_in.cols()}), "feed.hful");
    Var pm = multifidelity::probe_matrix(t, cv.probe_net(), P.hf_u_l, t.constant(s.probes.points),
                                         ctx.b_hf, s.probes.count());
    if (multifidelity::wiring_uses_hf_sensors(s.composite, s.probes))
        P.hf_u_h = t.constant(Tensor({ctx.b_hf, s.hf_data.inputs.cols()}), "feed.hfu");

    if (s.kind == ModelKind::MfData) {
        P.hf_targets = t.constant(
            Tensor({ctx.b_hf * s.hf_data.num_queries(), s.hf_data.components()}), "feed.hfy");
        auto grid = multifidelity::hf_forward_grid(t, cv, P.hf_u_h, P.hf_u_l, pm,
                                                   t.constant(s.hf_data.queries), ctx.b_hf,
                                                   s.hf_data.num_queries());
        P.hf_or_physics = losses::sq_mean(t, grid.total, P.hf_targets);
    } else {
        GridPredictor predictor = losses::composite_predictor(t, cv, P.hf_u_h, P.hf_u_l, pm, ctx.b_hf);
        PiFeeds feeds;
        P.colloc_pts = t.constant(Tensor({ctx.b_cp, s.colloc.interior.cols()}), "feed.colloc");
        feeds.colloc = P.colloc_pts;
        if (s.residual.kind == losses::PdeKind::CosineOde) {
            P.ode_forcing = t.constant(Tensor({ctx.b_hf * ctx.b_cp, 1}), "feed.forcing");
            feeds.ode_forcing = P.ode_forcing;
            if (s.colloc.bc == losses::BcKind::DirichletValue) {
                P.bc_targets =
                    t.constant(Tensor({ctx.b_hf * s.colloc.bc_points_a.rows(), 1}), "feed.bc");
                feeds.bc_targets = P.bc_targets;
            }
        }
        if (s.colloc.ic_points.size()) {
            P.ic_targets = t.constant(
                Tensor({ctx.b_hf * s.colloc.ic_points.rows(), s.hf_data.components()}), "feed.ic");
            feeds.ic_targets = P.ic_targets;
        }
        PiPieceVars pv = losses::build_pi_pieces(t, predictor, s.residual, s.colloc, feeds);
        P.hf_or_physics = pv.physics;
        P.ic = pv.ic;
        P.bc = pv.bc;
    }

    P.reg_nl = losses::l2_reg_branch(t, cv.nonlinear);
    P.reg_lf = losses::l2_reg_branch(t, cv.lf);
    pieces.hf_or_physics = P.hf_or_physics;
    pieces.lf = P.lf;
    pieces.ic = P.ic;
    pieces.bc = P.bc;
    pieces.reg_nl = P.reg_nl;
    pieces.reg_lf = P.reg_lf;
    P.total = losses::weighted_total(t, pieces, s.lambda);
}

}  // namespace

TrainReport train(TrainSetup& setup) {
    const auto t0 = std::chrono::steady_clock::now();
    setup.schedule.validate();
    setup.lambda.validate();
    if (setup.kind == ModelKind::MfPi || setup.kind == ModelKind::SfPi) setup.residual.validate();

    TrainContext ctx{setup, {}, {}, {}, {}, 0, 0, 0};
    switch (setup.kind) {
        case ModelKind::SfData:
        case ModelKind::SfPi:
            ctx.refs = collect_refs(setup.sf, "sf");
            break;
        case ModelKind::NonComposite:
            ctx.refs = collect_refs_noncomposite(setup.composite);
            break;
        default:
            ctx.refs = collect_refs(setup.composite);
    }
    ctx.layout = ctx.refs.layout();
    ctx.flat = ctx.refs.flatten();

    build_program(ctx);
    ctx.prog.bind_param_slots(ctx.layout, setup.probe_gradient ? std::string{} : "lfview");

    AdamState adam;
    adam.init(ctx.layout.total);
    std::vector<double> flat_grad(ctx.layout.total, 0.0);

    BatchStream lf_stream(std::max<std::size_t>(setup.lf_data.num_samples(), 1), ctx.b_lf,
                          Rng::derive(setup.seed, 101));
    BatchStream hf_stream(std::max<std::size_t>(setup.hf_data.num_samples(), 1), ctx.b_hf,
                          Rng::derive(setup.seed, 202));
    const std::size_t n_cp = setup.colloc.interior.size() ? setup.colloc.interior.rows() : 0;
    BatchStream cp_stream(std::max<std::size_t>(n_cp, 1), ctx.b_cp, Rng::derive(setup.seed, 303));

    Tensor lf_u_buf, lf_y_buf, hf_uh_buf, hf_ul_buf, hf_y_buf, cp_buf, ic_buf, bc_buf, forcing_buf,
        probe_buf;
    Program& P = ctx.prog;
    Tape& tape = P.tape;
    auto shaped = [&](Var v) { return Tensor(tape.value(v).shape()); };
    if (P.lf_u.valid()) lf_u_buf = shaped(P.lf_u);
    if (P.lf_targets.valid()) lf_y_buf = shaped(P.lf_targets);
    if (P.hf_u_h.valid()) hf_uh_buf = shaped(P.hf_u_h);
    if (P.hf_u_l.valid()) hf_ul_buf = shaped(P.hf_u_l);
    if (P.hf_targets.valid()) hf_y_buf = shaped(P.hf_targets);
    if (P.colloc_pts.valid()) cp_buf = shaped(P.colloc_pts);
    if (P.ic_targets.valid()) ic_buf = shaped(P.ic_targets);
    if (P.bc_targets.valid()) bc_buf = shaped(P.bc_targets);
    if (P.ode_forcing.valid()) forcing_buf = shaped(P.ode_forcing);
    if (P.oracle_probe_rows.valid()) probe_buf = shaped(P.oracle_probe_rows);

    const Tensor* ic_values = setup.hf_data.extra_or_null("ic_values");
    const std::vector<double>* a_meta = nullptr;
    if (auto it = setup.hf_data.sample_meta.find("a"); it != setup.hf_data.sample_meta.end())
        a_meta = &it->second;

    TrainReport report;
    report.seed = setup.seed;
    report.steps = setup.steps;
    report.history.reserve(setup.steps);

    for (std::size_t step = 0; step < setup.steps; ++step) {
        const double lr = lr_at(setup.schedule, step);

        // Assemble this step's batches.
        if (P.lf_u.valid()) {
            const auto& idx = lf_stream.next();
            gather_rows(lf_u_buf, setup.lf_data.inputs, idx);
            gather_output_rows(lf_y_buf, setup.lf_data, idx);
            tape.rebind(P.lf_u, lf_u_buf);
            tape.rebind(P.lf_targets, lf_y_buf);
        }
        std::vector<std::size_t> hf_idx;
        if (P.hf_u_h.valid() || P.hf_u_l.valid() || P.hf_targets.valid() ||
            P.oracle_probe_rows.valid()) {
            hf_idx = hf_stream.next();
            if (P.hf_u_h.valid()) {
                gather_rows(hf_uh_buf, setup.hf_data.inputs, hf_idx);
                tape.rebind(P.hf_u_h, hf_uh_buf);
            }
            if (P.hf_u_l.valid()) {
                gather_rows(hf_ul_buf, setup.hf_data.lf_sensor_inputs(), hf_idx);
                tape.rebind(P.hf_u_l, hf_ul_buf);
            }
            if (P.hf_targets.valid()) {
                gather_output_rows(hf_y_buf, setup.hf_data, hf_idx);
                tape.rebind(P.hf_targets, hf_y_buf);
            }
            if (P.oracle_probe_rows.valid()) {
                gather_rows(probe_buf, setup.oracle_probes, hf_idx);
                tape.rebind(P.oracle_probe_rows, probe_buf);
            }
            if (P.oracle_lf_rows.valid()) {
                const std::size_t block = setup.oracle_lf_rows.cols();
                Tensor lf_buf(tape.value(P.oracle_lf_rows).shape());
                for (std::size_t i = 0; i < hf_idx.size(); ++i)
                    std::memcpy(lf_buf.data() + i * block,
                                setup.oracle_lf_rows.data() + hf_idx[i] * block,
                                block * sizeof(double));
                tape.rebind(P.oracle_lf_rows, lf_buf);
            }
        }
        if (P.colloc_pts.valid()) {
            const auto& cidx = cp_stream.next();
            gather_rows(cp_buf, setup.colloc.interior, cidx);
            tape.rebind(P.colloc_pts, cp_buf);
        }
        if (P.ode_forcing.valid()) {
            const std::vector<double> a_batch = gather_meta(*a_meta, hf_idx);
            forcing_buf = losses::ode_forcing_rows(a_batch, tape.value(P.colloc_pts));
            tape.rebind(P.ode_forcing, forcing_buf);
        }
        if (P.bc_targets.valid()) {
            const std::vector<double> a_batch = gather_meta(*a_meta, hf_idx);
            bc_buf = losses::dirichlet_cos_targets(a_batch, setup.colloc.bc_points_a.rows());
            tape.rebind(P.bc_targets, bc_buf);
        }
        if (P.ic_targets.valid()) {
            for (std::size_t i = 0; i < hf_idx.size(); ++i)
                std::memcpy(ic_buf.data() + i * ic_values->cols(),
                            ic_values->data() + hf_idx[i] * ic_values->cols(),
                            ic_values->cols() * sizeof(double));
            tape.rebind(P.ic_targets, ic_buf);
        }

        P.push_params(ctx.flat);
        tape.replay();

        StepRecord rec;
        rec.step = step;
        rec.total = tape.node(P.total).value[0];
        rec.hf_or_physics = P.piece(P.hf_or_physics);
        rec.lf = P.piece(P.lf);
        rec.ic = P.piece(P.ic);
        rec.bc = P.piece(P.bc);
        rec.reg_nl = P.piece(P.reg_nl);
        rec.reg_lf = P.piece(P.reg_lf);
        rec.lr = lr;
        if (!std::isfinite(rec.total))
            throw std::runtime_error(
                "training aborted: non-finite loss at step " + std::to_string(step) +
                " (physics/hf=" + std::to_string(rec.hf_or_physics) + ", lf=" +
                std::to_string(rec.lf) + ", ic=" + std::to_string(rec.ic) + ", bc=" +
                std::to_string(rec.bc) + ")");
        report.history.push_back(rec);

        std::fill(flat_grad.begin(), flat_grad.end(), 0.0);
        tape.backward(P.total);
        P.accumulate_grads(flat_grad);
        adam_step(ctx.flat, flat_grad, adam, lr, setup.adam, &ctx.layout);

        if (setup.checkpoint_every && setup.on_checkpoint &&
            ((step + 1) % setup.checkpoint_every == 0)) {
            ctx.refs.scatter(ctx.flat);
            setup.on_checkpoint(step + 1);
        }
    }

    ctx.refs.scatter(ctx.flat);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace mfdon::optimize
