#include "mfdon/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mfdon::harness {

using nlohmann::json;
using optimize::ModelKind;

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& truth, const Tensor& pred) {
    if (!truth.same_shape(pred))
        throw std::invalid_argument("metrics: truth and prediction shapes differ");
    if (truth.rank() != 2 && truth.rank() != 3)
        throw std::invalid_argument("metrics: expected (N x P) or (N x P x C) tensors");
}

std::size_t sample_block(const Tensor& t) {
    std::size_t b = 1;
    for (std::size_t i = 1; i < t.rank(); ++i) b *= t.shape()[i];
    return b;
}

}  // namespace

std::vector<double> per_sample_mse(const Tensor& truth, const Tensor& pred) {
    check_same_shape(truth, pred);
    const std::size_t n = truth.shape()[0], block = sample_block(truth);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < block; ++j) {
            const double d = truth[i * block + j] - pred[i * block + j];
            acc += d * d;
        }
        out[i] = acc / static_cast<double>(block);
    }
    return out;
}

std::vector<double> per_sample_rel_l2(const Tensor& truth, const Tensor& pred) {
    check_same_shape(truth, pred);
    const std::size_t n = truth.shape()[0], block = sample_block(truth);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < block; ++j) {
            const double d = truth[i * block + j] - pred[i * block + j];
            num += d * d;
            den += truth[i * block + j] * truth[i * block + j];
        }
        if (den == 0.0)
            throw std::invalid_argument("mean_rel_l2: truth sample " + std::to_string(i) +
                                        " has zero norm");
        out[i] = std::sqrt(num / den);
    }
    return out;
}

double mean_mse(const Tensor& truth, const Tensor& pred) {
    const auto v = per_sample_mse(truth, pred);
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double mean_rel_l2(const Tensor& truth, const Tensor& pred) {
    const auto v = per_sample_rel_l2(truth, pred);
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Config parsing.
// ---------------------------------------------------------------------------

namespace {

deeponet::NetSpec net_spec(const json& j) {
    return {j.at("layers").get<std::size_t>(), j.at("width").get<std::size_t>()};
}

json net_spec_json(const deeponet::NetSpec& s) {
    return json{{"layers", s.layers}, {"width", s.width}};
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig c;
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != 1)
        throw std::runtime_error("unsupported config schema version " +
                                 std::to_string(c.schema_version));
    c.name = j.value("name", "");
    c.benchmark = j.at("benchmark").get<std::string>();
    c.model = optimize::model_kind_from_string(j.at("model").get<std::string>());
    c.seed = j.value("seed", 1ULL);

    if (j.contains("data")) {
        const json& d = j["data"];
        c.data.n_lf = d.value("n_lf", 0ULL);
        c.data.n_hf = d.value("n_hf", 0ULL);
        c.data.lf_grid = d.value("lf_grid", 0ULL);
        c.data.hf_grid = d.value("hf_grid", 0ULL);
        if (d.contains("lf_bounds")) c.data.lf_bounds = d["lf_bounds"].get<std::array<double, 2>>();
        if (d.contains("hf_bounds")) c.data.hf_bounds = d["hf_bounds"].get<std::array<double, 2>>();
        c.data.viscosity = d.value("viscosity", 1e-2);
        c.data.dt = d.value("dt", 5e-3);
        c.data.snapshot_dt = d.value("snapshot_dt", 5e-2);
        c.data.m_l = d.value("m_l", 21ULL);
        c.data.noise_variance = d.value("noise_variance", 0.0);
        c.data.lf_path = d.value("lf_path", "");
        c.data.hf_path = d.value("hf_path", "");
        c.data.test_path = d.value("test_path", "");
    }

    const json& n = j.at("network");
    c.activation = deeponet::activation_from_string(n.value("activation", "tanh"));
    if (n.contains("lf")) c.lf_net = net_spec(n["lf"]);
    if (n.contains("linear")) c.linear_net = net_spec(n["linear"]);
    if (n.contains("nonlinear")) c.nonlinear_net = net_spec(n["nonlinear"]);
    if (n.contains("sf")) c.sf_net = net_spec(n["sf"]);

    if (j.contains("loss")) {
        const json& l = j["loss"];
        if (l.contains("lambda")) {
            auto v = l["lambda"].get<std::vector<double>>();
            if (v.size() != 6) throw std::runtime_error("loss.lambda must have six entries");
            c.lambda = {v[0], v[1], v[2], v[3], v[4], v[5]};
        }
        const std::string norm = l.value("residual_norm", "l2");
        if (norm != "l1" && norm != "l2") throw std::runtime_error("residual_norm must be l1|l2");
        c.residual_norm = norm == "l1" ? losses::ResidualNorm::L1 : losses::ResidualNorm::L2;
    }

    const json& t = j.at("training");
    c.steps = t.at("steps").get<std::size_t>();
    const auto lr = t.at("lr").get<std::vector<double>>();
    if (lr.size() != 3) throw std::runtime_error("training.lr must be [initial, decay_steps, rate]");
    c.schedule = {lr[0], lr[1], lr[2], t.value("staircase", false)};
    if (t.contains("batch")) {
        const json& b = t["batch"];
        c.batch.lf = b.value("lf", 0ULL);
        c.batch.hf = b.value("hf", 0ULL);
        c.batch.collocation = b.value("collocation", 0ULL);
    }
    c.probe_gradient = t.value("probe_gradient", true);
    c.checkpoint_every = t.value("checkpoint_every", 0ULL);

    if (j.contains("probes")) {
        c.probe_count = j["probes"].value("count", 0ULL);
        if (j["probes"].contains("mesh"))
            c.probe_mesh = j["probes"]["mesh"].get<std::array<std::size_t, 2>>();
    }
    if (j.contains("physics")) {
        c.physics.collocation = j["physics"].value("collocation", 0ULL);
        c.physics.p_ic = j["physics"].value("p_ic", 0ULL);
        c.physics.p_bc = j["physics"].value("p_bc", 0ULL);
    }
    if (j.contains("test")) {
        const json& v = j["test"];
        c.test.n_a = v.value("n_a", 0ULL);
        c.test.grid = v.value("grid", 0ULL);
        c.test.n_samples = v.value("n_samples", 0ULL);
        c.test.dt = v.value("dt", 1e-4);
        c.test.grid_x = v.value("grid_x", 101ULL);
        c.test.grid_t = v.value("grid_t", 101ULL);
    }
    return c;
}

ExperimentConfig config_from_json_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string config_to_json_text(const ExperimentConfig& c) {
    json j{{"schema_version", c.schema_version},
           {"name", c.name},
           {"benchmark", c.benchmark},
           {"model", optimize::to_string(c.model)},
           {"seed", c.seed},
           {"data",
            {{"n_lf", c.data.n_lf},
             {"n_hf", c.data.n_hf},
             {"lf_grid", c.data.lf_grid},
             {"hf_grid", c.data.hf_grid},
             {"lf_bounds", c.data.lf_bounds},
             {"hf_bounds", c.data.hf_bounds},
             {"viscosity", c.data.viscosity},
             {"dt", c.data.dt},
             {"snapshot_dt", c.data.snapshot_dt},
             {"m_l", c.data.m_l},
             {"noise_variance", c.data.noise_variance},
             {"lf_path", c.data.lf_path},
             {"hf_path", c.data.hf_path},
             {"test_path", c.data.test_path}}},
           {"network",
            {{"activation", deeponet::to_string(c.activation)},
             {"lf", net_spec_json(c.lf_net)},
             {"linear", net_spec_json(c.linear_net)},
             {"nonlinear", net_spec_json(c.nonlinear_net)},
             {"sf", net_spec_json(c.sf_net)}}},
           {"loss",
            {{"lambda",
              {c.lambda.l1, c.lambda.l2, c.lambda.l3, c.lambda.l4, c.lambda.l5, c.lambda.l6}},
             {"residual_norm", c.residual_norm == losses::ResidualNorm::L1 ? "l1" : "l2"}}},
           {"training",
            {{"steps", c.steps},
             {"lr", {c.schedule.initial, c.schedule.decay_steps, c.schedule.decay_rate}},
             {"staircase", c.schedule.staircase},
             {"batch", {{"lf", c.batch.lf}, {"hf", c.batch.hf}, {"collocation", c.batch.collocation}}},
             {"probe_gradient", c.probe_gradient},
             {"checkpoint_every", c.checkpoint_every}}},
           {"probes", {{"count", c.probe_count}, {"mesh", c.probe_mesh}}},
           {"physics",
            {{"collocation", c.physics.collocation},
             {"p_ic", c.physics.p_ic},
             {"p_bc", c.physics.p_bc}}},
           {"test",
            {{"n_a", c.test.n_a},
             {"grid", c.test.grid},
             {"n_samples", c.test.n_samples},
             {"dt", c.test.dt},
             {"grid_x", c.test.grid_x},
             {"grid_t", c.test.grid_t}}}};
    return j.dump(2);
}

std::string config_hash(const ExperimentConfig& c) {
    const std::string text = config_to_json_text(c);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Experiment preparation.
// ---------------------------------------------------------------------------

namespace {

using datagen::AnalyticCase;

bool is_analytic_dd(const std::string& b) {
    return b == "jump1d" || b == "corr_u_1d" || b == "lin2d" || b == "nonlin2d" ||
           b == "noncomp_1d";
}

Tensor analytic_grid(const std::string& benchmark, std::size_t per_axis,
                     const std::array<double, 2>& bounds) {
    if (benchmark == "lin2d" || benchmark == "nonlin2d")
        return datagen::mesh_grid2(per_axis, bounds[0], bounds[1], per_axis, bounds[0], bounds[1]);
    return datagen::line_grid(per_axis, bounds[0], bounds[1]);
}

// u(a) evaluated on a sensor grid: a x - 4 for the analytic families, the
// constant a for the ODE benchmark.
Tensor u_rows(AnalyticCase cs, const std::vector<double>& a_values, const Tensor& grid) {
    Tensor rows({a_values.size(), grid.rows()});
    const bool constant_input = cs == AnalyticCase::OdeLf31;
    for (std::size_t i = 0; i < a_values.size(); ++i)
        for (std::size_t s = 0; s < grid.rows(); ++s)
            rows.at(i, s) = constant_input ? a_values[i] : a_values[i] * grid.at(s, 0) - 4.0;
    return rows;
}

FidelityDataset analytic_test_set(AnalyticCase cs, const std::vector<double>& a_values,
                                  const Tensor& hf_sensors, const Tensor& lf_sensors,
                                  const Tensor& lattice) {
    FidelityDataset ds;
    ds.fidelity = "high";
    ds.sensors = hf_sensors;
    ds.queries = lattice;
    ds.inputs = u_rows(cs, a_values, hf_sensors);
    ds.outputs = Tensor({a_values.size(), lattice.rows(), 1});
    for (std::size_t i = 0; i < a_values.size(); ++i)
        for (std::size_t k = 0; k < lattice.rows(); ++k) {
            std::span<const double> xy(lattice.data() + k * lattice.cols(), lattice.cols());
            ds.outputs[i * lattice.rows() + k] = datagen::analytic_value(cs, true, a_values[i], xy);
        }
    ds.extra["lf_inputs"] = u_rows(cs, a_values, lf_sensors);
    ds.sample_meta["a"] = a_values;
    return ds;
}

Tensor oracle_probe_rows(AnalyticCase cs, const std::vector<double>& a_values,
                         const Tensor& probe_pts) {
    Tensor rows({a_values.size(), probe_pts.rows()});
    for (std::size_t i = 0; i < a_values.size(); ++i)
        for (std::size_t q = 0; q < probe_pts.rows(); ++q) {
            std::span<const double> xy(probe_pts.data() + q * probe_pts.cols(), probe_pts.cols());
            rows.at(i, q) = datagen::analytic_value(cs, false, a_values[i], xy);
        }
    return rows;
}

Tensor random_interior(std::size_t n, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    Tensor pts({n, dim});
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = rng.uniform(1e-4, 1.0 - 1e-4);
    return pts;
}

struct BurgersBundle {
    FidelityDataset lf;      // data on the coarse space-time grid
    FidelityDataset physics;  // inputs + ic values only
    FidelityDataset test;    // reference solutions on the fine grid
};

FidelityDataset burgers_solution_set(const ExperimentConfig& c, std::size_t count,
                                     std::uint64_t index_base, double dt, std::size_t grid_x,
                                     std::size_t grid_t, const std::string& fidelity) {
    datagen::GRFSpec grf;
    grf.seed = c.seed;
    datagen::BurgersConfig bc;
    bc.viscosity = c.data.viscosity;
    bc.dt = dt;
    bc.t_final = 1.0;
    bc.snapshot_dt = 1.0 / static_cast<double>(grid_t - 1);
    bc.validate();

    const Tensor sensors = datagen::line_grid(c.data.m_l, 0.0, 1.0);
    const Tensor xg = datagen::line_grid(grid_x, 0.0, 1.0);
    std::vector<double> tg(grid_t);
    for (std::size_t j = 0; j < grid_t; ++j)
        tg[j] = static_cast<double>(j) / static_cast<double>(grid_t - 1);

    FidelityDataset ds;
    ds.fidelity = fidelity;
    ds.sensors = sensors;
    ds.queries = datagen::mesh_grid2(grid_x, 0.0, 1.0, grid_t, 0.0, 1.0);
    ds.inputs = Tensor({count, c.data.m_l});
    ds.outputs = Tensor({count, grid_x * grid_t, 1});

    std::vector<double> ic(bc.modes);
    for (std::size_t i = 0; i < count; ++i) {
        datagen::GrfSample g = datagen::sample_grf(grf, index_base + i);
        for (std::size_t j = 0; j < bc.modes; ++j)
            ic[j] = g.eval(static_cast<double>(j) / static_cast<double>(bc.modes));
        datagen::BurgersSolution sol = datagen::solve_burgers_etdrk4(bc, ic);
        const std::vector<double> vals = sol.eval_grid(xg, tg);
        std::copy(vals.begin(), vals.end(), ds.outputs.data() + i * vals.size());
        const std::vector<double> u0 = g.eval_on(sensors);
        std::copy(u0.begin(), u0.end(), ds.inputs.data() + i * c.data.m_l);
    }
    ds.extra["lf_inputs"] = ds.inputs;
    return ds;
}

FidelityDataset burgers_physics_set(const ExperimentConfig& c, std::size_t count,
                                    std::uint64_t index_base, const Tensor& ic_points) {
    datagen::GRFSpec grf;
    grf.seed = c.seed;
    const Tensor sensors = datagen::line_grid(c.data.m_l, 0.0, 1.0);
    FidelityDataset ds;
    ds.fidelity = "high";
    ds.sensors = sensors;
    ds.queries = Tensor({0, 2});
    ds.inputs = Tensor({count, c.data.m_l});
    ds.outputs = Tensor({count, 0, 1});
    Tensor ic_vals({count, ic_points.rows()});
    for (std::size_t i = 0; i < count; ++i) {
        datagen::GrfSample g = datagen::sample_grf(grf, index_base + i);
        const std::vector<double> u0 = g.eval_on(sensors);
        std::copy(u0.begin(), u0.end(), ds.inputs.data() + i * c.data.m_l);
        for (std::size_t k = 0; k < ic_points.rows(); ++k)
            ic_vals.at(i, k) = g.eval(ic_points.at(k, 0));
    }
    ds.extra["lf_inputs"] = ds.inputs;
    ds.extra["ic_values"] = std::move(ic_vals);
    return ds;
}

constexpr std::uint64_t kPhysicsIndexBase = 100000;
constexpr std::uint64_t kTestIndexBase = 200000;

}  // namespace

PreparedExperiment prepare_experiment(const ExperimentConfig& c) {
    PreparedExperiment prep;
    optimize::TrainSetup& s = prep.setup;
    s.kind = c.model;
    s.lambda = c.lambda;
    s.schedule = c.schedule;
    s.steps = c.steps;
    s.batch = c.batch;
    s.seed = c.seed;
    s.probe_gradient = c.probe_gradient;
    s.checkpoint_every = c.checkpoint_every;
    s.residual.norm = c.residual_norm;

    const std::string& b = c.benchmark;

    if (is_analytic_dd(b)) {
        const AnalyticCase cs = datagen::analytic_case_from_string(b);
        const auto [lo, hi] = datagen::a_range(cs);
        const Tensor grid_lf = analytic_grid(b, c.data.lf_grid, c.data.lf_bounds);
        const Tensor grid_hf = analytic_grid(b, c.data.hf_grid, c.data.hf_bounds);
        const auto a_lf = datagen::random_a_values(cs, c.data.n_lf, c.seed ^ 0x11);
        const auto a_hf = datagen::random_a_values(cs, c.data.n_hf, c.seed ^ 0x22);
        datagen::AnalyticPair pair = datagen::gen_analytic(cs, a_lf, grid_lf, a_hf, grid_hf);
        s.lf_data = std::move(pair.lf);
        s.hf_data = std::move(pair.hf);

        const Tensor probe_pts =
            c.probe_count ? analytic_grid(b, c.probe_count, c.data.lf_bounds) : grid_lf;
        s.probes.points = probe_pts;

        const std::size_t trunk_dim = grid_lf.cols();
        const auto a_test = datagen::equispaced_a_values(lo, hi, c.test.n_a);
        const Tensor lattice = analytic_grid(b, c.test.grid, c.data.lf_bounds);
        prep.test.data = analytic_test_set(cs, a_test, grid_hf, grid_lf, lattice);

        if (c.model == ModelKind::NonComposite) {
            s.composite.nonlinear =
                deeponet::init_modified(grid_hf.rows() + probe_pts.rows(), trunk_dim,
                                        c.nonlinear_net, c.activation, true, 1, c.seed + 1001);
            s.composite.linear = deeponet::init_standard(1, trunk_dim, c.linear_net,
                                                         deeponet::Activation::None, 1, c.seed + 1002);
            s.oracle_probes = oracle_probe_rows(cs, a_hf, probe_pts);
            s.oracle_lf_rows = oracle_probe_rows(cs, a_hf, s.hf_data.queries);
            prep.test.oracle_probes = oracle_probe_rows(cs, a_test, probe_pts);
            prep.test.oracle_lf_rows = oracle_probe_rows(cs, a_test, lattice);
        } else if (c.model == ModelKind::MfData) {
            s.composite = multifidelity::init_composite(
                grid_lf.rows(), grid_hf.rows(), trunk_dim, c.lf_net, c.linear_net, c.nonlinear_net,
                c.activation, probe_pts.rows(), 1, c.seed + 1000);
        } else if (c.model == ModelKind::SfData) {
            s.sf = deeponet::init_modified(grid_hf.rows(), trunk_dim, c.sf_net, c.activation, false,
                                           1, c.seed + 2000);
        } else {
            throw std::runtime_error("benchmark " + b + " supports data-driven models only");
        }
        return prep;
    }

    if (b == "ode_3_1") {
        const AnalyticCase cs = AnalyticCase::OdeLf31;
        const Tensor grid_lf = datagen::line_grid(c.data.lf_grid, 0.0, 1.0);
        const auto a_lf = datagen::random_a_values(cs, c.data.n_lf, c.seed ^ 0x11);
        const auto a_hf = datagen::random_a_values(cs, c.data.n_hf, c.seed ^ 0x22);
        s.lf_data = datagen::analytic_dataset(cs, false, a_lf, grid_lf);

        // Physics samples: the input function is the constant a.
        FidelityDataset phys;
        phys.fidelity = "high";
        phys.sensors = grid_lf;
        phys.inputs = u_rows(cs, a_hf, grid_lf);
        phys.queries = Tensor({0, 1});
        phys.outputs = Tensor({a_hf.size(), 0, 1});
        phys.extra["lf_inputs"] = phys.inputs;
        phys.sample_meta["a"] = a_hf;
        s.hf_data = std::move(phys);

        s.residual.kind = losses::PdeKind::CosineOde;
        s.colloc.interior = random_interior(c.physics.collocation, 1, c.seed ^ 0x33);
        s.colloc.bc = losses::BcKind::DirichletValue;
        s.colloc.bc_points_a = Tensor({1, 1}, {0.0});

        const Tensor probe_pts =
            c.probe_count ? datagen::line_grid(c.probe_count, 0.0, 1.0) : grid_lf;
        s.probes.points = probe_pts;

        const auto a_test = datagen::equispaced_a_values(0.0125, 4.975, c.test.n_a);
        const Tensor lattice = datagen::line_grid(c.test.grid, 0.0, 1.0);
        prep.test.data = analytic_test_set(cs, a_test, grid_lf, grid_lf, lattice);

        if (c.model == ModelKind::MfPi) {
            s.composite = multifidelity::init_composite(
                grid_lf.rows(), grid_lf.rows(), 1, c.lf_net, c.linear_net, c.nonlinear_net,
                c.activation, probe_pts.rows(), 1, c.seed + 1000);
        } else if (c.model == ModelKind::SfPi) {
            s.sf = deeponet::init_modified(grid_lf.rows(), 1, c.sf_net, c.activation, false, 1,
                                           c.seed + 2000);
        } else {
            throw std::runtime_error("ode_3_1 supports physics-informed models only");
        }
        return prep;
    }

    if (b == "burgers") {
        const Tensor ic_points = [&] {
            Tensor pts({c.physics.p_ic, 2});
            for (std::size_t i = 0; i < c.physics.p_ic; ++i)
                pts.at(i, 0) = c.physics.p_ic == 1
                                   ? 0.0
                                   : static_cast<double>(i) / static_cast<double>(c.physics.p_ic - 1);
            return pts;
        }();

        const std::size_t lf_grid_t =
            static_cast<std::size_t>(std::llround(1.0 / c.data.snapshot_dt)) + 1;
        if (c.model != ModelKind::SfPi) {
            s.lf_data = burgers_solution_set(c, c.data.n_lf, 0, c.data.dt, c.data.m_l, lf_grid_t,
                                             "low");
            if (c.data.noise_variance > 0.0)
                s.lf_data = datagen::add_noise(s.lf_data, c.data.noise_variance, c.seed ^ 0x77);
        }

        prep.test.data = burgers_solution_set(c, c.test.n_samples, kTestIndexBase, c.test.dt,
                                              c.test.grid_x, c.test.grid_t, "high");

        if (c.model == ModelKind::SfData) {
            // Data-only: a single net trained on the (possibly noisy) coarse data.
            s.hf_data = s.lf_data;
            s.sf = deeponet::init_modified(c.data.m_l, 2, c.sf_net, c.activation, false, 1,
                                           c.seed + 2000);
            return prep;
        }

        s.hf_data = burgers_physics_set(c, c.data.n_hf, kPhysicsIndexBase, ic_points);
        s.residual.kind = losses::PdeKind::Burgers;
        s.residual.viscosity = c.data.viscosity;
        s.colloc.interior = random_interior(c.physics.collocation, 2, c.seed ^ 0x33);
        s.colloc.ic_points = ic_points;
        s.colloc.bc = losses::BcKind::PeriodicBurgers;
        {
            Rng rng(c.seed ^ 0x44);
            Tensor a_pts({c.physics.p_bc, 2}), b_pts({c.physics.p_bc, 2});
            for (std::size_t i = 0; i < c.physics.p_bc; ++i) {
                const double tt = rng.uniform(0.0, 1.0);
                a_pts.at(i, 0) = 0.0;
                a_pts.at(i, 1) = tt;
                b_pts.at(i, 0) = 1.0;
                b_pts.at(i, 1) = tt;
            }
            s.colloc.bc_points_a = std::move(a_pts);
            s.colloc.bc_points_b = std::move(b_pts);
        }

        const std::size_t pm_x = c.probe_mesh[0] ? c.probe_mesh[0] : 11;
        const std::size_t pm_t = c.probe_mesh[1] ? c.probe_mesh[1] : 11;
        s.probes.points = datagen::mesh_grid2(pm_x, 0.0, 1.0, pm_t, 0.0, 1.0);

        if (c.model == ModelKind::MfPi) {
            // The nonlinear branch consumes the probe vector only.
            s.composite = multifidelity::init_composite(c.data.m_l, 0, 2, c.lf_net, c.linear_net,
                                                        c.nonlinear_net, c.activation,
                                                        s.probes.count(), 1, c.seed + 1000);
        } else if (c.model == ModelKind::SfPi) {
            s.sf = deeponet::init_modified(c.data.m_l, 2, c.sf_net, c.activation, false, 1,
                                           c.seed + 2000);
        } else {
            throw std::runtime_error("burgers supports sf-data, sf-pi and mf-pi models");
        }
        return prep;
    }

    if (b == "external") {
        if (c.model != ModelKind::MfData && c.model != ModelKind::SfData)
            throw std::runtime_error("external datasets support data-driven models");
        s.hf_data = datagen::read_dataset(c.data.hf_path).data;
        prep.test.data = datagen::read_dataset(c.data.test_path).data;
        const std::size_t components = s.hf_data.components();
        if (c.model == ModelKind::SfData) {
            s.sf = deeponet::init_modified(s.hf_data.inputs.cols(), s.hf_data.query_dim(), c.sf_net,
                                           c.activation, false, components, c.seed + 2000);
            return prep;
        }
        s.lf_data = datagen::read_dataset(c.data.lf_path).data;
        s.probes.points = s.lf_data.queries;
        s.composite = multifidelity::init_composite(
            s.lf_data.inputs.cols(), s.hf_data.inputs.cols(), s.lf_data.query_dim(), c.lf_net,
            c.linear_net, c.nonlinear_net, c.activation, s.probes.count(), components,
            c.seed + 1000);
        return prep;
    }

    throw std::runtime_error("unknown benchmark: " + b);
}

// ---------------------------------------------------------------------------
// Prediction and evaluation.
// ---------------------------------------------------------------------------

Tensor predict_outputs(const optimize::TrainSetup& setup, const FidelityDataset& test,
                       const Tensor& oracle_probes, const Tensor& oracle_lf_rows) {
    const std::size_t n = test.num_samples(), p = test.num_queries();
    const std::size_t comp = setup.kind == ModelKind::SfData || setup.kind == ModelKind::SfPi
                                 ? setup.sf.components
                                 : setup.composite.linear.components;
    Tensor pred({n, p, comp});
    const std::size_t chunk = std::max<std::size_t>(1, 20000 / std::max<std::size_t>(p, 1));

    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t cnt = std::min(chunk, n - start);
        ad::Tape t;
        auto rows_of = [&](const Tensor& src) {
            Tensor block({cnt, src.cols()});
            std::memcpy(block.data(), src.data() + start * src.cols(),
                        cnt * src.cols() * sizeof(double));
            return block;
        };
        ad::Var out;
        if (setup.kind == ModelKind::SfData || setup.kind == ModelKind::SfPi) {
            auto sv = deeponet::bind_params(t, setup.sf, "sf", false);
            out = deeponet::modified_forward_grid(t, sv, t.constant(rows_of(test.inputs)),
                                                  t.constant(test.queries), cnt, p);
        } else if (setup.kind == ModelKind::NonComposite) {
            auto nv = deeponet::bind_params(t, setup.composite.nonlinear, "nl", false);
            auto lv = deeponet::bind_params(t, setup.composite.linear, "lin", false);
            ad::Var pm = t.constant(rows_of(oracle_probes));
            const bool use_uh = setup.composite.nonlinear.branch_in() > oracle_probes.cols();
            ad::Var nl_branch = use_uh ? t.concat_cols(t.constant(rows_of(test.inputs)), pm) : pm;
            ad::Var xq = t.constant(test.queries);
            Tensor lf_block({cnt * p, comp});
            std::memcpy(lf_block.data(), oracle_lf_rows.data() + start * p * comp,
                        cnt * p * comp * sizeof(double));
            ad::Var x_rows = t.tile_rows(xq, static_cast<std::uint32_t>(cnt));
            out = t.add(deeponet::modified_forward_grid(t, nv, nl_branch, xq, cnt, p),
                        deeponet::standard_forward_rows(t, lv, t.constant(lf_block), x_rows));
        } else {
            auto cv = multifidelity::bind_composite(t, setup.composite, false, true);
            ad::Var u_l = t.constant(rows_of(test.lf_sensor_inputs()));
            ad::Var pm = multifidelity::probe_matrix(t, cv.lf, u_l, t.constant(setup.probes.points),
                                                     cnt, setup.probes.count());
            ad::Var u_h;
            if (multifidelity::wiring_uses_hf_sensors(setup.composite, setup.probes))
                u_h = t.constant(rows_of(test.inputs));
            out = multifidelity::hf_forward_grid(t, cv, u_h, u_l, pm, t.constant(test.queries), cnt,
                                                 p)
                      .total;
        }
        const Tensor& vals = t.value(out);
        std::memcpy(pred.data() + start * p * comp, vals.data(),
                    cnt * p * comp * sizeof(double));
    }
    return pred;
}

// ---------------------------------------------------------------------------
// Artifacts.
// ---------------------------------------------------------------------------

void write_loss_history_csv(const std::filesystem::path& path,
                            const std::vector<optimize::StepRecord>& history) {
    std::ofstream f(path);
    f << "step,total,hf_physics,lf,ic,bc,reg_nl,reg_lf,lr\n";
    char buf[512];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf),
                      "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.total,
                      r.hf_or_physics, r.lf, r.ic, r.bc, r.reg_nl, r.reg_lf, r.lr);
        f << buf;
    }
}

namespace {

optimize::ParamRefs refs_for(optimize::TrainSetup& setup) {
    switch (setup.kind) {
        case ModelKind::SfData:
        case ModelKind::SfPi: return optimize::collect_refs(setup.sf, "sf");
        case ModelKind::NonComposite: return optimize::collect_refs_noncomposite(setup.composite);
        default: return optimize::collect_refs(setup.composite);
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, optimize::TrainSetup& setup) {
    std::filesystem::create_directories(dir);
    optimize::ParamRefs refs = refs_for(setup);
    json tensors = json::array();
    std::ofstream bin(dir / "params.bin", std::ios::binary);
    std::size_t off = 0;
    auto dump = [&](const std::string& name, const Tensor& t) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", off}});
        bin.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
        off += t.size();
    };
    for (auto& [name, t] : refs.items) dump(name, *t);
    if (setup.probes.points.size()) dump("probes.points", setup.probes.points);
    json m{{"model", optimize::to_string(setup.kind)}, {"tensors", tensors}};
    std::ofstream f(dir / "params.json");
    f << m.dump(2) << "\n";
}

void load_checkpoint(const std::filesystem::path& dir, optimize::TrainSetup& setup) {
    std::ifstream f(dir / "params.json");
    if (!f) throw std::runtime_error("missing checkpoint manifest in " + dir.string());
    json m = json::parse(f);
    if (optimize::model_kind_from_string(m.at("model").get<std::string>()) != setup.kind)
        throw std::runtime_error("checkpoint model kind differs from the configured model");

    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("missing params.bin in " + dir.string());

    optimize::ParamRefs refs = refs_for(setup);
    auto find_ref = [&](const std::string& name) -> Tensor* {
        for (auto& [n, t] : refs.items)
            if (n == name) return t;
        if (name == "probes.points") return &setup.probes.points;
        return nullptr;
    };
    for (const json& e : m.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const auto shape = e.at("shape").get<std::vector<std::size_t>>();
        Tensor* dst = find_ref(name);
        if (!dst) throw std::runtime_error("checkpoint tensor has no destination: " + name);
        Tensor t(shape);
        bin.seekg(static_cast<std::streamoff>(e.at("offset").get<std::size_t>() * sizeof(double)));
        bin.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!bin) throw std::runtime_error("short read in checkpoint " + dir.string());
        if (dst->size() && !dst->same_shape(t))
            throw std::runtime_error("checkpoint tensor shape mismatch for " + name);
        *dst = std::move(t);
    }
}

namespace {

MetricsReport evaluate(const optimize::TrainSetup& setup, const TestBundle& test,
                       const ExperimentConfig& c) {
    MetricsReport rep;
    const Tensor pred = predict_outputs(setup, test.data, test.oracle_probes, test.oracle_lf_rows);
    rep.sample_mse = per_sample_mse(test.data.outputs, pred);
    rep.sample_rel_l2 = per_sample_rel_l2(test.data.outputs, pred);
    rep.mean_mse = mean_mse(test.data.outputs, pred);
    rep.mean_rel_l2 = mean_rel_l2(test.data.outputs, pred);
    rep.config_hash = config_hash(c);
    return rep;
}

void write_report_json(const std::filesystem::path& path, const ExperimentConfig& c,
                       const MetricsReport& rep) {
    json j{{"name", c.name},
           {"benchmark", c.benchmark},
           {"model", optimize::to_string(c.model)},
           {"seed", c.seed},
           {"config_hash", rep.config_hash},
           {"steps", rep.steps},
           {"metrics",
            {{"mean_mse", rep.mean_mse},
             {"mean_rel_l2", rep.mean_rel_l2},
             {"per_sample_mse", rep.sample_mse},
             {"per_sample_rel_l2", rep.sample_rel_l2}}},
           {"runtime_seconds", rep.runtime_seconds}};
    std::ofstream f(path);
    f << j.dump(2) << "\n";
}

void write_artifacts(const std::filesystem::path& out_dir, const ExperimentConfig& c,
                     optimize::TrainSetup& setup, const TestBundle& test,
                     const optimize::TrainReport& train_rep, const MetricsReport& rep) {
    std::filesystem::create_directories(out_dir);
    write_report_json(out_dir / "report.json", c, rep);
    write_loss_history_csv(out_dir / "loss_history.csv", train_rep.history);
    {
        std::ofstream f(out_dir / "config.json");
        f << config_to_json_text(c) << "\n";
    }
    save_checkpoint(out_dir / "checkpoint", setup);

    FidelityDataset preds = test.data;
    preds.outputs = predict_outputs(setup, test.data, test.oracle_probes, test.oracle_lf_rows);
    datagen::DatasetManifest m;
    m.name = c.name + "_predictions";
    m.generator = "predictions";
    m.seed = c.seed;
    datagen::write_dataset(out_dir / "predictions", preds, m);
}

}  // namespace

MetricsReport run_experiment(const ExperimentConfig& c, const std::filesystem::path& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    PreparedExperiment prep = prepare_experiment(c);
    optimize::TrainReport train_rep = optimize::train(prep.setup);
    MetricsReport rep = evaluate(prep.setup, prep.test, c);
    rep.steps = c.steps;
    rep.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_artifacts(out_dir, c, prep.setup, prep.test, train_rep, rep);
    return rep;
}

Comparison compare(const ExperimentConfig& ca, const ExperimentConfig& cb,
                   const std::filesystem::path& out_dir) {
    if (ca.benchmark != cb.benchmark)
        throw std::runtime_error("compare: benchmarks differ (" + ca.benchmark + " vs " +
                                 cb.benchmark + ")");
    std::filesystem::create_directories(out_dir);

    PreparedExperiment pa = prepare_experiment(ca);
    PreparedExperiment pb = prepare_experiment(cb);

    // Identical held-out set for both runs.
    pb.test = pa.test;

    const auto t0 = std::chrono::steady_clock::now();
    optimize::TrainReport ra = optimize::train(pa.setup);
    Comparison cmp;
    cmp.a = evaluate(pa.setup, pa.test, ca);
    cmp.a.steps = ca.steps;
    cmp.a.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto t1 = std::chrono::steady_clock::now();
    optimize::TrainReport rb = optimize::train(pb.setup);
    cmp.b = evaluate(pb.setup, pb.test, cb);
    cmp.b.steps = cb.steps;
    cmp.b.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();

    cmp.mse_ratio = cmp.a.mean_mse / cmp.b.mean_mse;
    cmp.rel_l2_ratio = cmp.a.mean_rel_l2 / cmp.b.mean_rel_l2;

    write_artifacts(out_dir / "a", ca, pa.setup, pa.test, ra, cmp.a);
    write_artifacts(out_dir / "b", cb, pb.setup, pb.test, rb, cmp.b);

    json j{{"a", {{"name", ca.name}, {"mean_mse", cmp.a.mean_mse}, {"mean_rel_l2", cmp.a.mean_rel_l2}}},
           {"b", {{"name", cb.name}, {"mean_mse", cmp.b.mean_mse}, {"mean_rel_l2", cmp.b.mean_rel_l2}}},
           {"mse_ratio_a_over_b", cmp.mse_ratio},
           {"rel_l2_ratio_a_over_b", cmp.rel_l2_ratio}};
    std::ofstream f(out_dir / "comparison.json");
    f << j.dump(2) << "\n";
    return cmp;
}

}  // namespace mfdon::harness
