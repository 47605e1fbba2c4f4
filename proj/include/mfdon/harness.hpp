#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "mfdon/datagen.hpp"
#include "mfdon/optimize.hpp"

namespace mfdon::harness {

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

/// Mean over samples of the per-sample MSE, components flattened into the
/// point sum. Tensors are (N x P x C) or (N x P).
double mean_mse(const Tensor& truth, const Tensor& pred);

/// Mean over samples of ||truth - pred||_2 / ||truth||_2.
/// Throws when a truth sample has zero norm, naming the sample.
double mean_rel_l2(const Tensor& truth, const Tensor& pred);

std::vector<double> per_sample_mse(const Tensor& truth, const Tensor& pred);
std::vector<double> per_sample_rel_l2(const Tensor& truth, const Tensor& pred);

// ---------------------------------------------------------------------------
// Experiment configuration (JSON schema v1).
// ---------------------------------------------------------------------------

struct DataConfig {
    std::size_t n_lf = 0, n_hf = 0;
    std::size_t lf_grid = 0, hf_grid = 0;  // per-axis point counts
    std::array<double, 2> lf_bounds{0.0, 1.0};
    std::array<double, 2> hf_bounds{0.0, 1.0};
    // Burgers
    double viscosity = 1e-2;
    double dt = 5e-3;
    double snapshot_dt = 5e-2;
    std::size_t m_l = 21;
    double noise_variance = 0.0;
    // external datasets
    std::string lf_path, hf_path, test_path;
};

struct PhysicsConfig {
    std::size_t collocation = 0;
    std::size_t p_ic = 0;
    std::size_t p_bc = 0;
};

struct TestConfig {
    std::size_t n_a = 0;          // analytic lattices: number of test a values
    std::size_t grid = 0;         // analytic lattices: per-axis point count
    std::size_t n_samples = 0;    // Burgers: held-out sample count
    double dt = 1e-4;             // Burgers: reference solver step
    std::size_t grid_x = 101, grid_t = 101;
};

struct ExperimentConfig {
    int schema_version = 1;
    std::string name;
    std::string benchmark;  // jump1d|corr_u_1d|lin2d|nonlin2d|ode_3_1|burgers|noncomp_1d|external
    optimize::ModelKind model = optimize::ModelKind::MfData;
    std::uint64_t seed = 1;
    DataConfig data;
    deeponet::Activation activation = deeponet::Activation::Tanh;
    deeponet::NetSpec lf_net{3, 40}, linear_net{1, 5}, nonlinear_net{2, 30}, sf_net{3, 30};
    losses::LossWeights lambda;
    losses::ResidualNorm residual_norm = losses::ResidualNorm::L2;
    std::size_t steps = 0;
    optimize::ExpDecaySchedule schedule;
    optimize::BatchSpec batch;
    bool probe_gradient = true;
    std::size_t checkpoint_every = 0;
    std::size_t probe_count = 0;                 // 0 = full low-fidelity query grid
    std::array<std::size_t, 2> probe_mesh{0, 0};  // Burgers probe mesh override
    PhysicsConfig physics;
    TestConfig test;
};

ExperimentConfig config_from_json_file(const std::filesystem::path& path);
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& c);
std::string config_hash(const ExperimentConfig& c);

// ---------------------------------------------------------------------------
// Prepared experiment pieces.
// ---------------------------------------------------------------------------

struct TestBundle {
    FidelityDataset data;    // truth outputs on the held-out lattice
    Tensor oracle_probes;    // noncomposite only: exact probes per test sample
    Tensor oracle_lf_rows;   // noncomposite only: exact values at the query points
};

struct PreparedExperiment {
    optimize::TrainSetup setup;
    TestBundle test;
};

/// Generates (or loads) every dataset the configured run needs.
PreparedExperiment prepare_experiment(const ExperimentConfig& c);

/// Model predictions on a test dataset, shaped like its outputs.
Tensor predict_outputs(const optimize::TrainSetup& setup, const FidelityDataset& test,
                       const Tensor& oracle_probes, const Tensor& oracle_lf_rows = {});

struct MetricsReport {
    double mean_mse = 0.0;
    double mean_rel_l2 = 0.0;
    std::vector<double> sample_mse, sample_rel_l2;
    std::string config_hash;
    double runtime_seconds = 0.0;
    std::size_t steps = 0;
};

/// Full pipeline: data, training, evaluation, artifacts under out_dir
/// (report.json, loss_history.csv, predictions/, checkpoint/).
MetricsReport run_experiment(const ExperimentConfig& c, const std::filesystem::path& out_dir);

struct Comparison {
    MetricsReport a, b;
    double mse_ratio = 0.0;     // a / b
    double rel_l2_ratio = 0.0;  // a / b
};

/// Runs both configurations against the test set of `a` (benchmarks must
/// agree) and reports side-by-side metrics.
Comparison compare(const ExperimentConfig& a, const ExperimentConfig& b,
                   const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Artifact helpers.
// ---------------------------------------------------------------------------

void write_loss_history_csv(const std::filesystem::path& path,
                            const std::vector<optimize::StepRecord>& history);

/// Named-tensor checkpoint: params.json (names, shapes, offsets) + params.bin.
void save_checkpoint(const std::filesystem::path& dir, optimize::TrainSetup& setup);
void load_checkpoint(const std::filesystem::path& dir, optimize::TrainSetup& setup);

}  // namespace mfdon::harness
