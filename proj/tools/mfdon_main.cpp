// Command-line front end: config-driven data generation, training, evaluation
// and side-by-side comparisons.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mfdon/harness.hpp"

namespace fs = std::filesystem;
using namespace mfdon;

namespace {

fs::path preset_dir() {
    if (const char* env = std::getenv("MFDON_PRESET_DIR")) return env;
    return "presets";
}

harness::ExperimentConfig load_config(const std::string& config_path, const std::string& preset,
                                      std::uint64_t seed_override, bool has_seed) {
    fs::path path;
    if (!preset.empty())
        path = preset_dir() / (preset + ".json");
    else if (!config_path.empty())
        path = config_path;
    else
        throw std::runtime_error("provide --config <path> or --preset <name>");
    harness::ExperimentConfig c = harness::config_from_json_file(path);
    if (has_seed) c.seed = seed_override;
    return c;
}

void dataset_to_csv(const fs::path& dataset_dir, const fs::path& out_csv) {
    auto loaded = datagen::read_dataset(dataset_dir);
    const FidelityDataset& ds = loaded.data;
    std::ofstream f(out_csv);
    f << "sample";
    for (std::size_t d = 0; d < ds.query_dim(); ++d) f << ",x" << d;
    for (std::size_t c = 0; c < ds.components(); ++c) f << ",value" << c;
    f << "\n";
    char buf[64];
    for (std::size_t i = 0; i < ds.num_samples(); ++i)
        for (std::size_t k = 0; k < ds.num_queries(); ++k) {
            f << i;
            for (std::size_t d = 0; d < ds.query_dim(); ++d) {
                std::snprintf(buf, sizeof(buf), ",%.17g", ds.queries.at(k, d));
                f << buf;
            }
            for (std::size_t c = 0; c < ds.components(); ++c) {
                std::snprintf(buf, sizeof(buf), ",%.17g",
                              ds.outputs[(i * ds.num_queries() + k) * ds.components() + c]);
                f << buf;
            }
            f << "\n";
        }
    std::cout << "wrote " << out_csv.string() << "\n";
}

void print_metrics(const std::string& tag, const harness::MetricsReport& r) {
    std::cout << tag << ": mean_mse=" << r.mean_mse << " mean_rel_l2=" << r.mean_rel_l2
              << " (runtime " << r.runtime_seconds << " s)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multifidelity DeepONet toolkit"};
    app.require_subcommand(1);

    std::string config_path, preset, out_dir = "runs/out";
    std::uint64_t seed = 0;
    bool has_seed = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config JSON");
        cmd->add_option("--preset", preset, "preset name under presets/");
        cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
            has_seed = true;
        });
        cmd->add_option("--out", out_dir, "output directory");
    };

    CLI::App* gen = app.add_subcommand("generate", "generate the configured datasets to disk");
    add_common(gen);

    CLI::App* train = app.add_subcommand("train", "train a model and write run artifacts");
    add_common(train);

    CLI::App* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on the test set");
    add_common(eval);
    std::string checkpoint_dir;
    eval->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();

    CLI::App* cmp = app.add_subcommand("compare", "run two configs on one test set");
    std::string config_a, config_b, preset_a, preset_b;
    cmp->add_option("--config-a", config_a, "first config JSON");
    cmp->add_option("--config-b", config_b, "second config JSON");
    cmp->add_option("--preset-a", preset_a, "first preset name");
    cmp->add_option("--preset-b", preset_b, "second preset name");
    cmp->add_option("--out", out_dir, "output directory");

    CLI::App* plot = app.add_subcommand("plot-data", "flatten a dataset directory to CSV");
    std::string dataset_dir, csv_out = "data.csv";
    plot->add_option("--dataset", dataset_dir, "dataset directory")->required();
    plot->add_option("--out", csv_out, "CSV output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            harness::ExperimentConfig c = load_config(config_path, preset, seed, has_seed);
            harness::PreparedExperiment prep = harness::prepare_experiment(c);
            datagen::DatasetManifest m;
            m.name = c.name;
            m.generator = c.benchmark;
            m.seed = c.seed;
            const fs::path root = out_dir;
            if (prep.setup.lf_data.num_samples())
                datagen::write_dataset(root / "lf", prep.setup.lf_data, m);
            if (prep.setup.hf_data.num_samples())
                datagen::write_dataset(root / "hf", prep.setup.hf_data, m);
            datagen::write_dataset(root / "test", prep.test.data, m);
            std::cout << "datasets written under " << root.string() << "\n";
        } else if (train->parsed()) {
            harness::ExperimentConfig c = load_config(config_path, preset, seed, has_seed);
            harness::MetricsReport r = harness::run_experiment(c, out_dir);
            print_metrics(c.name.empty() ? "run" : c.name, r);
        } else if (eval->parsed()) {
            harness::ExperimentConfig c = load_config(config_path, preset, seed, has_seed);
            harness::PreparedExperiment prep = harness::prepare_experiment(c);
            harness::load_checkpoint(checkpoint_dir, prep.setup);
            Tensor pred =
                harness::predict_outputs(prep.setup, prep.test.data, prep.test.oracle_probes, prep.test.oracle_lf_rows);
            harness::MetricsReport r;
            r.mean_mse = harness::mean_mse(prep.test.data.outputs, pred);
            r.mean_rel_l2 = harness::mean_rel_l2(prep.test.data.outputs, pred);
            print_metrics("evaluate", r);
        } else if (cmp->parsed()) {
            harness::ExperimentConfig a = load_config(config_a, preset_a, seed, has_seed);
            harness::ExperimentConfig b = load_config(config_b, preset_b, seed, has_seed);
            harness::Comparison result = harness::compare(a, b, out_dir);
            print_metrics("a", result.a);
            print_metrics("b", result.b);
            std::cout << "mse ratio a/b = " << result.mse_ratio
                      << ", rel_l2 ratio a/b = " << result.rel_l2_ratio << "\n";
        } else if (plot->parsed()) {
            dataset_to_csv(dataset_dir, csv_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
