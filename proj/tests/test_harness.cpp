#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mfdon/harness.hpp"

using namespace mfdon;
using namespace mfdon::harness;

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream f(p);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

ExperimentConfig tiny_jump_config(optimize::ModelKind kind, std::uint64_t seed,
                                  std::size_t steps = 5) {
    ExperimentConfig c;
    c.name = "tiny_jump";
    c.benchmark = "jump1d";
    c.model = kind;
    c.seed = seed;
    c.data.n_lf = 4;
    c.data.n_hf = 3;
    c.data.lf_grid = 9;
    c.data.hf_grid = 5;
    c.lf_net = {2, 8};
    c.linear_net = {1, 4};
    c.nonlinear_net = {2, 6};
    c.sf_net = {2, 8};
    c.lambda = {0.1, 1.0, 0.1, 0.001, 0, 0};
    c.steps = steps;
    c.schedule = {1e-3, 2000, 0.9, false};
    c.test.n_a = 7;
    c.test.grid = 11;
    return c;
}

}  // namespace

TEST_CASE("mean_mse") {
    Tensor truth({1, 2}, {1.0, 2.0});
    Tensor pred({1, 2}, {1.0, 3.0});
    CHECK(mean_mse(truth, truth) == 0.0);
    CHECK(mean_mse(truth, pred) == doctest::Approx(0.5));

    SUBCASE("two-sample case matches the double loop") {
        Tensor t2({2, 3}, {1, 2, 3, 4, 5, 6});
        Tensor p2({2, 3}, {1.5, 2, 3, 4, 4, 8});
        double acc = 0.0;
        for (int i = 0; i < 2; ++i) {
            double s = 0.0;
            for (int j = 0; j < 3; ++j) {
                const double d = t2.at(i, j) - p2.at(i, j);
                s += d * d;
            }
            acc += s / 3.0;
        }
        acc /= 2.0;
        CHECK(mean_mse(t2, p2) == doctest::Approx(acc).epsilon(1e-15));
    }
    SUBCASE("scales as c^2 under joint scaling") {
        Tensor t2({2, 3}, {1, 2, 3, 4, 5, 6});
        Tensor p2({2, 3}, {2, 1, 3, 3, 5, 7});
        const double base = mean_mse(t2, p2);
        for (double& v : t2.vec()) v *= 2.5;
        for (double& v : p2.vec()) v *= 2.5;
        CHECK(mean_mse(t2, p2) == doctest::Approx(2.5 * 2.5 * base).epsilon(1e-12));
    }
}

TEST_CASE("mean_rel_l2") {
    Tensor truth({1, 2}, {1.0, 2.0});
    CHECK(mean_rel_l2(truth, truth) == 0.0);

    Tensor zero_pred({1, 2}, {0.0, 0.0});
    CHECK(mean_rel_l2(truth, zero_pred) == doctest::Approx(1.0));

    Tensor pred({1, 2}, {2.0, 2.0});
    CHECK(mean_rel_l2(truth, pred) == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-9));

    SUBCASE("zero-norm truth names the sample") {
        Tensor t2({2, 2}, {1.0, 1.0, 0.0, 0.0});
        Tensor p2({2, 2}, {1.0, 1.0, 0.5, 0.0});
        CHECK_THROWS_WITH_AS(mean_rel_l2(t2, p2), doctest::Contains("sample 1"),
                             std::invalid_argument);
    }
    SUBCASE("invariant under joint scaling") {
        Tensor t2({2, 3}, {1, 2, 3, 4, 5, 6});
        Tensor p2({2, 3}, {2, 1, 3, 3, 5, 7});
        const double base = mean_rel_l2(t2, p2);
        for (double& v : t2.vec()) v *= -3.0;
        for (double& v : p2.vec()) v *= -3.0;
        CHECK(mean_rel_l2(t2, p2) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("config JSON round trip") {
    ExperimentConfig c = tiny_jump_config(optimize::ModelKind::MfData, 7);
    c.lambda.l5 = 0.25;
    c.batch.hf = 2;
    const std::string text = config_to_json_text(c);
    ExperimentConfig d = config_from_json_text(text);
    CHECK(config_to_json_text(d) == text);
    CHECK(config_hash(c) == config_hash(d));
    CHECK(d.lambda.l5 == 0.25);
    CHECK(d.batch.hf == 2);

    SUBCASE("unknown schema versions are rejected") {
        std::string bad = text;
        const auto pos = bad.find("\"schema_version\": 1");
        bad.replace(pos, 19, "\"schema_version\": 3");
        CHECK_THROWS(config_from_json_text(bad));
    }
}

TEST_CASE("run_experiment artifacts and determinism") {
    const fs::path dir1 = fs::temp_directory_path() / "mfdon_exp1";
    const fs::path dir2 = fs::temp_directory_path() / "mfdon_exp2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    ExperimentConfig c = tiny_jump_config(optimize::ModelKind::MfData, 99, 6);
    MetricsReport r1 = run_experiment(c, dir1);
    MetricsReport r2 = run_experiment(c, dir2);

    CHECK(r1.mean_mse == r2.mean_mse);
    CHECK(r1.mean_rel_l2 == r2.mean_rel_l2);
    CHECK(read_file(dir1 / "loss_history.csv") == read_file(dir2 / "loss_history.csv"));

    CHECK(fs::exists(dir1 / "report.json"));
    CHECK(fs::exists(dir1 / "config.json"));
    CHECK(fs::exists(dir1 / "checkpoint" / "params.bin"));
    CHECK(fs::exists(dir1 / "predictions" / "manifest.json"));

    SUBCASE("report metrics are recomputable from the emitted predictions") {
        auto preds = datagen::read_dataset(dir1 / "predictions");
        // Rebuild truth for the same config and compare.
        PreparedExperiment prep = prepare_experiment(c);
        CHECK(mean_mse(prep.test.data.outputs, preds.data.outputs) ==
              doctest::Approx(r1.mean_mse).epsilon(1e-12));
    }
    SUBCASE("steps=0 reports the untrained model's error") {
        ExperimentConfig c0 = tiny_jump_config(optimize::ModelKind::MfData, 99, 0);
        const fs::path dir0 = fs::temp_directory_path() / "mfdon_exp0";
        fs::remove_all(dir0);
        MetricsReport r0 = run_experiment(c0, dir0);
        PreparedExperiment prep = prepare_experiment(c0);
        Tensor pred = predict_outputs(prep.setup, prep.test.data, prep.test.oracle_probes, prep.test.oracle_lf_rows);
        CHECK(r0.mean_mse == doctest::Approx(mean_mse(prep.test.data.outputs, pred)).epsilon(1e-12));
        fs::remove_all(dir0);
    }
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("checkpoint round trip restores predictions") {
    const fs::path dir = fs::temp_directory_path() / "mfdon_ckpt";
    fs::remove_all(dir);
    ExperimentConfig c = tiny_jump_config(optimize::ModelKind::MfData, 3, 8);
    PreparedExperiment prep = prepare_experiment(c);
    optimize::train(prep.setup);
    Tensor pred = predict_outputs(prep.setup, prep.test.data, prep.test.oracle_probes, prep.test.oracle_lf_rows);
    save_checkpoint(dir, prep.setup);

    PreparedExperiment fresh = prepare_experiment(c);
    load_checkpoint(dir, fresh.setup);
    Tensor pred2 = predict_outputs(fresh.setup, fresh.test.data, fresh.test.oracle_probes, fresh.test.oracle_lf_rows);
    CHECK(pred.vec() == pred2.vec());
    fs::remove_all(dir);
}

TEST_CASE("compare runs two configs on one test set") {
    const fs::path dir = fs::temp_directory_path() / "mfdon_cmp";
    fs::remove_all(dir);
    ExperimentConfig a = tiny_jump_config(optimize::ModelKind::MfData, 5, 4);
    SUBCASE("identical configs give ratio 1") {
        Comparison cmp = compare(a, a, dir);
        CHECK(cmp.mse_ratio == doctest::Approx(1.0));
        CHECK(cmp.rel_l2_ratio == doctest::Approx(1.0));
        CHECK(fs::exists(dir / "comparison.json"));
    }
    SUBCASE("swapping arguments flips the ratio") {
        ExperimentConfig b = tiny_jump_config(optimize::ModelKind::SfData, 6, 4);
        Comparison ab = compare(a, b, dir);
        Comparison ba = compare(b, a, dir);
        CHECK(ab.mse_ratio == doctest::Approx(1.0 / ba.mse_ratio).epsilon(1e-9));
    }
    SUBCASE("mismatched benchmarks are rejected") {
        ExperimentConfig b = a;
        b.benchmark = "corr_u_1d";
        CHECK_THROWS(compare(a, b, dir));
    }
    fs::remove_all(dir);
}

TEST_CASE("external two-component dataset trains without modification") {
    // Synthetic vector-valued data standing in for externally generated
    // simulation output: two output components per query point.
    const fs::path root = fs::temp_directory_path() / "mfdon_ext";
    fs::remove_all(root);

    auto make_ds = [&](std::size_t n, std::uint64_t seed, const char* fidelity) {
        Rng rng(seed);
        FidelityDataset ds;
        ds.fidelity = fidelity;
        ds.sensors = datagen::line_grid(6, 0, 1);
        ds.queries = datagen::line_grid(5, 0, 1);
        ds.inputs = Tensor({n, 6});
        ds.outputs = Tensor({n, 5, 2});
        for (std::size_t i = 0; i < n; ++i) {
            const double a = rng.uniform(1.0, 2.0);
            for (std::size_t s = 0; s < 6; ++s) ds.inputs.at(i, s) = a * ds.sensors[s];
            for (std::size_t k = 0; k < 5; ++k) {
                const double x = ds.queries[k];
                ds.outputs[(i * 5 + k) * 2 + 0] = std::sin(a * x);
                ds.outputs[(i * 5 + k) * 2 + 1] = std::cos(a * x);
            }
        }
        return ds;
    };

    datagen::DatasetManifest m;
    m.generator = "external";
    datagen::write_dataset(root / "lf", make_ds(6, 1, "low"), m);
    datagen::write_dataset(root / "hf", make_ds(3, 2, "high"), m);
    datagen::write_dataset(root / "test", make_ds(4, 3, "high"), m);

    ExperimentConfig c;
    c.name = "external_smoke";
    c.benchmark = "external";
    c.model = optimize::ModelKind::MfData;
    c.seed = 17;
    c.data.lf_path = (root / "lf").string();
    c.data.hf_path = (root / "hf").string();
    c.data.test_path = (root / "test").string();
    c.lf_net = {2, 8};
    c.linear_net = {1, 4};
    c.nonlinear_net = {2, 6};
    c.lambda = {1.0, 1.0, 1e-3, 1e-4, 0, 0};
    c.steps = 10;
    c.schedule = {1e-3, 2000, 0.9, false};

    MetricsReport r = run_experiment(c, root / "out");
    CHECK(std::isfinite(r.mean_mse));
    CHECK(std::isfinite(r.mean_rel_l2));
    CHECK(r.sample_mse.size() == 4);
    fs::remove_all(root);
}
