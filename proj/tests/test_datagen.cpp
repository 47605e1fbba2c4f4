#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mfdon/datagen.hpp"

using namespace mfdon;
using namespace mfdon::datagen;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST_CASE("analytic closed forms at frozen points") {
    CHECK(jump1d_yl(12.0, 0.25) == doctest::Approx(-7.605184).epsilon(1e-6));
    CHECK(jump1d_yh(12.0, 0.25) == doctest::Approx(-0.210368).epsilon(1e-5));
    // x = 0.5 sits on the lower branch (the jump is at x <= 0.5 inclusive).
    CHECK(jump1d_yl(12.0, 0.5) == doctest::Approx(-4.545351).epsilon(1e-6));

    CHECK(corr_u_yl(12.0, 0.5) == doctest::Approx(0.909297).epsilon(1e-6));
    CHECK(corr_u_yh(12.0, 0.5) == doctest::Approx(0.909297).epsilon(1e-6));

    CHECK(lin2d_zl(8.0, 0.5, 0.0) == doctest::Approx(1.5));
    CHECK(lin2d_zh(8.0, 0.5, 0.0) == doctest::Approx(1.0));
    CHECK(nonlin2d_zh(8.0, 1.0, 1.0) == doctest::Approx(-0.190818).epsilon(1e-5));

    CHECK(ode31_yl(0.0, 0.25) == doctest::Approx(1.0));
    CHECK(ode31_yh_exact(0.0, 0.25) == doctest::Approx(-1.0));

    CHECK(noncomp_yl(12.0, 0.5) == doctest::Approx(-4.090703).epsilon(1e-6));
    CHECK(noncomp_yh(12.0, 0.5) == doctest::Approx(0.909297).epsilon(1e-6));
}

TEST_CASE("correlation identities hold at machine precision on full grids") {
    Tensor x = line_grid(41, 0.0, 1.0);
    for (double a : {10.0, 11.37, 12.9, 14.0}) {
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double xv = x[i];
            CHECK(std::fabs(jump1d_yh(a, xv) - (2.0 * jump1d_yl(a, xv) - 20.0 * xv + 20.0)) <
                  1e-13);
            const double u = a * xv - 4.0;
            CHECK(std::fabs(corr_u_yh(a, xv) - (corr_u_yl(a, xv) - xv + 0.25 * u)) < 1e-13);
            CHECK(std::fabs(noncomp_yh(a, xv) - (noncomp_yl(a, xv) - xv + 5.5)) < 1e-13);
        }
    }
    Tensor xy = mesh_grid2(11, 0.02, 0.98, 11, 0.02, 0.98);
    for (double a : {8.0, 9.1, 10.0})
        for (std::size_t i = 0; i < xy.rows(); ++i) {
            CHECK(std::fabs(lin2d_zh(a, xy.at(i, 0), xy.at(i, 1)) -
                            (lin2d_zl(a, xy.at(i, 0), xy.at(i, 1)) - xy.at(i, 0))) < 1e-13);
        }
    // Low-fidelity ODE values stay inside [0, 1].
    for (double a : {0.0, 1.7, 5.0})
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double v = ode31_yl(a, x[i]);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
}

TEST_CASE("a-value helpers") {
    auto rnd = random_a_values(AnalyticCase::Jump1d, 50, 7);
    for (double a : rnd) {
        CHECK(a >= 10.0);
        CHECK(a <= 14.0);
    }
    CHECK(random_a_values(AnalyticCase::Jump1d, 50, 7) == rnd);

    // The 20-point test grid reproduces the published test values of a.
    auto grid = equispaced_a_values(0.0125, 4.975, 20);
    CHECK(grid[3] == doctest::Approx(0.79605263).epsilon(1e-7));
    CHECK(grid[17] == doctest::Approx(4.4526315).epsilon(1e-7));
}

TEST_CASE("analytic dataset pairs carry probe-net inputs") {
    auto pair = gen_analytic(AnalyticCase::Jump1d, {10.5, 12.0, 13.5}, line_grid(38, 0, 1),
                             {11.0, 13.0}, line_grid(5, 0, 1));
    pair.lf.validate();
    pair.hf.validate();
    CHECK(pair.lf.num_samples() == 3);
    CHECK(pair.hf.num_samples() == 2);
    const Tensor* lf_in = pair.hf.extra_or_null("lf_inputs");
    REQUIRE(lf_in != nullptr);
    CHECK(lf_in->cols() == 38);
    CHECK(lf_in->at(0, 0) == doctest::Approx(11.0 * 0.0 - 4.0));

    // ODE branch inputs are the constant function a.
    auto ode = analytic_dataset(AnalyticCase::OdeLf31, false, {1.25}, line_grid(21, 0, 1));
    for (std::size_t s = 0; s < 21; ++s) CHECK(ode.inputs.at(0, s) == 1.25);
}

TEST_CASE("grf sampling") {
    GRFSpec spec;
    spec.seed = 11;

    SUBCASE("mode-zero variance matches the covariance eigenvalue") {
        const double sigma0 = grf_mode_sigma(spec, 0);
        CHECK(sigma0 * sigma0 == doctest::Approx(1.6e-3).epsilon(1e-12));
    }
    SUBCASE("same seed and index reproduce the field") {
        GrfSample a = sample_grf(spec, 4);
        GrfSample b = sample_grf(spec, 4);
        CHECK(a.cos_coef() == b.cos_coef());
        CHECK(a.sin_coef() == b.sin_coef());
        GrfSample c = sample_grf(spec, 5);
        CHECK(a.cos_coef() != c.cos_coef());
    }
    SUBCASE("ensemble mean of u(0) is zero within three standard errors") {
        const std::size_t n = 10000;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += sample_grf(spec, i).eval(0.0);
        mean /= static_cast<double>(n);
        // Pointwise standard deviation of the field.
        double var = grf_mode_sigma(spec, 0) * grf_mode_sigma(spec, 0);
        for (std::size_t k = 1; k <= spec.grid / 2 - 1; ++k) {
            const double s = grf_mode_sigma(spec, k);
            var += 2.0 * s * s;
        }
        const double stderr3 = 3.0 * std::sqrt(var / static_cast<double>(n));
        CHECK(std::fabs(mean) < stderr3);
    }
    SUBCASE("spectrum decays like the covariance symbol") {
        const std::size_t n = 400;
        auto mode_power = [&](std::size_t k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                GrfSample s = sample_grf(spec, i);
                acc += s.cos_coef()[k] * s.cos_coef()[k] + s.sin_coef()[k] * s.sin_coef()[k];
            }
            return acc / static_cast<double>(n);
        };
        auto symbol = [&](std::size_t k) {
            const double s = grf_mode_sigma(spec, k);
            return 4.0 * s * s;  // E[a_k^2 + b_k^2] = 4 sigma_k^2... checked below
        };
        // E[a_k^2] = 2 sigma_k^2, so a_k^2 + b_k^2 averages to 4 sigma_k^2.
        const double r_measured = mode_power(1) / mode_power(4);
        const double r_expected = symbol(1) / symbol(4);
        CHECK(r_measured == doctest::Approx(r_expected).epsilon(0.3));
    }
}

namespace {

std::vector<double> test_ic(std::size_t n) {
    GRFSpec gs;
    gs.seed = 7;
    GrfSample s = sample_grf(gs, 0);
    std::vector<double> ic(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(n);
        ic[i] = std::sin(2 * kPi * x) * 0.5 + s.eval(x) * 3.0;
    }
    return ic;
}

}  // namespace

TEST_CASE("burgers solver invariants") {
    const std::size_t n = 128;

    SUBCASE("constant initial condition is an exact fixed point") {
        BurgersConfig c;
        c.viscosity = 1e-2;
        std::vector<double> ic(n, 0.7);
        auto sol = solve_burgers_etdrk4(c, ic);
        auto last = sol.grid_values(sol.snapshot_count() - 1);
        for (double v : last) CHECK(v == doctest::Approx(0.7).epsilon(1e-14));
    }
    SUBCASE("spatial mean is conserved and energy decays") {
        BurgersConfig c;
        c.viscosity = 1e-2;
        auto sol = solve_burgers_etdrk4(c, test_ic(n));
        auto first = sol.grid_values(0);
        double m0 = 0;
        for (double v : first) m0 += v;
        m0 /= static_cast<double>(n);
        double prev_energy = 1e300;
        for (std::size_t s = 0; s < sol.snapshot_count(); ++s) {
            auto g = sol.grid_values(s);
            double m = 0, e = 0;
            for (double v : g) {
                m += v;
                e += v * v;
            }
            m /= static_cast<double>(n);
            e /= static_cast<double>(n);
            CHECK(std::fabs(m - m0) < 1e-8);
            CHECK(e <= prev_energy + 1e-10);
            prev_energy = e;
        }
    }
    SUBCASE("fourth-order self-convergence under time-step halving") {
        auto run = [&](double dt) {
            BurgersConfig c;
            c.viscosity = 1e-2;
            c.dt = dt;
            c.snapshot_dt = 0.2;
            auto sol = solve_burgers_etdrk4(c, test_ic(n));
            return sol.grid_values(sol.snapshot_count() - 1);
        };
        auto u1 = run(0.01), u2 = run(0.005), u4 = run(0.0025);
        double e1 = 0, e2 = 0, nrm = 0;
        for (std::size_t i = 0; i < n; ++i) {
            e1 += (u1[i] - u2[i]) * (u1[i] - u2[i]);
            e2 += (u2[i] - u4[i]) * (u2[i] - u4[i]);
            nrm += u2[i] * u2[i];
        }
        e1 = std::sqrt(e1);
        e2 = std::sqrt(e2);
        const double ratio = e1 / e2;
        CHECK(ratio > 16.0 * 0.8);
        CHECK(ratio < 16.0 * 1.2);
        // Half-step agreement at the paper's production step size.
        CHECK(std::sqrt(e1) / std::sqrt(nrm) < 1e-3);  // sanity on magnitudes
        CHECK(e1 / std::sqrt(nrm) < 1e-6);
    }
    SUBCASE("trigonometric evaluation matches the collocation nodes") {
        BurgersConfig c;
        c.viscosity = 1e-2;
        auto sol = solve_burgers_etdrk4(c, test_ic(n));
        auto g = sol.grid_values(10);
        for (std::size_t i = 0; i < n; i += 13) {
            const double x = static_cast<double>(i) / static_cast<double>(n);
            CHECK(sol.eval(10, x) == doctest::Approx(g[i]).epsilon(1e-10));
        }
    }
    SUBCASE("config validation") {
        BurgersConfig c;
        c.viscosity = 0.0;
        CHECK_THROWS(c.validate());
        c.viscosity = 1e-2;
        c.dt = 0.003;  // does not divide 0.05
        CHECK_THROWS(c.validate());
        c.dt = 5e-3;
        c.modes = 100;  // not a power of two
        CHECK_THROWS(c.validate());
    }
}

TEST_CASE("noise injection") {
    auto ds = analytic_dataset(AnalyticCase::CorrU1d, false, {10.0, 12.0, 14.0}, line_grid(21, 0, 1));
    SUBCASE("variance zero is the identity") {
        auto same = add_noise(ds, 0.0, 3);
        CHECK(same.outputs.vec() == ds.outputs.vec());
    }
    SUBCASE("sample variance matches the requested variance within 10%") {
        auto big = analytic_dataset(AnalyticCase::CorrU1d, false,
                                    equispaced_a_values(10, 14, 80), line_grid(101, 0, 1));
        auto noisy = add_noise(big, 4e-4, 3);
        double mean = 0.0, var = 0.0;
        const std::size_t n = big.outputs.size();
        for (std::size_t i = 0; i < n; ++i) mean += noisy.outputs[i] - big.outputs[i];
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = noisy.outputs[i] - big.outputs[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n - 1);
        CHECK(var == doctest::Approx(4e-4).epsilon(0.1));
    }
    SUBCASE("same seed reproduces the noise") {
        auto n1 = add_noise(ds, 1e-3, 9);
        auto n2 = add_noise(ds, 1e-3, 9);
        CHECK(n1.outputs.vec() == n2.outputs.vec());
    }
}

TEST_CASE("subsample") {
    SUBCASE("identical grids are the identity") {
        Tensor g = line_grid(11, 0, 1);
        std::vector<double> v(11);
        for (std::size_t i = 0; i < 11; ++i) v[i] = std::sin(static_cast<double>(i));
        bool interp = true;
        auto out = subsample(v, g, g, &interp);
        CHECK_FALSE(interp);
        CHECK(out == v);
    }
    SUBCASE("101 -> 21 extraction picks every fifth node including endpoints") {
        Tensor src = line_grid(101, 0, 1);
        Tensor dst = line_grid(21, 0, 1);
        std::vector<double> v(101);
        for (std::size_t i = 0; i < 101; ++i) v[i] = static_cast<double>(i);
        bool interp = true;
        auto out = subsample(v, src, dst, &interp);
        CHECK_FALSE(interp);
        REQUIRE(out.size() == 21);
        CHECK(out.front() == 0.0);
        CHECK(out.back() == 100.0);
        for (std::size_t i = 0; i < 21; ++i) CHECK(out[i] == doctest::Approx(5.0 * i));
    }
    SUBCASE("non-nested grids interpolate within neighbor bounds") {
        Tensor src = line_grid(8, 0, 1);
        Tensor dst = line_grid(5, 0.05, 0.95);
        std::vector<double> v{0, 1, 2, 3, 4, 5, 6, 7};
        bool interp = false;
        auto out = subsample(v, src, dst, &interp);
        CHECK(interp);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double x = dst.at(i, 0) * 7.0;  // linear field reproduces exactly
            CHECK(out[i] == doctest::Approx(x).epsilon(1e-12));
        }
    }
}

TEST_CASE("dataset round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mfdon_ds_test";
    fs::remove_all(dir);

    auto pair = gen_analytic(AnalyticCase::Jump1d, {10.5, 12.0}, line_grid(13, 0, 1), {11.0},
                             line_grid(5, 0, 1));
    pair.hf.extra["ic_values"] = Tensor({1, 4}, {1.0, 2.0, 3.0, 4.0});

    DatasetManifest m;
    m.name = "roundtrip";
    m.generator = "jump1d";
    m.seed = 42;
    write_dataset(dir, pair.hf, m);
    auto loaded = read_dataset(dir);

    CHECK(loaded.manifest.generator == "jump1d");
    CHECK(loaded.manifest.seed == 42);
    CHECK(loaded.data.inputs.vec() == pair.hf.inputs.vec());
    CHECK(loaded.data.outputs.vec() == pair.hf.outputs.vec());
    CHECK(loaded.data.sensors.vec() == pair.hf.sensors.vec());
    CHECK(loaded.data.queries.vec() == pair.hf.queries.vec());
    CHECK(loaded.data.extra.at("lf_inputs").vec() == pair.hf.extra.at("lf_inputs").vec());
    CHECK(loaded.data.extra.at("ic_values").vec() == pair.hf.extra.at("ic_values").vec());
    CHECK(loaded.data.sample_meta.at("a") == pair.hf.sample_meta.at("a"));

    SUBCASE("manifest counts must agree with the arrays") {
        // Corrupt the manifest sample count.
        auto text_path = dir / "manifest.json";
        std::ifstream in(text_path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        auto pos = text.find("\"samples\": 1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 12, "\"samples\": 3");
        std::ofstream out(text_path);
        out << text;
        out.close();
        CHECK_THROWS(read_dataset(dir));
    }
    SUBCASE("unknown versions are rejected") {
        auto text_path = dir / "manifest.json";
        std::ifstream in(text_path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        auto pos = text.find("\"version\": 1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 12, "\"version\": 9");
        std::ofstream out(text_path);
        out << text;
        out.close();
        CHECK_THROWS(read_dataset(dir));
    }
    fs::remove_all(dir);
}
