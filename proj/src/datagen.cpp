#include "mfdon/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

namespace mfdon::datagen {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kTwoPi = 2.0 * kPi;
constexpr double kFourPi = 4.0 * kPi;
}  // namespace

AnalyticCase analytic_case_from_string(const std::string& s) {
    if (s == "jump1d") return AnalyticCase::Jump1d;
    if (s == "corr_u_1d") return AnalyticCase::CorrU1d;
    if (s == "lin2d") return AnalyticCase::Lin2d;
    if (s == "nonlin2d") return AnalyticCase::Nonlin2d;
    if (s == "ode_lf_3_1") return AnalyticCase::OdeLf31;
    if (s == "noncomp_1d") return AnalyticCase::Noncomp1d;
    throw std::invalid_argument("unknown analytic case: " + s);
}

std::string to_string(AnalyticCase c) {
    switch (c) {
        case AnalyticCase::Jump1d: return "jump1d";
        case AnalyticCase::CorrU1d: return "corr_u_1d";
        case AnalyticCase::Lin2d: return "lin2d";
        case AnalyticCase::Nonlin2d: return "nonlin2d";
        case AnalyticCase::OdeLf31: return "ode_lf_3_1";
        case AnalyticCase::Noncomp1d: return "noncomp_1d";
    }
    return "?";
}

std::pair<double, double> a_range(AnalyticCase c) {
    switch (c) {
        case AnalyticCase::Jump1d:
        case AnalyticCase::CorrU1d:
        case AnalyticCase::Noncomp1d: return {10.0, 14.0};
        case AnalyticCase::Lin2d:
        case AnalyticCase::Nonlin2d: return {8.0, 10.0};
        case AnalyticCase::OdeLf31: return {0.0, 5.0};
    }
    return {0.0, 1.0};
}

double jump1d_yl(double a, double x) {
    const double u = a * x - 4.0;
    const double base = 0.5 * (6.0 * x - 2.0) * (6.0 * x - 2.0) * std::sin(u) + 10.0 * (x - 0.5);
    return base + (x <= 0.5 ? -5.0 : -2.0);
}

double jump1d_yh(double a, double x) { return 2.0 * jump1d_yl(a, x) - 20.0 * x + 20.0; }

double corr_u_yl(double a, double x) {
    const double u = a * x - 4.0;
    return std::sin(u) + x - 0.25 * u;
}

double corr_u_yh(double a, double x) { return std::sin(a * x - 4.0); }

double lin2d_zl(double a, double x, double y) { return std::cos(a * x - 4.0) * std::cos(y) + x; }

double lin2d_zh(double a, double x, double y) { return std::cos(a * x - 4.0) * std::cos(y); }

double nonlin2d_zl(double a, double x, double y) { return lin2d_zl(a, x, y); }

double nonlin2d_zh(double a, double x, double y) {
    const double cy = std::cos(y);
    return std::cos(a * x - 4.0) * cy * cy;
}

double ode31_yl(double a, double x) {
    const double c = std::cos(kFourPi * x + a);
    return c * c;
}

double ode31_yh_exact(double a, double x) { return std::cos(kFourPi * x + a); }

double noncomp_yl(double a, double x) { return std::sin(a * x - 4.0) + x - 5.5; }

double noncomp_yh(double a, double x) { return std::sin(a * x - 4.0); }

double analytic_value(AnalyticCase c, bool high_fidelity, double a, std::span<const double> xy) {
    switch (c) {
        case AnalyticCase::Jump1d: return high_fidelity ? jump1d_yh(a, xy[0]) : jump1d_yl(a, xy[0]);
        case AnalyticCase::CorrU1d: return high_fidelity ? corr_u_yh(a, xy[0]) : corr_u_yl(a, xy[0]);
        case AnalyticCase::Lin2d:
            return high_fidelity ? lin2d_zh(a, xy[0], xy[1]) : lin2d_zl(a, xy[0], xy[1]);
        case AnalyticCase::Nonlin2d:
            return high_fidelity ? nonlin2d_zh(a, xy[0], xy[1]) : nonlin2d_zl(a, xy[0], xy[1]);
        case AnalyticCase::OdeLf31:
            return high_fidelity ? ode31_yh_exact(a, xy[0]) : ode31_yl(a, xy[0]);
        case AnalyticCase::Noncomp1d:
            return high_fidelity ? noncomp_yh(a, xy[0]) : noncomp_yl(a, xy[0]);
    }
    return 0.0;
}

Tensor line_grid(std::size_t n, double lo, double hi) {
    Tensor t({n, 1});
    for (std::size_t i = 0; i < n; ++i)
        t[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return t;
}

Tensor mesh_grid2(std::size_t nx, double lo_x, double hi_x, std::size_t ny, double lo_y,
                  double hi_y) {
    Tensor t({nx * ny, 2});
    for (std::size_t i = 0; i < nx; ++i) {
        const double x =
            nx == 1 ? lo_x : lo_x + (hi_x - lo_x) * static_cast<double>(i) / static_cast<double>(nx - 1);
        for (std::size_t j = 0; j < ny; ++j) {
            const double y = ny == 1
                                 ? lo_y
                                 : lo_y + (hi_y - lo_y) * static_cast<double>(j) /
                                              static_cast<double>(ny - 1);
            t.at(i * ny + j, 0) = x;
            t.at(i * ny + j, 1) = y;
        }
    }
    return t;
}

std::vector<double> random_a_values(AnalyticCase c, std::size_t n, std::uint64_t seed) {
    auto [lo, hi] = a_range(c);
    Rng rng(seed);
    std::vector<double> out(n);
    for (double& v : out) v = rng.uniform(lo, hi);
    return out;
}

std::vector<double> equispaced_a_values(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return out;
}

FidelityDataset analytic_dataset(AnalyticCase c, bool high_fidelity,
                                 const std::vector<double>& a_values, const Tensor& grid) {
    FidelityDataset ds;
    ds.fidelity = high_fidelity ? "high" : "low";
    ds.sensors = grid;
    ds.queries = grid;
    const std::size_t n = a_values.size(), m = grid.rows();
    ds.inputs = Tensor({n, m});
    ds.outputs = Tensor({n, m, 1});
    const bool constant_input = c == AnalyticCase::OdeLf31;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < m; ++s)
            ds.inputs.at(i, s) = constant_input ? a_values[i] : a_values[i] * grid.at(s, 0) - 4.0;
        for (std::size_t k = 0; k < m; ++k) {
            std::span<const double> xy(grid.data() + k * grid.cols(), grid.cols());
            ds.outputs[i * m + k] = analytic_value(c, high_fidelity, a_values[i], xy);
        }
    }
    ds.sample_meta["a"] = a_values;
    return ds;
}

AnalyticPair gen_analytic(AnalyticCase c, const std::vector<double>& a_lf, const Tensor& grid_lf,
                          const std::vector<double>& a_hf, const Tensor& grid_hf) {
    AnalyticPair pair;
    pair.lf = analytic_dataset(c, false, a_lf, grid_lf);
    pair.hf = analytic_dataset(c, true, a_hf, grid_hf);
    // u for the high-fidelity samples at the low-fidelity sensors, which is
    // what the probe net consumes.
    const std::size_t m_l = grid_lf.rows();
    Tensor lf_inputs({a_hf.size(), m_l});
    const bool constant_input = c == AnalyticCase::OdeLf31;
    for (std::size_t i = 0; i < a_hf.size(); ++i)
        for (std::size_t s = 0; s < m_l; ++s)
            lf_inputs.at(i, s) = constant_input ? a_hf[i] : a_hf[i] * grid_lf.at(s, 0) - 4.0;
    pair.hf.extra["lf_inputs"] = std::move(lf_inputs);
    return pair;
}

// ---------------------------------------------------------------------------
// Gaussian random fields.
// ---------------------------------------------------------------------------

double grf_mode_sigma(const GRFSpec& spec, std::size_t k) {
    const double w = kTwoPi * static_cast<double>(k);
    const double eig = w * w + spec.shift * spec.shift;
    return spec.amplitude * std::pow(eig, -0.5 * spec.power);
}

double GrfSample::eval(double x) const {
    double s = a_[0];
    for (std::size_t k = 1; k < a_.size(); ++k) {
        const double ang = kTwoPi * static_cast<double>(k) * x;
        s += a_[k] * std::cos(ang) + b_[k] * std::sin(ang);
    }
    return s;
}

std::vector<double> GrfSample::eval_on(const Tensor& pts_1d) const {
    std::vector<double> out(pts_1d.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = eval(pts_1d.at(i, 0));
    return out;
}

GrfSample sample_grf(const GRFSpec& spec, std::uint64_t sample_index) {
    const std::size_t kmax = spec.grid / 2 - 1;
    Rng rng = Rng::derive(spec.seed, sample_index);
    std::vector<double> a(kmax + 1, 0.0), b(kmax + 1, 0.0);
    a[0] = grf_mode_sigma(spec, 0) * rng.normal();
    const double sqrt2 = std::sqrt(2.0);
    for (std::size_t k = 1; k <= kmax; ++k) {
        const double sigma = grf_mode_sigma(spec, k);
        a[k] = sqrt2 * sigma * rng.normal();
        b[k] = sqrt2 * sigma * rng.normal();
    }
    return GrfSample(std::move(a), std::move(b));
}

// ---------------------------------------------------------------------------
// FFT and ETDRK4.
// ---------------------------------------------------------------------------

namespace {

using cvec = std::vector<std::complex<double>>;

void fft_inplace(cvec& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= static_cast<double>(n);
}

bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

}  // namespace

void BurgersConfig::validate() const {
    if (!(viscosity > 0.0)) throw std::invalid_argument("Burgers: viscosity must be positive");
    if (!(dt > 0.0) || !(snapshot_dt > 0.0) || !(t_final > 0.0))
        throw std::invalid_argument("Burgers: nonpositive time parameters");
    if (!is_pow2(modes)) throw std::invalid_argument("Burgers: modes must be a power of two");
    const double ratio = snapshot_dt / dt;
    if (std::fabs(ratio - std::round(ratio)) > 1e-9 * ratio)
        throw std::invalid_argument("Burgers: dt must divide snapshot_dt");
    const double snaps = t_final / snapshot_dt;
    if (std::fabs(snaps - std::round(snaps)) > 1e-9 * snaps)
        throw std::invalid_argument("Burgers: snapshot_dt must divide t_final");
}

std::size_t BurgersConfig::steps_per_snapshot() const {
    return static_cast<std::size_t>(std::llround(snapshot_dt / dt));
}

std::size_t BurgersConfig::snapshot_count() const {
    return static_cast<std::size_t>(std::llround(t_final / snapshot_dt)) + 1;
}

double BurgersSolution::eval(std::size_t snapshot, double x) const {
    const cvec& v = spectra_.at(snapshot);
    const std::size_t half = n_ / 2;
    const std::complex<double> rot(std::cos(kTwoPi * x), std::sin(kTwoPi * x));
    std::complex<double> wk = rot;  // rot^k
    std::complex<double> acc(v[0].real() * 0.5, 0.0);
    for (std::size_t k = 1; k < half; ++k) {
        acc += v[k] * wk;
        wk *= rot;
    }
    double s = 2.0 * acc.real();
    // Nyquist term (zero under dealiasing, kept for completeness).
    s += (v[half] * wk).real();
    return s / static_cast<double>(n_);
}

std::vector<double> BurgersSolution::eval_grid(const Tensor& x_pts,
                                               const std::vector<double>& t_pts) const {
    std::vector<double> out(x_pts.rows() * t_pts.size());
    for (std::size_t j = 0; j < t_pts.size(); ++j) {
        std::size_t snap = snapshot_count();
        for (std::size_t s = 0; s < times_.size(); ++s)
            if (std::fabs(times_[s] - t_pts[j]) < 1e-9) {
                snap = s;
                break;
            }
        if (snap == snapshot_count())
            throw std::invalid_argument("eval_grid: requested time is not a snapshot");
        for (std::size_t i = 0; i < x_pts.rows(); ++i)
            out[i * t_pts.size() + j] = eval(snap, x_pts.at(i, 0));
    }
    return out;
}

std::vector<double> BurgersSolution::grid_values(std::size_t snapshot) const {
    cvec v = spectra_.at(snapshot);
    fft_inplace(v, true);
    std::vector<double> out(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = v[i].real();
    return out;
}

BurgersSolution solve_burgers_etdrk4(const BurgersConfig& config,
                                     const std::vector<double>& ic_on_grid) {
    config.validate();
    const std::size_t n = config.modes;
    if (ic_on_grid.size() != n)
        throw std::invalid_argument("solve_burgers_etdrk4: initial condition size != modes");

    cvec v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = {ic_on_grid[i], 0.0};
    fft_inplace(v, false);

    // Linear symbol and dealiased advection prefactor.
    std::vector<double> lin(n);
    cvec g(n);
    const std::size_t kcut = n / 3;
    for (std::size_t idx = 0; idx < n; ++idx) {
        const double k = idx <= n / 2 ? static_cast<double>(idx)
                                      : static_cast<double>(idx) - static_cast<double>(n);
        const double w = kTwoPi * k;
        lin[idx] = -config.viscosity * w * w;
        const bool keep = static_cast<std::size_t>(std::fabs(k)) <= kcut && idx != n / 2;
        g[idx] = keep ? std::complex<double>(0.0, -0.5 * w) : std::complex<double>(0.0, 0.0);
    }

    // phi-function weights by averaging over a contour around each h*L.
    const double h = config.dt;
    const int m_pts = 32;
    std::vector<double> e1(n), e2(n), q(n), f1(n), f2(n), f3(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
        const double hl = h * lin[idx];
        e1[idx] = std::exp(hl);
        e2[idx] = std::exp(0.5 * hl);
        std::complex<double> sq(0), s1(0), s2(0), s3(0);
        for (int m = 0; m < m_pts; ++m) {
            const double th = kPi * (m + 0.5) / m_pts;
            const std::complex<double> z =
                hl + std::complex<double>(std::cos(th), std::sin(th));
            const std::complex<double> ez = std::exp(z), ez2 = std::exp(0.5 * z);
            const std::complex<double> z2 = z * z, z3 = z2 * z;
            sq += (ez2 - 1.0) / z;
            s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z2)) / z3;
            s2 += (2.0 + z + ez * (-2.0 + z)) / z3;
            s3 += (-4.0 - 3.0 * z - z2 + ez * (4.0 - z)) / z3;
        }
        q[idx] = h * (sq.real() / m_pts);
        f1[idx] = h * (s1.real() / m_pts);
        f2[idx] = h * (s2.real() / m_pts);
        f3[idx] = h * (s3.real() / m_pts);
    }

    auto nonlinear = [&](const cvec& spec) {
        cvec w = spec;
        fft_inplace(w, true);
        for (auto& z : w) {
            const double r = z.real();
            z = {r * r, 0.0};
        }
        fft_inplace(w, false);
        for (std::size_t idx = 0; idx < n; ++idx) w[idx] *= g[idx];
        return w;
    };

    const std::size_t per_snap = config.steps_per_snapshot();
    const std::size_t total_steps = per_snap * (config.snapshot_count() - 1);

    std::vector<std::vector<std::complex<double>>> snaps;
    std::vector<double> times;
    snaps.push_back(v);
    times.push_back(0.0);

    cvec a(n), b(n), c(n);
    for (std::size_t step = 1; step <= total_steps; ++step) {
        const cvec nv = nonlinear(v);
        for (std::size_t i = 0; i < n; ++i) a[i] = e2[i] * v[i] + q[i] * nv[i];
        const cvec na = nonlinear(a);
        for (std::size_t i = 0; i < n; ++i) b[i] = e2[i] * v[i] + q[i] * na[i];
        const cvec nb = nonlinear(b);
        for (std::size_t i = 0; i < n; ++i) c[i] = e2[i] * a[i] + q[i] * (2.0 * nb[i] - nv[i]);
        const cvec nc = nonlinear(c);
        for (std::size_t i = 0; i < n; ++i)
            v[i] = e1[i] * v[i] + f1[i] * nv[i] + 2.0 * f2[i] * (na[i] + nb[i]) + f3[i] * nc[i];

        if (step % per_snap == 0) {
            const double t_now = static_cast<double>(step) * h;
            for (const auto& z : v)
                if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
                    throw std::runtime_error("Burgers solver blew up at t = " +
                                             std::to_string(t_now));
            snaps.push_back(v);
            times.push_back(t_now);
        }
    }
    return BurgersSolution(std::move(times), std::move(snaps), n);
}

// ---------------------------------------------------------------------------
// Post-processing.
// ---------------------------------------------------------------------------

FidelityDataset add_noise(const FidelityDataset& ds, double variance, std::uint64_t seed) {
    if (variance < 0.0) throw std::invalid_argument("add_noise: negative variance");
    FidelityDataset out = ds;
    if (variance == 0.0) return out;
    Rng rng(seed);
    const double sd = std::sqrt(variance);
    for (double& v : out.outputs.vec()) v += sd * rng.normal();
    return out;
}

std::vector<double> subsample(std::span<const double> values, const Tensor& src_grid,
                              const Tensor& dst_grid, bool* interpolated) {
    if (src_grid.cols() != 1 || dst_grid.cols() != 1)
        throw std::invalid_argument("subsample: expects one-dimensional grids");
    if (values.size() != src_grid.rows())
        throw std::invalid_argument("subsample: value count != source grid size");

    const std::size_t ns = src_grid.rows(), nd = dst_grid.rows();
    std::vector<double> out(nd);
    bool nested = true;
    std::vector<std::size_t> hit(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        const double x = dst_grid.at(i, 0);
        std::size_t best = 0;
        double bestd = std::fabs(src_grid.at(0, 0) - x);
        for (std::size_t j = 1; j < ns; ++j) {
            const double d = std::fabs(src_grid.at(j, 0) - x);
            if (d < bestd) {
                bestd = d;
                best = j;
            }
        }
        hit[i] = best;
        if (bestd > 1e-12) nested = false;
    }

    if (nested) {
        for (std::size_t i = 0; i < nd; ++i) out[i] = values[hit[i]];
        if (interpolated) *interpolated = false;
        return out;
    }

    std::cerr << "subsample: target grid does not nest in the source grid; "
                 "falling back to linear interpolation\n";
    if (interpolated) *interpolated = true;
    for (std::size_t i = 0; i < nd; ++i) {
        const double x = dst_grid.at(i, 0);
        if (x <= src_grid.at(0, 0)) {
            out[i] = values[0];
            continue;
        }
        if (x >= src_grid.at(ns - 1, 0)) {
            out[i] = values[ns - 1];
            continue;
        }
        std::size_t j = 1;
        while (src_grid.at(j, 0) < x) ++j;
        const double x0 = src_grid.at(j - 1, 0), x1 = src_grid.at(j, 0);
        const double w = (x - x0) / (x1 - x0);
        out[i] = (1.0 - w) * values[j - 1] + w * values[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset IO.
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

void write_doubles(std::ofstream& f, const std::vector<double>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(const std::filesystem::path& file, std::size_t offset,
                                 std::size_t count) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + file.string());
    f.seekg(static_cast<std::streamoff>(offset * sizeof(double)));
    std::vector<double> out(count);
    f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw std::runtime_error("short read from " + file.string());
    return out;
}

json array_entry(const std::string& file, std::size_t offset, const std::vector<std::size_t>& shape) {
    return json{{"file", file}, {"offset", offset}, {"shape", shape}};
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const FidelityDataset& ds,
                   const DatasetManifest& manifest) {
    ds.validate();
    std::filesystem::create_directories(dir);

    json arrays;
    {
        std::ofstream f(dir / "inputs.bin", std::ios::binary);
        std::size_t off = 0;
        arrays["inputs"] = array_entry("inputs.bin", off, ds.inputs.shape());
        write_doubles(f, ds.inputs.vec());
        off += ds.inputs.size();
        for (const auto& [key, t] : ds.extra) {
            arrays[key] = array_entry("inputs.bin", off, t.shape());
            write_doubles(f, t.vec());
            off += t.size();
        }
    }
    {
        std::ofstream f(dir / "outputs.bin", std::ios::binary);
        arrays["outputs"] = array_entry("outputs.bin", 0, ds.outputs.shape());
        write_doubles(f, ds.outputs.vec());
    }
    {
        std::ofstream f(dir / "grids.bin", std::ios::binary);
        arrays["sensors"] = array_entry("grids.bin", 0, ds.sensors.shape());
        write_doubles(f, ds.sensors.vec());
        arrays["queries"] = array_entry("grids.bin", ds.sensors.size(), ds.queries.shape());
        write_doubles(f, ds.queries.vec());
    }

    json meta;
    for (const auto& [key, v] : ds.sample_meta) meta[key] = v;

    json m{{"version", manifest.version},
           {"name", manifest.name},
           {"fidelity", ds.fidelity},
           {"generator", manifest.generator},
           {"seed", manifest.seed},
           {"counts",
            {{"samples", ds.num_samples()},
             {"sensors", ds.num_sensors()},
             {"queries", ds.num_queries()},
             {"components", ds.components()}}},
           {"arrays", arrays},
           {"sample_meta", meta}};

    std::ofstream f(dir / "manifest.json");
    f << m.dump(2) << "\n";
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("missing manifest: " + (dir / "manifest.json").string());
    json m = json::parse(mf);
    if (m.at("version").get<int>() != 1)
        throw std::runtime_error("unknown dataset version in " + dir.string());

    LoadedDataset out;
    out.manifest.version = 1;
    out.manifest.name = m.value("name", "");
    out.manifest.fidelity = m.value("fidelity", "");
    out.manifest.generator = m.value("generator", "");
    out.manifest.seed = m.value("seed", 0ULL);
    const json& counts = m.at("counts");
    out.manifest.samples = counts.at("samples").get<std::size_t>();
    out.manifest.sensors = counts.at("sensors").get<std::size_t>();
    out.manifest.queries = counts.at("queries").get<std::size_t>();
    out.manifest.components = counts.at("components").get<std::size_t>();

    auto load = [&](const json& entry) {
        const std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
        const std::size_t count = Tensor::count(shape);
        std::vector<double> data =
            read_doubles(dir / entry.at("file").get<std::string>(),
                         entry.at("offset").get<std::size_t>(), count);
        return Tensor(shape, std::move(data));
    };

    const json& arrays = m.at("arrays");
    FidelityDataset& ds = out.data;
    ds.fidelity = out.manifest.fidelity;
    ds.inputs = load(arrays.at("inputs"));
    ds.outputs = load(arrays.at("outputs"));
    ds.sensors = load(arrays.at("sensors"));
    ds.queries = load(arrays.at("queries"));
    for (auto it = arrays.begin(); it != arrays.end(); ++it) {
        if (it.key() == "inputs" || it.key() == "outputs" || it.key() == "sensors" ||
            it.key() == "queries")
            continue;
        ds.extra[it.key()] = load(it.value());
    }
    if (m.contains("sample_meta"))
        for (auto it = m["sample_meta"].begin(); it != m["sample_meta"].end(); ++it)
            ds.sample_meta[it.key()] = it.value().get<std::vector<double>>();

    if (ds.num_samples() != out.manifest.samples || ds.num_sensors() != out.manifest.sensors ||
        ds.num_queries() != out.manifest.queries || ds.components() != out.manifest.components)
        throw std::runtime_error("dataset manifest counts disagree with stored arrays in " +
                                 dir.string());
    ds.validate();
    return out;
}

}  // namespace mfdon::datagen
