#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mfdon/dataset.hpp"
#include "mfdon/rng.hpp"

namespace mfdon::datagen {

// ---------------------------------------------------------------------------
// Analytic benchmark families.
// ---------------------------------------------------------------------------

enum class AnalyticCase { Jump1d, CorrU1d, Lin2d, Nonlin2d, OdeLf31, Noncomp1d };

AnalyticCase analytic_case_from_string(const std::string& s);
std::string to_string(AnalyticCase c);

/// Parameter range the paper draws a from for each case.
std::pair<double, double> a_range(AnalyticCase c);

// Closed forms; u = a x - 4 except for the ODE family, which is indexed by a
// directly.
double jump1d_yl(double a, double x);
double jump1d_yh(double a, double x);
double corr_u_yl(double a, double x);
double corr_u_yh(double a, double x);
double lin2d_zl(double a, double x, double y);
double lin2d_zh(double a, double x, double y);
double nonlin2d_zl(double a, double x, double y);
double nonlin2d_zh(double a, double x, double y);
double ode31_yl(double a, double x);
double ode31_yh_exact(double a, double x);
double noncomp_yl(double a, double x);
double noncomp_yh(double a, double x);

double analytic_value(AnalyticCase c, bool high_fidelity, double a, std::span<const double> xy);

/// Equispaced inclusive grid, (n x 1).
Tensor line_grid(std::size_t n, double lo, double hi);

/// Tensor-product grid over [lo,hi]^2, rows ordered (x_i, y_j) with j fastest.
Tensor mesh_grid2(std::size_t nx, double lo_x, double hi_x, std::size_t ny, double lo_y,
                  double hi_y);

/// n values drawn uniformly from the case's a-range (training sets).
std::vector<double> random_a_values(AnalyticCase c, std::size_t n, std::uint64_t seed);

/// n equispaced values across [lo, hi] (test sets).
std::vector<double> equispaced_a_values(double lo, double hi, std::size_t n);

/// Closed-form dataset at one fidelity. The branch inputs are u = a x - 4 on
/// the grid (the constant function a for the ODE family); outputs are the
/// matching closed form on the same grid.
FidelityDataset analytic_dataset(AnalyticCase c, bool high_fidelity,
                                 const std::vector<double>& a_values, const Tensor& grid);

struct AnalyticPair {
    FidelityDataset lf;
    FidelityDataset hf;
};

/// Low- and high-fidelity training sets; the high-fidelity set also carries
/// u at the low-fidelity sensors ("lf_inputs") to drive the probe net.
AnalyticPair gen_analytic(AnalyticCase c, const std::vector<double>& a_lf, const Tensor& grid_lf,
                          const std::vector<double>& a_hf, const Tensor& grid_hf);

// ---------------------------------------------------------------------------
// Periodic Gaussian random fields on [0, 1].
// ---------------------------------------------------------------------------

struct GRFSpec {
    double amplitude = 25.0;  // scale of the covariance operator
    double shift = 5.0;       // mass shift of the inverse Laplacian
    int power = 4;            // operator exponent
    std::size_t grid = 128;   // truncation: modes up to grid/2 - 1
    std::uint64_t seed = 0;
};

/// Per-mode standard deviation: amplitude * ((2 pi k)^2 + shift^2)^(-power/2).
double grf_mode_sigma(const GRFSpec& spec, std::size_t k);

/// One draw, stored as Fourier coefficients so it can be evaluated exactly at
/// arbitrary points.
class GrfSample {
public:
    GrfSample(std::vector<double> cos_coef, std::vector<double> sin_coef)
        : a_(std::move(cos_coef)), b_(std::move(sin_coef)) {}

    double eval(double x) const;
    std::vector<double> eval_on(const Tensor& pts_1d) const;

    const std::vector<double>& cos_coef() const { return a_; }
    const std::vector<double>& sin_coef() const { return b_; }

private:
    std::vector<double> a_, b_;  // a_[0] is the mean term; b_[0] unused
};

GrfSample sample_grf(const GRFSpec& spec, std::uint64_t sample_index);

// ---------------------------------------------------------------------------
// Viscous Burgers on the periodic unit interval via ETDRK4.
// ---------------------------------------------------------------------------

struct BurgersConfig {
    double viscosity = 1e-2;
    double dt = 5e-3;
    double snapshot_dt = 5e-2;
    std::size_t modes = 128;  // collocation points, power of two
    double t_final = 1.0;

    void validate() const;
    std::size_t steps_per_snapshot() const;
    std::size_t snapshot_count() const;  // includes t = 0
};

/// Solution snapshots kept as spectra for exact trigonometric evaluation.
class BurgersSolution {
public:
    BurgersSolution(std::vector<double> times, std::vector<std::vector<std::complex<double>>> spectra,
                    std::size_t n)
        : times_(std::move(times)), spectra_(std::move(spectra)), n_(n) {}

    std::size_t snapshot_count() const { return times_.size(); }
    const std::vector<double>& times() const { return times_; }

    double eval(std::size_t snapshot, double x) const;

    /// Values on an (x_i, t_j) grid, j fastest; times must coincide with
    /// snapshot times.
    std::vector<double> eval_grid(const Tensor& x_pts, const std::vector<double>& t_pts) const;

    /// Solution values at the collocation nodes x_j = j/n for one snapshot.
    std::vector<double> grid_values(std::size_t snapshot) const;

private:
    std::vector<double> times_;
    std::vector<std::vector<std::complex<double>>> spectra_;
    std::size_t n_;
};

/// Advances the viscous Burgers equation with an exponential fourth-order
/// scheme; the diffusion is integrated exactly, the advection term enters
/// through the standard phi-function weights evaluated by contour averaging.
/// Throws on blow-up, reporting the time reached.
BurgersSolution solve_burgers_etdrk4(const BurgersConfig& config,
                                     const std::vector<double>& ic_on_grid);

// ---------------------------------------------------------------------------
// Dataset post-processing and IO.
// ---------------------------------------------------------------------------

/// Additive Gaussian noise on the outputs; variance 0 is the identity.
FidelityDataset add_noise(const FidelityDataset& ds, double variance, std::uint64_t seed);

/// Extraction when the target grid nests in the source grid (node-for-node),
/// linear interpolation otherwise; `interpolated`, when given, reports which
/// path was taken. Interpolation also logs a one-line warning to stderr.
std::vector<double> subsample(std::span<const double> values, const Tensor& src_grid,
                              const Tensor& dst_grid, bool* interpolated = nullptr);

struct DatasetManifest {
    int version = 1;
    std::string name;
    std::string fidelity;
    std::string generator;  // case id or "external"
    std::uint64_t seed = 0;
    std::size_t samples = 0, sensors = 0, queries = 0, components = 1;
};

void write_dataset(const std::filesystem::path& dir, const FidelityDataset& ds,
                   const DatasetManifest& manifest);

struct LoadedDataset {
    FidelityDataset data;
    DatasetManifest manifest;
};

LoadedDataset read_dataset(const std::filesystem::path& dir);

}  // namespace mfdon::datagen
