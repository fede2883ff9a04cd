#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hsfno/grid_history.hpp"

namespace hsfno {

enum class Family { delayed_rd, epidemic, neural_field, delayed_wave, distributed_memory };

std::string_view to_string(Family f);
Family family_from_string(std::string_view name);
std::vector<Family> all_families();

/// u_t = D u_xx + r u (1 - u(t - tau))
struct DelayedRdParams {
    double D = 0.0;
    double r = 0.0;
};

/// I_t = D I_xx + beta S(x) I(t - tau) - gamma I
struct EpidemicParams {
    double D = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    std::vector<double> S_field;
};

/// u_t = -u + int w(x,y) tanh(steepness u(t - tau(x,y), y)) dy with a
/// normalized Gaussian w of the given width and gain and
/// tau(x,y) = min(tau, |x - y| / c_tau + tau0).
struct NeuralFieldParams {
    double kernel_width = 0.1;
    double gain = 1.0;
    double steepness = 1.0;
    double c_tau = 1.0;
    double tau0 = 0.1;
};

/// u_t = v, v_t = c^2 u_xx + alpha sin(u(t - tau))
struct DelayedWaveParams {
    double c = 1.0;
    double alpha = 0.0;
};

/// u_t = nu u_xx + r u (1 - u) + int K(theta) (a1 u + a2 u^3)(t + theta) dtheta,
/// K(theta) = lambda exp(lambda theta) normalized on the quadrature grid.
struct DistributedMemoryParams {
    double nu = 0.0;
    double r = 0.0;
    double a1 = 0.0;
    double a2 = 0.0;
    double lambda = 1.0;
};

using FamilyParams =
    std::variant<DelayedRdParams, EpidemicParams, NeuralFieldParams, DelayedWaveParams, DistributedMemoryParams>;

std::vector<std::string> mu_names_for(Family f);

/// Inverse of BenchmarkSpec::mu_vector; `S_field` is used by the epidemic family only.
FamilyParams make_params(Family f, const std::vector<double>& mu, std::vector<double> S_field = {});

struct BenchmarkSpec {
    FamilyParams mu;
    double tau = 1.0;
    SpatialGrid s_grid{16, 1.0, Boundary::periodic};
    double solver_dt = 1e-3;
    double save_dt = 1e-2;

    Family family() const;
    std::size_t channels() const;
    std::size_t substeps() const;
    /// Number of solver steps spanning the delay horizon.
    std::size_t fine_slices() const;
    /// Number of save intervals spanning the delay horizon.
    std::size_t save_slices() const;

    /// Scalar physical parameters in a fixed per-family order.
    std::vector<double> mu_vector() const;
    std::vector<std::string> mu_names() const;
};

/// Checks invariants and the explicit stability bound; throws on violation.
void validate(const BenchmarkSpec& spec);
BenchmarkSpec make_spec(FamilyParams mu, double tau, SpatialGrid grid, double solver_dt, double save_dt);

std::size_t channels_for_family(Family f);
bool is_density_family(Family f);
double max_stable_dt(const BenchmarkSpec& spec);

/// Spectral second derivative on periodic grids, 3-point centered stencil
/// otherwise (dirichlet rows at the boundary nodes are zero, neumann uses a
/// mirrored ghost).
std::vector<double> laplacian(std::span<const double> field, const SpatialGrid& grid);

/// Time derivative of the instantaneous state (C x n_x) given the history
/// buffer covering [t - tau, t].
std::vector<double> rhs_eval(const BenchmarkSpec& spec, std::span<const double> current, const HistoryState& buffer,
                             double t);

/// One explicit step of length solver_dt with delayed terms frozen from the
/// buffer. The wave family uses the symplectic (velocity-first) Euler variant.
std::vector<double> advance(const BenchmarkSpec& spec, const HistoryState& buffer);

struct Trajectory {
    BenchmarkSpec spec;
    HistoryState initial_history;   // save cadence, theta in [-tau, 0]
    std::vector<double> saved;      // n_saves x C x n_x
    std::vector<double> times;      // t_n = n save_dt, n = 1..n_saves
    bool valid = true;
    std::string reason;
    std::uint64_t seed = 0;
    std::string regime = "in_distribution";

    std::size_t n_saves() const { return times.size(); }
    std::size_t slice_size() const { return spec.channels() * spec.s_grid.n_x(); }
    /// Solution sequence u(t_0 = 0), u(t_1), ..., u(t_n).
    std::span<const double> solution_slice(std::size_t n) const;
};

inline constexpr double kBlowupThreshold = 1e6;
inline constexpr double kClipRelTol = 1e-6;

/// Outcome of advancing a fine buffer by one save interval.
struct SaveStep {
    HistoryState buffer;
    bool valid = true;
    std::string reason;
};

/// Runs spec.substeps() solver steps on a buffer of resolution solver_dt,
/// then applies the density clipping rule to the newest slice.
SaveStep step_save_interval(const BenchmarkSpec& spec, const HistoryState& fine_buffer);

/// Builds the solver-resolution buffer from an initial history by linear
/// interpolation in theta.
HistoryState fine_buffer_from(const BenchmarkSpec& spec, const HistoryState& phi);

Trajectory simulate(const BenchmarkSpec& spec, const HistoryState& phi, std::size_t n_saves);

}  // namespace hsfno
