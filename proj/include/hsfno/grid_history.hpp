#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hsfno {

enum class Boundary { periodic, dirichlet, neumann };

std::string_view to_string(Boundary b);
Boundary boundary_from_string(std::string_view name);

/// Uniform 1D spatial grid. Periodic grids exclude the right endpoint,
/// non-periodic grids carry both boundary nodes.
class SpatialGrid {
public:
    SpatialGrid(std::size_t n_x, double length, Boundary boundary);

    std::size_t n_x() const { return n_x_; }
    double length() const { return length_; }
    Boundary boundary() const { return boundary_; }
    double dx() const;
    double x(std::size_t i) const;
    std::vector<double> coordinates() const;

    bool operator==(const SpatialGrid&) const = default;

private:
    std::size_t n_x_;
    double length_;
    Boundary boundary_;
};

/// History-time grid theta_j = -tau + j * tau / M, j = 0..M.
class HistoryGrid {
public:
    HistoryGrid(double tau, std::size_t m_slices);

    double tau() const { return tau_; }
    std::size_t m_slices() const { return m_; }
    std::size_t n_slices() const { return m_ + 1; }
    double delta_theta() const { return tau_ / static_cast<double>(m_); }
    /// Exact at both ends: theta(0) == -tau, theta(M) == 0.
    double theta(std::size_t j) const;

    bool operator==(const HistoryGrid&) const = default;

private:
    double tau_;
    std::size_t m_;
};

/// Lifted state u_t(theta_j, x_i). Slices are stored oldest (j = 0) to
/// newest (j = M), each slice holding `channels` fields of n_x values.
class HistoryState {
public:
    HistoryState(HistoryGrid h_grid, SpatialGrid s_grid, std::size_t channels, double t_now = 0.0);
    HistoryState(HistoryGrid h_grid, SpatialGrid s_grid, std::size_t channels, double t_now,
                 std::vector<double> values);

    const HistoryGrid& h_grid() const { return h_grid_; }
    const SpatialGrid& s_grid() const { return s_grid_; }
    std::size_t channels() const { return channels_; }
    std::size_t n_slices() const { return h_grid_.n_slices(); }
    std::size_t n_x() const { return s_grid_.n_x(); }
    std::size_t slice_size() const { return channels_ * s_grid_.n_x(); }
    double t_now() const { return t_now_; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::span<const double> slice(std::size_t j) const;
    std::span<double> slice(std::size_t j);
    std::span<const double> field(std::size_t j, std::size_t c) const;
    std::span<double> field(std::size_t j, std::size_t c);
    double at(std::size_t j, std::size_t c, std::size_t i) const;

    bool all_finite() const;
    bool same_layout(const HistoryState& other) const;

private:
    HistoryGrid h_grid_;
    SpatialGrid s_grid_;
    std::size_t channels_;
    double t_now_;
    std::vector<double> values_;
};

/// Exact transport: drops the m oldest slices and appends `new_slices`
/// (m * C * n_x values, oldest first). Transported values are copied,
/// never recomputed.
HistoryState shift_append(const HistoryState& h, std::span<const double> new_slices, std::size_t m);

/// Bracketing node and interpolation weight for theta in [-tau, 0]:
/// value = (1 - w) * slice[lo] + w * slice[lo + 1], with w == 0 on nodes.
struct ThetaBracket {
    std::size_t lo = 0;
    double w = 0.0;
};
ThetaBracket bracket_theta(const HistoryGrid& g, double theta_star);

/// Linear interpolation in theta; exact on grid nodes.
std::vector<double> delayed_lookup(const HistoryState& h, double theta_star);

/// How the discrete history norm weights the theta slices.
enum class HistoryWeighting { uniform, trapezoid };

/// Root-mean-square over all entries (uniform) or with trapezoid weights in theta.
double history_norm(const HistoryState& h, HistoryWeighting w = HistoryWeighting::uniform);
double history_norm(std::span<const double> values, std::size_t n_slices,
                    HistoryWeighting w = HistoryWeighting::uniform);

double relative_history_error(const HistoryState& h_hat, const HistoryState& h_ref,
                              HistoryWeighting w = HistoryWeighting::uniform);

double rms(std::span<const double> values);

}  // namespace hsfno
