#include "hsfno/grid_history.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hsfno {

std::string_view to_string(Boundary b) {
    switch (b) {
        case Boundary::periodic: return "periodic";
        case Boundary::dirichlet: return "dirichlet";
        case Boundary::neumann: return "neumann";
    }
    return "unknown";
}

Boundary boundary_from_string(std::string_view name) {
    if (name == "periodic") return Boundary::periodic;
    if (name == "dirichlet") return Boundary::dirichlet;
    if (name == "neumann") return Boundary::neumann;
    throw std::invalid_argument("unknown boundary: " + std::string(name));
}

SpatialGrid::SpatialGrid(std::size_t n_x, double length, Boundary boundary)
    : n_x_(n_x), length_(length), boundary_(boundary) {
    if (n_x < 4) throw std::invalid_argument("SpatialGrid: n_x must be >= 4");
    if (!(length > 0.0) || !std::isfinite(length))
        throw std::invalid_argument("SpatialGrid: length must be positive");
}

double SpatialGrid::dx() const {
    const double cells = boundary_ == Boundary::periodic ? static_cast<double>(n_x_)
                                                         : static_cast<double>(n_x_ - 1);
    return length_ / cells;
}

double SpatialGrid::x(std::size_t i) const {
    const double cells = boundary_ == Boundary::periodic ? static_cast<double>(n_x_)
                                                         : static_cast<double>(n_x_ - 1);
    return static_cast<double>(i) * length_ / cells;
}

std::vector<double> SpatialGrid::coordinates() const {
    std::vector<double> xs(n_x_);
    for (std::size_t i = 0; i < n_x_; ++i) xs[i] = x(i);
    return xs;
}

HistoryGrid::HistoryGrid(double tau, std::size_t m_slices) : tau_(tau), m_(m_slices) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("HistoryGrid: tau must be positive");
    if (m_slices < 1) throw std::invalid_argument("HistoryGrid: M must be >= 1");
}

double HistoryGrid::theta(std::size_t j) const {
    return -tau_ * static_cast<double>(m_ - j) / static_cast<double>(m_);
}

HistoryState::HistoryState(HistoryGrid h_grid, SpatialGrid s_grid, std::size_t channels, double t_now)
    : h_grid_(h_grid),
      s_grid_(s_grid),
      channels_(channels),
      t_now_(t_now),
      values_(h_grid.n_slices() * channels * s_grid.n_x(), 0.0) {
    if (channels < 1) throw std::invalid_argument("HistoryState: channels must be >= 1");
}

HistoryState::HistoryState(HistoryGrid h_grid, SpatialGrid s_grid, std::size_t channels, double t_now,
                           std::vector<double> values)
    : h_grid_(h_grid), s_grid_(s_grid), channels_(channels), t_now_(t_now), values_(std::move(values)) {
    if (channels < 1) throw std::invalid_argument("HistoryState: channels must be >= 1");
    if (values_.size() != h_grid.n_slices() * channels * s_grid.n_x())
        throw std::invalid_argument("HistoryState: shape mismatch");
}

std::span<const double> HistoryState::slice(std::size_t j) const {
    return std::span<const double>(values_).subspan(j * slice_size(), slice_size());
}

std::span<double> HistoryState::slice(std::size_t j) {
    return std::span<double>(values_).subspan(j * slice_size(), slice_size());
}

std::span<const double> HistoryState::field(std::size_t j, std::size_t c) const {
    return slice(j).subspan(c * n_x(), n_x());
}

std::span<double> HistoryState::field(std::size_t j, std::size_t c) {
    return slice(j).subspan(c * n_x(), n_x());
}

double HistoryState::at(std::size_t j, std::size_t c, std::size_t i) const {
    return values_[(j * channels_ + c) * n_x() + i];
}

bool HistoryState::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool HistoryState::same_layout(const HistoryState& other) const {
    return h_grid_ == other.h_grid_ && s_grid_ == other.s_grid_ && channels_ == other.channels_;
}

HistoryState shift_append(const HistoryState& h, std::span<const double> new_slices, std::size_t m) {
    const std::size_t big_m = h.h_grid().m_slices();
    if (m < 1 || m > big_m) throw std::invalid_argument("shift_append: m out of range");
    if (new_slices.size() != m * h.slice_size()) throw std::invalid_argument("shift_append: shape mismatch");
    if (!std::all_of(new_slices.begin(), new_slices.end(), [](double v) { return std::isfinite(v); }))
        throw std::invalid_argument("shift_append: non-finite input");
    if (!h.all_finite()) throw std::invalid_argument("shift_append: non-finite input");

    const double t_next = h.t_now() + static_cast<double>(m) * h.h_grid().delta_theta();
    std::vector<double> out(h.values().size());
    const auto src = h.values();
    const std::size_t kept = (big_m + 1 - m) * h.slice_size();
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(m * h.slice_size()), src.end(), out.begin());
    std::copy(new_slices.begin(), new_slices.end(), out.begin() + static_cast<std::ptrdiff_t>(kept));
    return HistoryState(h.h_grid(), h.s_grid(), h.channels(), t_next, std::move(out));
}

ThetaBracket bracket_theta(const HistoryGrid& g, double theta_star) {
    if (!(theta_star >= -g.tau() && theta_star <= 0.0))
        throw std::invalid_argument("delayed_lookup: theta outside [-tau, 0]");
    const std::size_t big_m = g.m_slices();
    const double pos = (theta_star + g.tau()) / g.delta_theta();
    auto j = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(big_m)));
    // floor() can land one node off when pos is within rounding of an integer
    while (j > 0 && g.theta(j) > theta_star) --j;
    while (j < big_m && g.theta(j + 1) <= theta_star) ++j;
    if (g.theta(j) == theta_star || j == big_m) return {j, 0.0};
    return {j, (theta_star - g.theta(j)) / (g.theta(j + 1) - g.theta(j))};
}

std::vector<double> delayed_lookup(const HistoryState& h, double theta_star) {
    const auto [j, w] = bracket_theta(h.h_grid(), theta_star);
    const auto lo = h.slice(j);
    if (w == 0.0) return {lo.begin(), lo.end()};
    const auto hi = h.slice(j + 1);
    std::vector<double> out(lo.size());
    for (std::size_t i = 0; i < lo.size(); ++i) out[i] = (1.0 - w) * lo[i] + w * hi[i];
    return out;
}

double history_norm(std::span<const double> values, std::size_t n_slices, HistoryWeighting w) {
    if (values.empty()) return 0.0;
    if (w == HistoryWeighting::uniform || n_slices < 2) return rms(values);
    const std::size_t per = values.size() / n_slices;
    double acc = 0.0;
    for (std::size_t j = 0; j < n_slices; ++j) {
        const double wj = (j == 0 || j + 1 == n_slices) ? 0.5 : 1.0;
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) s += values[j * per + i] * values[j * per + i];
        acc += wj * s;
    }
    const double total_w = static_cast<double>(n_slices - 1);
    return std::sqrt(acc / (total_w * static_cast<double>(per)));
}

double history_norm(const HistoryState& h, HistoryWeighting w) {
    return history_norm(h.values(), h.n_slices(), w);
}

double relative_history_error(const HistoryState& h_hat, const HistoryState& h_ref, HistoryWeighting w) {
    if (h_hat.values().size() != h_ref.values().size() || h_hat.n_slices() != h_ref.n_slices())
        throw std::invalid_argument("relative_history_error: shape mismatch");
    const double denom = history_norm(h_ref, w);
    if (!(denom > 0.0)) throw std::invalid_argument("relative_history_error: degenerate reference");
    std::vector<double> diff(h_ref.values().size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = h_hat.values()[i] - h_ref.values()[i];
    return history_norm(diff, h_ref.n_slices(), w) / denom;
}

double rms(std::span<const double> values) {
    if (values.empty()) return 0.0;
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s / static_cast<double>(values.size()));
}

}  // namespace hsfno
