#include "hsfno/oracles.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>

namespace hsfno {

namespace {

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

void check_history(const DiscreteShiftSystem& sys, std::span<const double> h) {
    if (h.size() != sys.size()) throw std::invalid_argument("shift system: history has the wrong size");
}

std::vector<double> checked_slice(const DiscreteShiftSystem& sys, const SliceMap& f, std::span<const double> h) {
    auto s = f(h);
    if (s.size() != sys.n) throw std::invalid_argument("shift system: slice map returned the wrong size");
    return s;
}

// Largest per-slice Euclidean norm of a - b.
double max_slice_dist(const DiscreteShiftSystem& sys, std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t j = 0; j <= sys.M; ++j)
        m = std::max(m, std::sqrt(sq_dist(a.subspan(j * sys.n, sys.n), b.subspan(j * sys.n, sys.n))));
    return m;
}

}  // namespace

std::vector<double> shift_append_map(const DiscreteShiftSystem& sys, const SliceMap& psi, std::span<const double> h) {
    check_history(sys, h);
    const auto next = checked_slice(sys, psi, h);
    std::vector<double> out(h.begin() + static_cast<std::ptrdiff_t>(sys.n), h.end());
    out.insert(out.end(), next.begin(), next.end());
    return out;
}

std::vector<double> exact_shift_map(const DiscreteShiftSystem& sys, std::span<const double> h) {
    return shift_append_map(sys, sys.phi, h);
}

double spectral_norm(std::span<const double> A, std::size_t n) {
    if (A.size() != n * n) throw std::invalid_argument("spectral_norm: shape mismatch");
    if (n == 1) return std::abs(A[0]);
    // power iteration on A^T A
    std::vector<double> v(n), w(n), u(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i);
    double lambda = 0.0;
    for (int it = 0; it < 5000; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            u[i] = 0.0;
            for (std::size_t k = 0; k < n; ++k) u[i] += A[i * n + k] * v[k];
        }
        for (std::size_t k = 0; k < n; ++k) {
            w[k] = 0.0;
            for (std::size_t i = 0; i < n; ++i) w[k] += A[i * n + k] * u[i];
        }
        const double nw = norm2(w);
        if (nw == 0.0) return 0.0;
        for (std::size_t k = 0; k < n; ++k) v[k] = w[k] / nw;
        if (std::abs(nw - lambda) <= 1e-15 * nw) {
            lambda = nw;
            break;
        }
        lambda = nw;
    }
    return std::sqrt(lambda);
}

DiscreteShiftSystem linear_system(std::size_t n, std::size_t M, std::vector<std::vector<double>> blocks) {
    if (blocks.size() != M + 1) throw std::invalid_argument("linear_system: need M + 1 blocks");
    double L = 0.0;
    for (const auto& b : blocks) L += spectral_norm(b, n);
    DiscreteShiftSystem sys;
    sys.n = n;
    sys.M = M;
    sys.lipschitz = L;
    sys.phi = [n, M, blocks = std::move(blocks)](std::span<const double> h) {
        std::vector<double> out(n, 0.0);
        for (std::size_t j = 0; j <= M; ++j)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < n; ++k) out[i] += blocks[j][i * n + k] * h[j * n + k];
        return out;
    };
    return sys;
}

double estimate_lipschitz(const DiscreteShiftSystem& sys, std::size_t samples, std::uint64_t seed, double radius) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    double best = 0.0;
    std::vector<double> a(sys.size()), b(sys.size());
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = radius * nd(rng);
            b[i] = a[i] + 1e-3 * radius * nd(rng);
        }
        const double d = max_slice_dist(sys, a, b);
        if (d == 0.0) continue;
        best = std::max(best, std::sqrt(sq_dist(sys.phi(a), sys.phi(b))) / d);
    }
    return best;
}

std::vector<std::vector<double>> scalar_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || hi < lo) throw std::invalid_argument("scalar_grid: bad range");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    std::vector<std::vector<double>> g;
    g.reserve(n + 1);
    for (std::size_t i = 0; i <= n; ++i) g.push_back({lo + static_cast<double>(i) * step});
    return g;
}

IrreducibleReport irreducible_error_check(std::span<const double> y, std::span<const double> y_prime, double p,
                                          const std::vector<std::vector<double>>& candidates, double tol) {
    if (y.size() != y_prime.size()) throw std::invalid_argument("irreducible_error_check: size mismatch");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("irreducible_error_check: p must be in [0, 1]");
    auto risk = [&](std::span<const double> z) { return p * sq_dist(z, y) + (1.0 - p) * sq_dist(z, y_prime); };

    IrreducibleReport r;
    r.bound = p * (1.0 - p) * sq_dist(y, y_prime);
    std::vector<double> z_star(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) z_star[i] = p * y[i] + (1.0 - p) * y_prime[i];
    r.analytic_risk = risk(z_star);
    r.grid_min = std::numeric_limits<double>::infinity();
    for (const auto& z : candidates) {
        if (z.size() != y.size()) throw std::invalid_argument("irreducible_error_check: candidate size mismatch");
        r.grid_min = std::min(r.grid_min, risk(z));
    }
    r.ok = std::abs(r.analytic_risk - r.bound) <= tol && (candidates.empty() || r.grid_min >= r.bound - tol);
    return r;
}

DecompositionReport loss_decomposition_check(const DiscreteShiftSystem& sys, const SliceMap& psi,
                                             const std::vector<std::vector<double>>& samples,
                                             std::vector<double> omega, std::vector<double> delta, double tol) {
    if (samples.empty()) throw std::invalid_argument("loss_decomposition_check: no samples");
    if (omega.empty()) omega.assign(sys.M + 1, 1.0);
    if (omega.size() != sys.M + 1) throw std::invalid_argument("loss_decomposition_check: need M + 1 weights");
    if (delta.empty()) delta.assign(sys.n, 0.0);
    if (delta.size() != sys.n) throw std::invalid_argument("loss_decomposition_check: perturbation size mismatch");

    const std::size_t n = sys.n;
    auto weighted_loss = [&](std::span<const double> a, std::span<const double> s, double* max_transported) {
        double l = 0.0;
        for (std::size_t j = 0; j <= sys.M; ++j) {
            const double t = omega[j] * sq_dist(a.subspan(j * n, n), s.subspan(j * n, n));
            if (max_transported && j < sys.M) *max_transported = std::max(*max_transported, t);
            l += t;
        }
        return l;
    };

    DecompositionReport r;
    double q_loss = 0.0;
    for (const auto& h : samples) {
        const auto s = exact_shift_map(sys, h);
        auto a = shift_append_map(sys, psi, h);
        r.lhs += weighted_loss(a, s, &r.max_transported);
        r.rhs += omega[sys.M] * sq_dist(checked_slice(sys, psi, h), checked_slice(sys, sys.phi, h));
        for (std::size_t i = 0; i < n; ++i) a[i] += delta[i];
        q_loss += weighted_loss(a, s, nullptr);
    }
    const double cnt = static_cast<double>(samples.size());
    r.lhs /= cnt;
    r.rhs /= cnt;
    r.excess = q_loss / cnt - r.lhs;
    r.expected_excess = omega[0] * sq_dist(delta, std::vector<double>(n, 0.0));
    const double scale = std::max(std::abs(r.lhs), std::abs(r.rhs));
    r.rel_diff = scale > 0.0 ? std::abs(r.lhs - r.rhs) / scale : 0.0;
    const double ex_scale = std::max({std::abs(r.expected_excess), std::abs(r.excess), r.lhs});
    r.ok = r.max_transported == 0.0 && r.rel_diff <= tol &&
           std::abs(r.excess - r.expected_excess) <= tol * std::max(ex_scale, 1e-300);
    return r;
}

RecurrenceReport rollout_recurrence_check(const DiscreteShiftSystem& sys, const SliceMap& psi, double eps,
                                          std::span<const double> h0, std::size_t n_steps, double tol) {
    check_history(sys, h0);
    if (!(sys.lipschitz > 0.0)) throw std::invalid_argument("rollout_recurrence_check: needs a Lipschitz bound");
    const std::size_t n = sys.n;
    std::vector<double> h(h0.begin(), h0.end()), g = h;
    RecurrenceReport r;
    r.shift_exact = true;
    r.max_violation = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double window = max_slice_dist(sys, g, h);
        const auto h_next = exact_shift_map(sys, h);
        const auto g_next = shift_append_map(sys, psi, g);
        for (std::size_t j = 0; j < sys.M; ++j)
            for (std::size_t i = 0; i < n; ++i) {
                const double before = g[(j + 1) * n + i] - h[(j + 1) * n + i];
                const double after = g_next[j * n + i] - h_next[j * n + i];
                if (std::bit_cast<std::uint64_t>(before) != std::bit_cast<std::uint64_t>(after))
                    r.shift_exact = false;
            }
        const double a = std::sqrt(sq_dist(std::span<const double>(g_next).subspan(sys.M * n, n),
                                           std::span<const double>(h_next).subspan(sys.M * n, n)));
        const double b = eps + sys.lipschitz * window;
        r.a.push_back(a);
        r.bound.push_back(b);
        r.max_violation = std::max(r.max_violation, a - b);
        r.max_gap = std::max(r.max_gap, std::abs(a - b) / std::max(b, 1e-300));
        h = h_next;
        g = g_next;
    }
    r.holds = true;
    for (std::size_t k = 0; k < r.a.size(); ++k)
        if (r.a[k] > r.bound[k] + tol * (1.0 + r.bound[k])) r.holds = false;
    return r;
}

// ---------------------------------------------------------------------------

HistoryState sample_history(const InitialFn& phi, const HistoryGrid& h_grid, const SpatialGrid& s_grid,
                            std::size_t channels) {
    HistoryState h(h_grid, s_grid, channels, 0.0);
    for (std::size_t j = 0; j < h_grid.n_slices(); ++j)
        for (std::size_t c = 0; c < channels; ++c) {
            auto f = h.field(j, c);
            for (std::size_t i = 0; i < s_grid.n_x(); ++i) f[i] = phi(h_grid.theta(j), s_grid.x(i), c);
        }
    return h;
}

namespace {

std::size_t saves_for(const BenchmarkSpec& spec, double horizon) {
    const double q = horizon / spec.save_dt;
    const auto n = static_cast<std::size_t>(std::llround(q));
    if (n < 1 || std::abs(q - static_cast<double>(n)) > 1e-9 * q)
        throw std::invalid_argument("convergence: horizon must be a positive multiple of save_dt");
    return n;
}

std::vector<double> final_state(const BenchmarkSpec& spec, const InitialFn& phi, double horizon) {
    validate(spec);
    const HistoryState h = sample_history(phi, HistoryGrid(spec.tau, spec.fine_slices()), spec.s_grid,
                                          spec.channels());
    const std::size_t n = saves_for(spec, horizon);
    const Trajectory t = simulate(spec, h, n);
    if (!t.valid) throw std::runtime_error("convergence: reference run failed: " + t.reason);
    const auto s = t.solution_slice(n);
    return {s.begin(), s.end()};
}

double fit_slope(const std::vector<double>& steps, const std::vector<double>& errors) {
    double mx = 0, my = 0;
    const double n = static_cast<double>(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (!(errors[i] > 0.0)) throw std::runtime_error("convergence: zero difference, order undefined");
        mx += std::log(steps[i]) / n;
        my += std::log(errors[i]) / n;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const double dx = std::log(steps[i]) - mx;
        sxy += dx * (std::log(errors[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

}  // namespace

ConvergenceReport solver_convergence_order(const BenchmarkSpec& spec, const InitialFn& phi,
                                           const std::vector<double>& dts, double horizon) {
    if (dts.size() < 3) throw std::invalid_argument("solver_convergence_order: need at least 3 step sizes");
    std::vector<std::vector<double>> finals;
    for (double dt : dts) {
        BenchmarkSpec s = spec;
        s.solver_dt = dt;
        finals.push_back(final_state(s, phi, horizon));
    }
    ConvergenceReport r;
    for (std::size_t i = 0; i + 1 < dts.size(); ++i) {
        r.steps.push_back(dts[i]);
        r.errors.push_back(std::sqrt(sq_dist(finals[i], finals[i + 1]) / static_cast<double>(finals[i].size())));
    }
    r.order = fit_slope(r.steps, r.errors);
    return r;
}

ConvergenceReport spatial_convergence_order(const BenchmarkSpec& spec, const InitialFn& phi,
                                            const std::vector<std::size_t>& n_xs, double horizon) {
    if (n_xs.size() < 3) throw std::invalid_argument("spatial_convergence_order: need at least 3 grids");
    const Boundary bc = spec.s_grid.boundary();
    std::vector<std::vector<double>> finals;
    std::vector<double> dxs;
    for (std::size_t nx : n_xs) {
        BenchmarkSpec s = spec;
        s.s_grid = SpatialGrid(nx, spec.s_grid.length(), bc);
        if (s.family() == Family::epidemic)
            throw std::invalid_argument("spatial_convergence_order: epidemic S_field is grid-bound");
        finals.push_back(final_state(s, phi, horizon));
        dxs.push_back(s.s_grid.dx());
    }
    const std::size_t C = spec.channels();
    ConvergenceReport r;
    for (std::size_t i = 0; i + 1 < n_xs.size(); ++i) {
        const std::size_t nc = n_xs[i], nf = n_xs[i + 1];
        const std::size_t ratio = bc == Boundary::periodic ? nf / nc : (nf - 1) / (nc - 1);
        const bool nested = bc == Boundary::periodic ? nf == ratio * nc : nf - 1 == ratio * (nc - 1);
        if (ratio < 2 || !nested) throw std::invalid_argument("spatial_convergence_order: grids are not nested");
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < nc; ++k) {
                const double d = finals[i][c * nc + k] - finals[i + 1][c * nf + k * ratio];
                acc += d * d;
            }
        r.steps.push_back(dxs[i]);
        r.errors.push_back(std::sqrt(acc / static_cast<double>(C * nc)));
    }
    r.order = fit_slope(r.steps, r.errors);
    return r;
}

}  // namespace hsfno
