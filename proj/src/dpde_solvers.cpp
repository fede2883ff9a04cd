#include "hsfno/dpde_solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "hsfno/fft.hpp"

namespace hsfno {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool is_integer_ratio(double num, double den, std::size_t& out) {
    const double q = num / den;
    const double r = std::round(q);
    if (r < 1.0 || std::abs(q - r) > 1e-9 * std::max(1.0, r)) return false;
    out = static_cast<std::size_t>(r);
    return true;
}

double periodic_distance(double a, double b, double length) {
    const double d = std::abs(a - b);
    return std::min(d, length - d);
}

/// Cached per-(spec, buffer grid) quadrature data; building it is the
/// expensive part of the neural-field and memory right-hand sides.
class Stepper {
public:
    Stepper(const BenchmarkSpec& spec, const HistoryGrid& buffer_grid) : spec_(spec), grid_(buffer_grid) {
        const std::size_t n = spec.s_grid.n_x();
        if (std::abs(buffer_grid.tau() - spec.tau) > 1e-9 * spec.tau)
            throw std::invalid_argument("rhs_eval: buffer does not cover [t - tau, t]");

        if (const auto* nf = std::get_if<NeuralFieldParams>(&spec.mu)) {
            const auto xs = spec.s_grid.coordinates();
            const bool periodic = spec.s_grid.boundary() == Boundary::periodic;
            const double dx = spec.s_grid.dx();
            const double norm = 1.0 / (nf->kernel_width * std::sqrt(2.0 * std::numbers::pi));
            kernel_.resize(n * n);
            delay_.resize(n * n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t k = 0; k < n; ++k) {
                    const double d = periodic ? periodic_distance(xs[i], xs[k], spec.s_grid.length())
                                              : std::abs(xs[i] - xs[k]);
                    double q = dx;
                    if (!periodic && (k == 0 || k + 1 == n)) q *= 0.5;
                    kernel_[i * n + k] =
                        q * nf->gain * norm * std::exp(-d * d / (2.0 * nf->kernel_width * nf->kernel_width));
                    const double tau_xy = std::min(spec.tau, d / nf->c_tau + nf->tau0);
                    delay_[i * n + k] = bracket_theta(buffer_grid, -std::min(tau_xy, buffer_grid.tau()));
                }
            }
        }
        if (const auto* dm = std::get_if<DistributedMemoryParams>(&spec.mu)) {
            const std::size_t slices = buffer_grid.n_slices();
            memory_w_.resize(slices);
            double mass = 0.0;
            for (std::size_t j = 0; j < slices; ++j) {
                double q = buffer_grid.delta_theta();
                if (j == 0 || j + 1 == slices) q *= 0.5;
                memory_w_[j] = q * dm->lambda * std::exp(dm->lambda * buffer_grid.theta(j));
                mass += memory_w_[j];
            }
            for (double& w : memory_w_) w /= mass;
        }
    }

    std::vector<double> rhs(std::span<const double> current, const HistoryState& buffer) const {
        const std::size_t n = spec_.s_grid.n_x();
        const std::size_t c = spec_.channels();
        if (current.size() != c * n || buffer.channels() != c || buffer.n_x() != n)
            throw std::invalid_argument("rhs_eval: family/channel mismatch");
        if (!(buffer.h_grid() == grid_)) throw std::invalid_argument("rhs_eval: buffer grid mismatch");

        std::vector<double> out(c * n, 0.0);
        std::visit(overloaded{
                       [&](const DelayedRdParams& p) {
                           const auto lap = laplacian(current, spec_.s_grid);
                           const auto delayed = buffer.slice(0);
                           for (std::size_t i = 0; i < n; ++i)
                               out[i] = p.D * lap[i] + p.r * current[i] * (1.0 - delayed[i]);
                       },
                       [&](const EpidemicParams& p) {
                           const auto lap = laplacian(current, spec_.s_grid);
                           const auto delayed = buffer.slice(0);
                           for (std::size_t i = 0; i < n; ++i)
                               out[i] = p.D * lap[i] + p.beta * p.S_field[i] * delayed[i] - p.gamma * current[i];
                       },
                       [&](const NeuralFieldParams& p) {
                           const auto vals = buffer.values();
                           for (std::size_t i = 0; i < n; ++i) {
                               double acc = 0.0;
                               for (std::size_t k = 0; k < n; ++k) {
                                   const auto [lo, w] = delay_[i * n + k];
                                   double u = vals[lo * n + k];
                                   if (w != 0.0) u = (1.0 - w) * u + w * vals[(lo + 1) * n + k];
                                   acc += kernel_[i * n + k] * std::tanh(p.steepness * u);
                               }
                               out[i] = -current[i] + acc;
                           }
                       },
                       [&](const DelayedWaveParams& p) {
                           const auto u = current.subspan(0, n);
                           const auto v = current.subspan(n, n);
                           const auto lap = laplacian(u, spec_.s_grid);
                           const auto delayed = buffer.field(0, 0);
                           for (std::size_t i = 0; i < n; ++i) {
                               out[i] = v[i];
                               out[n + i] = p.c * p.c * lap[i] + p.alpha * std::sin(delayed[i]);
                           }
                       },
                       [&](const DistributedMemoryParams& p) {
                           const auto lap = laplacian(current, spec_.s_grid);
                           for (std::size_t i = 0; i < n; ++i)
                               out[i] = p.nu * lap[i] + p.r * current[i] * (1.0 - current[i]);
                           for (std::size_t j = 0; j < buffer.n_slices(); ++j) {
                               const auto uj = buffer.slice(j);
                               const double w = memory_w_[j];
                               for (std::size_t i = 0; i < n; ++i)
                                   out[i] += w * (p.a1 * uj[i] + p.a2 * uj[i] * uj[i] * uj[i]);
                           }
                       },
                   },
                   spec_.mu);

        if (spec_.s_grid.boundary() == Boundary::dirichlet) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                out[ch * n] = 0.0;
                out[ch * n + n - 1] = 0.0;
            }
        }
        return out;
    }

    std::vector<double> advance(const HistoryState& buffer) const {
        if (!buffer.all_finite()) throw std::invalid_argument("advance: non-finite value in buffer");
        if (std::abs(buffer.h_grid().delta_theta() - spec_.solver_dt) > 1e-9 * spec_.solver_dt)
            throw std::invalid_argument("advance: buffer resolution must equal solver_dt");
        const auto current = buffer.slice(buffer.n_slices() - 1);
        const double dt = spec_.solver_dt;
        const std::size_t n = spec_.s_grid.n_x();

        std::vector<double> next(current.begin(), current.end());
        if (const auto* p = std::get_if<DelayedWaveParams>(&spec_.mu)) {
            // velocity first, then position with the updated velocity
            const auto lap = laplacian(current.subspan(0, n), spec_.s_grid);
            const auto delayed = buffer.field(0, 0);
            for (std::size_t i = 0; i < n; ++i)
                next[n + i] = current[n + i] + dt * (p->c * p->c * lap[i] + p->alpha * std::sin(delayed[i]));
            for (std::size_t i = 0; i < n; ++i) next[i] = current[i] + dt * next[n + i];
            if (spec_.s_grid.boundary() == Boundary::dirichlet) {
                next[0] = next[n - 1] = next[n] = next[2 * n - 1] = 0.0;
            }
            return next;
        }

        const auto f = rhs(current, buffer);
        for (std::size_t i = 0; i < next.size(); ++i) next[i] = current[i] + dt * f[i];
        if (spec_.s_grid.boundary() == Boundary::dirichlet) {
            for (std::size_t ch = 0; ch < spec_.channels(); ++ch) {
                next[ch * n] = 0.0;
                next[ch * n + n - 1] = 0.0;
            }
        }
        return next;
    }

private:
    BenchmarkSpec spec_;
    HistoryGrid grid_;
    std::vector<double> kernel_;
    std::vector<ThetaBracket> delay_;
    std::vector<double> memory_w_;
};

SaveStep run_save_interval(const Stepper& stepper, const BenchmarkSpec& spec, const HistoryState& fine_buffer) {
    HistoryState buf = fine_buffer;
    for (std::size_t s = 0; s < spec.substeps(); ++s) {
        auto next = stepper.advance(buf);
        for (double v : next) {
            if (!std::isfinite(v) || std::abs(v) > kBlowupThreshold)
                return {std::move(buf), false, "blow-up: |u| exceeded threshold"};
        }
        buf = shift_append(buf, next, 1);
    }
    if (is_density_family(spec.family())) {
        double amp = 0.0;
        for (double v : buf.values()) amp = std::max(amp, std::abs(v));
        const double clip_tol = kClipRelTol * amp;
        auto newest = buf.slice(buf.n_slices() - 1);
        for (double& v : newest) {
            if (v < -clip_tol) return {std::move(buf), false, "negative density beyond clip tolerance"};
            if (v < 0.0) v = 0.0;
        }
    }
    return {std::move(buf), true, {}};
}

}  // namespace

std::string_view to_string(Family f) {
    switch (f) {
        case Family::delayed_rd: return "delayed_rd";
        case Family::epidemic: return "epidemic";
        case Family::neural_field: return "neural_field";
        case Family::delayed_wave: return "delayed_wave";
        case Family::distributed_memory: return "distributed_memory";
    }
    return "unknown";
}

Family family_from_string(std::string_view name) {
    for (Family f : all_families())
        if (to_string(f) == name) return f;
    throw std::invalid_argument("unknown family: " + std::string(name));
}

std::vector<Family> all_families() {
    return {Family::delayed_rd, Family::epidemic, Family::neural_field, Family::delayed_wave,
            Family::distributed_memory};
}

std::size_t channels_for_family(Family f) { return f == Family::delayed_wave ? 2 : 1; }

bool is_density_family(Family f) { return f == Family::delayed_rd || f == Family::epidemic; }

Family BenchmarkSpec::family() const { return static_cast<Family>(mu.index()); }

std::size_t BenchmarkSpec::channels() const { return channels_for_family(family()); }

std::size_t BenchmarkSpec::substeps() const {
    std::size_t k = 0;
    if (!is_integer_ratio(save_dt, solver_dt, k))
        throw std::invalid_argument("BenchmarkSpec: save_dt must be a positive integer multiple of solver_dt");
    return k;
}

std::size_t BenchmarkSpec::fine_slices() const {
    std::size_t k = 0;
    if (!is_integer_ratio(tau, solver_dt, k))
        throw std::invalid_argument("BenchmarkSpec: tau must be an integer multiple of solver_dt");
    return k;
}

std::size_t BenchmarkSpec::save_slices() const {
    std::size_t k = 0;
    if (!is_integer_ratio(tau, save_dt, k))
        throw std::invalid_argument("BenchmarkSpec: tau must be an integer multiple of save_dt");
    return k;
}

std::vector<double> BenchmarkSpec::mu_vector() const {
    return std::visit(overloaded{
                          [](const DelayedRdParams& p) { return std::vector<double>{p.D, p.r}; },
                          [](const EpidemicParams& p) { return std::vector<double>{p.D, p.beta, p.gamma}; },
                          [](const NeuralFieldParams& p) {
                              return std::vector<double>{p.kernel_width, p.gain, p.steepness, p.c_tau, p.tau0};
                          },
                          [](const DelayedWaveParams& p) { return std::vector<double>{p.c, p.alpha}; },
                          [](const DistributedMemoryParams& p) {
                              return std::vector<double>{p.nu, p.r, p.a1, p.a2, p.lambda};
                          },
                      },
                      mu);
}

std::vector<std::string> BenchmarkSpec::mu_names() const { return mu_names_for(family()); }

std::vector<std::string> mu_names_for(Family f) {
    switch (f) {
        case Family::delayed_rd: return {"D", "r"};
        case Family::epidemic: return {"D", "beta", "gamma"};
        case Family::neural_field: return {"kernel_width", "gain", "steepness", "c_tau", "tau0"};
        case Family::delayed_wave: return {"c", "alpha"};
        case Family::distributed_memory: return {"nu", "r", "a1", "a2", "lambda"};
    }
    return {};
}

FamilyParams make_params(Family f, const std::vector<double>& mu, std::vector<double> S_field) {
    if (mu.size() != mu_names_for(f).size()) throw std::invalid_argument("make_params: wrong parameter count");
    switch (f) {
        case Family::delayed_rd: return DelayedRdParams{mu[0], mu[1]};
        case Family::epidemic: return EpidemicParams{mu[0], mu[1], mu[2], std::move(S_field)};
        case Family::neural_field: return NeuralFieldParams{mu[0], mu[1], mu[2], mu[3], mu[4]};
        case Family::delayed_wave: return DelayedWaveParams{mu[0], mu[1]};
        case Family::distributed_memory: return DistributedMemoryParams{mu[0], mu[1], mu[2], mu[3], mu[4]};
    }
    throw std::invalid_argument("make_params: unknown family");
}

double max_stable_dt(const BenchmarkSpec& spec) {
    const double dx = spec.s_grid.dx();
    auto diffusive = [&](double d) {
        return d > 0.0 ? 0.4 * dx * dx / (2.0 * d) : std::numeric_limits<double>::infinity();
    };
    return std::visit(overloaded{
                          [&](const DelayedRdParams& p) { return diffusive(p.D); },
                          [&](const EpidemicParams& p) { return diffusive(p.D); },
                          [&](const NeuralFieldParams&) { return 1.0; },
                          [&](const DelayedWaveParams& p) {
                              return p.c > 0.0 ? 0.4 * dx / p.c : std::numeric_limits<double>::infinity();
                          },
                          [&](const DistributedMemoryParams& p) { return diffusive(p.nu); },
                      },
                      spec.mu);
}

void validate(const BenchmarkSpec& spec) {
    if (!(spec.tau > 0.0) || !std::isfinite(spec.tau)) throw std::invalid_argument("BenchmarkSpec: tau must be > 0");
    if (!(spec.solver_dt > 0.0)) throw std::invalid_argument("BenchmarkSpec: solver_dt must be > 0");
    if (!(spec.save_dt > 0.0)) throw std::invalid_argument("BenchmarkSpec: save_dt must be > 0");
    (void)spec.substeps();
    (void)spec.fine_slices();

    auto nonneg = [](double v, const char* what) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw std::invalid_argument(std::string("BenchmarkSpec: ") + what + " must be nonnegative");
    };
    std::visit(overloaded{
                   [&](const DelayedRdParams& p) {
                       nonneg(p.D, "D");
                       nonneg(p.r, "r");
                   },
                   [&](const EpidemicParams& p) {
                       nonneg(p.D, "D");
                       nonneg(p.beta, "beta");
                       nonneg(p.gamma, "gamma");
                       if (p.S_field.size() != spec.s_grid.n_x())
                           throw std::invalid_argument("BenchmarkSpec: S_field length must equal n_x");
                       for (double s : p.S_field) nonneg(s, "S_field");
                   },
                   [&](const NeuralFieldParams& p) {
                       if (!(p.kernel_width > 0.0)) throw std::invalid_argument("BenchmarkSpec: kernel_width must be > 0");
                       if (!(p.c_tau > 0.0)) throw std::invalid_argument("BenchmarkSpec: c_tau must be > 0");
                       if (!(p.tau0 > 0.0)) throw std::invalid_argument("BenchmarkSpec: tau0 must be > 0");
                       nonneg(p.steepness, "steepness");
                       if (!std::isfinite(p.gain)) throw std::invalid_argument("BenchmarkSpec: gain must be finite");
                   },
                   [&](const DelayedWaveParams& p) {
                       nonneg(p.c, "c");
                       if (!std::isfinite(p.alpha)) throw std::invalid_argument("BenchmarkSpec: alpha must be finite");
                   },
                   [&](const DistributedMemoryParams& p) {
                       nonneg(p.nu, "nu");
                       nonneg(p.r, "r");
                       if (!(p.lambda > 0.0)) throw std::invalid_argument("BenchmarkSpec: lambda must be > 0");
                       if (!std::isfinite(p.a1) || !std::isfinite(p.a2))
                           throw std::invalid_argument("BenchmarkSpec: a1, a2 must be finite");
                   },
               },
               spec.mu);

    if (spec.solver_dt > max_stable_dt(spec) * (1.0 + 1e-12))
        throw std::invalid_argument("BenchmarkSpec: solver_dt violates the stability bound");
}

BenchmarkSpec make_spec(FamilyParams mu, double tau, SpatialGrid grid, double solver_dt, double save_dt) {
    BenchmarkSpec spec{std::move(mu), tau, grid, solver_dt, save_dt};
    validate(spec);
    return spec;
}

std::vector<double> laplacian(std::span<const double> field, const SpatialGrid& grid) {
    const std::size_t n = grid.n_x();
    if (field.size() != n) throw std::invalid_argument("laplacian: field length != n_x");
    std::vector<double> out(n, 0.0);
    if (grid.boundary() == Boundary::periodic) {
        std::vector<cplx> spec(field.begin(), field.end());
        fft_inplace(spec);
        const double k0 = 2.0 * std::numbers::pi / grid.length();
        for (std::size_t k = 0; k < n; ++k) {
            const double kk = k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
            spec[k] *= -(k0 * kk) * (k0 * kk);
        }
        ifft_inplace(spec);
        for (std::size_t i = 0; i < n; ++i) out[i] = spec[i].real();
        return out;
    }

    const double inv = 1.0 / (grid.dx() * grid.dx());
    for (std::size_t i = 1; i + 1 < n; ++i) out[i] = (field[i - 1] - 2.0 * field[i] + field[i + 1]) * inv;
    if (grid.boundary() == Boundary::neumann) {
        out[0] = 2.0 * (field[1] - field[0]) * inv;
        out[n - 1] = 2.0 * (field[n - 2] - field[n - 1]) * inv;
    }
    return out;
}

std::vector<double> rhs_eval(const BenchmarkSpec& spec, std::span<const double> current, const HistoryState& buffer,
                             double /*t*/) {
    for (double v : current)
        if (!std::isfinite(v)) throw std::invalid_argument("rhs_eval: non-finite current state");
    return Stepper(spec, buffer.h_grid()).rhs(current, buffer);
}

std::vector<double> advance(const BenchmarkSpec& spec, const HistoryState& buffer) {
    return Stepper(spec, buffer.h_grid()).advance(buffer);
}

SaveStep step_save_interval(const BenchmarkSpec& spec, const HistoryState& fine_buffer) {
    return run_save_interval(Stepper(spec, fine_buffer.h_grid()), spec, fine_buffer);
}

HistoryState fine_buffer_from(const BenchmarkSpec& spec, const HistoryState& phi) {
    if (phi.channels() != spec.channels() || !(phi.s_grid() == spec.s_grid))
        throw std::invalid_argument("simulate: initial history does not match spec grids");
    if (std::abs(phi.h_grid().tau() - spec.tau) > 1e-9 * spec.tau)
        throw std::invalid_argument("simulate: initial history tau != spec tau");
    const HistoryGrid fine(spec.tau, spec.fine_slices());
    if (fine == phi.h_grid()) return HistoryState(fine, spec.s_grid, spec.channels(), phi.t_now(),
                                                  {phi.values().begin(), phi.values().end()});
    HistoryState buf(fine, spec.s_grid, spec.channels(), phi.t_now());
    for (std::size_t j = 0; j < fine.n_slices(); ++j) {
        const double theta = std::clamp(fine.theta(j), -phi.h_grid().tau(), 0.0);
        const auto v = delayed_lookup(phi, theta);
        std::copy(v.begin(), v.end(), buf.slice(j).begin());
    }
    return buf;
}

std::span<const double> Trajectory::solution_slice(std::size_t n) const {
    if (n == 0) return initial_history.slice(initial_history.n_slices() - 1);
    if (n > n_saves()) throw std::out_of_range("Trajectory: save index out of range");
    return std::span<const double>(saved).subspan((n - 1) * slice_size(), slice_size());
}

Trajectory simulate(const BenchmarkSpec& spec, const HistoryState& phi, std::size_t n_saves) {
    if (n_saves < 1) throw std::invalid_argument("simulate: n_saves must be >= 1");
    validate(spec);
    if (!phi.all_finite()) throw std::invalid_argument("simulate: non-finite initial history");

    HistoryState fine = fine_buffer_from(spec, phi);

    const HistoryGrid save_grid(spec.tau, spec.save_slices());
    HistoryState initial(save_grid, spec.s_grid, spec.channels(), phi.t_now());
    if (save_grid == phi.h_grid()) {
        initial = phi;
    } else {
        for (std::size_t j = 0; j < save_grid.n_slices(); ++j) {
            const auto v = delayed_lookup(phi, std::clamp(save_grid.theta(j), -phi.h_grid().tau(), 0.0));
            std::copy(v.begin(), v.end(), initial.slice(j).begin());
        }
    }

    Trajectory traj{spec, initial, {}, {}, true, {}, 0, "in_distribution"};
    traj.saved.reserve(n_saves * traj.slice_size());
    traj.times.reserve(n_saves);

    const Stepper stepper(spec, fine.h_grid());
    for (std::size_t n = 1; n <= n_saves; ++n) {
        auto step = run_save_interval(stepper, spec, fine);
        if (!step.valid) {
            traj.valid = false;
            traj.reason = step.reason + " at save " + std::to_string(n);
            break;
        }
        fine = std::move(step.buffer);
        const auto newest = fine.slice(fine.n_slices() - 1);
        traj.saved.insert(traj.saved.end(), newest.begin(), newest.end());
        traj.times.push_back(static_cast<double>(n) * spec.save_dt);
    }
    return traj;
}

}  // namespace hsfno
