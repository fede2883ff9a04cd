#include "hsfno/data_gen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace hsfno {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a combined word
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Conditioning conditioning_for(const BenchmarkSpec& spec, double dt) {
    Conditioning c;
    c.family = spec.family();
    c.mu = spec.mu_vector();
    c.tau = spec.tau;
    c.dt = dt;
    if (const auto* ep = std::get_if<EpidemicParams>(&spec.mu)) c.aux_field = ep->S_field;
    return c;
}

Interval ParamRanges::get(const std::string& name) const {
    const auto it = intervals.find(name);
    if (it == intervals.end()) throw std::invalid_argument("ParamRanges: missing interval for " + name);
    return it->second;
}

ParamRanges default_ranges(Family f) {
    ParamRanges r;
    r.intervals["tau"] = {0.5, 1.5};
    switch (f) {
        case Family::delayed_rd:
            r.intervals["D"] = {1e-4, 1e-3};
            r.intervals["r"] = {0.5, 2.0};
            break;
        case Family::epidemic:
            r.intervals["D"] = {1e-4, 1e-3};
            r.intervals["beta"] = {0.5, 1.5};
            r.intervals["gamma"] = {0.5, 1.5};
            break;
        case Family::neural_field:
            r.intervals["kernel_width"] = {0.05, 0.15};
            r.intervals["gain"] = {1.0, 3.0};
            r.intervals["steepness"] = {1.0, 4.0};
            r.intervals["c_tau"] = {0.5, 2.0};
            r.intervals["tau0"] = {0.05, 0.2};
            break;
        case Family::delayed_wave:
            r.intervals["c"] = {0.05, 0.2};
            r.intervals["alpha"] = {0.5, 2.0};
            break;
        case Family::distributed_memory:
            r.intervals["nu"] = {1e-4, 1e-3};
            r.intervals["r"] = {0.5, 1.5};
            r.intervals["a1"] = {-1.0, 0.0};
            r.intervals["a2"] = {-0.5, 0.0};
            r.intervals["lambda"] = {1.0, 5.0};
            break;
    }
    return r;
}

bool default_nonneg(Family f) {
    return f == Family::delayed_rd || f == Family::epidemic || f == Family::distributed_memory;
}

namespace {

double draw(std::mt19937_64& rng, Interval iv) {
    if (!(iv.first <= iv.second) || !std::isfinite(iv.first) || !std::isfinite(iv.second))
        throw std::invalid_argument("sample_spec: empty interval");
    if (iv.first == iv.second) return iv.first;
    return std::uniform_real_distribution<double>(iv.first, iv.second)(rng);
}

double basis(Boundary b, std::size_t k, double x, double length, bool cosine) {
    using std::numbers::pi;
    switch (b) {
        case Boundary::periodic: {
            const double a = 2.0 * pi * static_cast<double>(k) * x / length;
            return cosine ? std::cos(a) : std::sin(a);
        }
        case Boundary::dirichlet: return cosine ? 0.0 : std::sin(pi * static_cast<double>(k) * x / length);
        case Boundary::neumann: return cosine ? std::cos(pi * static_cast<double>(k) * x / length) : 0.0;
    }
    return 0.0;
}

}  // namespace

HistoryState sample_initial_history(std::uint64_t seed, const BenchmarkSpec& spec, bool nonneg) {
    std::mt19937_64 rng(mix_seed(seed, 0x1417));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    const HistoryGrid hg(spec.tau, spec.save_slices());
    const SpatialGrid& sg = spec.s_grid;
    const std::size_t n = sg.n_x();
    HistoryState h(hg, sg, spec.channels(), 0.0);
    const auto xs = sg.coordinates();

    for (std::size_t ch = 0; ch < spec.channels(); ++ch) {
        std::vector<double> a(kInitialModes), b(kInitialModes), eps(kInitialModes);
        for (std::size_t k = 0; k < kInitialModes; ++k) {
            const double decay = 1.0 / static_cast<double>(k + 1);
            a[k] = unit(rng) * decay;
            b[k] = unit(rng) * decay;
            eps[k] = 0.5 * unit(rng);
        }
        for (std::size_t j = 0; j < hg.n_slices(); ++j) {
            const double s = hg.theta(j) / spec.tau;
            auto f = h.field(j, ch);
            for (std::size_t i = 0; i < n; ++i) {
                double v = 0.0;
                for (std::size_t k = 0; k < kInitialModes; ++k) {
                    v += (a[k] * basis(sg.boundary(), k + 1, xs[i], sg.length(), true) +
                          b[k] * basis(sg.boundary(), k + 1, xs[i], sg.length(), false)) *
                         (1.0 + eps[k] * s);
                }
                f[i] = v;
            }
        }
        if (nonneg) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t j = 0; j < hg.n_slices(); ++j)
                for (double v : h.field(j, ch)) lo = std::min(lo, v), hi = std::max(hi, v);
            const double span = hi > lo ? hi - lo : 1.0;
            for (std::size_t j = 0; j < hg.n_slices(); ++j) {
                auto f = h.field(j, ch);
                for (std::size_t i = 0; i < n; ++i) {
                    double v = 0.1 + 0.9 * (f[i] - lo) / span;
                    // dirichlet histories must vanish on the boundary
                    if (sg.boundary() == Boundary::dirichlet) v *= std::sin(std::numbers::pi * xs[i] / sg.length());
                    f[i] = std::max(v, 0.0);
                }
            }
        }
    }
    return h;
}

BenchmarkSpec sample_spec(std::uint64_t seed, Family family, const ParamRanges& ranges, const GridConfig& grid) {
    std::mt19937_64 rng(mix_seed(seed, 0x5bec));
    const SpatialGrid sg(grid.n_x, grid.length, grid.boundary);

    FamilyParams mu;
    switch (family) {
        case Family::delayed_rd: mu = DelayedRdParams{draw(rng, ranges.get("D")), draw(rng, ranges.get("r"))}; break;
        case Family::epidemic: {
            EpidemicParams p;
            p.D = draw(rng, ranges.get("D"));
            p.beta = draw(rng, ranges.get("beta"));
            p.gamma = draw(rng, ranges.get("gamma"));
            std::uniform_real_distribution<double> unit(-1.0, 1.0);
            const double c1 = unit(rng), d1 = unit(rng), c2 = unit(rng) / 2.0, d2 = unit(rng) / 2.0;
            const auto xs = sg.coordinates();
            std::vector<double> g(sg.n_x());
            double gmax = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double a = 2.0 * std::numbers::pi * xs[i] / sg.length();
                g[i] = c1 * std::cos(a) + d1 * std::sin(a) + c2 * std::cos(2 * a) + d2 * std::sin(2 * a);
                gmax = std::max(gmax, std::abs(g[i]));
            }
            p.S_field.resize(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) p.S_field[i] = 1.0 + 0.5 * (gmax > 0 ? g[i] / gmax : 0.0);
            mu = std::move(p);
            break;
        }
        case Family::neural_field: {
            NeuralFieldParams p;
            p.kernel_width = draw(rng, ranges.get("kernel_width"));
            p.gain = draw(rng, ranges.get("gain"));
            p.steepness = draw(rng, ranges.get("steepness"));
            p.c_tau = draw(rng, ranges.get("c_tau"));
            p.tau0 = draw(rng, ranges.get("tau0"));
            mu = p;
            break;
        }
        case Family::delayed_wave: mu = DelayedWaveParams{draw(rng, ranges.get("c")), draw(rng, ranges.get("alpha"))}; break;
        case Family::distributed_memory: {
            DistributedMemoryParams p;
            p.nu = draw(rng, ranges.get("nu"));
            p.r = draw(rng, ranges.get("r"));
            p.a1 = draw(rng, ranges.get("a1"));
            p.a2 = draw(rng, ranges.get("a2"));
            p.lambda = draw(rng, ranges.get("lambda"));
            mu = p;
            break;
        }
    }
    const double tau = draw(rng, ranges.get("tau"));

    BenchmarkSpec spec{std::move(mu), tau, sg, 1.0, 1.0};
    spec.save_dt = tau / static_cast<double>(grid.m_slices);
    const double bound = max_stable_dt(spec);
    auto sub = std::max<std::size_t>(1, grid.min_substeps);
    if (std::isfinite(bound)) sub = std::max(sub, static_cast<std::size_t>(std::ceil(spec.save_dt / bound)));
    while (spec.save_dt / static_cast<double>(sub) > bound) ++sub;
    spec.solver_dt = spec.save_dt / static_cast<double>(sub);
    validate(spec);
    return spec;
}

HistoryState history_at(const Trajectory& traj, const HistoryGrid& h_grid, std::size_t n) {
    const std::size_t big_m = h_grid.m_slices();
    if (n < big_m || n > traj.n_saves()) throw std::out_of_range("history_at: window out of range");
    HistoryState h(h_grid, traj.spec.s_grid, traj.spec.channels(), static_cast<double>(n) * traj.spec.save_dt);
    for (std::size_t j = 0; j <= big_m; ++j) {
        const auto s = traj.solution_slice(n - big_m + j);
        std::copy(s.begin(), s.end(), h.slice(j).begin());
    }
    return h;
}

namespace {

void check_alignment(const Trajectory& traj, const HistoryGrid& h_grid, std::size_t m) {
    if (m < 1 || m > h_grid.m_slices()) throw std::invalid_argument("extract_pairs: m out of range");
    const double dtheta = h_grid.delta_theta();
    if (std::abs(dtheta - traj.spec.save_dt) > 1e-9 * traj.spec.save_dt ||
        std::abs(h_grid.tau() - traj.spec.tau) > 1e-9 * traj.spec.tau)
        throw std::invalid_argument("extract_pairs: misaligned grids (save_dt must equal delta_theta)");
}

}  // namespace

std::vector<SupervisedPair> extract_pairs(const Trajectory& traj, const HistoryGrid& h_grid, std::size_t m,
                                          std::size_t trajectory_id) {
    if (!traj.valid) return {};
    check_alignment(traj, h_grid, m);
    const std::size_t big_m = h_grid.m_slices();
    // windows run over the solution sequence u(t_0), ..., u(t_N)
    if (traj.n_saves() < big_m + m) throw std::invalid_argument("extract_pairs: trajectory too short");

    const Conditioning cond = conditioning_for(traj.spec, static_cast<double>(m) * h_grid.delta_theta());
    std::vector<SupervisedPair> pairs;
    for (std::size_t n = big_m; n + m <= traj.n_saves(); ++n) {
        HistoryState hist = history_at(traj, h_grid, n);
        std::vector<double> target;
        target.reserve(m * traj.slice_size());
        for (std::size_t k = 1; k <= m; ++k) {
            const auto s = traj.solution_slice(n + k);
            target.insert(target.end(), s.begin(), s.end());
        }
        HistoryState next = shift_append(hist, target, m);
        pairs.push_back(SupervisedPair{std::move(hist), cond, m, std::move(target), std::move(next), trajectory_id});
    }
    return pairs;
}

std::vector<RolloutWindow> extract_windows(const Trajectory& traj, const HistoryGrid& h_grid, std::size_t m,
                                           std::size_t k_steps, std::size_t trajectory_id) {
    if (!traj.valid) return {};
    check_alignment(traj, h_grid, m);
    if (k_steps < 1) throw std::invalid_argument("extract_windows: K must be >= 1");
    const std::size_t big_m = h_grid.m_slices();
    if (traj.n_saves() < big_m + m * k_steps) throw std::invalid_argument("extract_windows: trajectory too short");

    const Conditioning cond = conditioning_for(traj.spec, static_cast<double>(m) * h_grid.delta_theta());
    std::vector<RolloutWindow> out;
    for (std::size_t n = big_m; n + m * k_steps <= traj.n_saves(); ++n) {
        RolloutWindow w{history_at(traj, h_grid, n), cond, m, {}, trajectory_id};
        for (std::size_t k = 1; k <= k_steps; ++k) w.targets.push_back(history_at(traj, h_grid, n + k * m));
        out.push_back(std::move(w));
    }
    return out;
}

DatasetSplits split_by_trajectory(const std::vector<std::size_t>& ids, double f_train, double f_val, double f_test,
                                  std::uint64_t seed) {
    if (!(f_train > 0 && f_val > 0 && f_test > 0) || std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw std::invalid_argument("split_by_trajectory: fractions must be positive and sum to 1");
    if (ids.size() < 3) throw std::invalid_argument("split_by_trajectory: fewer trajectories than splits");

    std::vector<std::size_t> order = ids;
    std::mt19937_64 rng(mix_seed(seed, 0x5971));
    std::shuffle(order.begin(), order.end(), rng);

    const auto n = static_cast<double>(ids.size());
    const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f_val * n)));
    const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f_test * n)));
    if (n_val + n_test >= ids.size()) throw std::invalid_argument("split_by_trajectory: fewer trajectories than splits");
    const std::size_t n_train = ids.size() - n_val - n_test;

    DatasetSplits s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return s;
}

Trajectory generate_trajectory(std::uint64_t seed, Family family, const ParamRanges& ranges, const GridConfig& grid,
                               std::size_t n_saves, const std::string& regime) {
    const BenchmarkSpec spec = sample_spec(seed, family, ranges, grid);
    const HistoryState phi = sample_initial_history(seed, spec, default_nonneg(family));
    Trajectory traj = simulate(spec, phi, n_saves);
    traj.seed = seed;
    traj.regime = regime;
    return traj;
}

}  // namespace hsfno
