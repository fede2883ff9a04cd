#include "hsfno/verify.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hsfno/data_gen.hpp"
#include "hsfno/fno_core.hpp"
#include "hsfno/models.hpp"
#include "hsfno/oracles.hpp"
#include "hsfno/train_eval.hpp"

namespace hsfno {

bool VerifyOptions::faulty(const std::string& check) const {
    return std::find(inject_faults.begin(), inject_faults.end(), check) != inject_faults.end();
}

namespace {

// Checks with a fault hook; injecting into any other name is a usage error.
const std::vector<std::string> kFaultable{"shift_append", "spectral_adjoint", "gradient"};

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

Conditioning cond_for(Family f, const HistoryState& h, std::size_t m) {
    Conditioning c;
    c.family = f;
    c.mu.assign(mu_names_for(f).size(), 0.3);
    c.tau = h.h_grid().tau();
    c.dt = static_cast<double>(m) * h.h_grid().delta_theta();
    if (f == Family::epidemic) c.aux_field.assign(h.n_x(), 1.0);
    return c;
}

CheckResult check_shift_append(const VerifyOptions& opts) {
    std::mt19937_64 rng(mix_seed(1, 0x5a));
    std::size_t mismatches = 0, transported = 0;
    const bool fault = opts.faulty("shift_append");

    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t M = 1 + rng() % 16, C = 1 + rng() % 2, n_x = 4 + rng() % 29, m = 1 + rng() % M;
        auto vals = randn((M + 1) * C * n_x, rng);
        // awkward bit patterns must survive transport too
        vals[rng() % vals.size()] = -0.0;
        vals[rng() % vals.size()] = std::numeric_limits<double>::denorm_min();
        vals[rng() % vals.size()] = 1e300;
        const HistoryState h(HistoryGrid(0.5 + 0.01 * static_cast<double>(rng() % 100), M),
                             SpatialGrid(n_x, 1.0, Boundary::periodic), C, 0.0, std::move(vals));
        const auto fresh = randn(m * C * n_x, rng);
        auto out = shift_append(h, fresh, m);
        if (fault && trial == 500) out.values()[0] = std::nextafter(out.values()[0], 2.0);
        const std::size_t S = C * n_x;
        for (std::size_t j = 0; j + m <= M; ++j)
            for (std::size_t k = 0; k < S; ++k, ++transported)
                if (!same_bits(out.slice(j)[k], h.slice(j + m)[k])) ++mismatches;
        for (std::size_t k = 0; k < fresh.size(); ++k)
            if (!same_bits(out.values()[(M + 1 - m) * S + k], fresh[k])) ++mismatches;
    }

    std::size_t model_mismatches = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t M = 2 + rng() % 7, n_x = 8 + rng() % 9, m = 1 + rng() % M;
        const SpatialGrid g(n_x, 1.0, Boundary::periodic);
        const Family f = trial % 2 ? Family::delayed_wave : Family::delayed_rd;
        const auto model = make_model({ModelType::hs_fno, CondMode::full}, f, M, g, m, {6, 2, 3, 4}, rng());
        const HistoryState h(HistoryGrid(0.9, M), g, channels_for_family(f), 0.0,
                             randn((M + 1) * channels_for_family(f) * n_x, rng));
        const auto out = predict_step(model, h, cond_for(f, h, m));
        for (std::size_t j = 0; j + m <= M; ++j)
            for (std::size_t k = 0; k < h.slice_size(); ++k)
                if (!same_bits(out.slice(j)[k], h.slice(j + m)[k])) ++model_mismatches;
    }

    CheckResult r;
    r.passed = mismatches == 0 && model_mismatches == 0;
    r.detail = "1000 triples, " + std::to_string(transported) + " transported values, " +
               std::to_string(mismatches) + " mismatches; hs_fno predict_step mismatches " +
               std::to_string(model_mismatches);
    return r;
}

// conj-transposed weights, laid out (c_in, c_out, mt, mx)
std::vector<double> adjoint_weights(const SpectralConv& sc, const std::vector<double>& w) {
    const std::size_t m = sc.modes_theta * sc.modes_x;
    std::vector<double> out(w.size());
    for (std::size_t o = 0; o < sc.c_out; ++o)
        for (std::size_t i = 0; i < sc.c_in; ++i)
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t src = (o * sc.c_in + i) * m + k, dst = (i * sc.c_out + o) * m + k;
                out[2 * dst] = w[2 * src];
                out[2 * dst + 1] = -w[2 * src + 1];
            }
    return out;
}

CheckResult check_spectral_adjoint(const VerifyOptions& opts) {
    std::mt19937_64 rng(mix_seed(2, 0xad));
    double worst = 0.0;
    for (auto [nt, nx] : {std::pair<std::size_t, std::size_t>{8, 8}, {8, 16}, {7, 9}, {16, 64}}) {
        const SpectralConv sc{3, 2, std::min<std::size_t>(3, nt / 2 + 1), std::min<std::size_t>(5, nx / 2 + 1)};
        const auto w = randn(sc.weight_count(), rng);
        const auto x = randn(3 * nt * nx, rng);
        const auto g = randn(2 * nt * nx, rng);
        std::vector<cplx> xh;
        sc.forward(x, nt, nx, w, &xh);
        std::vector<double> gin(x.size(), 0.0), gw(w.size(), 0.0);
        sc.backward(xh, g, nt, nx, w, gin, gw);
        if (opts.faulty("spectral_adjoint")) gin[0] += 1e-6;

        const SpectralConv adj{2, 3, sc.modes_theta, sc.modes_x};
        const auto via_forward = adj.forward(g, nt, nx, adjoint_weights(sc, w));
        for (std::size_t i = 0; i < gin.size(); ++i) worst = std::max(worst, std::abs(gin[i] - via_forward[i]));
    }
    CheckResult r;
    r.passed = worst < 1e-10;
    r.detail = "max |K^T g - K^* g| = " + fmt(worst) + " (limit 1e-10)";
    return r;
}

CheckResult check_gradient(const VerifyOptions& opts) {
    // full surrogate step on an 8 x 8 (theta, x) grid
    const SpatialGrid g8(8, 1.0, Boundary::periodic);
    const std::size_t M = 7;
    std::mt19937_64 rng(mix_seed(3, 0x9d));
    const auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, M, g8, 1, {4, 2, 3, 3}, 17);
    const HistoryState h0(HistoryGrid(0.8, M), g8, 1, 0.0, randn((M + 1) * 8, rng));
    const auto cond = cond_for(Family::delayed_rd, h0, 1);
    const auto up = randn(h0.values().size(), rng);
    const bool fault = opts.faulty("gradient");

    const std::size_t np = model.params.count();
    std::vector<double> z = model.params.flatten();
    z.insert(z.end(), h0.values().begin(), h0.values().end());
    FlatObjective f = [&](const std::vector<double>& v, std::vector<double>* grad) {
        SurrogateModel mm = model;
        mm.params.assign(std::span<const double>(v.data(), np));
        HistoryState h(h0.h_grid(), h0.s_grid(), 1, 0.0, std::vector<double>(v.begin() + static_cast<long>(np), v.end()));
        StepTape tape{h, 0, {}};
        const auto next = step_forward(mm, h, cond, 1, tape);
        double s = 0;
        for (std::size_t i = 0; i < up.size(); ++i) s += up[i] * next.values()[i];
        if (grad) {
            FNOParams gp = zeros_like(mm.params);
            const auto gh = step_backward(mm, tape, up, gp);
            *grad = gp.flatten();
            grad->insert(grad->end(), gh.begin(), gh.end());
            if (fault)
                for (auto& x : *grad) x *= 1.001;
        }
        return s;
    };
    const std::size_t samples = 400;
    const double err = grad_check(z, f, 1e-5, samples, 5);
    CheckResult r;
    r.passed = err < 1e-5;
    r.detail = std::to_string(std::min(samples, z.size())) + " of " + std::to_string(z.size()) +
               " coordinates, max relative error " + fmt(err) + " (limit 1e-5)";
    return r;
}

CheckResult check_temporal_convergence(const VerifyOptions&) {
    CheckResult r;
    r.passed = true;
    for (Family f : all_families()) {
        GridConfig grid;
        grid.n_x = 32;
        grid.m_slices = 4;
        const auto spec = sample_spec(3, f, default_ranges(f), grid);
        const double L = spec.s_grid.length(), tau = spec.tau;
        const InitialFn phi = [L, tau](double th, double x, std::size_t c) {
            const double t = th / tau;
            if (c == 1) return 0.1 * std::sin(2 * M_PI * x / L);
            return 0.5 + 0.2 * std::cos(2 * M_PI * x / L) * (1 + 0.3 * t) + 0.1 * std::sin(4 * M_PI * x / L) * t;
        };
        std::vector<double> dts;
        for (int k = 3; k <= 6; ++k) dts.push_back(spec.save_dt / std::pow(2.0, k));
        const double order = solver_convergence_order(spec, phi, dts, 2 * spec.tau).order;
        r.passed = r.passed && order >= 0.8 && order <= 1.2;
        r.detail += std::string(r.detail.empty() ? "" : ", ") + std::string(to_string(f)) + " " + fmt(order);
    }
    r.detail = "orders " + r.detail + " (want [0.8, 1.2])";
    return r;
}

CheckResult check_spatial_convergence(const VerifyOptions&) {
    const auto spec = make_spec(DelayedRdParams{0.05, 1.0}, 1.0, SpatialGrid(9, 1.0, Boundary::dirichlet),
                                1.0 / 1024, 0.25);
    const InitialFn phi = [](double th, double x, std::size_t) {
        return (0.5 + 0.1 * th) * std::sin(M_PI * x) + 0.2 * std::sin(3 * M_PI * x);
    };
    const double order = spatial_convergence_order(spec, phi, {9, 17, 33, 65}, 2.0).order;
    CheckResult r;
    r.passed = order >= 1.7 && order <= 2.3;
    r.detail = "dirichlet delayed_rd, n_x 9..65, order " + fmt(order) + " (want [1.7, 2.3])";
    return r;
}

CheckResult check_fixed_point(const VerifyOptions&) {
    const SpatialGrid g(32, 1.0, Boundary::periodic);
    const auto spec = make_spec(DelayedRdParams{1e-3, 1.0}, 1.0, g, 0.1, 0.1);
    HistoryState phi(HistoryGrid(1.0, 10), g, 1);
    for (auto& v : phi.values()) v = 1.0;
    const auto traj = simulate(spec, phi, 100);
    double worst = 0.0;
    for (double v : traj.saved) worst = std::max(worst, std::abs(v - 1.0));
    CheckResult r;
    r.passed = traj.valid && traj.n_saves() == 100 && worst <= 1e-12;
    r.detail = "delayed_rd u = 1 over 100 steps, max deviation " + fmt(worst) + " (limit 1e-12)";
    return r;
}

CheckResult check_solver_semigroup(const VerifyOptions&) {
    CheckResult r;
    r.passed = true;
    std::size_t exercised = 0;
    for (Family f : all_families()) {
        bool done = false;
        for (std::size_t M : {16u, 32u, 64u, 128u}) {
            for (std::uint64_t s = 0; s < 10 && !done; ++s) {
                GridConfig gc;
                gc.n_x = 16;
                gc.m_slices = M;
                auto spec = sample_spec(mix_seed(42 + s, static_cast<std::uint64_t>(f)), f, default_ranges(f), gc);
                spec.solver_dt = spec.save_dt;   // save points coincide with solver steps
                if (spec.solver_dt > max_stable_dt(spec)) break;
                const auto phi = sample_initial_history(7 + s, spec, default_nonneg(f));
                const auto a = simulate(spec, phi, 40);
                const auto b = simulate(spec, phi, 40);
                if (!a.valid) continue;
                const HistoryGrid hg(spec.tau, spec.save_slices());
                const auto c = simulate(spec, history_at(a, hg, 20), 20);
                const std::size_t S = a.slice_size();
                bool ok = a.saved == b.saved && c.saved.size() == 20 * S;
                for (std::size_t k = 0; ok && k < 20 * S; ++k) ok = same_bits(c.saved[k], a.saved[20 * S + k]);
                r.passed = r.passed && ok;
                if (!ok) r.detail += std::string(to_string(f)) + " mismatch; ";
                done = true;
            }
            if (done) break;
        }
        if (done) ++exercised;
    }
    r.passed = r.passed && exercised == all_families().size();
    r.detail += std::to_string(exercised) + " of 5 families restarted at save point 20 of 40, bit-exact";
    return r;
}

CheckResult check_irreducible_risk(const VerifyOptions&) {
    CheckResult r;
    std::size_t failures = 0, cases = 0;
    double worst = 0.0;
    auto record = [&](const IrreducibleReport& rep) {
        ++cases;
        if (!rep.ok) ++failures;
        worst = std::max(worst, std::abs(rep.analytic_risk - rep.bound));
    };
    record(irreducible_error_check(std::vector<double>{0.0}, std::vector<double>{2.0}, 0.5,
                                   scalar_grid(-1.0, 3.0, 1e-3)));
    std::mt19937_64 rng(mix_seed(4, 0x91));
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 100; ++t) {
        const std::vector<double> a{4 * u(rng) - 2}, b{4 * u(rng) - 2};
        record(irreducible_error_check(a, b, u(rng), scalar_grid(-3, 3, 1e-3)));
    }
    // two-dimensional targets on a 0.01 candidate lattice
    std::vector<std::vector<double>> lattice;
    for (int i = -150; i <= 150; ++i)
        for (int j = -150; j <= 150; ++j) lattice.push_back({0.01 * i, 0.01 * j});
    for (int t = 0; t < 5; ++t) {
        const std::vector<double> a{2 * u(rng) - 1, 2 * u(rng) - 1}, b{2 * u(rng) - 1, 2 * u(rng) - 1};
        record(irreducible_error_check(a, b, u(rng), lattice));
    }
    r.passed = failures == 0;
    r.detail = std::to_string(cases) + " cases, " + std::to_string(failures) +
               " failures, max |analytic risk - bound| " + fmt(worst);
    return r;
}

DiscreteShiftSystem random_linear(std::size_t n, std::size_t M, double target_L, std::mt19937_64& rng) {
    std::vector<std::vector<double>> blocks;
    for (std::size_t j = 0; j <= M; ++j) blocks.push_back(randn(n * n, rng));
    const auto probe = linear_system(n, M, blocks);
    for (auto& b : blocks)
        for (auto& x : b) x *= target_L / probe.lipschitz;
    return linear_system(n, M, blocks);
}

// Reference solver on a small delayed_rd grid as a discrete shift system.
DiscreteShiftSystem solver_system(std::uint64_t seed, HistoryState& h0) {
    GridConfig gc;
    gc.n_x = 8;
    gc.m_slices = 4;
    auto spec = sample_spec(seed, Family::delayed_rd, default_ranges(Family::delayed_rd), gc);
    spec.solver_dt = spec.save_dt;
    h0 = sample_initial_history(seed, spec, true);
    const auto grid_h = h0.h_grid();
    const auto grid_s = h0.s_grid();
    const auto pred = oracle_predictor(spec, 1);
    const auto cond = conditioning_for(spec, spec.save_dt);
    return DiscreteShiftSystem{h0.slice_size(), 4, [=](std::span<const double> h) {
                                   return pred(HistoryState(grid_h, grid_s, 1, 0.0, {h.begin(), h.end()}), cond);
                               },
                               0.0};
}

SliceMap perturbed(const DiscreteShiftSystem& sys, double amp) {
    return [&sys, amp](std::span<const double> h) {
        auto v = sys.phi(h);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += amp * std::sin(h[i] + static_cast<double>(i));
        return v;
    };
}

CheckResult check_newest_slice_loss(const VerifyOptions&) {
    std::mt19937_64 rng(mix_seed(5, 0x92));
    double worst_rel = 0.0, worst_transport = 0.0;
    bool ok = true;
    for (int t = 0; t < 3; ++t) {
        const auto sys = random_linear(3, 4, t == 0 ? 0.7 : 1.3, rng);
        std::vector<std::vector<double>> samples;
        for (int s = 0; s < 100; ++s) samples.push_back(randn(sys.size(), rng));
        const auto rep = loss_decomposition_check(sys, perturbed(sys, 0.3), samples, {0.5, 1, 1, 2, 1.5},
                                                  {0.1, -0.2, 0.3});
        ok = ok && rep.ok;
        worst_rel = std::max(worst_rel, rep.rel_diff);
        worst_transport = std::max(worst_transport, rep.max_transported);
    }
    HistoryState h0(HistoryGrid(1.0, 1), SpatialGrid(4, 1.0, Boundary::periodic), 1);
    const auto sys = solver_system(11, h0);
    std::vector<std::vector<double>> samples;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int s = 0; s < 100; ++s) {
        std::vector<double> v(h0.values().begin(), h0.values().end());
        for (auto& x : v) x = std::max(0.0, x + 0.05 * (u(rng) - 0.5));
        samples.push_back(std::move(v));
    }
    const auto rep = loss_decomposition_check(sys, perturbed(sys, 0.01), samples);
    ok = ok && rep.ok;
    worst_rel = std::max(worst_rel, rep.rel_diff);
    worst_transport = std::max(worst_transport, rep.max_transported);

    CheckResult r;
    r.passed = ok;
    r.detail = "3 linear systems + delayed_rd solver, 100 samples each, max relative gap " + fmt(worst_rel) +
               ", max transported term " + fmt(worst_transport);
    return r;
}

// Sampled difference quotients near h (the solver rejects far-away negative states).
double local_lipschitz(const DiscreteShiftSystem& sys, std::span<const double> h, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    double best = 0.0;
    for (int s = 0; s < 200; ++s) {
        std::vector<double> a(h.begin(), h.end()), b = a;
        for (std::size_t i = 0; i < a.size(); ++i) b[i] = std::max(0.0, a[i] + 1e-3 * nd(rng));
        double d = 0.0;
        for (std::size_t j = 0; j <= sys.M; ++j) {
            double sq = 0.0;
            for (std::size_t k = 0; k < sys.n; ++k) sq += std::pow(a[j * sys.n + k] - b[j * sys.n + k], 2);
            d = std::max(d, std::sqrt(sq));
        }
        const auto pa = sys.phi(a), pb = sys.phi(b);
        double sq = 0.0;
        for (std::size_t k = 0; k < pa.size(); ++k) sq += (pa[k] - pb[k]) * (pa[k] - pb[k]);
        if (d > 0.0) best = std::max(best, std::sqrt(sq) / d);
    }
    return best;
}

CheckResult check_recurrence(const VerifyOptions&) {
    std::mt19937_64 rng(mix_seed(6, 0x93));
    std::uniform_real_distribution<double> u(0, 1);
    std::size_t failures = 0;
    double worst_violation = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 1 + t % 4, M = 1 + t % 5;
        const auto sys = random_linear(n, M, t % 2 ? 0.5 + u(rng) * 0.4 : 1.0 + u(rng), rng);
        const double eps = 0.01 + 0.1 * u(rng);
        const SliceMap psi = [&](std::span<const double> h) {
            auto v = sys.phi(h);
            std::vector<double> dir(n);
            double nd = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                dir[i] = std::cos(3.0 * h[i] + static_cast<double>(i));
                nd += dir[i] * dir[i];
            }
            nd = std::sqrt(nd);
            for (std::size_t i = 0; i < n; ++i) v[i] += nd > 0 ? eps * dir[i] / nd : 0.0;
            return v;
        };
        const auto rep = rollout_recurrence_check(sys, psi, eps, randn(sys.size(), rng), 30);
        if (!rep.holds || !rep.shift_exact) ++failures;
        worst_violation = std::max(worst_violation, rep.max_violation);
    }
    double tight_gap = 0.0;
    for (double L : {0.5, 1.0, 1.3}) {
        const auto sys = linear_system(1, 2, {{0.0}, {0.0}, {L}});
        const double eps = 0.05;
        const SliceMap psi = [&](std::span<const double> h) { return std::vector<double>{L * h[2] + eps}; };
        const auto rep = rollout_recurrence_check(sys, psi, eps, std::vector<double>{0.2, -0.1, 0.4}, 25);
        if (!rep.holds) ++failures;
        tight_gap = std::max(tight_gap, rep.max_gap);
    }
    // nonlinear solver map with a sampled Lipschitz estimate: only the exact
    // transport of errors is asserted
    HistoryState h0(HistoryGrid(1.0, 1), SpatialGrid(4, 1.0, Boundary::periodic), 1);
    auto sys = solver_system(12, h0);
    sys.lipschitz = local_lipschitz(sys, h0.values(), rng);
    const auto rep = rollout_recurrence_check(sys, perturbed(sys, 0.01), 0.01 * std::sqrt(8.0), h0.values(), 10);
    if (!rep.shift_exact) ++failures;

    CheckResult r;
    r.passed = failures == 0 && tight_gap <= 1e-9;
    r.detail = "100 linear trials, " + std::to_string(failures) + " failures, max a_k - bound_k " +
               fmt(worst_violation) + ", tight-case gap " + fmt(tight_gap) + " (limit 1e-9)";
    return r;
}

CheckResult check_oracle_recovery(const VerifyOptions&) {
    std::size_t instances = 0, mismatched = 0;
    for (std::uint64_t s = 0; instances < 20 && s < 200; ++s) {
        GridConfig gc;
        gc.n_x = 16 + 8 * (s % 3);
        gc.m_slices = 6 + s % 4;
        gc.boundary = s % 2 ? Boundary::dirichlet : Boundary::periodic;
        auto spec = sample_spec(mix_seed(s, 0x0c), Family::delayed_rd, default_ranges(Family::delayed_rd), gc);
        spec.solver_dt = spec.save_dt;
        if (spec.solver_dt > max_stable_dt(spec)) continue;
        const auto phi = sample_initial_history(mix_seed(s, 0x0d), spec, true);
        const auto traj = simulate(spec, phi, 30);
        if (!traj.valid) continue;
        ++instances;
        const HistoryGrid hg(spec.tau, gc.m_slices);
        const auto h0 = history_at(traj, hg, gc.m_slices);
        const auto cond = conditioning_for(spec, hg.delta_theta());
        const auto pred = oracle_predictor(spec, 1);
        const std::size_t K = traj.n_saves() - gc.m_slices;
        const auto r = rollout([&](const HistoryState& h) { return predict_step(pred, h, cond, 1); }, h0, K);
        bool ok = r.states.size() == K;
        for (std::size_t k = 0; ok && k < K; ++k) {
            const auto ref = history_at(traj, hg, gc.m_slices + k + 1);
            for (std::size_t i = 0; ok && i < ref.values().size(); ++i)
                ok = same_bits(ref.values()[i], r.states[k].values()[i]);
        }
        if (!ok) ++mismatched;
    }
    CheckResult r;
    r.passed = instances == 20 && mismatched == 0;
    r.detail = std::to_string(instances) + " delayed_rd instances, " + std::to_string(mismatched) +
               " rollouts differing from the reference at save points";
    return r;
}

CheckResult check_output_dim(const VerifyOptions&) {
    const SpatialGrid g(128, 1.0, Boundary::periodic);
    const BackboneConfig bb{16, 2, 8, 16};
    const auto hs = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 15, g, 1, bb, 1);
    const auto h2h = make_model({ModelType::history2history, CondMode::full}, Family::delayed_rd, 15, g, 1, bb, 1);
    const std::size_t d_hs = output_dim(ModelType::hs_fno, 1, 15, 128, 1);
    const std::size_t d_h2h = output_dim(ModelType::history2history, 1, 15, 128, 1);
    // the head really emits that many values
    const HistoryState h(HistoryGrid(1.0, 15), g, 1);
    const Conditioning c = cond_for(Family::delayed_rd, h, 1);
    const std::size_t emit_hs = learned_predictor(hs)(h, c).size();
    const std::size_t emit_h2h = learned_predictor(h2h)(h, c).size();
    CheckResult r;
    r.passed = d_hs == 128 && d_h2h == 2048 && d_h2h / d_hs == 16 && emit_hs == d_hs && emit_h2h == d_h2h &&
               parameter_count(h2h) > parameter_count(hs);
    r.detail = "M 15, n_x 128: head outputs " + std::to_string(emit_hs) + " vs " + std::to_string(emit_h2h) +
               ", parameters " + std::to_string(parameter_count(hs)) + " vs " + std::to_string(parameter_count(h2h));
    return r;
}

CheckResult check_metrics(const VerifyOptions&) {
    const SpatialGrid g(4, 1.0, Boundary::periodic);
    std::mt19937_64 rng(mix_seed(7, 0x94));
    const HistoryState ref(HistoryGrid(0.8, 2), g, 1, 0.0, randn(12, rng));
    HistoryState twice = ref;
    for (auto& v : twice.values()) v *= 2;
    std::vector<std::string> bad;
    auto expect = [&](const char* what, double got, double want) {
        if (!(std::abs(got - want) <= 1e-12)) bad.push_back(std::string(what) + "=" + fmt(got));
    };
    expect("one_perfect", metric_one_step({ref}, {ref}), 0.0);
    expect("hist_perfect", metric_hist({ref}, {ref}), 0.0);
    expect("semi_perfect", metric_semi({ref}, {ref}), 0.0);
    expect("roll_perfect", metric_roll({{ref, ref}}, {{ref, ref}}, 2).mean, 0.0);
    expect("one_doubled", metric_one_step({twice}, {ref}), 1.0);
    expect("hist_doubled", metric_hist({twice}, {ref}), 1.0);
    expect("semi_doubled", metric_semi({twice}, {ref}), 1.0);
    expect("roll_doubled", metric_roll({{twice, twice}}, {{ref, ref}}, 2).mean, 1.0);

    // hand cases on a constant-one history with two slices of four points
    const HistoryState ones(HistoryGrid(1.0, 1), g, 1, 0.0, std::vector<double>(8, 1.0));
    auto newest = [&](double v) {
        HistoryState h = ones;
        for (auto& x : h.slice(1)) x = v;
        return h;
    };
    expect("one_hand", metric_one_step({newest(1.1), newest(1.3)}, {ones, ones}), 0.2);
    expect("hist_hand", metric_hist({newest(1.2)}, {ones}), std::sqrt(0.02));
    const auto roll = metric_roll({{newest(1.1), newest(1.3)}}, {{ones, ones}}, 2);
    expect("roll_step1", roll.per_step[0], 0.1);
    expect("roll_step2", roll.per_step[1], 0.3);
    expect("roll_mean", roll.mean, 0.2);
    HistoryState half = ones;
    for (auto& v : half.values()) v = 1.5;
    expect("semi_hand", metric_semi({half}, {ones}), 0.5);
    const auto k1 = metric_roll({{newest(1.1)}, {newest(1.4)}}, {{ones}, {ones}}, 1);
    expect("roll_k1_vs_one", k1.mean, metric_one_step({newest(1.1), newest(1.4)}, {ones, ones}));

    CheckResult r;
    r.passed = bad.empty();
    r.detail = bad.empty() ? "perfect 0, doubled 1, hand cases and E_roll(K=1) = E_one within 1e-12" : "";
    for (const auto& b : bad) r.detail += b + " ";
    return r;
}

CheckResult check_overfit(const VerifyOptions&) {
    GridConfig gc;
    gc.n_x = 16;
    gc.m_slices = 3;
    std::vector<SupervisedPair> pairs;
    for (std::uint64_t s = 1; pairs.size() < 4; s += 10) {
        const auto t = generate_trajectory(s, Family::delayed_rd, default_ranges(Family::delayed_rd), gc, 5);
        if (t.valid) pairs.push_back(extract_pairs(t, HistoryGrid(t.spec.tau, 3), 1)[0]);
    }
    const auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 3,
                                  SpatialGrid(16, 1.0, Boundary::periodic), 1, {16, 2, 4, 8}, 1);
    TrainConfig c;
    c.epochs = 500;
    c.batch_size = 4;
    const double before = mean_objective(model, pairs, {}, c);
    const auto st = train(model, TrainData{pairs, {}, {}, {}}, c);
    const double after = mean_objective(st.model, pairs, {}, c);
    CheckResult r;
    r.passed = !st.diverged && after < 1e-4 * before;
    r.detail = "4 pairs, 500 epochs: loss " + fmt(before) + " -> " + fmt(after) + " (ratio " + fmt(after / before) +
               ", limit 1e-4)";
    return r;
}

}  // namespace

const std::vector<VerifyCheck>& verify_checks() {
    static const std::vector<VerifyCheck> checks{
        {"shift_append", 1, "transported history values are copied bit for bit", check_shift_append},
        {"spectral_adjoint", 2, "spectral conv backward equals the conjugate-transposed forward", check_spectral_adjoint},
        {"gradient", 2, "full-network gradient against central differences", check_gradient},
        {"temporal_convergence", 3, "first-order self-convergence in dt, all families", check_temporal_convergence},
        {"spatial_convergence", 3, "second-order self-convergence in dx, dirichlet delayed_rd", check_spatial_convergence},
        {"fixed_point", 3, "constant equilibrium of delayed_rd is preserved", check_fixed_point},
        {"solver_semigroup", 3, "restarting the solver at a save point is bit-exact", check_solver_semigroup},
        {"irreducible_risk", 4, "two-point irreducible risk bound", check_irreducible_risk},
        {"newest_slice_loss", 4, "history loss reduces to the newest-slice loss", check_newest_slice_loss},
        {"recurrence", 4, "rollout error recurrence bound", check_recurrence},
        {"oracle_recovery", 5, "solver as predictor reproduces the reference rollout", check_oracle_recovery},
        {"output_dim", 6, "head output sizes and parameter counts", check_output_dim},
        {"metrics", 7, "metric values on perfect, doubled and hand cases", check_metrics},
        {"overfit", 9, "training drives the loss on four pairs to near zero", check_overfit},
    };
    return checks;
}

CheckResult run_check(const std::string& name, const VerifyOptions& opts) {
    for (const auto& c : verify_checks()) {
        if (c.name != name) continue;
        const auto t0 = std::chrono::steady_clock::now();
        CheckResult r;
        try {
            r = c.run(opts);
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = std::string("exception: ") + e.what();
        }
        r.name = c.name;
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return r;
    }
    throw std::invalid_argument("unknown check: " + name);
}

std::vector<CheckResult> run_verify(const std::vector<std::string>& filters, const VerifyOptions& opts) {
    for (const auto& f : opts.inject_faults)
        if (std::find(kFaultable.begin(), kFaultable.end(), f) == kFaultable.end())
            throw std::invalid_argument("no fault hook for check: " + f);
    std::vector<std::string> selected;
    for (const auto& c : verify_checks()) {
        const bool hit = filters.empty() || std::any_of(filters.begin(), filters.end(), [&](const std::string& f) {
                             return c.name.find(f) != std::string::npos;
                         });
        if (hit) selected.push_back(c.name);
    }
    for (const auto& f : filters) {
        const bool used = std::any_of(selected.begin(), selected.end(),
                                      [&](const std::string& n) { return n.find(f) != std::string::npos; });
        if (!used) throw std::invalid_argument("filter matches no check: " + f);
    }
    std::vector<CheckResult> out;
    for (const auto& n : selected) out.push_back(run_check(n, opts));
    return out;
}

}  // namespace hsfno
