#include <doctest.h>

#include <cmath>

#include "hsfno/data_gen.hpp"
#include "hsfno/dpde_solvers.hpp"

using namespace hsfno;

namespace {

HistoryState constant_buffer(const BenchmarkSpec& spec, double c) {
    HistoryState h(HistoryGrid(spec.tau, spec.fine_slices()), spec.s_grid, spec.channels());
    for (auto& v : h.values()) v = c;
    return h;
}

}  // namespace

TEST_CASE("periodic laplacian of a sine") {
    const double L = 2.0;
    SpatialGrid g(32, L, Boundary::periodic);
    std::vector<double> u(32), want(32);
    const double k = 2 * M_PI / L;
    for (std::size_t i = 0; i < 32; ++i) {
        u[i] = std::sin(k * g.x(i));
        want[i] = -k * k * u[i];
    }
    const auto got = laplacian(u, g);
    for (std::size_t i = 0; i < 32; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-10);
}

TEST_CASE("laplacian of a constant vanishes") {
    for (auto b : {Boundary::periodic, Boundary::dirichlet, Boundary::neumann}) {
        SpatialGrid g(17, 1.0, b);
        const auto got = laplacian(std::vector<double>(17, 3.0), g);
        for (std::size_t i = 0; i < 17; ++i)
            if (b != Boundary::dirichlet) CHECK(std::abs(got[i]) < 1e-10);
        if (b == Boundary::dirichlet)
            for (std::size_t i = 1; i + 1 < 17; ++i) CHECK(std::abs(got[i]) < 1e-10);
    }
}

TEST_CASE("dirichlet stencil on a quadratic") {
    const double L = 1.5;
    SpatialGrid g(13, L, Boundary::dirichlet);
    std::vector<double> u(13);
    for (std::size_t i = 0; i < 13; ++i) u[i] = g.x(i) * (L - g.x(i));
    const auto got = laplacian(u, g);
    for (std::size_t i = 1; i + 1 < 13; ++i) CHECK(got[i] == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("rhs fixed points") {
    SpatialGrid g(16, 1.0, Boundary::periodic);
    auto rd = make_spec(DelayedRdParams{1e-3, 1.0}, 1.0, g, 0.01, 0.1);
    auto buf = constant_buffer(rd, 1.0);
    for (double v : rhs_eval(rd, buf.slice(buf.n_slices() - 1), buf, 0.0)) CHECK(std::abs(v) < 1e-14);

    auto ep = make_spec(EpidemicParams{1e-3, 1.0, 0.5, std::vector<double>(16, 1.0)}, 1.0, g, 0.01, 0.1);
    auto zero = constant_buffer(ep, 0.0);
    for (double v : rhs_eval(ep, zero.slice(zero.n_slices() - 1), zero, 0.0)) CHECK(v == 0.0);
}

TEST_CASE("distributed memory of a constant history") {
    SpatialGrid g(16, 1.0, Boundary::periodic);
    auto dm = make_spec(DistributedMemoryParams{0.0, 0.0, 1.0, 0.0, 3.0}, 1.0, g, 0.01, 0.1);
    const double c = 0.37;
    auto buf = constant_buffer(dm, c);
    for (double v : rhs_eval(dm, buf.slice(buf.n_slices() - 1), buf, 0.0)) CHECK(v == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("advance examples") {
    SpatialGrid g(16, 1.0, Boundary::periodic);
    auto rd = make_spec(DelayedRdParams{1e-3, 1.0}, 1.0, g, 0.01, 0.1);
    auto buf = constant_buffer(rd, 1.0);
    const auto next = advance(rd, buf);
    for (std::size_t i = 0; i < next.size(); ++i) CHECK(next[i] == buf.slice(buf.n_slices() - 1)[i]);

    auto decay = make_spec(EpidemicParams{0.0, 0.0, 1.0, std::vector<double>(16, 1.0)}, 1.0, g, 0.1, 0.1);
    auto ones = constant_buffer(decay, 1.0);
    for (double v : advance(decay, ones)) CHECK(v == doctest::Approx(0.9).epsilon(1e-14));

    auto bad = buf;
    bad.values()[3] = NAN;
    CHECK_THROWS(advance(rd, bad));
}

TEST_CASE("simulate preserves the equilibrium and rejects n_saves = 0") {
    SpatialGrid g(16, 1.0, Boundary::periodic);
    auto rd = make_spec(DelayedRdParams{1e-3, 1.0}, 1.0, g, 0.01, 0.1);
    HistoryState phi(HistoryGrid(1.0, 10), g, 1);
    for (auto& v : phi.values()) v = 1.0;
    auto traj = simulate(rd, phi, 20);
    CHECK(traj.valid);
    for (double v : traj.saved) CHECK(std::abs(v - 1.0) < 1e-12);
    CHECK_THROWS(simulate(rd, phi, 0));
}

TEST_CASE("spec validation") {
    SpatialGrid g(16, 1.0, Boundary::periodic);
    CHECK_THROWS(make_spec(DelayedRdParams{1e-3, 1.0}, 1.0, g, 0.03, 0.1));
    CHECK_THROWS(make_spec(DelayedRdParams{-1.0, 1.0}, 1.0, g, 0.01, 0.1));
    CHECK_THROWS(make_spec(DelayedRdParams{1.0, 1.0}, 1.0, g, 0.01, 0.1));  // unstable
    CHECK_THROWS(make_spec(EpidemicParams{1e-3, 1, 1, {}}, 1.0, g, 0.01, 0.1));
}

TEST_CASE("simulation is deterministic and a semigroup when save_dt = solver_dt") {
    int exercised = 0;
    for (Family f : all_families()) {
        GridConfig gc;
        gc.n_x = 16;
        gc.m_slices = 16;
        auto spec = sample_spec(mix_seed(42, static_cast<std::uint64_t>(f)), f, default_ranges(f), gc);
        spec.solver_dt = spec.save_dt;
        if (spec.solver_dt > max_stable_dt(spec)) continue;
        const auto phi = sample_initial_history(7, spec, default_nonneg(f));
        const auto a = simulate(spec, phi, 40);
        const auto b = simulate(spec, phi, 40);
        CHECK(a.saved == b.saved);
        if (!a.valid) continue;

        // restart from the 20-step history
        const HistoryGrid hg(spec.tau, spec.save_slices());
        const auto mid = history_at(a, hg, 20);
        const auto c = simulate(spec, mid, 20);
        const std::size_t s = a.slice_size();
        for (std::size_t k = 0; k < 20 * s; ++k) REQUIRE(c.saved[k] == a.saved[20 * s + k]);
        ++exercised;
    }
    CHECK(exercised >= 4);
}
