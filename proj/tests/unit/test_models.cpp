#include <doctest.h>

#include <cmath>
#include <random>

#include "hsfno/models.hpp"

using namespace hsfno;

namespace {

const SpatialGrid kGrid(16, 1.0, Boundary::periodic);
const BackboneConfig kTiny{6, 2, 3, 5};

HistoryState random_history(std::size_t M, std::size_t C, std::uint64_t seed, double tau = 0.8) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    HistoryState h(HistoryGrid(tau, M), kGrid, C, 2.0);
    for (auto& v : h.values()) v = nd(rng);
    return h;
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

}  // namespace

TEST_CASE("input channel counts") {
    CHECK(input_channels({ModelType::hs_fno, CondMode::none}, Family::delayed_rd) == 3);
    CHECK(input_channels({ModelType::hs_fno, CondMode::full}, Family::delayed_rd) == 3 + 4);
    CHECK(input_channels({ModelType::hs_fno, CondMode::no_delay}, Family::delayed_rd) == 3 + 2);
    CHECK(input_channels({ModelType::lag_stack, CondMode::full}, Family::delayed_rd) == 8);
    CHECK(input_channels({ModelType::hs_fno, CondMode::full}, Family::epidemic) == 1 + 2 + 3 + 2 + 1);
    CHECK(input_channels({ModelType::hs_fno, CondMode::full}, Family::delayed_wave) == 2 + 2 + 2 + 2);

    auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::epidemic, 7, kGrid, 1, kTiny, 1);
    const auto h = random_history(7, 1, 1);
    CHECK(assemble_input(model, h, cond_for(Family::epidemic, h, 1)).shape == Shape{9, 8, 16});
    auto bad = cond_for(Family::epidemic, h, 1);
    bad.mu.pop_back();
    CHECK_THROWS(assemble_input(model, h, bad));
}

TEST_CASE("current_state replicates the newest slice") {
    auto model = make_model({ModelType::current_state, CondMode::full}, Family::delayed_rd, 7, kGrid, 1, kTiny, 1);
    const auto h = random_history(7, 1, 2);
    const auto t = assemble_input(model, h, cond_for(Family::delayed_rd, h, 1));
    for (std::size_t j = 0; j < 8; ++j)
        for (std::size_t i = 0; i < 16; ++i) CHECK(t.data[j * 16 + i] == h.at(7, 0, i));
}

TEST_CASE("lag_stack masks hidden rows") {
    ModelKind kind{ModelType::lag_stack, CondMode::full};
    CHECK(lag_rows(kind, 7) == std::vector<std::size_t>{7, 4, 1});
    CHECK(lag_rows({ModelType::lag_stack, CondMode::full, 2, 2}, 7) == std::vector<std::size_t>{7, 5});
    CHECK_THROWS(lag_rows({ModelType::lag_stack, CondMode::full, 4, 3}, 7));
    auto model = make_model(kind, Family::delayed_rd, 7, kGrid, 1, kTiny, 1);
    const auto h = random_history(7, 1, 3);
    const auto t = assemble_input(model, h, cond_for(Family::delayed_rd, h, 1));
    for (std::size_t j = 0; j < 8; ++j) {
        const bool seen = j == 7 || j == 4 || j == 1;
        CHECK(t.data[128 + j * 16] == (seen ? 1.0 : 0.0));
        CHECK(t.data[j * 16 + 5] == (seen ? h.at(j, 0, 5) : 0.0));
    }
}

TEST_CASE("hs_fno head contract") {
    for (std::size_t m : {1u, 3u}) {
        auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_wave, 7, kGrid, m, kTiny, 4);
        const auto h = random_history(7, 2, 5);
        const auto cond = cond_for(Family::delayed_wave, h, m);
        const auto next = predict_step(model, h, cond);
        const std::size_t S = h.slice_size();
        for (std::size_t j = 0; j + m <= 7; ++j)
            for (std::size_t q = 0; q < S; ++q) REQUIRE(next.slice(j)[q] == h.slice(j + m)[q]);
        CHECK(next.t_now() == doctest::Approx(h.t_now() + m * h.h_grid().delta_theta()));

        std::fill(model.params.proj2_w.begin(), model.params.proj2_w.end(), 0.0);
        std::fill(model.params.proj2_b.begin(), model.params.proj2_b.end(), 0.0);
        const auto zero_next = predict_step(model, h, cond);
        const auto want = shift_append(h, std::vector<double>(m * S, 0.0), m);
        CHECK(std::equal(zero_next.values().begin(), zero_next.values().end(), want.values().begin()));

        auto off = cond;
        off.dt *= 1.5;
        CHECK_THROWS(predict_step(model, h, off));
    }
}

TEST_CASE("history2history replaces the whole window") {
    auto model = make_model({ModelType::history2history, CondMode::full}, Family::delayed_rd, 7, kGrid, 1, kTiny, 4);
    std::fill(model.params.proj2_w.begin(), model.params.proj2_w.end(), 0.0);
    const auto h = random_history(7, 1, 6);
    const auto next = predict_step(model, h, cond_for(Family::delayed_rd, h, 1));
    for (double v : next.values()) CHECK(v == 0.0);
}

TEST_CASE("output dimensions and head sizes") {
    CHECK(output_dim(ModelType::hs_fno, 1, 15, 128, 1) == 128);
    CHECK(output_dim(ModelType::history2history, 1, 15, 128, 1) == 2048);
    CHECK(output_dim(ModelType::history2history, 1, 15, 128, 1) / output_dim(ModelType::hs_fno, 1, 15, 128, 1) == 16);
    CHECK(output_dim(ModelType::hs_fno, 1, 15, 128, 15) == output_dim(ModelType::history2history, 1, 15, 128, 1) - 128);

    const SpatialGrid g(32, 1.0, Boundary::periodic);
    for (std::size_t m : {1u, 3u}) {
        auto hs = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 15, g, m, kTiny, 1);
        auto h2h = make_model({ModelType::history2history, CondMode::full}, Family::delayed_rd, 15, g, m, kTiny, 1);
        CHECK(parameter_count(h2h) > parameter_count(hs));
        CHECK(head_parameter_count(h2h) * m == head_parameter_count(hs) * 16);
    }
}

TEST_CASE("rollout") {
    auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 7, kGrid, 1, kTiny, 9);
    const auto h = random_history(7, 1, 7);
    const auto cond = cond_for(Family::delayed_rd, h, 1);
    const auto r1 = rollout(model, h, cond, 1);
    REQUIRE(r1.states.size() == 1);
    const auto one = predict_step(model, h, cond);
    CHECK(std::equal(one.values().begin(), one.values().end(), r1.states[0].values().begin()));
    CHECK_THROWS(rollout(model, h, cond, 0));

    int calls = 0;
    SlicePredictor nan_at_2 = [&](const HistoryState& s, const Conditioning&) {
        ++calls;
        return std::vector<double>(s.slice_size(), calls == 2 ? std::nan("") : 0.5);
    };
    const auto r = rollout([&](const HistoryState& s) { return predict_step(nan_at_2, s, cond, 1); }, h, 5);
    CHECK(r.truncated);
    CHECK(r.truncated_at == 2);
    CHECK(r.states.size() == 1);
}

TEST_CASE("oracle predictor recovers the reference trajectory") {
    GridConfig gc;
    gc.n_x = 16;
    gc.m_slices = 8;
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto spec = sample_spec(s, Family::delayed_rd, default_ranges(Family::delayed_rd), gc);
        spec.solver_dt = spec.save_dt;
        const auto phi = sample_initial_history(s, spec, true);
        const auto traj = simulate(spec, phi, 20);
        REQUIRE(traj.valid);
        const HistoryGrid hg(spec.tau, 8);
        const auto h0 = history_at(traj, hg, 8);
        const auto cond = conditioning_for(spec, hg.delta_theta());
        const auto pred = oracle_predictor(spec, 1);
        const auto r = rollout([&](const HistoryState& h) { return predict_step(pred, h, cond, 1); }, h0, 12);
        REQUIRE(r.states.size() == 12);
        for (std::size_t k = 0; k < 12; ++k) {
            const auto ref = history_at(traj, hg, 8 + k + 1);
            REQUIRE(std::equal(ref.values().begin(), ref.values().end(), r.states[k].values().begin()));
        }
    }
}

TEST_CASE("lag_stack cannot see hidden slices") {
    GridConfig gc;
    gc.n_x = 16;
    gc.m_slices = 7;
    auto spec = sample_spec(3, Family::delayed_rd, default_ranges(Family::delayed_rd), gc);
    spec.solver_dt = spec.save_dt;
    auto model = make_model({ModelType::lag_stack, CondMode::full}, Family::delayed_rd, 7, spec.s_grid, 1, kTiny, 1);
    const auto a = sample_initial_history(1, spec, true);
    auto b = a;
    for (auto& v : b.slice(0)) v += 0.2;   // row 0 is not a lag row
    const auto cond = conditioning_for(spec, a.h_grid().delta_theta());
    CHECK(assemble_input(model, a, cond) == assemble_input(model, b, cond));
    const auto pred = oracle_predictor(spec, 1);
    CHECK(pred(a, cond) != pred(b, cond));
}

TEST_CASE("advance_slices takes partial heads") {
    auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 7, kGrid, 3, kTiny, 2);
    const auto h = random_history(7, 1, 8);
    const auto cond = cond_for(Family::delayed_rd, h, 3);
    const auto full = predict_step(model, h, cond);
    const auto two = advance_slices(model, h, cond, 2);
    // first two predicted slices agree with the full head
    for (std::size_t q = 0; q < 16; ++q) {
        CHECK(two.slice(6)[q] == full.slice(5)[q]);
        CHECK(two.slice(7)[q] == full.slice(6)[q]);
    }
    const auto five = advance_slices(model, h, cond, 5);
    const auto five_ref = advance_slices(model, full, cond, 2);
    CHECK(std::equal(five.values().begin(), five.values().end(), five_ref.values().begin()));
}

TEST_CASE("step_backward matches finite differences") {
    for (ModelType t : all_model_types()) {
        const std::size_t m = t == ModelType::history2history ? 1 : 2;
        const std::size_t used = t == ModelType::history2history ? 8 : 2;
        auto model = make_model({t, CondMode::full}, Family::delayed_rd, 7, kGrid, m, {4, 2, 3, 4}, 11);
        const auto h0 = random_history(7, 1, 12);
        const auto cond = cond_for(Family::delayed_rd, h0, m);
        std::mt19937_64 rng(13);
        std::normal_distribution<double> nd;
        std::vector<double> g(h0.values().size());
        for (auto& v : g) v = nd(rng);

        const std::size_t np = model.params.count();
        std::vector<double> z = model.params.flatten();
        z.insert(z.end(), h0.values().begin(), h0.values().end());
        FlatObjective f = [&](const std::vector<double>& v, std::vector<double>* grad) {
            SurrogateModel mm = model;
            mm.params.assign(std::span<const double>(v.data(), np));
            HistoryState h(h0.h_grid(), h0.s_grid(), 1, h0.t_now(), std::vector<double>(v.begin() + np, v.end()));
            StepTape tape{h, 0, {}};
            const auto next = step_forward(mm, h, cond, used, tape);
            double s = 0;
            for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * next.values()[i];
            if (grad) {
                FNOParams gp = zeros_like(mm.params);
                const auto gh = step_backward(mm, tape, g, gp);
                *grad = gp.flatten();
                grad->insert(grad->end(), gh.begin(), gh.end());
            }
            return s;
        };
        INFO(to_string(t));
        CHECK(grad_check(z, f, 1e-5, 400, 3) < 1e-5);
    }
}

TEST_CASE("model checkpoint round trip") {
    auto model = make_model({ModelType::lag_stack, CondMode::no_delay, 3, 2}, Family::epidemic, 7, kGrid, 2, kTiny, 5);
    const auto back = from_checkpoint(decode_checkpoint(encode_checkpoint(to_checkpoint(model))));
    CHECK(back.kind == model.kind);
    CHECK(back.family == model.family);
    CHECK(back.m == 2);
    CHECK(back.m_slices == 7);
    CHECK(back.params == model.params);
}
