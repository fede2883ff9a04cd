#include <doctest.h>

#include <cmath>
#include <random>

#include "hsfno/train_eval.hpp"

using namespace hsfno;

namespace {

const SpatialGrid kGrid4(4, 1.0, Boundary::periodic);
const SpatialGrid kGrid16(16, 1.0, Boundary::periodic);
const BackboneConfig kTiny{6, 2, 3, 5};

Conditioning cond_rd(const HistoryState& h, std::size_t m) {
    Conditioning c;
    c.family = Family::delayed_rd;
    c.mu.assign(mu_names_for(Family::delayed_rd).size(), 0.3);
    c.tau = h.h_grid().tau();
    c.dt = static_cast<double>(m) * h.h_grid().delta_theta();
    return c;
}

// Zero network: every head slice is the constant proj2 bias of its block.
SurrogateModel bias_model(std::size_t M, std::size_t m, std::vector<double> biases) {
    auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, M, kGrid4, m, {4, 1, 1, 1}, 0);
    model.params = zeros_like(model.params);
    model.params.proj2_b = std::move(biases);
    return model;
}

HistoryState hist(std::size_t M, std::vector<double> v, const SpatialGrid& g = kGrid4) {
    return HistoryState(HistoryGrid(1.0, M), g, 1, 0.0, std::move(v));
}

HistoryState random_history(std::size_t M, std::uint64_t seed, const SpatialGrid& g) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    HistoryState h(HistoryGrid(0.8, M), g, 1, 0.0);
    for (auto& v : h.values()) v = nd(rng);
    return h;
}

std::vector<SupervisedPair> rd_pairs(std::size_t M, std::size_t count, std::uint64_t seed) {
    GridConfig g;
    g.n_x = 16;
    g.m_slices = M;
    std::vector<SupervisedPair> out;
    for (std::uint64_t s = seed; out.size() < count; ++s) {
        auto traj = generate_trajectory(s, Family::delayed_rd, default_ranges(Family::delayed_rd), g, M + 4);
        auto p = extract_pairs(traj, HistoryGrid(traj.spec.tau, M), 1, s);
        for (auto& x : p)
            if (out.size() < count) out.push_back(std::move(x));
    }
    return out;
}

Trajectory valid_rd(std::uint64_t seed, std::size_t M, std::size_t n_saves) {
    GridConfig g;
    g.n_x = 16;
    g.m_slices = M;
    for (;; ++seed) {
        auto t = generate_trajectory(seed, Family::delayed_rd, default_ranges(Family::delayed_rd), g, n_saves);
        if (t.valid) return t;
    }
}

FlatObjective param_objective(SurrogateModel& model, std::function<double(FNOParams*)> loss) {
    return [&model, loss](const std::vector<double>& z, std::vector<double>* grad) {
        model.params.assign(z);
        if (!grad) return loss(nullptr);
        FNOParams g = zeros_like(model.params);
        const double l = loss(&g);
        *grad = g.flatten();
        return l;
    };
}

}  // namespace

TEST_CASE("loss_data hand case and transported terms") {
    // M = 1: history rows (r0, r1); prediction (r1, b); target (r1, t)
    auto model = bias_model(1, 1, {0.5});
    SupervisedPair p{hist(1, {9, 9, 9, 9, 1, 1, 1, 1}), {}, 1, {1, 2, 3, 4}, hist(1, {1, 1, 1, 1, 1, 2, 3, 4}), 0};
    p.cond = cond_rd(p.history, 1);
    CHECK(loss_data(model, p) == doctest::Approx(21.0 / 8.0).epsilon(1e-15));

    p.target_history = hist(1, {1, 1, 1, 1, 0.5, 0.5, 0.5, 0.5});
    CHECK(loss_data(model, p) == 0.0);
}

TEST_CASE("loss_rollout hand case and K = 1 reduction") {
    auto model = bias_model(1, 1, {2.0});
    RolloutWindow w{hist(1, {0, 0, 0, 0, 1, 1, 1, 1}), {}, 1,
                    {hist(1, {1, 1, 1, 1, 3, 3, 3, 3}), hist(1, {0, 0, 0, 0, 0, 0, 0, 0})}, 0};
    w.cond = cond_rd(w.history, 1);
    // step 1 = (1, 2): mse 1/2; step 2 = (2, 2): mse 4
    CHECK(loss_rollout(model, w, {1.0, 1.0}) == doctest::Approx(4.5).epsilon(1e-15));
    CHECK(loss_rollout(model, w, {2.0, 0.5}) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK_THROWS(loss_rollout(model, w, {1.0, 1.0, 1.0}));
    CHECK_THROWS(loss_rollout(model, w, {-1.0}));

    auto rnd = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 3, kGrid16, 1, kTiny, 2);
    SupervisedPair p{random_history(3, 1, kGrid16), {}, 1, {}, random_history(3, 2, kGrid16), 0};
    p.cond = cond_rd(p.history, 1);
    RolloutWindow one{p.history, p.cond, 1, {p.target_history}, 0};
    FNOParams ga = zeros_like(rnd.params), gb = zeros_like(rnd.params);
    CHECK(loss_rollout(rnd, one, {1.0}, &ga) == loss_data(rnd, p, &gb));
    CHECK(ga == gb);
}

TEST_CASE("loss_semi") {
    // m = 2 head with biases (1, 3): two unit steps append (1, 1), one double step (1, 3)
    auto model = bias_model(3, 2, {1.0, 3.0});
    const auto h = random_history(3, 4, kGrid4);
    auto cond = cond_rd(h, 2);
    CHECK(loss_semi(model, h, cond, 1, 1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(loss_semi(model, h, cond, 2, 2) == 0.0);
    CHECK_THROWS(loss_semi(model, h, cond, 0, 1));

    auto single = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 3, kGrid16, 1, kTiny, 3);
    const auto h16 = random_history(3, 5, kGrid16);
    CHECK(loss_semi(single, h16, cond_rd(h16, 1), 1, 1) == 0.0);

    auto h2h = make_model({ModelType::history2history, CondMode::full}, Family::delayed_rd, 3, kGrid16, 2, kTiny, 3);
    CHECK_THROWS(loss_semi(h2h, h16, cond_rd(h16, 2), 1, 1));
}

TEST_CASE("loss gradients match finite differences") {
    auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 3, kGrid16, 2, kTiny, 7);
    const auto h = random_history(3, 8, kGrid16);
    const auto cond = cond_rd(h, 2);
    RolloutWindow w{h, cond, 2, {random_history(3, 9, kGrid16), random_history(3, 10, kGrid16)}, 0};
    const auto z = model.params.flatten();

    auto roll = param_objective(model, [&](FNOParams* g) { return loss_rollout(model, w, {1.0, 0.7}, g); });
    CHECK(grad_check(z, roll, 1e-4, 300, 1) < 1e-5);
    auto semi = param_objective(model, [&](FNOParams* g) { return loss_semi(model, h, cond, 1, 1, g); });
    CHECK(grad_check(z, semi, 1e-4, 300, 2) < 1e-5);
}

TEST_CASE("train config") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.rollout_weights() == std::vector<double>{1, 1, 1});
    CHECK(train_config_from_json(to_json(c)).rollout_weights() == c.rollout_weights());
    TrainConfig z = c;
    z.lambda_data = 0;
    CHECK_THROWS(z.validate());
    z = c;
    z.w_k = {1, -1, 1};
    CHECK_THROWS(z.validate());
    CHECK_THROWS(train_config_from_json(nlohmann::json{{"bogus", 1}}));
    CHECK_THROWS(train_config_from_json(nlohmann::json{{"lr_schedule", "step"}}));
    const auto s = train_config_from_json(nlohmann::json{{"lr_schedule", "step"}, {"decay_every", 5}});
    CHECK(s.decay_every == 5);
}

TEST_CASE("training loop") {
    const auto pairs = rd_pairs(3, 6, 1);
    TrainData data{{pairs.begin(), pairs.begin() + 4}, {pairs.begin() + 4, pairs.end()}, {}, {}};
    auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 3, kGrid16, 1, kTiny, 11);

    SUBCASE("lr = 0 leaves parameters unchanged") {
        TrainConfig c;
        c.epochs = 1;
        c.lr = 0.0;
        TrainData one{{pairs.front()}, {}, {}, {}};
        const auto st = train(model, one, c);
        CHECK(st.model.params == model.params);
        CHECK(st.steps == 1);
        CHECK(st.log.size() == 2);
    }

    SUBCASE("empty dataset") {
        CHECK_THROWS(train(model, TrainData{}, TrainConfig{}));
    }

    SUBCASE("same seed gives identical logs and parameters") {
        TrainConfig c;
        c.epochs = 3;
        c.batch_size = 3;
        const auto a = train(model, data, c);
        const auto b = train(model, data, c);
        REQUIRE(a.log.size() == 6);
        for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
        CHECK(a.model.params == b.model.params);
        c.seed = 1;
        CHECK_FALSE(train(model, data, c).model.params == a.model.params);
    }

    SUBCASE("resume reproduces the uninterrupted run") {
        TrainConfig c;
        c.epochs = 4;
        c.batch_size = 3;
        c.decay_every = 3;
        const auto full = train(model, data, c);
        auto st = start_training(model, c);
        train_epochs(st, data, c, 2);
        CHECK(st.epoch == 2);
        auto resumed = train_state_from_checkpoint(decode_checkpoint(encode_checkpoint(train_state_checkpoint(st))));
        train_epochs(resumed, data, c);
        CHECK(resumed.finished);
        CHECK(resumed.model.params == full.model.params);
        CHECK(resumed.best_params == full.best_params);
        CHECK(loss_log_csv(resumed.log) == loss_log_csv(full.log));
    }

    SUBCASE("step cap and best-validation retention") {
        TrainConfig c;
        c.epochs = 100;
        c.max_steps = 5;
        c.batch_size = 2;
        const auto st = train(model, data, c);
        CHECK(st.steps == 5);
        CHECK(st.finished);
        double best = INFINITY;
        for (const auto& r : st.log)
            if (r.split == "val") best = std::min(best, r.loss);
        CHECK(st.best_val == best);
    }

    SUBCASE("rollout and semiflow terms train") {
        const auto traj = valid_rd(3, 3, 10);
        TrainData d = data;
        d.train_windows = extract_windows(traj, HistoryGrid(traj.spec.tau, 3), 1, 2);
        TrainConfig c;
        c.epochs = 2;
        c.lambda_rollout = 0.5;
        c.lambda_semi = 0.1;
        c.k_train = 2;
        const auto st = train(model, d, c);
        CHECK_FALSE(st.diverged);
        CHECK(std::isfinite(st.log.back().loss));
    }

    SUBCASE("divergence is reported") {
        TrainConfig c;
        c.epochs = 5;
        c.lr = 1e300;
        const auto st = train(model, data, c);
        CHECK(st.diverged);
        CHECK(std::isnan(st.log.back().loss));
    }
}

TEST_CASE("metrics on perfect, doubled and hand cases") {
    const auto ref = random_history(2, 1, kGrid4);
    HistoryState twice = ref;
    for (auto& v : twice.values()) v *= 2;
    CHECK(metric_one_step({ref}, {ref}) == 0.0);
    CHECK(metric_hist({ref}, {ref}) == 0.0);
    CHECK(metric_one_step({twice}, {ref}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(metric_hist({twice}, {ref}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(metric_semi({twice}, {ref}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(metric_semi({ref}, {ref}) == 0.0);

    const auto ones = hist(1, std::vector<double>(8, 1.0));
    auto step1 = ones, step2 = ones;
    for (auto& v : step1.slice(1)) v = 1.1;
    for (auto& v : step2.slice(1)) v = 1.3;
    const auto roll = metric_roll({{step1, step2}}, {{ones, ones}}, 2);
    CHECK(std::abs(roll.per_step[0] - 0.1) < 1e-12);
    CHECK(std::abs(roll.per_step[1] - 0.3) < 1e-12);
    CHECK(std::abs(roll.mean - 0.2) < 1e-12);

    const auto k1 = metric_roll({{step1}, {step2}}, {{ones}, {ones}}, 1);
    CHECK(std::abs(k1.mean - metric_one_step({step1, step2}, {ones, ones})) < 1e-12);

    const auto trunc = metric_roll({{step1}}, {{ones, ones}}, 2);
    CHECK(std::isinf(trunc.per_step[1]));
    CHECK_THROWS(metric_roll({{step1}}, {{ones}}, 2));
    CHECK_THROWS(relative_slice_error(std::vector<double>{1.0}, std::vector<double>{0.0}));
}

TEST_CASE("evaluate_model") {
    const auto traj = valid_rd(5, 3, 12);
    const HistoryGrid hg(traj.spec.tau, 3);
    const auto pairs = extract_pairs(traj, hg, 1);
    const auto windows = extract_windows(traj, hg, 1, 3);
    for (ModelType t : all_model_types()) {
        auto model = make_model({t, CondMode::full}, Family::delayed_rd, 3, kGrid16, 1, kTiny, 2);
        const auto c = evaluate_model(model, pairs, windows, 3);
        CHECK(c.e_one >= 0.0);
        CHECK(c.e_hist >= 0.0);
        REQUIRE(c.e_roll.per_step.size() == 3);
        CHECK(c.e_roll.mean >= 0.0);
        if (t != ModelType::history2history) CHECK(c.e_semi == 0.0);
        const auto k1 = evaluate_model(model, pairs, {windows.begin(), windows.end()}, 1);
        CHECK(k1.e_roll.per_step.size() == 1);
    }
    auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 3, kGrid16, 1, kTiny, 2);
    // E_roll at K = 1 on the windows' own first steps equals E_one on those pairs
    std::vector<SupervisedPair> first;
    for (const auto& w : windows) first.push_back({w.history, w.cond, 1, {}, w.targets[0], 0});
    const auto a = evaluate_model(model, first, windows, 1);
    CHECK(std::abs(a.e_roll.mean - a.e_one) < 1e-12);
}

TEST_CASE("bootstrap confidence intervals") {
    const auto c = bootstrap_ci({0.3, 0.3, 0.3, 0.3});
    CHECK(c.lo == 0.3);
    CHECK(c.mean == 0.3);
    CHECK(c.hi == 0.3);
    const auto single = bootstrap_ci({0.7});
    CHECK((single.lo == 0.7 && single.mean == 0.7 && single.hi == 0.7));
    const auto two = bootstrap_ci({0.0, 1.0});
    CHECK(two.mean == 0.5);
    CHECK(two.lo >= 0.0);
    CHECK(two.hi <= 1.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> v(5);
        for (auto& x : v) x = u(rng);
        const auto ci = bootstrap_ci(v, 2000, 0.95, t);
        CHECK(ci.lo <= ci.mean);
        CHECK(ci.mean <= ci.hi);
    }
    CHECK(bootstrap_ci({0.1, 0.5, 0.2}, 500, 0.9, 4).lo == bootstrap_ci({0.1, 0.5, 0.2}, 500, 0.9, 4).lo);
    CHECK_THROWS(bootstrap_ci({}));
}

TEST_CASE("report aggregation and round trip") {
    auto cell = [](std::string fam, std::uint64_t seed, double v) {
        EvalCell c{"hs_fno", std::move(fam), "in_distribution", seed, {}};
        c.metrics.e_one = v;
        c.metrics.e_hist = v;
        c.metrics.e_roll.per_step = {v, 2 * v};
        c.metrics.e_roll.mean = 1.5 * v;
        c.metrics.e_semi = 0;
        return c;
    };
    const auto one = build_report({cell("delayed_rd", 0, 0.25)}, {});
    for (const auto& a : one.aggregates)
        if (a.metric == "e_one") {
            CHECK(a.ci.mean == 0.25);
            CHECK(a.ci.lo == 0.25);
        }
    const auto two = build_report({cell("delayed_rd", 0, 0.2), cell("epidemic", 0, 0.6)}, {});
    for (const auto& a : two.aggregates)
        if (a.metric == "e_one") CHECK(a.ci.mean == doctest::Approx(0.4).epsilon(1e-15));

    // regimes are aggregated separately
    auto shifted = cell("delayed_rd", 0, 0.9);
    shifted.regime = "long_delay";
    const auto split = build_report({cell("delayed_rd", 0, 0.2), shifted}, {});
    std::size_t e_one_groups = 0;
    for (const auto& a : split.aggregates)
        if (a.metric == "e_one") {
            ++e_one_groups;
            CHECK(a.ci.mean == (a.regime == "long_delay" ? 0.9 : 0.2));
        }
    CHECK(e_one_groups == 2);

    auto inf_cell = cell("neural_field", 1, INFINITY);
    auto rep = build_report({cell("delayed_rd", 0, 0.2), inf_cell}, {{"hs_fno", {10, 20, 30}}});
    const auto csv = report_csv(rep);
    CHECK(csv.rfind("model,family,regime,seed,metric,step,value\n", 0) == 0);
    CHECK(csv.find("hs_fno,delayed_rd,in_distribution,0,e_roll,2,0.40000000000000002") != std::string::npos);
    const auto back = report_from_json(nlohmann::json::parse(report_json(rep).dump()));
    CHECK(back.rows == rep.rows);
    CHECK(back.efficiency == rep.efficiency);
    REQUIRE(back.aggregates.size() == rep.aggregates.size());
    CHECK(report_json(back).dump() == report_json(rep).dump());
}

TEST_CASE("efficiency accounting") {
    auto a = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 3, kGrid16, 1, kTiny, 2);
    auto b = make_model({ModelType::history2history, CondMode::full}, Family::delayed_rd, 3, kGrid16, 1, kTiny, 2);
    CHECK(peak_memory_estimate(b) > peak_memory_estimate(a));
    const auto h = random_history(3, 1, kGrid16);
    CHECK(time_predict_step(a, h, cond_rd(h, 1)) > 0.0);
}

TEST_CASE("overfits four pairs") {
    std::vector<SupervisedPair> pairs;
    for (std::uint64_t s = 1; pairs.size() < 4; s += 10) {
        const auto t = valid_rd(s, 3, 5);
        pairs.push_back(extract_pairs(t, HistoryGrid(t.spec.tau, 3), 1)[0]);
    }
    auto model = make_model({ModelType::hs_fno, CondMode::full}, Family::delayed_rd, 3, kGrid16, 1, {16, 2, 4, 8}, 1);
    TrainConfig c;
    c.epochs = 500;
    c.batch_size = 4;
    const double before = mean_objective(model, pairs, {}, c);
    const auto st = train(model, TrainData{pairs, {}, {}, {}}, c);
    CHECK(mean_objective(st.model, pairs, {}, c) < 1e-4 * before);
}
