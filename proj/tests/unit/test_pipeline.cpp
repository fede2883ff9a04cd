#include <doctest.h>

#include "hsfno/pipeline.hpp"

using namespace hsfno;
using json = nlohmann::json;

TEST_CASE("run config defaults, overrides and round trip") {
    const auto d = run_config_from_json(json::object());
    CHECK(d.families == std::vector<Family>{Family::delayed_rd});
    CHECK(d.train_regime == "in_distribution");
    CHECK(d.models.size() == 1);

    const auto j = json::parse(R"({
        "families": ["delayed_rd", "epidemic"],
        "ranges": {"delayed_rd": {"D": [2e-4, 3e-4]}},
        "regimes": {"in_distribution": {}, "long_delay": {"delayed_rd": {"tau": [1.5, 2.0]}}},
        "grid": {"n_x": 32, "history_slices": 5, "boundary": "dirichlet"},
        "counts": {"trajectories": 10, "n_saves": 20, "seeds": 3},
        "models": ["hs_fno", {"name": "lags", "type": "lag_stack", "n_lags": 2, "conditioning": "none"}],
        "train": {"epochs": 3},
        "eval": {"K": 4, "semi_pairs": [[1, 1]]}
    })");
    const auto c = run_config_from_json(j);
    CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(c.grid.boundary == Boundary::dirichlet);
    CHECK(c.model("lags").kind.type == ModelType::lag_stack);
    CHECK(c.model("lags").kind.cond == CondMode::none);
    CHECK(c.model("lags").kind.n_lags == 2);
    CHECK(c.eval_k == 4);

    const auto in = c.ranges_for(Family::delayed_rd, "in_distribution");
    CHECK(in.get("D") == Interval{2e-4, 3e-4});
    CHECK(in.get("tau") == default_ranges(Family::delayed_rd).get("tau"));
    const auto shifted = c.ranges_for(Family::delayed_rd, "long_delay");
    CHECK(shifted.get("tau") == Interval{1.5, 2.0});
    CHECK(shifted.get("D") == Interval{2e-4, 3e-4});
    CHECK(c.ranges_for(Family::epidemic, "long_delay").get("tau") == default_ranges(Family::epidemic).get("tau"));
    CHECK_THROWS_AS(c.ranges_for(Family::delayed_rd, "nope"), ConfigError);

    const auto again = run_config_from_json(to_json(c));
    CHECK(to_json(again).dump() == to_json(c).dump());
}

TEST_CASE("run config rejects bad input") {
    auto bad = [](const char* text) { CHECK_THROWS_AS(run_config_from_json(json::parse(text)), ConfigError); };
    bad(R"({"famlies": ["delayed_rd"]})");
    bad(R"({"families": ["no_such_family"]})");
    bad(R"({"grid": {"nx": 8}})");
    bad(R"({"ranges": {"delayed_rd": {"beta": [0, 1]}}})");
    bad(R"({"ranges": {"delayed_rd": {"D": [2, 1]}}})");
    bad(R"({"models": ["no_such_model"]})");
    bad(R"({"models": ["hs_fno", "hs_fno"]})");
    bad(R"({"splits": [0.5, 0.5, 0.5]})");
    bad(R"({"train_regime": "elsewhere"})");
    bad(R"({"train": {"lr": -1}})");
    bad(R"({"train": {"unknown": 1}})");
    bad(R"({"counts": {"n_saves": 5}, "grid": {"history_slices": 7}})");
    bad(R"({"m": 2, "models": ["history2history"]})");
}

TEST_CASE("trajectory seeds and generation") {
    RunConfig c = run_config_from_json(json::parse(R"({
        "grid": {"n_x": 16, "history_slices": 3},
        "counts": {"trajectories": 6, "n_saves": 8},
        "regimes": {"in_distribution": {}, "long_delay": {"delayed_rd": {"tau": [1.5, 2.0]}}}
    })"));
    const auto s0 = trajectory_seed(c, Family::delayed_rd, "in_distribution", 0);
    CHECK(s0 == trajectory_seed(c, Family::delayed_rd, "in_distribution", 0));
    CHECK(s0 != trajectory_seed(c, Family::delayed_rd, "in_distribution", 1));
    CHECK(s0 != trajectory_seed(c, Family::delayed_rd, "long_delay", 0));
    CHECK(s0 != trajectory_seed(c, Family::epidemic, "in_distribution", 0));

    const auto a = generate_family(c, Family::delayed_rd, "long_delay", 1);
    const auto b = generate_family(c, Family::delayed_rd, "long_delay", 4);
    CHECK(a.valid == 6);
    CHECK(a.trajectories.size() == a.valid + a.invalid);
    CHECK(a.trajectories.back().valid);
    REQUIRE(a.trajectories.size() == b.trajectories.size());
    for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
        CHECK(a.trajectories[i].saved == b.trajectories[i].saved);
        CHECK(a.trajectories[i].regime == "long_delay");
        CHECK(a.trajectories[i].spec.tau >= 1.5);
    }
}

TEST_CASE("rollout step table") {
    EvalCell cell{"hs_fno", "delayed_rd", "in_distribution", 0, {}};
    cell.metrics.e_roll.per_step = {0.1, 0.2};
    const auto rep = build_report({cell}, {}, 50, 0);
    CHECK(rollout_steps_csv(rep) ==
          "model,regime,step,mean,ci_lo,ci_hi\n"
          "hs_fno,in_distribution,1,0.10000000000000001,0.10000000000000001,0.10000000000000001\n"
          "hs_fno,in_distribution,2,0.20000000000000001,0.20000000000000001,0.20000000000000001\n");
}
