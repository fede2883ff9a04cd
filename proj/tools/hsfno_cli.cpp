// hsfno: generate / train / eval / rollout / verify.
// Precedence: command-line flags > config file > built-in defaults.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "hsfno/binary_io.hpp"
#include "hsfno/dataset_io.hpp"
#include "hsfno/pipeline.hpp"
#include "hsfno/verify.hpp"
#include "hsfno/version.hpp"

namespace fs = std::filesystem;
using namespace hsfno;
using json = nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    unsigned jobs = 1;
    bool dry_run = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON run config (defaults when omitted)");
    cmd->add_option("--seed", c.seed, "data seed for generate, model seed otherwise");
    cmd->add_option("--out", c.out, "output root directory");
    cmd->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_flag("--dry-run", c.dry_run, "print planned work and exit without writing");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? run_config_from_json(json::object()) : load_run_config(c.config);
    if (c.out) cfg.out = *c.out;
    return cfg;
}

std::vector<Family> pick_families(const RunConfig& cfg, const std::vector<std::string>& names) {
    if (names.empty()) return cfg.families;
    std::vector<Family> out;
    for (const auto& n : names) {
        Family f;
        try {
            f = family_from_string(n);
        } catch (const std::exception&) {
            throw ConfigError("unknown family '" + n + "'");
        }
        if (std::find(cfg.families.begin(), cfg.families.end(), f) == cfg.families.end())
            throw ConfigError("family '" + n + "' is not in the config");
        out.push_back(f);
    }
    return out;
}

std::vector<const ModelSpec*> pick_models(const RunConfig& cfg, const std::vector<std::string>& names) {
    std::vector<const ModelSpec*> out;
    if (names.empty())
        for (const auto& m : cfg.models) out.push_back(&m);
    for (const auto& n : names) out.push_back(&cfg.model(n));
    return out;
}

void write_text(const fs::path& p, const std::string& s) {
    write_file(p.string(), std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

// -------------------------------------------------------------------------

struct GenerateArgs {
    std::vector<std::string> families, regimes;
};

int cmd_generate(const Common& common, const GenerateArgs& a) {
    RunConfig cfg = resolve(common);
    if (common.seed) cfg.data_seed = *common.seed;
    const auto families = pick_families(cfg, a.families);
    std::vector<std::string> regimes;
    for (const auto& [r, _] : cfg.regimes)
        if (a.regimes.empty() || std::find(a.regimes.begin(), a.regimes.end(), r) != a.regimes.end())
            regimes.push_back(r);
    for (const auto& r : a.regimes)
        if (!cfg.regimes.count(r)) throw ConfigError("unknown regime '" + r + "'");

    if (common.dry_run) {
        for (Family f : families)
            for (const auto& r : regimes)
                std::printf("would generate %zu valid %s/%s trajectories (n_x %zu, M %zu, %zu saves) -> %s\n",
                            cfg.trajectories, std::string(to_string(f)).c_str(), r.c_str(), cfg.grid.n_x,
                            cfg.grid.m_slices, cfg.n_saves, dataset_path(cfg, f, r).string().c_str());
        return 0;
    }
    const fs::path dir = fs::path(cfg.out) / "data";
    fs::create_directories(dir);
    write_run_json(dir, cfg, "generate");
    for (Family f : families)
        for (const auto& r : regimes) {
            const auto res = generate_family(cfg, f, r, common.jobs);
            const auto path = dataset_path(cfg, f, r);
            write_dataset(path.string(), res.trajectories);
            std::printf("%s/%s: %zu valid, %zu invalid -> %s\n", std::string(to_string(f)).c_str(), r.c_str(),
                        res.valid, res.invalid, path.string().c_str());
        }
    return 0;
}

struct TrainArgs {
    std::vector<std::string> families, models;
    bool resume = false;
    std::optional<std::size_t> epochs, max_steps;
    std::optional<double> lr;
};

int cmd_train(const Common& common, const TrainArgs& a) {
    RunConfig cfg = resolve(common);
    if (common.seed) cfg.seeds = {*common.seed};
    if (a.epochs) cfg.train.epochs = *a.epochs;
    if (a.max_steps) cfg.train.max_steps = *a.max_steps;
    if (a.lr) cfg.train.lr = *a.lr;
    validate(cfg);
    const auto families = pick_families(cfg, a.families);
    const auto models = pick_models(cfg, a.models);

    for (Family f : families) {
        const fs::path ds = dataset_path(cfg, f, cfg.train_regime);
        if (!fs::exists(ds)) throw ConfigError("missing dataset " + ds.string() + " (run generate first)");
    }
    if (common.dry_run) {
        for (Family f : families)
            for (const auto* m : models)
                for (auto s : cfg.seeds)
                    std::printf("would train %s on %s, seed %llu -> %s\n", m->name.c_str(),
                                std::string(to_string(f)).c_str(), static_cast<unsigned long long>(s),
                                train_dir(cfg, f, m->name, s).string().c_str());
        return 0;
    }
    bool all_ok = true;
    for (Family f : families) {
        const auto split = load_split(cfg, f, cfg.train_regime);
        const auto data = train_data(cfg, split);
        for (const auto* m : models)
            for (auto s : cfg.seeds) {
                const auto st = train_cell(cfg, f, *m, s, data, a.resume);
                const double last = st.log.empty() ? 0.0 : st.log[st.log.size() - 2].loss;
                std::printf("%s %s seed %llu: %zu steps, %zu epochs, final train loss %.6g, best val %.6g (epoch %zu)%s\n",
                            std::string(to_string(f)).c_str(), m->name.c_str(), static_cast<unsigned long long>(s),
                            st.steps, st.epoch, last, st.best_val, st.best_epoch, st.diverged ? " DIVERGED" : "");
                all_ok = all_ok && !st.diverged;
            }
    }
    return all_ok ? 0 : 1;
}

struct EvalArgs {
    std::optional<std::size_t> K;
};

int cmd_eval(const Common& common, const EvalArgs& a) {
    RunConfig cfg = resolve(common);
    if (common.seed) cfg.seeds = {*common.seed};
    if (a.K) cfg.eval_k = *a.K;
    validate(cfg);
    if (common.dry_run) {
        const std::size_t cells = cfg.models.size() * cfg.families.size() * cfg.regimes.size() * cfg.seeds.size();
        std::printf("would evaluate %zu cells (K %zu) -> %s\n", cells, cfg.eval_k, eval_dir(cfg).string().c_str());
        return 0;
    }
    const auto e = evaluate_run(cfg, common.jobs);
    write_eval_outputs(cfg, e);
    for (const auto& ag : e.report.aggregates)
        if (ag.metric == "e_roll_mean" || ag.metric == "e_one")
            std::printf("%-18s %-16s %-12s mean %.6g  95%% CI [%.6g, %.6g]\n", ag.model.c_str(), ag.regime.c_str(),
                        ag.metric.c_str(), ag.ci.mean, ag.ci.lo, ag.ci.hi);
    std::printf("reports in %s\n", eval_dir(cfg).string().c_str());
    return 0;
}

struct RolloutArgs {
    std::string model;
    std::string family;
    std::string regime;
    std::size_t trajectory = 0;
    std::optional<std::size_t> start;
    std::optional<std::size_t> K;
};

int cmd_rollout(const Common& common, const RolloutArgs& a) {
    RunConfig cfg = resolve(common);
    const std::uint64_t seed = common.seed.value_or(cfg.seeds.front());
    const ModelSpec& spec = cfg.model(a.model);
    const Family f = a.family.empty() ? cfg.families.front() : pick_families(cfg, {a.family}).front();
    const std::string regime = a.regime.empty() ? cfg.train_regime : a.regime;
    const std::size_t K = a.K.value_or(cfg.eval_k);
    const fs::path dir = fs::path(cfg.out) / "rollout" / std::string(to_string(f)) / spec.name / ("seed" + std::to_string(seed));
    if (common.dry_run) {
        std::printf("would roll out %s (seed %llu) for %zu steps on test trajectory %zu of %s/%s -> %s\n",
                    spec.name.c_str(), static_cast<unsigned long long>(seed), K, a.trajectory,
                    std::string(to_string(f)).c_str(), regime.c_str(), dir.string().c_str());
        return 0;
    }
    const auto split = load_split(cfg, f, regime);
    if (a.trajectory >= split.splits.test.size()) throw ConfigError("--trajectory out of range of the test split");
    const auto& traj = split.trajectories[split.splits.test[a.trajectory]];
    const std::size_t M = cfg.grid.m_slices;
    const std::size_t n0 = a.start.value_or(M);
    if (n0 < M || n0 + K * cfg.m > traj.n_saves()) throw ConfigError("--start/--K leave the trajectory");
    const HistoryGrid hg(traj.spec.tau, M);
    const auto model = load_trained(cfg, f, spec.name, seed);
    const auto cond = conditioning_for(traj.spec, static_cast<double>(cfg.m) * hg.delta_theta());
    const auto r = rollout(model, history_at(traj, hg, n0), cond, K);

    std::string table = "step,t,channel,x,predicted,reference\n", errs = "step,relative_error\n";
    char buf[256];
    const auto xs = traj.spec.s_grid.coordinates();
    for (std::size_t k = 0; k < K; ++k) {
        const auto ref = history_at(traj, hg, n0 + (k + 1) * cfg.m);
        if (k >= r.states.size()) {
            errs += std::to_string(k + 1) + ",inf\n";
            continue;
        }
        const auto& pred = r.states[k];
        for (std::size_t c = 0; c < ref.channels(); ++c)
            for (std::size_t i = 0; i < ref.n_x(); ++i) {
                std::snprintf(buf, sizeof buf, "%zu,%.17g,%zu,%.17g,%.17g,%.17g\n", k + 1, ref.t_now(), c, xs[i],
                              pred.at(M, c, i), ref.at(M, c, i));
                table += buf;
            }
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", k + 1, relative_slice_error(pred.slice(M), ref.slice(M)));
        errs += buf;
    }
    fs::create_directories(dir);
    write_text(dir / "rollout.csv", table);
    write_text(dir / "errors.csv", errs);
    write_run_json(dir, cfg, "rollout",
                   json{{"model", spec.name}, {"family", std::string(to_string(f))}, {"regime", regime},
                        {"seed", seed}, {"trajectory", a.trajectory}, {"start", n0}, {"K", K}});
    std::fputs(errs.c_str(), stdout);
    return r.truncated ? 1 : 0;
}

struct VerifyArgs {
    std::vector<std::string> filters, faults;
};

int cmd_verify(const Common& common, const VerifyArgs& a) {
    RunConfig cfg = resolve(common);
    if (common.dry_run) {
        for (const auto& c : verify_checks())
            std::printf("%-22s criterion %d: %s\n", c.name.c_str(), c.criterion, c.summary.c_str());
        return 0;
    }
    VerifyOptions opts;
    opts.inject_faults = a.faults;
    std::vector<CheckResult> results;
    try {
        results = run_verify(a.filters, opts);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    bool ok = true;
    json summary = json::array();
    for (const auto& r : results) {
        std::printf("%s %-22s %6.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
        summary.push_back({{"check", r.name}, {"passed", r.passed}, {"detail", r.detail}});
        ok = ok && r.passed;
    }
    const fs::path dir = fs::path(cfg.out) / "verify";
    fs::create_directories(dir);
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    write_run_json(dir, cfg, "verify", json{{"filters", a.filters}, {"inject_faults", a.faults}});
    std::printf("%s: %zu checks\n", ok ? "all passed" : "FAILED", results.size());
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"history-state neural operator toolkit"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    Common common;
    GenerateArgs gen;
    TrainArgs tr;
    EvalArgs ev;
    RolloutArgs ro;
    VerifyArgs ve;

    auto* g = app.add_subcommand("generate", "simulate datasets, one file per (family, regime)");
    add_common(g, common);
    g->add_option("--family", gen.families, "restrict to these families");
    g->add_option("--regime", gen.regimes, "restrict to these regimes");

    auto* t = app.add_subcommand("train", "train every (family, model, seed) cell");
    add_common(t, common);
    t->add_option("--family", tr.families, "restrict to these families");
    t->add_option("--model", tr.models, "restrict to these model names");
    t->add_flag("--resume", tr.resume, "continue from state.hsfp");
    t->add_option("--epochs", tr.epochs, "override train.epochs");
    t->add_option("--max-steps", tr.max_steps, "override train.max_steps");
    t->add_option("--lr", tr.lr, "override train.lr");

    auto* e = app.add_subcommand("eval", "evaluate trained checkpoints and write reports");
    add_common(e, common);
    e->add_option("--K", ev.K, "rollout horizon")->check(CLI::PositiveNumber);

    auto* r = app.add_subcommand("rollout", "per-step predicted vs reference table for one trajectory");
    add_common(r, common);
    r->add_option("--model", ro.model, "model name")->required();
    r->add_option("--family", ro.family, "family (first configured when omitted)");
    r->add_option("--regime", ro.regime, "regime (training regime when omitted)");
    r->add_option("--trajectory", ro.trajectory, "index into the test split");
    r->add_option("--start", ro.start, "solution index of the start history (>= M)");
    r->add_option("--K", ro.K, "rollout steps")->check(CLI::PositiveNumber);

    auto* v = app.add_subcommand("verify", "run the property checks");
    add_common(v, common);
    v->add_option("--filter", ve.filters, "run checks whose name contains this text");
    v->add_option("--inject-fault", ve.faults, "corrupt the named check (self-test of the suite)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& s) {
        return app.exit(s);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return 2;
    }

    try {
        if (*g) return cmd_generate(common, gen);
        if (*t) return cmd_train(common, tr);
        if (*e) return cmd_eval(common, ev);
        if (*r) return cmd_rollout(common, ro);
        if (*v) return cmd_verify(common, ve);
    } catch (const ConfigError& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 2;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 1;
    }
    return 2;
}
