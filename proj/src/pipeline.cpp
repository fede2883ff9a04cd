#include "hsfno/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "hsfno/binary_io.hpp"
#include "hsfno/dataset_io.hpp"
#include "hsfno/version.hpp"

namespace hsfno {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void require_keys(const json& j, const std::string& where, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> ok(known.begin(), known.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) throw ConfigError(where + ": unknown field '" + k + "'");
}

Family parse_family(const std::string& name) {
    try {
        return family_from_string(name);
    } catch (const std::exception&) {
        throw ConfigError("unknown family '" + name + "'");
    }
}

RangeOverrides parse_overrides(const json& j, Family f, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    const ParamRanges base = default_ranges(f);
    RangeOverrides out;
    for (const auto& [name, iv] : j.items()) {
        if (!base.intervals.count(name))
            throw ConfigError(where + ": '" + name + "' is not a parameter of " + std::string(to_string(f)));
        if (!iv.is_array() || iv.size() != 2 || !iv[0].is_number() || !iv[1].is_number())
            throw ConfigError(where + "." + name + ": expected [lo, hi]");
        const Interval v{iv[0].get<double>(), iv[1].get<double>()};
        if (!(v.first <= v.second)) throw ConfigError(where + "." + name + ": lo > hi");
        out[name] = v;
    }
    return out;
}

std::map<std::string, RangeOverrides> parse_family_map(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    std::map<std::string, RangeOverrides> out;
    for (const auto& [fam, ov] : j.items()) out[fam] = parse_overrides(ov, parse_family(fam), where + "." + fam);
    return out;
}

json family_map_json(const std::map<std::string, RangeOverrides>& m) {
    json j = json::object();
    for (const auto& [fam, ov] : m) {
        json o = json::object();
        for (const auto& [k, v] : ov) o[k] = {v.first, v.second};
        j[fam] = o;
    }
    return j;
}

ModelSpec parse_model(const json& j) {
    ModelSpec s;
    try {
        if (j.is_string()) {
            s.name = j.get<std::string>();
            s.kind.type = model_type_from_string(s.name);
            return s;
        }
        require_keys(j, "models[]", {"name", "type", "conditioning", "n_lags", "lag_spacing"});
        s.kind.type = model_type_from_string(j.at("type").get<std::string>());
        s.name = j.value("name", std::string(to_string(s.kind.type)));
        s.kind.cond = cond_mode_from_string(j.value("conditioning", std::string("full")));
        s.kind.n_lags = j.value("n_lags", s.kind.n_lags);
        s.kind.lag_spacing = j.value("lag_spacing", s.kind.lag_spacing);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("models: ") + e.what());
    }
    return s;
}

template <typename F>
void parallel_for(std::size_t n, unsigned jobs, F&& body) {
    const unsigned t = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
    if (t <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < t; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

void write_text(const fs::path& p, const std::string& text) {
    write_file(p.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// config

ParamRanges RunConfig::ranges_for(Family f, const std::string& regime) const {
    ParamRanges r = default_ranges(f);
    const std::string name(to_string(f));
    if (auto it = ranges.find(name); it != ranges.end())
        for (const auto& [k, v] : it->second) r.intervals[k] = v;
    const auto reg = regimes.find(regime);
    if (reg == regimes.end()) throw ConfigError("unknown regime '" + regime + "'");
    if (auto it = reg->second.find(name); it != reg->second.end())
        for (const auto& [k, v] : it->second) r.intervals[k] = v;
    return r;
}

const ModelSpec& RunConfig::model(const std::string& name) const {
    for (const auto& s : models)
        if (s.name == name) return s;
    throw ConfigError("model '" + name + "' is not in the config");
}

void validate(const RunConfig& c) {
    if (c.families.empty()) throw ConfigError("families: empty");
    if (c.models.empty()) throw ConfigError("models: empty");
    if (c.seeds.empty()) throw ConfigError("counts.seeds: empty");
    std::set<std::string> names;
    for (const auto& s : c.models)
        if (!names.insert(s.name).second) throw ConfigError("models: duplicate name '" + s.name + "'");
    for (const auto& s : c.models)
        if (s.kind.type == ModelType::history2history && c.m != 1)
            throw ConfigError("history2history needs m = 1");
    if (!c.regimes.count(c.train_regime)) throw ConfigError("train_regime '" + c.train_regime + "' is not a regime");
    if (c.grid.m_slices < 1 || c.m < 1 || c.m > c.grid.m_slices) throw ConfigError("need 1 <= m <= history_slices");
    if (c.grid.n_x < 4) throw ConfigError("grid.n_x must be >= 4");
    if (c.trajectories < 3) throw ConfigError("counts.trajectories must be >= 3");
    if (c.n_saves < c.grid.m_slices + c.m * std::max(c.eval_k, c.train.k_train))
        throw ConfigError("counts.n_saves too small for the history length and rollout horizon");
    double sum = 0.0;
    for (double f : c.splits) {
        if (!(f > 0.0)) throw ConfigError("splits must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("splits must sum to 1");
    if (c.eval_k < 1) throw ConfigError("eval.K must be >= 1");
    for (auto [s, r] : c.semi_pairs)
        if (s < 1 || r < 1) throw ConfigError("eval.semi_pairs entries must be >= 1");
    try {
        c.train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
}

RunConfig run_config_from_json(const json& j) {
    require_keys(j, "config", {"families", "ranges", "regimes", "train_regime", "grid", "counts", "splits", "data_seed",
                               "m", "models", "backbone", "train", "eval", "out"});
    RunConfig c;
    try {
        if (j.contains("families")) {
            c.families.clear();
            for (const auto& f : j.at("families")) c.families.push_back(parse_family(f.get<std::string>()));
        }
        if (j.contains("ranges")) c.ranges = parse_family_map(j.at("ranges"), "ranges");
        if (j.contains("regimes")) {
            c.regimes.clear();
            for (const auto& [name, fm] : j.at("regimes").items())
                c.regimes[name] = parse_family_map(fm, "regimes." + name);
        }
        c.train_regime = j.value("train_regime", c.train_regime);
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            require_keys(g, "grid", {"n_x", "length", "boundary", "history_slices", "min_substeps"});
            c.grid.n_x = g.value("n_x", c.grid.n_x);
            c.grid.length = g.value("length", c.grid.length);
            if (g.contains("boundary")) c.grid.boundary = boundary_from_string(g.at("boundary").get<std::string>());
            c.grid.m_slices = g.value("history_slices", c.grid.m_slices);
            c.grid.min_substeps = g.value("min_substeps", c.grid.min_substeps);
        }
        if (j.contains("counts")) {
            const auto& n = j.at("counts");
            require_keys(n, "counts", {"trajectories", "n_saves", "seeds"});
            c.trajectories = n.value("trajectories", c.trajectories);
            c.n_saves = n.value("n_saves", c.n_saves);
            if (n.contains("seeds")) {
                const auto& s = n.at("seeds");
                c.seeds.clear();
                if (s.is_number_unsigned()) {
                    for (std::uint64_t i = 0; i < s.get<std::uint64_t>(); ++i) c.seeds.push_back(i);
                } else {
                    c.seeds = s.get<std::vector<std::uint64_t>>();
                }
            }
        }
        if (j.contains("splits")) {
            const auto v = j.at("splits").get<std::vector<double>>();
            if (v.size() != 3) throw ConfigError("splits: expected [train, val, test]");
            std::copy(v.begin(), v.end(), c.splits.begin());
        }
        c.data_seed = j.value("data_seed", c.data_seed);
        c.m = j.value("m", c.m);
        if (j.contains("models")) {
            c.models.clear();
            for (const auto& mj : j.at("models")) c.models.push_back(parse_model(mj));
        }
        if (j.contains("backbone")) {
            const auto& b = j.at("backbone");
            require_keys(b, "backbone", {"width", "n_layers", "modes_theta", "modes_x"});
            c.backbone.width = b.value("width", c.backbone.width);
            c.backbone.n_layers = b.value("n_layers", c.backbone.n_layers);
            c.backbone.modes_theta = b.value("modes_theta", c.backbone.modes_theta);
            c.backbone.modes_x = b.value("modes_x", c.backbone.modes_x);
        }
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            require_keys(e, "eval", {"K", "semi_pairs", "bootstrap_resamples"});
            c.eval_k = e.value("K", c.eval_k);
            if (e.contains("semi_pairs")) c.semi_pairs = e.at("semi_pairs").get<std::vector<std::pair<std::size_t, std::size_t>>>();
            c.bootstrap_resamples = e.value("bootstrap_resamples", c.bootstrap_resamples);
        }
        c.out = j.value("out", c.out);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    validate(c);
    return c;
}

json to_json(const RunConfig& c) {
    json fams = json::array();
    for (Family f : c.families) fams.push_back(std::string(to_string(f)));
    json regimes = json::object();
    for (const auto& [name, fm] : c.regimes) regimes[name] = family_map_json(fm);
    json models = json::array();
    for (const auto& s : c.models)
        models.push_back({{"name", s.name},
                          {"type", std::string(to_string(s.kind.type))},
                          {"conditioning", std::string(to_string(s.kind.cond))},
                          {"n_lags", s.kind.n_lags},
                          {"lag_spacing", s.kind.lag_spacing}});
    return json{{"families", fams},
                {"ranges", family_map_json(c.ranges)},
                {"regimes", regimes},
                {"train_regime", c.train_regime},
                {"grid",
                 {{"n_x", c.grid.n_x},
                  {"length", c.grid.length},
                  {"boundary", std::string(to_string(c.grid.boundary))},
                  {"history_slices", c.grid.m_slices},
                  {"min_substeps", c.grid.min_substeps}}},
                {"counts", {{"trajectories", c.trajectories}, {"n_saves", c.n_saves}, {"seeds", c.seeds}}},
                {"splits", c.splits},
                {"data_seed", c.data_seed},
                {"m", c.m},
                {"models", models},
                {"backbone",
                 {{"width", c.backbone.width},
                  {"n_layers", c.backbone.n_layers},
                  {"modes_theta", c.backbone.modes_theta},
                  {"modes_x", c.backbone.modes_x}}},
                {"train", to_json(c.train)},
                {"eval", {{"K", c.eval_k}, {"semi_pairs", c.semi_pairs}, {"bootstrap_resamples", c.bootstrap_resamples}}},
                {"out", c.out}};
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return run_config_from_json(j);
}

void write_run_json(const fs::path& dir, const RunConfig& c, const std::string& command, const json& extra) {
    fs::create_directories(dir);
    json j{{"tool", "hsfno"}, {"version", kToolVersion}, {"command", command}, {"config", to_json(c)}};
    if (!extra.empty()) j["inputs"] = extra;
    write_text(dir / "run.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// layout

fs::path dataset_path(const RunConfig& c, Family f, const std::string& regime) {
    return fs::path(c.out) / "data" / (std::string(to_string(f)) + "__" + regime + ".hsfd");
}

fs::path train_dir(const RunConfig& c, Family f, const std::string& model, std::uint64_t seed) {
    return fs::path(c.out) / "train" / std::string(to_string(f)) / model / ("seed" + std::to_string(seed));
}

fs::path eval_dir(const RunConfig& c) { return fs::path(c.out) / "eval"; }

// ---------------------------------------------------------------------------
// generation

std::uint64_t trajectory_seed(const RunConfig& c, Family f, const std::string& regime, std::size_t index) {
    const std::uint64_t base = mix_seed(mix_seed(c.data_seed, fnv1a(to_string(f))), fnv1a(regime));
    return mix_seed(base, index);
}

GenerateResult generate_family(const RunConfig& c, Family f, const std::string& regime, unsigned jobs) {
    const ParamRanges ranges = c.ranges_for(f, regime);
    const std::size_t max_attempts = 4 * c.trajectories + 16;
    GenerateResult out;
    std::vector<Trajectory> all;
    while (out.valid < c.trajectories) {
        if (all.size() >= max_attempts)
            throw std::runtime_error(std::string(to_string(f)) + "/" + regime + ": only " + std::to_string(out.valid) +
                                     " valid trajectories in " + std::to_string(all.size()) + " attempts");
        // next batch sized by the shortfall, so extra work stays small
        const std::size_t first = all.size();
        const std::size_t batch = std::max<std::size_t>(c.trajectories - out.valid, jobs);
        std::vector<std::optional<Trajectory>> got(batch);
        parallel_for(batch, jobs, [&](std::size_t i) {
            got[i] = generate_trajectory(trajectory_seed(c, f, regime, first + i), f, ranges, c.grid, c.n_saves,
                                         regime);
        });
        for (auto& t : got) {
            if (out.valid == c.trajectories) break;
            t->valid ? ++out.valid : ++out.invalid;
            all.push_back(std::move(*t));
        }
    }
    out.trajectories = std::move(all);
    return out;
}

// ---------------------------------------------------------------------------
// datasets

SplitData load_split(const RunConfig& c, Family f, const std::string& regime) {
    const fs::path p = dataset_path(c, f, regime);
    if (!fs::exists(p)) throw ConfigError("missing dataset " + p.string() + " (run generate first)");
    SplitData d;
    d.trajectories = read_dataset(p.string());
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < d.trajectories.size(); ++i)
        if (d.trajectories[i].valid) ids.push_back(i);
    if (regime == c.train_regime) {
        d.splits = split_by_trajectory(ids, c.splits[0], c.splits[1], c.splits[2], c.data_seed);
    } else {
        d.splits.test = ids;
    }
    return d;
}

std::vector<SupervisedPair> pairs_of(const RunConfig& c, const SplitData& d, const std::vector<std::size_t>& ids) {
    std::vector<SupervisedPair> out;
    for (std::size_t id : ids) {
        const auto& t = d.trajectories[id];
        auto p = extract_pairs(t, HistoryGrid(t.spec.tau, c.grid.m_slices), c.m, id);
        std::move(p.begin(), p.end(), std::back_inserter(out));
    }
    return out;
}

std::vector<RolloutWindow> windows_of(const RunConfig& c, const SplitData& d, const std::vector<std::size_t>& ids,
                                      std::size_t K) {
    std::vector<RolloutWindow> out;
    for (std::size_t id : ids) {
        const auto& t = d.trajectories[id];
        auto w = extract_windows(t, HistoryGrid(t.spec.tau, c.grid.m_slices), c.m, K, id);
        std::move(w.begin(), w.end(), std::back_inserter(out));
    }
    return out;
}

TrainData train_data(const RunConfig& c, const SplitData& d) {
    TrainData td;
    td.train_pairs = pairs_of(c, d, d.splits.train);
    td.val_pairs = pairs_of(c, d, d.splits.val);
    if (c.train.lambda_rollout > 0.0) {
        td.train_windows = windows_of(c, d, d.splits.train, c.train.k_train);
        td.val_windows = windows_of(c, d, d.splits.val, c.train.k_train);
    }
    return td;
}

// ---------------------------------------------------------------------------
// training

SurrogateModel initial_model(const RunConfig& c, Family f, const ModelSpec& spec, std::uint64_t seed) {
    const SpatialGrid g(c.grid.n_x, c.grid.length, c.grid.boundary);
    return make_model(spec.kind, f, c.grid.m_slices, g, c.m, c.backbone, mix_seed(seed, 0x1417));
}

TrainState train_cell(const RunConfig& c, Family f, const ModelSpec& spec, std::uint64_t seed, const TrainData& data,
                      bool resume) {
    TrainConfig tc = c.train;
    tc.seed = seed;
    const fs::path dir = train_dir(c, f, spec.name, seed);
    fs::create_directories(dir);
    const fs::path state_path = dir / "state.hsfp";

    TrainState st;
    if (resume) {
        if (!fs::exists(state_path)) throw ConfigError("no state to resume at " + state_path.string());
        st = train_state_from_checkpoint(load_checkpoint(state_path.string()));
        // a raised epoch or step budget reopens a finished run
        if (!st.diverged && st.epoch < tc.epochs && (tc.max_steps == 0 || st.steps < tc.max_steps))
            st.finished = false;
    } else {
        st = start_training(initial_model(c, f, spec, seed), tc);
    }
    while (!st.finished && !st.diverged) {
        train_epochs(st, data, tc, 1);
        save_checkpoint(state_path.string(), train_state_checkpoint(st));
    }

    SurrogateModel best = st.model;
    best.params = st.best_params;
    save_checkpoint((dir / "model.hsfp").string(), to_checkpoint(best));
    write_text(dir / "loss.csv", loss_log_csv(st.log));
    write_run_json(dir, c, "train",
                   json{{"family", std::string(to_string(f))},
                        {"model", spec.name},
                        {"seed", seed},
                        {"dataset", dataset_path(c, f, c.train_regime).string()},
                        {"steps", st.steps},
                        {"epochs", st.epoch},
                        {"best_epoch", st.best_epoch},
                        {"diverged", st.diverged}});
    return st;
}

SurrogateModel load_trained(const RunConfig& c, Family f, const std::string& model, std::uint64_t seed) {
    const fs::path p = train_dir(c, f, model, seed) / "model.hsfp";
    if (!fs::exists(p)) throw ConfigError("missing checkpoint " + p.string() + " (run train first)");
    return from_checkpoint(load_checkpoint(p.string()));
}

// ---------------------------------------------------------------------------
// evaluation

EvalOutput evaluate_run(const RunConfig& c, unsigned jobs, bool measure_time) {
    struct Job {
        Family family;
        std::string regime;
        const ModelSpec* spec;
        std::uint64_t seed;
    };
    // datasets first, so missing inputs fail before any work
    std::map<std::pair<Family, std::string>, SplitData> data;
    for (Family f : c.families)
        for (const auto& [regime, _] : c.regimes) data.emplace(std::make_pair(f, regime), load_split(c, f, regime));

    std::vector<Job> jobs_list;
    for (const auto& spec : c.models)
        for (Family f : c.families)
            for (const auto& [regime, _] : c.regimes)
                for (std::uint64_t s : c.seeds) jobs_list.push_back({f, regime, &spec, s});
    for (const auto& j : jobs_list) {
        const fs::path p = train_dir(c, j.family, j.spec->name, j.seed) / "model.hsfp";
        if (!fs::exists(p)) throw ConfigError("missing checkpoint " + p.string() + " (run train first)");
    }

    std::map<std::pair<Family, std::string>, std::pair<std::vector<SupervisedPair>, std::vector<RolloutWindow>>> sets;
    for (auto& [key, d] : data)
        sets[key] = {pairs_of(c, d, d.splits.test), windows_of(c, d, d.splits.test, c.eval_k)};

    std::vector<EvalCell> cells(jobs_list.size());
    parallel_for(jobs_list.size(), jobs, [&](std::size_t i) {
        const Job& j = jobs_list[i];
        const auto model = load_trained(c, j.family, j.spec->name, j.seed);
        const auto& [pairs, windows] = sets.at({j.family, j.regime});
        cells[i] = EvalCell{j.spec->name, std::string(to_string(j.family)), j.regime, j.seed,
                            evaluate_model(model, pairs, windows, c.eval_k, c.semi_pairs)};
    });

    // efficiency per model name on the first family (architecture only)
    std::map<std::string, ModelEfficiency> eff;
    json timing = json::object();
    for (const auto& spec : c.models) {
        const Family f = c.families.front();
        const auto model = load_trained(c, f, spec.name, c.seeds.front());
        eff[spec.name] = {parameter_count(model),
                          output_dim(spec.kind.type, model.channels(), model.m_slices, model.s_grid.n_x(), model.m),
                          peak_memory_estimate(model)};
        if (measure_time) {
            const auto& pairs = sets.at({f, c.train_regime}).first;
            if (!pairs.empty())
                timing[spec.name] = {{"family", std::string(to_string(f))},
                                     {"predict_step_seconds", time_predict_step(model, pairs[0].history, pairs[0].cond)}};
        }
    }

    EvalOutput out;
    out.report = build_report(cells, eff, c.bootstrap_resamples, c.data_seed);
    out.cells = std::move(cells);
    out.timing = std::move(timing);
    return out;
}

std::string rollout_steps_csv(const MetricsReport& r) {
    std::string out = "model,regime,step,mean,ci_lo,ci_hi\n";
    char buf[128];
    for (const auto& a : r.aggregates) {
        if (a.metric != "e_roll") continue;
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", a.ci.mean, a.ci.lo, a.ci.hi);
        out += a.model + "," + a.regime + "," + std::to_string(a.step) + "," + buf + "\n";
    }
    return out;
}

void write_eval_outputs(const RunConfig& c, const EvalOutput& e) {
    const fs::path dir = eval_dir(c);
    fs::create_directories(dir);
    write_text(dir / "report.csv", report_csv(e.report));
    write_text(dir / "report.json", report_json(e.report).dump(2) + "\n");
    write_text(dir / "rollout_steps.csv", rollout_steps_csv(e.report));
    write_text(dir / "timing.json", e.timing.dump(2) + "\n");
    write_run_json(dir, c, "eval");
}

}  // namespace hsfno
