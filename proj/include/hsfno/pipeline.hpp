#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsfno/data_gen.hpp"
#include "hsfno/models.hpp"
#include "hsfno/train_eval.hpp"

namespace hsfno {

/// Invalid configuration or missing inputs (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelSpec {
    std::string name;   // report label, unique within a run
    ModelKind kind;
};

using RangeOverrides = std::map<std::string, Interval>;   // parameter -> interval

/// Experiment description. Every field has a default; see configs/ for
/// complete examples.
struct RunConfig {
    std::vector<Family> families{Family::delayed_rd};
    std::map<std::string, RangeOverrides> ranges;                             // family -> overrides
    std::map<std::string, std::map<std::string, RangeOverrides>> regimes{{"in_distribution", {}}};
    std::string train_regime = "in_distribution";
    GridConfig grid;
    std::size_t trajectories = 80;   // valid trajectories per (family, regime)
    std::size_t n_saves = 40;
    std::array<double, 3> splits{0.75, 0.125, 0.125};
    std::uint64_t data_seed = 0;
    std::vector<std::uint64_t> seeds{0};
    std::size_t m = 1;
    std::vector<ModelSpec> models{{"hs_fno", {}}};
    BackboneConfig backbone;
    TrainConfig train;
    std::size_t eval_k = 3;
    std::vector<std::pair<std::size_t, std::size_t>> semi_pairs = kDefaultSemiPairs;
    std::size_t bootstrap_resamples = 2000;
    std::string out = "runs/default";

    ParamRanges ranges_for(Family f, const std::string& regime) const;
    const ModelSpec& model(const std::string& name) const;
};

/// Throws ConfigError on unknown keys, bad names or inconsistent values.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::string& path);
void validate(const RunConfig& c);

/// Writes run.json (resolved config, command, tool version) into `dir`.
void write_run_json(const std::filesystem::path& dir, const RunConfig& c, const std::string& command,
                    const nlohmann::json& extra = nlohmann::json::object());

// ---------------------------------------------------------------------------
// layout

std::filesystem::path dataset_path(const RunConfig& c, Family f, const std::string& regime);
std::filesystem::path train_dir(const RunConfig& c, Family f, const std::string& model, std::uint64_t seed);
std::filesystem::path eval_dir(const RunConfig& c);

// ---------------------------------------------------------------------------
// generation

std::uint64_t trajectory_seed(const RunConfig& c, Family f, const std::string& regime, std::size_t index);

struct GenerateResult {
    std::vector<Trajectory> trajectories;   // attempts up to and including the last kept valid one
    std::size_t valid = 0, invalid = 0;
};

/// Draws trajectories with seeds index 0, 1, ... until `c.trajectories` valid
/// ones exist. Work is spread over `jobs` threads; the result does not depend
/// on `jobs`.
GenerateResult generate_family(const RunConfig& c, Family f, const std::string& regime, unsigned jobs);

// ---------------------------------------------------------------------------
// datasets as seen by training and evaluation

struct SplitData {
    std::vector<Trajectory> trajectories;
    DatasetSplits splits;   // indices into `trajectories`, valid ones only
};

/// Reads the family's dataset for `regime`. For the training regime the valid
/// trajectories are split train/val/test; elsewhere all of them are test.
SplitData load_split(const RunConfig& c, Family f, const std::string& regime);

std::vector<SupervisedPair> pairs_of(const RunConfig& c, const SplitData& d, const std::vector<std::size_t>& ids);
std::vector<RolloutWindow> windows_of(const RunConfig& c, const SplitData& d, const std::vector<std::size_t>& ids,
                                      std::size_t K);

TrainData train_data(const RunConfig& c, const SplitData& d);

// ---------------------------------------------------------------------------
// training and evaluation

SurrogateModel initial_model(const RunConfig& c, Family f, const ModelSpec& spec, std::uint64_t seed);

/// Trains one (family, model, seed) cell, checkpointing state.hsfp after every
/// epoch and writing model.hsfp (best validation parameters), loss.csv and
/// run.json at the end. With `resume`, continues from an existing state.hsfp.
TrainState train_cell(const RunConfig& c, Family f, const ModelSpec& spec, std::uint64_t seed, const TrainData& data,
                      bool resume);

SurrogateModel load_trained(const RunConfig& c, Family f, const std::string& model, std::uint64_t seed);

struct EvalOutput {
    MetricsReport report;
    std::vector<EvalCell> cells;
    nlohmann::json timing;   // wall-clock measurements, kept apart from the deterministic report
};

/// Evaluates every (model, family, regime, seed) cell in parallel.
EvalOutput evaluate_run(const RunConfig& c, unsigned jobs, bool measure_time = true);

/// report.csv, report.json, rollout_steps.csv, timing.json, run.json.
void write_eval_outputs(const RunConfig& c, const EvalOutput& e);

/// Per-step rollout table: step, one_step_error, then mean per step.
std::string rollout_steps_csv(const MetricsReport& r);

}  // namespace hsfno
