#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsfno/data_gen.hpp"
#include "hsfno/models.hpp"

namespace hsfno {

// ---------------------------------------------------------------------------
// losses (squared uniform history norm, i.e. mean square over all entries)

double squared_history_error(const HistoryState& pred, const HistoryState& ref);

/// When `grad` is set, d(loss)/d(params) is accumulated into it.
double loss_data(const SurrogateModel& model, const SupervisedPair& pair, FNOParams* grad = nullptr);

/// sum_k w_k |G^k(h) - S_k(h)|^2 with backprop through the unrolled steps.
double loss_rollout(const SurrogateModel& model, const RolloutWindow& window, const std::vector<double>& w,
                    FNOParams* grad = nullptr);

/// |G(G(h; s); r) - G(h; s + r)|^2 with s, r counted in history slices.
double loss_semi(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond, std::size_t s,
                 std::size_t r, FNOParams* grad = nullptr);

// ---------------------------------------------------------------------------
// training

struct TrainConfig {
    double lambda_data = 1.0;
    double lambda_rollout = 0.0;
    double lambda_semi = 0.0;
    std::size_t k_train = 3;
    std::vector<double> w_k;          // empty means all ones
    std::size_t semi_s = 1, semi_r = 1;
    std::size_t epochs = 10;
    std::size_t max_steps = 0;        // 0: no cap besides epochs
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    double lr = 1e-3;
    std::size_t decay_every = 0;      // steps; 0 keeps lr constant
    double decay_factor = 0.5;

    void validate() const;
    std::vector<double> rollout_weights() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainData {
    std::vector<SupervisedPair> train_pairs;
    std::vector<SupervisedPair> val_pairs;
    std::vector<RolloutWindow> train_windows;   // needed when lambda_rollout > 0
    std::vector<RolloutWindow> val_windows;
};

struct LossLogRow {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
};

struct TrainState {
    SurrogateModel model;
    AdamState adam;
    FNOParams best_params;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t epoch = 0;        // completed epochs
    std::size_t steps = 0;        // optimizer steps taken
    std::string rng_state;
    std::vector<LossLogRow> log;
    bool diverged = false;
    bool finished = false;
};

TrainState start_training(SurrogateModel model, const TrainConfig& cfg);

/// Runs up to `n_epochs` more epochs (all remaining when 0). Stops early on
/// the step cap or on a non-finite loss (sets `diverged`).
void train_epochs(TrainState& st, const TrainData& data, const TrainConfig& cfg, std::size_t n_epochs = 0);

TrainState train(SurrogateModel model, const TrainData& data, const TrainConfig& cfg);

/// Objective used for validation: the weighted total loss averaged over pairs.
double mean_objective(const SurrogateModel& model, const std::vector<SupervisedPair>& pairs,
                      const std::vector<RolloutWindow>& windows, const TrainConfig& cfg);

Checkpoint train_state_checkpoint(const TrainState& st);
TrainState train_state_from_checkpoint(const Checkpoint& ck);

std::string loss_log_csv(const std::vector<LossLogRow>& log);

// ---------------------------------------------------------------------------
// metrics

/// |pred - ref|_2 / |ref|_2 on a single slice (RMS ratio).
double relative_slice_error(std::span<const double> pred, std::span<const double> ref);

/// Mean over samples of the newest-slice relative error.
double metric_one_step(const std::vector<HistoryState>& preds, const std::vector<HistoryState>& refs);
/// Mean over samples of the relative history error.
double metric_hist(const std::vector<HistoryState>& preds, const std::vector<HistoryState>& refs);

struct RollMetric {
    std::vector<double> per_step;   // k = 1..K
    double mean = 0.0;
};
/// preds[w][k], refs[w][k]: rollout step k+1 of window w. Missing (truncated)
/// steps count as infinite error.
RollMetric metric_roll(const std::vector<std::vector<HistoryState>>& preds,
                       const std::vector<std::vector<HistoryState>>& refs, std::size_t K);
/// Mean of |composed - direct|_H / |direct|_H.
double metric_semi(const std::vector<HistoryState>& composed, const std::vector<HistoryState>& direct);

struct CellMetrics {
    double e_one = 0.0;
    double e_hist = 0.0;
    RollMetric e_roll;
    double e_semi = 0.0;
    std::size_t truncated = 0;
};

inline const std::vector<std::pair<std::size_t, std::size_t>> kDefaultSemiPairs{{1, 1}, {1, 2}, {2, 1}};

CellMetrics evaluate_model(const SurrogateModel& model, const std::vector<SupervisedPair>& pairs,
                           const std::vector<RolloutWindow>& windows, std::size_t K,
                           const std::vector<std::pair<std::size_t, std::size_t>>& semi_pairs = kDefaultSemiPairs);

struct CI {
    double lo = 0.0, mean = 0.0, hi = 0.0;
};

CI bootstrap_ci(const std::vector<double>& seed_means, std::size_t n_resamples = 2000, double level = 0.95,
                std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// reports

struct ReportRow {
    std::string model, family, regime;
    std::uint64_t seed = 0;
    std::string metric;
    std::size_t step = 0;   // rollout step for e_roll rows, 0 otherwise
    double value = 0.0;

    bool operator==(const ReportRow&) const = default;
};

struct ModelEfficiency {
    std::size_t parameter_count = 0;
    std::size_t output_dim = 0;
    std::size_t peak_memory_bytes = 0;

    bool operator==(const ModelEfficiency&) const = default;
};

struct AggregateEntry {
    std::string model, regime, metric;
    std::size_t step = 0;
    std::vector<double> seed_means;   // ordered by seed
    CI ci;
};

struct MetricsReport {
    std::vector<ReportRow> rows;
    std::vector<AggregateEntry> aggregates;
    std::map<std::string, ModelEfficiency> efficiency;
};

struct EvalCell {
    std::string model, family, regime;
    std::uint64_t seed = 0;
    CellMetrics metrics;
};

/// Rows for every cell, then per (model, regime, metric, step) the per-seed
/// means over families with percentile bootstrap CIs across seeds.
MetricsReport build_report(const std::vector<EvalCell>& cells, const std::map<std::string, ModelEfficiency>& efficiency,
                           std::size_t n_resamples = 2000, std::uint64_t seed = 0);

std::string report_csv(const MetricsReport& r);
nlohmann::json report_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

/// Analytic byte count of the tensors alive during one cached forward pass.
std::size_t peak_memory_estimate(const SurrogateModel& model);

/// Median wall time of 20 predict_step calls after 3 warmups, in seconds.
double time_predict_step(const SurrogateModel& model, const HistoryState& h, const Conditioning& cond);

}  // namespace hsfno
