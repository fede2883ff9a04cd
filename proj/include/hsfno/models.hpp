#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hsfno/data_gen.hpp"
#include "hsfno/fno_core.hpp"
#include "hsfno/grid_history.hpp"

namespace hsfno {

enum class ModelType { hs_fno, current_state, lag_stack, history2history };

std::string_view to_string(ModelType t);
ModelType model_type_from_string(std::string_view name);
std::vector<ModelType> all_model_types();

/// Which scalars are broadcast as constant input channels. `no_delay` keeps
/// mu but drops tau and dt.
enum class CondMode { none, no_delay, full };

std::string_view to_string(CondMode c);
CondMode cond_mode_from_string(std::string_view name);

struct ModelKind {
    ModelType type = ModelType::hs_fno;
    CondMode cond = CondMode::full;
    std::size_t n_lags = 3;       // lag_stack only
    std::size_t lag_spacing = 0;  // in units of delta_theta; 0 picks floor(M / (n_lags - 1))

    bool operator==(const ModelKind&) const = default;
};

/// History rows exposed to a lag_stack model, newest (j = M) first.
std::vector<std::size_t> lag_rows(const ModelKind& kind, std::size_t m_slices);

struct SurrogateModel {
    ModelKind kind;
    Family family = Family::delayed_rd;
    std::size_t m_slices = 7;   // M; tau varies per trajectory, only the slice count is fixed
    SpatialGrid s_grid{64, 1.0, Boundary::periodic};
    std::size_t m = 1;
    FNOConfig config;
    FNOParams params;

    std::size_t channels() const { return channels_for_family(family); }
    std::size_t head_slices() const;
};

/// Backbone size choices; everything else follows from the kind and grids.
struct BackboneConfig {
    std::size_t width = 32;
    std::size_t n_layers = 4;
    std::size_t modes_theta = 8;
    std::size_t modes_x = 16;

    bool operator==(const BackboneConfig&) const = default;
};

std::size_t input_channels(const ModelKind& kind, Family family);
SurrogateModel make_model(const ModelKind& kind, Family family, std::size_t m_slices, const SpatialGrid& s_grid,
                          std::size_t m, const BackboneConfig& backbone, std::uint64_t seed);

/// Number of predicted values per step: C m n_x, or C (M+1) n_x for history2history.
std::size_t output_dim(ModelType type, std::size_t channels, std::size_t m_slices, std::size_t n_x, std::size_t m);

std::size_t parameter_count(const SurrogateModel& model);
/// Parameters of the final projection (weights and biases).
std::size_t head_parameter_count(const SurrogateModel& model);

Tensor assemble_input(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond);

/// Returns the m newest slices (C x n_x each, oldest first); for
/// history2history the M+1 slices of the next history.
using SlicePredictor = std::function<std::vector<double>(const HistoryState&, const Conditioning&)>;

SlicePredictor learned_predictor(const SurrogateModel& model);

/// Reference solver wired as the predictor: m save intervals of `spec` from
/// the given history. Exact when the history grid equals the save grid.
SlicePredictor oracle_predictor(const BenchmarkSpec& spec, std::size_t m);

HistoryState predict_step(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond);

/// Shift-append update with an arbitrary predictor.
HistoryState predict_step(const SlicePredictor& predictor, const HistoryState& history, const Conditioning& cond,
                          std::size_t m);

/// Advances by j slices: floor(j / m) full steps, then the first (j mod m)
/// slices of one more head evaluation. history2history needs j divisible by m.
HistoryState advance_slices(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond,
                            std::size_t j);

/// Raised when a predicted slice contains NaN or inf.
struct NonFiniteError : std::runtime_error {
    NonFiniteError() : std::runtime_error("non-finite prediction") {}
};

struct RolloutResult {
    std::vector<HistoryState> states;   // k = 1..K, or fewer when truncated
    bool truncated = false;
    std::size_t truncated_at = 0;       // 1-based step that produced a non-finite value
};

using StepFn = std::function<HistoryState(const HistoryState&)>;

RolloutResult rollout(const StepFn& step, const HistoryState& h0, std::size_t K);
RolloutResult rollout(const SurrogateModel& model, const HistoryState& h0, const Conditioning& cond, std::size_t K);

// Differentiable single step, used by the training losses.

struct StepTape {
    HistoryState history;
    std::size_t used = 0;   // head slices consumed (<= head_slices)
    FNOCache cache;
};

/// Same values as advance_slices for 1 <= used <= m (or used == M+1 for
/// history2history), recording what the backward pass needs.
HistoryState step_forward(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond,
                          std::size_t used, StepTape& tape);

/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to the input history values.
std::vector<double> step_backward(const SurrogateModel& model, const StepTape& tape,
                                  std::span<const double> grad_next, FNOParams& grads);

Checkpoint to_checkpoint(const SurrogateModel& model);
SurrogateModel from_checkpoint(const Checkpoint& ck);

}  // namespace hsfno
