#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hsfno/dpde_solvers.hpp"
#include "hsfno/grid_history.hpp"

namespace hsfno {

/// Deterministic 64-bit mixer used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0);

/// Scalars a model may condition on, plus the epidemic susceptibility field.
struct Conditioning {
    Family family = Family::delayed_rd;
    std::vector<double> mu;
    double tau = 1.0;
    double dt = 0.1;
    std::vector<double> aux_field;
};

Conditioning conditioning_for(const BenchmarkSpec& spec, double dt);

struct SupervisedPair {
    HistoryState history;
    Conditioning cond;
    std::size_t m = 1;
    std::vector<double> target_slice;   // m x C x n_x
    HistoryState target_history;
    std::size_t trajectory = 0;
};

/// A start history plus the reference histories after k = 1..K steps of m slices.
struct RolloutWindow {
    HistoryState history;
    Conditioning cond;
    std::size_t m = 1;
    std::vector<HistoryState> targets;
    std::size_t trajectory = 0;
};

struct DatasetSplits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

using Interval = std::pair<double, double>;

/// Per-family sampling intervals (keys are mu names plus "tau").
struct ParamRanges {
    std::map<std::string, Interval> intervals;

    Interval get(const std::string& name) const;
};

ParamRanges default_ranges(Family f);

/// Grid choices shared by every trajectory of a dataset.
struct GridConfig {
    std::size_t n_x = 64;
    double length = 1.0;
    Boundary boundary = Boundary::periodic;
    std::size_t m_slices = 7;       // model history slices M; save_dt = tau / M
    std::size_t min_substeps = 1;   // solver steps per save, raised until stable
};

inline constexpr std::size_t kInitialModes = 4;

/// phi(theta, x) = sum_k [a_k cos + b_k sin](2 pi k x / L) (1 + eps_k theta / tau)
/// on periodic grids (sine / cosine half-wave series on dirichlet / neumann).
/// Sampled on the save grid of `spec`.
HistoryState sample_initial_history(std::uint64_t seed, const BenchmarkSpec& spec, bool nonneg);

BenchmarkSpec sample_spec(std::uint64_t seed, Family family, const ParamRanges& ranges, const GridConfig& grid);

std::vector<SupervisedPair> extract_pairs(const Trajectory& traj, const HistoryGrid& h_grid, std::size_t m,
                                          std::size_t trajectory_id = 0);

std::vector<RolloutWindow> extract_windows(const Trajectory& traj, const HistoryGrid& h_grid, std::size_t m,
                                           std::size_t k_steps, std::size_t trajectory_id = 0);

/// Model history ending at solution index n (requires n >= M).
HistoryState history_at(const Trajectory& traj, const HistoryGrid& h_grid, std::size_t n);

DatasetSplits split_by_trajectory(const std::vector<std::size_t>& ids, double f_train, double f_val, double f_test,
                                  std::uint64_t seed);

/// Whether initial histories of this family are shifted to be nonnegative.
bool default_nonneg(Family f);

/// Samples a spec and initial history, then runs the reference solver.
Trajectory generate_trajectory(std::uint64_t seed, Family family, const ParamRanges& ranges, const GridConfig& grid,
                               std::size_t n_saves, const std::string& regime = "in_distribution");

}  // namespace hsfno
