#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hsfno/dpde_solvers.hpp"

namespace hsfno {

/// Next-slice map on a flat history (M+1 slices of n values, oldest first).
using SliceMap = std::function<std::vector<double>(std::span<const double> h)>;

struct DiscreteShiftSystem {
    std::size_t n = 1;
    std::size_t M = 1;
    SliceMap phi;
    double lipschitz = 0.0;   // 0 when unknown; w.r.t. the max-over-slices Euclidean norm

    std::size_t size() const { return (M + 1) * n; }
};

/// S(h): drop h_0, shift, append phi(h).
std::vector<double> exact_shift_map(const DiscreteShiftSystem& sys, std::span<const double> h);
/// Same update with a learned slice map psi in place of phi.
std::vector<double> shift_append_map(const DiscreteShiftSystem& sys, const SliceMap& psi, std::span<const double> h);

/// phi(h) = sum_j A_j h_j with row-major n x n blocks; lipschitz = sum_j |A_j|_2.
DiscreteShiftSystem linear_system(std::size_t n, std::size_t M, std::vector<std::vector<double>> blocks);
double spectral_norm(std::span<const double> A, std::size_t n);

/// Sampled lower estimate of the Lipschitz constant around random points.
double estimate_lipschitz(const DiscreteShiftSystem& sys, std::size_t samples, std::uint64_t seed,
                          double radius = 1.0);

struct IrreducibleReport {
    double bound = 0.0;           // p (1 - p) |y - y'|^2
    double analytic_risk = 0.0;   // risk at z* = p y + (1 - p) y'
    double grid_min = 0.0;
    bool ok = false;
};

/// Two-point conditional risk p |z - y|^2 + (1 - p) |z - y'|^2 minimized over
/// the candidates and at the analytic optimum.
IrreducibleReport irreducible_error_check(std::span<const double> y, std::span<const double> y_prime, double p,
                                          const std::vector<std::vector<double>>& candidates, double tol = 1e-9);
/// Scalar candidates lo, lo + step, ..., hi.
std::vector<std::vector<double>> scalar_grid(double lo, double hi, double step);

struct DecompositionReport {
    double lhs = 0.0;              // mean weighted history loss of A_psi
    double rhs = 0.0;              // mean omega_M |psi - phi|^2
    double rel_diff = 0.0;
    double max_transported = 0.0;  // largest per-slice term with j < M (must be exactly 0)
    double excess = 0.0;           // mean loss of Q minus lhs, Q = A_psi with slice 0 perturbed
    double expected_excess = 0.0;  // omega_0 |delta|^2
    bool ok = false;
};

DecompositionReport loss_decomposition_check(const DiscreteShiftSystem& sys, const SliceMap& psi,
                                             const std::vector<std::vector<double>>& samples,
                                             std::vector<double> omega = {}, std::vector<double> delta = {},
                                             double tol = 1e-12);

struct RecurrenceReport {
    std::vector<double> a;        // newest-slice error after steps 1..K
    std::vector<double> bound;    // eps + L max over the window of earlier errors
    double max_violation = 0.0;   // max_k a_k - bound_k (<= 0 when the bound holds)
    double max_gap = 0.0;         // max_k |a_k - bound_k|
    bool holds = false;
    bool shift_exact = false;     // e_j^{k+1} == e_{j+1}^k bit for bit
};

/// Exact and predicted rollouts from the same start; eps bounds |psi - phi|.
RecurrenceReport rollout_recurrence_check(const DiscreteShiftSystem& sys, const SliceMap& psi, double eps,
                                          std::span<const double> h0, std::size_t n_steps, double tol = 1e-12);

// Solver self-convergence ---------------------------------------------------

using InitialFn = std::function<double(double theta, double x, std::size_t channel)>;

HistoryState sample_history(const InitialFn& phi, const HistoryGrid& h_grid, const SpatialGrid& s_grid,
                            std::size_t channels);

struct ConvergenceReport {
    std::vector<double> steps;    // dt or dx of the coarser run in each difference
    std::vector<double> errors;   // RMS of successive differences
    double order = 0.0;           // least-squares slope of log error vs log step
};

/// Runs the reference solver at each dt (finest last, each dividing save_dt)
/// up to `horizon` and fits the slope of successive differences.
ConvergenceReport solver_convergence_order(const BenchmarkSpec& spec, const InitialFn& phi,
                                           const std::vector<double>& dts, double horizon);

/// Same with nested spatial refinement (dirichlet / neumann: n_x = 2^k + 1;
/// periodic: doubling). Differences are taken on the coarser nodes.
ConvergenceReport spatial_convergence_order(const BenchmarkSpec& spec, const InitialFn& phi,
                                            const std::vector<std::size_t>& n_xs, double horizon);

}  // namespace hsfno
