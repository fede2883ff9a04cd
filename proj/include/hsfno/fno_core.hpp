#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsfno/fft.hpp"
#include "hsfno/tensor.hpp"

namespace hsfno {

struct FNOConfig {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t width = 32;
    std::size_t n_layers = 4;
    std::size_t modes_theta = 8;
    std::size_t modes_x = 16;
    std::size_t n_theta = 16;   // M + 1
    std::size_t n_x = 64;

    void validate() const;
    bool operator==(const FNOConfig&) const = default;
};

nlohmann::json to_json(const FNOConfig& c);
FNOConfig fno_config_from_json(const nlohmann::json& j);

struct SpectralLayer {
    std::vector<double> weights;   // (width, width, modes_theta, modes_x) complex, interleaved
    std::vector<double> bypass_w;  // (width, width)
    std::vector<double> bypass_b;  // (width)

    bool operator==(const SpectralLayer&) const = default;
};

/// Parameter arrays. `for_each` visits them in declaration order, which is
/// also the checkpoint and Adam layout.
struct FNOParams {
    std::vector<double> lift_w, lift_b;
    std::vector<SpectralLayer> layers;
    std::vector<double> proj1_w, proj1_b, proj2_w, proj2_b;

    template <typename F>
    void for_each(F&& f) {
        f(lift_w);
        f(lift_b);
        for (auto& l : layers) {
            f(l.weights);
            f(l.bypass_w);
            f(l.bypass_b);
        }
        f(proj1_w);
        f(proj1_b);
        f(proj2_w);
        f(proj2_b);
    }
    template <typename F>
    void for_each(F&& f) const {
        const_cast<FNOParams*>(this)->for_each([&](std::vector<double>& v) { f(static_cast<const std::vector<double>&>(v)); });
    }

    std::size_t count() const;
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
    bool all_finite() const;
    bool operator==(const FNOParams&) const = default;
};

/// Same shapes as `p`, all zeros.
FNOParams zeros_like(const FNOParams& p);
FNOParams zeros_for(const FNOConfig& c);

FNOParams init_params(const FNOConfig& c, std::uint64_t seed);

double gelu(double x);
double gelu_grad(double x);

/// Truncated mode mixing over a (n_theta, n_x) periodic grid. Mode (s_t, s_x)
/// (signed frequencies) is kept when |s_t| < modes_theta and |s_x| < modes_x
/// and is multiplied by W[:, :, |s_t|, |s_x|], by its conjugate on the
/// Hermitian partner, and by its real part on self-conjugate modes, so the
/// output is real by construction.
struct SpectralConv {
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::size_t modes_theta = 1;
    std::size_t modes_x = 1;

    std::size_t weight_count() const { return 2 * c_out * c_in * modes_theta * modes_x; }
    void check_grid(std::size_t n_theta, std::size_t n_x) const;

    /// x: (c_in, n_theta, n_x). Optionally returns the input spectrum for the
    /// backward pass and the largest imaginary residue before it is dropped.
    std::vector<double> forward(std::span<const double> x, std::size_t n_theta, std::size_t n_x,
                                std::span<const double> weights, std::vector<cplx>* x_hat = nullptr,
                                double* max_imag = nullptr) const;

    /// Accumulates into grad_in (c_in, n_theta, n_x) and grad_w.
    void backward(std::span<const cplx> x_hat, std::span<const double> grad_out, std::size_t n_theta,
                  std::size_t n_x, std::span<const double> weights, std::span<double> grad_in,
                  std::span<double> grad_w) const;
};

/// Activations kept by fno_forward for the backward pass.
struct FNOCache {
    std::size_t n_theta = 0, n_x = 0;
    std::vector<double> input;
    std::vector<std::vector<double>> v;       // layer inputs v_0 .. v_L
    std::vector<std::vector<cplx>> v_hat;     // spectra of v_0 .. v_{L-1}
    std::vector<std::vector<double>> z;       // layer pre-activations
    std::vector<double> q, a;                 // projection pre-activation and activation
};

/// input: (in_channels, n_theta, n_x); the grid may differ from the
/// configured one as long as the mode budget fits.
Tensor fno_forward(const FNOConfig& c, const FNOParams& p, const Tensor& input, FNOCache* cache = nullptr);

/// Returns d(loss)/d(params); writes d(loss)/d(input) when grad_input is set.
FNOParams fno_backward(const FNOConfig& c, const FNOParams& p, const FNOCache& cache, const Tensor& grad_out,
                       Tensor* grad_input = nullptr);

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    FNOParams m, v;
};

AdamState make_adam(const FNOParams& p, double lr = 1e-3);
void adam_step(FNOParams& p, const FNOParams& grads, AdamState& state);

/// Loss and gradient over a flat coordinate vector.
using FlatObjective = std::function<double(const std::vector<double>& z, std::vector<double>* grad)>;

/// Central differences on a seeded subsample of coordinates (all of them when
/// there are fewer than `samples`). Relative error per coordinate is
/// |a - n| / max(|a|, |n|, floor).
double grad_check(const std::vector<double>& z, const FlatObjective& f, double h, std::size_t samples = 256,
                  std::uint64_t seed = 0, double floor = 1e-7);

// "HSFP" checkpoint: magic, u16 version, u64 header length, JSON header,
// parameter blocks as LE f64 in declaration order, CRC32 of all prior bytes.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    FNOConfig config;
    std::vector<FNOParams> blocks;   // params, then optional optimizer moments
    nlohmann::json extra = nlohmann::json::object();
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hsfno
