#include "hsfno/fno_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "hsfno/binary_io.hpp"

namespace hsfno {

using nlohmann::json;

void FNOConfig::validate() const {
    if (in_channels < 1 || out_channels < 1 || width < 1) throw std::invalid_argument("FNOConfig: empty channel count");
    if (n_layers < 1) throw std::invalid_argument("FNOConfig: n_layers must be >= 1");
    if (modes_theta < 1 || modes_x < 1) throw std::invalid_argument("FNOConfig: modes must be >= 1");
    if (modes_theta > n_theta / 2 + 1 || modes_x > n_x / 2 + 1)
        throw std::invalid_argument("FNOConfig: mode budget exceeds grid");
}

json to_json(const FNOConfig& c) {
    return json{{"in_channels", c.in_channels}, {"out_channels", c.out_channels}, {"width", c.width},
                {"n_layers", c.n_layers},       {"modes_theta", c.modes_theta},   {"modes_x", c.modes_x},
                {"n_theta", c.n_theta},         {"n_x", c.n_x}};
}

FNOConfig fno_config_from_json(const json& j) {
    FNOConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.out_channels = j.at("out_channels").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.modes_theta = j.at("modes_theta").get<std::size_t>();
    c.modes_x = j.at("modes_x").get<std::size_t>();
    c.n_theta = j.at("n_theta").get<std::size_t>();
    c.n_x = j.at("n_x").get<std::size_t>();
    return c;
}

std::size_t FNOParams::count() const {
    std::size_t n = 0;
    for_each([&](const std::vector<double>& v) { n += v.size(); });
    return n;
}

std::vector<double> FNOParams::flatten() const {
    std::vector<double> out;
    out.reserve(count());
    for_each([&](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); });
    return out;
}

void FNOParams::assign(std::span<const double> flat) {
    if (flat.size() != count()) throw std::invalid_argument("FNOParams: flat size mismatch");
    std::size_t off = 0;
    for_each([&](std::vector<double>& v) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
        off += v.size();
    });
}

bool FNOParams::all_finite() const {
    bool ok = true;
    for_each([&](const std::vector<double>& v) {
        for (double x : v) ok = ok && std::isfinite(x);
    });
    return ok;
}

FNOParams zeros_like(const FNOParams& p) {
    FNOParams z = p;
    z.for_each([](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
    return z;
}

FNOParams zeros_for(const FNOConfig& c) {
    FNOParams p;
    const std::size_t w = c.width;
    p.lift_w.assign(w * c.in_channels, 0.0);
    p.lift_b.assign(w, 0.0);
    p.layers.resize(c.n_layers);
    for (auto& l : p.layers) {
        l.weights.assign(2 * w * w * c.modes_theta * c.modes_x, 0.0);
        l.bypass_w.assign(w * w, 0.0);
        l.bypass_b.assign(w, 0.0);
    }
    p.proj1_w.assign(w * w, 0.0);
    p.proj1_b.assign(w, 0.0);
    p.proj2_w.assign(c.out_channels * w, 0.0);
    p.proj2_b.assign(c.out_channels, 0.0);
    return p;
}

FNOParams init_params(const FNOConfig& c, std::uint64_t seed) {
    c.validate();
    FNOParams p = zeros_for(c);
    std::mt19937_64 rng(seed);
    auto fill_uniform = [&](std::vector<double>& v, double bound) {
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& x : v) x = u(rng);
    };
    auto xavier = [](std::size_t fan_in, std::size_t fan_out) {
        return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    };
    const std::size_t w = c.width;
    fill_uniform(p.lift_w, xavier(c.in_channels, w));
    const double spec_bound =
        1.0 / (static_cast<double>(w) * std::sqrt(static_cast<double>(c.modes_theta * c.modes_x)));
    for (auto& l : p.layers) {
        fill_uniform(l.weights, spec_bound);
        fill_uniform(l.bypass_w, xavier(w, w));
    }
    fill_uniform(p.proj1_w, xavier(w, w));
    fill_uniform(p.proj2_w, xavier(w, c.out_channels));
    return p;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * pdf;
}

// ---------------------------------------------------------------------------
// spectral convolution

namespace {

enum class ModeUse : unsigned char { weight, conjugate, real_part };

struct ModeEntry {
    std::size_t k;      // flat spectrum index
    std::size_t widx;   // |s_t| * modes_x + |s_x|
    ModeUse use;
};

long signed_freq(std::size_t k, std::size_t n) {
    return k <= n / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

std::vector<ModeEntry> retained_modes(std::size_t nt, std::size_t nx, std::size_t mt, std::size_t mx) {
    std::vector<ModeEntry> out;
    for (std::size_t kt = 0; kt < nt; ++kt) {
        const long st = signed_freq(kt, nt);
        const auto at = static_cast<std::size_t>(std::labs(st));
        if (at >= mt) continue;
        const bool t_self = st == 0 || (nt % 2 == 0 && at == nt / 2);
        for (std::size_t kx = 0; kx < nx; ++kx) {
            const long sx = signed_freq(kx, nx);
            const auto ax = static_cast<std::size_t>(std::labs(sx));
            if (ax >= mx) continue;
            const bool x_self = sx == 0 || (nx % 2 == 0 && ax == nx / 2);
            ModeUse use;
            if (x_self)
                use = t_self ? ModeUse::real_part : (st > 0 ? ModeUse::weight : ModeUse::conjugate);
            else
                use = sx > 0 ? ModeUse::weight : ModeUse::conjugate;
            out.push_back({kt * nx + kx, at * mx + ax, use});
        }
    }
    return out;
}

inline cplx weight_at(std::span<const double> w, std::size_t idx, ModeUse use) {
    const double re = w[2 * idx], im = w[2 * idx + 1];
    switch (use) {
        case ModeUse::weight: return {re, im};
        case ModeUse::conjugate: return {re, -im};
        case ModeUse::real_part: return {re, 0.0};
    }
    return {};
}

}  // namespace

void SpectralConv::check_grid(std::size_t n_theta, std::size_t n_x) const {
    if (modes_theta < 1 || modes_x < 1 || modes_theta > n_theta / 2 + 1 || modes_x > n_x / 2 + 1)
        throw std::invalid_argument("spectral_conv: mode budget exceeds grid");
}

std::vector<double> SpectralConv::forward(std::span<const double> x, std::size_t n_theta, std::size_t n_x,
                                          std::span<const double> weights, std::vector<cplx>* x_hat,
                                          double* max_imag) const {
    check_grid(n_theta, n_x);
    const std::size_t P = n_theta * n_x;
    if (x.size() != c_in * P || weights.size() != weight_count())
        throw std::invalid_argument("spectral_conv: shape mismatch");

    std::vector<cplx> X(c_in * P);
    for (std::size_t i = 0; i < c_in; ++i) {
        std::span<cplx> xi(X.data() + i * P, P);
        for (std::size_t p = 0; p < P; ++p) xi[p] = x[i * P + p];
        fft2_inplace(xi, n_theta, n_x);
    }

    const auto modes = retained_modes(n_theta, n_x, modes_theta, modes_x);
    const std::size_t wstride = modes_theta * modes_x;
    std::vector<cplx> Y(c_out * P, cplx{});
    for (const auto& e : modes) {
        for (std::size_t o = 0; o < c_out; ++o) {
            cplx acc{};
            for (std::size_t i = 0; i < c_in; ++i)
                acc += weight_at(weights, (o * c_in + i) * wstride + e.widx, e.use) * X[i * P + e.k];
            Y[o * P + e.k] = acc;
        }
    }

    std::vector<double> y(c_out * P);
    double worst = 0.0;
    for (std::size_t o = 0; o < c_out; ++o) {
        std::span<cplx> yo(Y.data() + o * P, P);
        ifft2_inplace(yo, n_theta, n_x);
        for (std::size_t p = 0; p < P; ++p) {
            y[o * P + p] = yo[p].real();
            worst = std::max(worst, std::abs(yo[p].imag()));
        }
    }
    if (max_imag) *max_imag = worst;
    if (x_hat) *x_hat = std::move(X);
    return y;
}

void SpectralConv::backward(std::span<const cplx> x_hat, std::span<const double> grad_out, std::size_t n_theta,
                            std::size_t n_x, std::span<const double> weights, std::span<double> grad_in,
                            std::span<double> grad_w) const {
    check_grid(n_theta, n_x);
    const std::size_t P = n_theta * n_x;
    if (x_hat.size() != c_in * P || grad_out.size() != c_out * P || grad_in.size() != c_in * P ||
        weights.size() != weight_count() || grad_w.size() != weight_count())
        throw std::invalid_argument("spectral_conv: shape mismatch");

    std::vector<cplx> G(c_out * P);
    for (std::size_t o = 0; o < c_out; ++o) {
        std::span<cplx> go(G.data() + o * P, P);
        for (std::size_t p = 0; p < P; ++p) go[p] = grad_out[o * P + p];
        fft2_inplace(go, n_theta, n_x);
    }

    const auto modes = retained_modes(n_theta, n_x, modes_theta, modes_x);
    const std::size_t wstride = modes_theta * modes_x;
    const double inv_n = 1.0 / static_cast<double>(P);
    std::vector<cplx> Z(c_in * P, cplx{});
    for (const auto& e : modes) {
        for (std::size_t o = 0; o < c_out; ++o) {
            const cplx g = G[o * P + e.k];
            for (std::size_t i = 0; i < c_in; ++i) {
                const std::size_t widx = (o * c_in + i) * wstride + e.widx;
                Z[i * P + e.k] += std::conj(weight_at(weights, widx, e.use)) * g;
                const cplx z = g * std::conj(x_hat[i * P + e.k]) * inv_n;
                switch (e.use) {
                    case ModeUse::weight:
                        grad_w[2 * widx] += z.real();
                        grad_w[2 * widx + 1] += z.imag();
                        break;
                    case ModeUse::conjugate:
                        grad_w[2 * widx] += z.real();
                        grad_w[2 * widx + 1] -= z.imag();
                        break;
                    case ModeUse::real_part: grad_w[2 * widx] += z.real(); break;
                }
            }
        }
    }
    for (std::size_t i = 0; i < c_in; ++i) {
        std::span<cplx> zi(Z.data() + i * P, P);
        ifft2_inplace(zi, n_theta, n_x);
        for (std::size_t p = 0; p < P; ++p) grad_in[i * P + p] += zi[p].real();
    }
}

// ---------------------------------------------------------------------------
// network

namespace {

// y (o x P) = W (o x i) x (i x P) + b
std::vector<double> affine(std::span<const double> W, std::span<const double> b, std::span<const double> x,
                           std::size_t n_out, std::size_t n_in, std::size_t P) {
    std::vector<double> y(n_out * P);
    for (std::size_t o = 0; o < n_out; ++o) {
        double* yo = y.data() + o * P;
        std::fill(yo, yo + P, b[o]);
        for (std::size_t i = 0; i < n_in; ++i) {
            const double w = W[o * n_in + i];
            const double* xi = x.data() + i * P;
            for (std::size_t p = 0; p < P; ++p) yo[p] += w * xi[p];
        }
    }
    return y;
}

void affine_backward(std::span<const double> W, std::span<const double> x, std::span<const double> g,
                     std::size_t n_out, std::size_t n_in, std::size_t P, std::span<double> dW, std::span<double> db,
                     std::span<double> dx) {
    for (std::size_t o = 0; o < n_out; ++o) {
        const double* go = g.data() + o * P;
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += go[p];
        db[o] += s;
        for (std::size_t i = 0; i < n_in; ++i) {
            const double* xi = x.data() + i * P;
            double d = 0.0;
            for (std::size_t p = 0; p < P; ++p) d += go[p] * xi[p];
            dW[o * n_in + i] += d;
            if (!dx.empty()) {
                const double w = W[o * n_in + i];
                double* dxi = dx.data() + i * P;
                for (std::size_t p = 0; p < P; ++p) dxi[p] += w * go[p];
            }
        }
    }
}

SpectralConv layer_conv(const FNOConfig& c) { return {c.width, c.width, c.modes_theta, c.modes_x}; }

void check_params(const FNOConfig& c, const FNOParams& p) {
    const FNOParams shape = zeros_for(c);
    bool ok = p.layers.size() == shape.layers.size();
    if (ok) {
        std::vector<std::size_t> a, b;
        p.for_each([&](const std::vector<double>& v) { a.push_back(v.size()); });
        shape.for_each([&](const std::vector<double>& v) { b.push_back(v.size()); });
        ok = a == b;
    }
    if (!ok) throw std::invalid_argument("fno: params do not match config");
}

}  // namespace

Tensor fno_forward(const FNOConfig& c, const FNOParams& p, const Tensor& input, FNOCache* cache) {
    if (input.rank() != 3 || input.dim(0) != c.in_channels) throw std::invalid_argument("fno_forward: shape mismatch");
    check_params(c, p);
    if (!p.all_finite()) throw std::invalid_argument("fno_forward: non-finite params");
    const std::size_t nt = input.dim(1), nx = input.dim(2), P = nt * nx, w = c.width;
    const SpectralConv conv = layer_conv(c);
    conv.check_grid(nt, nx);

    FNOCache local;
    FNOCache& k = cache ? *cache : local;
    k = FNOCache{};
    k.n_theta = nt;
    k.n_x = nx;
    if (cache) k.input = input.data;

    std::vector<double> v = affine(p.lift_w, p.lift_b, input.data, w, c.in_channels, P);
    for (const auto& layer : p.layers) {
        std::vector<cplx> v_hat;
        std::vector<double> z = conv.forward(v, nt, nx, layer.weights, cache ? &v_hat : nullptr);
        const auto byp = affine(layer.bypass_w, layer.bypass_b, v, w, w, P);
        for (std::size_t q = 0; q < z.size(); ++q) z[q] += byp[q];
        std::vector<double> next(z.size());
        for (std::size_t q = 0; q < z.size(); ++q) next[q] = gelu(z[q]);
        if (cache) {
            k.v.push_back(std::move(v));
            k.v_hat.push_back(std::move(v_hat));
            k.z.push_back(std::move(z));
        }
        v = std::move(next);
    }
    std::vector<double> q = affine(p.proj1_w, p.proj1_b, v, w, w, P);
    std::vector<double> a(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) a[i] = gelu(q[i]);
    Tensor out({c.out_channels, nt, nx}, affine(p.proj2_w, p.proj2_b, a, c.out_channels, w, P));
    if (cache) {
        k.v.push_back(std::move(v));
        k.q = std::move(q);
        k.a = std::move(a);
    }
    return out;
}

FNOParams fno_backward(const FNOConfig& c, const FNOParams& p, const FNOCache& k, const Tensor& grad_out,
                       Tensor* grad_input) {
    check_params(c, p);
    const std::size_t nt = k.n_theta, nx = k.n_x, P = nt * nx, w = c.width;
    if (k.v.size() != c.n_layers + 1 || k.input.size() != c.in_channels * P)
        throw std::invalid_argument("fno_backward: cache does not match params");
    if (grad_out.size() != c.out_channels * P) throw std::invalid_argument("fno_backward: shape mismatch");
    const SpectralConv conv = layer_conv(c);

    FNOParams g = zeros_like(p);
    std::vector<double> ga(w * P, 0.0);
    affine_backward(p.proj2_w, k.a, grad_out.data, c.out_channels, w, P, g.proj2_w, g.proj2_b, ga);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= gelu_grad(k.q[i]);
    std::vector<double> gv(w * P, 0.0);
    affine_backward(p.proj1_w, k.v.back(), ga, w, w, P, g.proj1_w, g.proj1_b, gv);

    for (std::size_t l = c.n_layers; l-- > 0;) {
        const auto& layer = p.layers[l];
        auto& gl = g.layers[l];
        std::vector<double> gz(w * P);
        for (std::size_t i = 0; i < gz.size(); ++i) gz[i] = gv[i] * gelu_grad(k.z[l][i]);
        std::vector<double> gprev(w * P, 0.0);
        affine_backward(layer.bypass_w, k.v[l], gz, w, w, P, gl.bypass_w, gl.bypass_b, gprev);
        conv.backward(k.v_hat[l], gz, nt, nx, layer.weights, gprev, gl.weights);
        gv = std::move(gprev);
    }

    std::vector<double> gin;
    if (grad_input) gin.assign(c.in_channels * P, 0.0);
    affine_backward(p.lift_w, k.input, gv, w, c.in_channels, P, g.lift_w, g.lift_b, gin);
    if (grad_input) *grad_input = Tensor({c.in_channels, nt, nx}, std::move(gin));
    return g;
}

// ---------------------------------------------------------------------------
// optimizer, gradient check

AdamState make_adam(const FNOParams& p, double lr) {
    AdamState s;
    s.lr = lr;
    s.m = zeros_like(p);
    s.v = zeros_like(p);
    return s;
}

void adam_step(FNOParams& p, const FNOParams& grads, AdamState& s) {
    s.step += 1;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    std::vector<std::vector<double>*> P, G, M, V;
    p.for_each([&](std::vector<double>& v) { P.push_back(&v); });
    const_cast<FNOParams&>(grads).for_each([&](std::vector<double>& v) { G.push_back(&v); });
    s.m.for_each([&](std::vector<double>& v) { M.push_back(&v); });
    s.v.for_each([&](std::vector<double>& v) { V.push_back(&v); });
    if (G.size() != P.size() || M.size() != P.size() || V.size() != P.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    for (std::size_t a = 0; a < P.size(); ++a) {
        auto& pa = *P[a];
        const auto& ga = *G[a];
        auto& ma = *M[a];
        auto& va = *V[a];
        if (ga.size() != pa.size() || ma.size() != pa.size() || va.size() != pa.size())
            throw std::invalid_argument("adam_step: shape mismatch");
        for (std::size_t i = 0; i < pa.size(); ++i) {
            ma[i] = s.beta1 * ma[i] + (1.0 - s.beta1) * ga[i];
            va[i] = s.beta2 * va[i] + (1.0 - s.beta2) * ga[i] * ga[i];
            const double mhat = ma[i] / bc1;
            const double vhat = va[i] / bc2;
            pa[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
        }
    }
}

double grad_check(const std::vector<double>& z, const FlatObjective& f, double h, std::size_t samples,
                  std::uint64_t seed, double floor) {
    if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("invalid step");
    std::vector<double> grad;
    f(z, &grad);
    if (grad.size() != z.size()) throw std::invalid_argument("grad_check: gradient size mismatch");

    std::vector<std::size_t> idx(z.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (samples < idx.size()) {
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(samples);
    }

    double worst = 0.0;
    std::vector<double> zp = z;
    for (std::size_t i : idx) {
        zp[i] = z[i] + h;
        const double fp = f(zp, nullptr);
        zp[i] = z[i] - h;
        const double fm = f(zp, nullptr);
        zp[i] = z[i];
        const double num = (fp - fm) / (2.0 * h);
        const double den = std::max({std::abs(grad[i]), std::abs(num), floor});
        worst = std::max(worst, std::abs(grad[i] - num) / den);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// checkpoint

namespace {
constexpr char kCkMagic[4] = {'H', 'S', 'F', 'P'};
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    for (const auto& b : ck.blocks) check_params(ck.config, b);
    json header{{"format", "HSFP"}, {"config", to_json(ck.config)}, {"blocks", ck.blocks.size()}, {"extra", ck.extra}};
    const std::string text = header.dump();
    ByteWriter w;
    w.text(std::string_view(kCkMagic, 4));
    w.u16(kCheckpointVersion);
    w.u64(text.size());
    w.text(text);
    for (const auto& b : ck.blocks) b.for_each([&](const std::vector<double>& v) { w.f64s(v); });
    w.u32(crc32_of(w.buffer()));
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.remaining() < 4) throw std::runtime_error("bad magic");
    const auto magic = r.bytes(4);
    for (int i = 0; i < 4; ++i)
        if (magic[static_cast<std::size_t>(i)] != static_cast<std::uint8_t>(kCkMagic[i]))
            throw std::runtime_error("bad magic");
    if (r.u16() != kCheckpointVersion) throw std::runtime_error("version mismatch");
    const std::uint64_t hlen = r.u64();
    if (hlen > r.remaining()) throw std::runtime_error("truncated payload");
    const auto htext = r.bytes(static_cast<std::size_t>(hlen));
    json header;
    try {
        header = json::parse(htext.begin(), htext.end());
    } catch (const json::exception&) {
        throw std::runtime_error("corrupt header");
    }
    Checkpoint ck;
    ck.config = fno_config_from_json(header.at("config"));
    ck.config.validate();
    ck.extra = header.value("extra", json::object());
    const std::size_t n_blocks = header.at("blocks").get<std::size_t>();
    const FNOParams shape = zeros_for(ck.config);
    if (n_blocks * shape.count() > r.remaining() / 8) throw std::runtime_error("truncated payload");
    for (std::size_t b = 0; b < n_blocks; ++b) {
        FNOParams p = shape;
        p.for_each([&](std::vector<double>& v) { v = r.f64s(v.size()); });
        ck.blocks.push_back(std::move(p));
    }
    const std::size_t body = r.position();
    const std::uint32_t stored = r.u32();
    if (r.remaining() != 0) throw std::runtime_error("trailing bytes");
    if (crc32_of(bytes.first(body)) != stored) throw std::runtime_error("checksum failure");
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace hsfno
