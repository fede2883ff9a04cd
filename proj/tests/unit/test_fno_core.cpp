#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "hsfno/fno_core.hpp"

using namespace hsfno;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// conj-transposed weights: (c_in, c_out, mt, mx)
std::vector<double> adjoint_weights(const SpectralConv& sc, const std::vector<double>& w) {
    const std::size_t m = sc.modes_theta * sc.modes_x;
    std::vector<double> out(w.size());
    for (std::size_t o = 0; o < sc.c_out; ++o)
        for (std::size_t i = 0; i < sc.c_in; ++i)
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t src = (o * sc.c_in + i) * m + k, dst = (i * sc.c_out + o) * m + k;
                out[2 * dst] = w[2 * src];
                out[2 * dst + 1] = -w[2 * src + 1];
            }
    return out;
}

FNOConfig tiny_config() {
    FNOConfig c;
    c.in_channels = 3;
    c.out_channels = 2;
    c.width = 4;
    c.n_layers = 2;
    c.modes_theta = 3;
    c.modes_x = 3;
    c.n_theta = 8;
    c.n_x = 8;
    return c;
}

}  // namespace

TEST_CASE("spectral conv: zero input and mean mode") {
    SpectralConv sc{1, 1, 1, 1};
    const std::vector<double> w{1.0, 0.0};
    const auto zero = sc.forward(std::vector<double>(6 * 10, 0.0), 6, 10, w);
    for (double v : zero) CHECK(v == 0.0);

    const auto x = randn(6 * 10, 1);
    double mean = 0;
    for (double v : x) mean += v;
    mean /= 60.0;
    for (double v : sc.forward(x, 6, 10, w)) CHECK(v == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("spectral conv: full-spectrum identity") {
    for (auto [nt, nx] : {std::pair<std::size_t, std::size_t>{8, 16}, {7, 10}, {5, 9}}) {
        SpectralConv sc{3, 3, nt / 2 + 1, nx / 2 + 1};
        std::vector<double> w(sc.weight_count(), 0.0);
        const std::size_t m = sc.modes_theta * sc.modes_x;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t k = 0; k < m; ++k) w[2 * ((c * 3 + c) * m + k)] = 1.0;
        const auto x = randn(3 * nt * nx, 2);
        const auto y = sc.forward(x, nt, nx, w);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-10);
    }
}

TEST_CASE("spectral conv: output is real before discard") {
    for (auto [nt, nx] : {std::pair<std::size_t, std::size_t>{8, 16}, {7, 12}, {16, 64}}) {
        SpectralConv sc{4, 3, nt / 2 + 1, nx / 2 + 1};
        const auto w = randn(sc.weight_count(), 3);
        double imag = 1.0;
        sc.forward(randn(4 * nt * nx, 4), nt, nx, w, nullptr, &imag);
        CHECK(imag < 1e-10);
    }
    SpectralConv too_many{1, 1, 6, 2};
    CHECK_THROWS(too_many.forward(std::vector<double>(64, 0.0), 8, 8, std::vector<double>(too_many.weight_count())));
}

TEST_CASE("spectral conv: adjoint identity") {
    for (auto [nt, nx] : {std::pair<std::size_t, std::size_t>{8, 16}, {7, 9}}) {
        SpectralConv sc{3, 2, 3, 4};
        const auto w = randn(sc.weight_count(), 5);
        const auto x = randn(3 * nt * nx, 6);
        const auto g = randn(2 * nt * nx, 7);
        std::vector<cplx> xh;
        sc.forward(x, nt, nx, w, &xh);
        std::vector<double> gin(x.size(), 0.0), gw(w.size(), 0.0);
        sc.backward(xh, g, nt, nx, w, gin, gw);

        SpectralConv adj{2, 3, 3, 4};
        const auto via_forward = adj.forward(g, nt, nx, adjoint_weights(sc, w));
        for (std::size_t i = 0; i < gin.size(); ++i) CHECK(std::abs(gin[i] - via_forward[i]) < 1e-10);

        // zero upstream gradient
        std::vector<double> gin0(x.size(), 0.0), gw0(w.size(), 0.0);
        sc.backward(xh, std::vector<double>(g.size(), 0.0), nt, nx, w, gin0, gw0);
        for (double v : gin0) CHECK(v == 0.0);
        for (double v : gw0) CHECK(v == 0.0);
    }
}

TEST_CASE("spectral conv: finite differences") {
    const std::size_t nt = 8, nx = 8;
    SpectralConv sc{2, 3, 3, 5};
    const auto g = randn(3 * nt * nx, 8);
    const std::size_t n_in = 2 * nt * nx;
    std::vector<double> z = randn(n_in, 9);
    const auto w0 = randn(sc.weight_count(), 10);
    z.insert(z.end(), w0.begin(), w0.end());
    FlatObjective f = [&](const std::vector<double>& v, std::vector<double>* grad) {
        std::span<const double> x(v.data(), n_in), w(v.data() + n_in, sc.weight_count());
        std::vector<cplx> xh;
        const auto y = sc.forward(x, nt, nx, w, &xh);
        if (grad) {
            grad->assign(v.size(), 0.0);
            sc.backward(xh, g, nt, nx, w, std::span<double>(grad->data(), n_in),
                        std::span<double>(grad->data() + n_in, sc.weight_count()));
        }
        return dot(y, g);
    };
    CHECK(grad_check(z, f, 1e-5, 100000) < 1e-5);
}

TEST_CASE("fno forward: zero and hand-traced cases") {
    auto c = tiny_config();
    auto p = init_params(c, 1);
    const Tensor zero_in({c.in_channels, 8, 8});
    for (double v : fno_forward(c, p, zero_in).data) CHECK(v == 0.0);

    c.n_layers = 1;
    auto q = zeros_for(c);
    q.proj1_b.assign(c.width, 0.5);
    q.proj2_w.assign(c.out_channels * c.width, 1.0);
    q.proj2_b = {-1.0, 2.0};
    // GELU(0.5) = 0.25 (1 + erf(0.5 / sqrt 2)), erf(0.35355339...) = 0.38292492254802624
    const double g05 = 0.25 * (1.0 + 0.38292492254802624);
    const auto out = fno_forward(c, q, Tensor({c.in_channels, 8, 8}, randn(3 * 64, 2)));
    for (std::size_t i = 0; i < 64; ++i) {
        CHECK(out.data[i] == doctest::Approx(-1.0 + 4 * g05).epsilon(1e-14));
        CHECK(out.data[64 + i] == doctest::Approx(2.0 + 4 * g05).epsilon(1e-14));
    }
}

TEST_CASE("fno forward: shape contract and determinism") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        FNOConfig c;
        c.in_channels = 1 + rng() % 5;
        c.out_channels = 1 + rng() % 4;
        c.width = 2 + rng() % 6;
        c.n_layers = 1 + rng() % 3;
        c.n_theta = 4 + rng() % 6;
        c.n_x = 6 + rng() % 10;
        c.modes_theta = 1 + rng() % (c.n_theta / 2 + 1);
        c.modes_x = 1 + rng() % (c.n_x / 2 + 1);
        const auto p = init_params(c, rng());
        CHECK(init_params(c, 99) == init_params(c, 99));
        const Tensor in({c.in_channels, c.n_theta, c.n_x}, randn(c.in_channels * c.n_theta * c.n_x, rng()));
        const auto out = fno_forward(c, p, in);
        CHECK(out.shape == Shape{c.out_channels, c.n_theta, c.n_x});
        CHECK(fno_forward(c, p, in) == out);
    }
    auto c = tiny_config();
    CHECK_THROWS(fno_forward(c, init_params(c, 1), Tensor({2, 8, 8})));
    c.modes_x = 6;
    CHECK_THROWS(c.validate());
}

TEST_CASE("fno backward: finite differences on a tiny config") {
    const auto c = tiny_config();
    const auto p0 = init_params(c, 21);
    const std::size_t n_par = p0.count();
    const std::size_t n_in = c.in_channels * 64;
    const auto g = randn(c.out_channels * 64, 22);
    std::vector<double> z = p0.flatten();
    const auto x0 = randn(n_in, 23);
    z.insert(z.end(), x0.begin(), x0.end());

    FlatObjective f = [&](const std::vector<double>& v, std::vector<double>* grad) {
        FNOParams p = p0;
        p.assign(std::span<const double>(v.data(), n_par));
        const Tensor in({c.in_channels, 8, 8}, std::vector<double>(v.begin() + static_cast<long>(n_par), v.end()));
        FNOCache cache;
        const auto y = fno_forward(c, p, in, grad ? &cache : nullptr);
        if (grad) {
            Tensor gin;
            const auto gp = fno_backward(c, p, cache, Tensor({c.out_channels, 8, 8}, g), &gin);
            *grad = gp.flatten();
            grad->insert(grad->end(), gin.data.begin(), gin.data.end());
        }
        return dot(y.data, g);
    };
    CHECK(grad_check(z, f, 1e-5, 600, 1) < 1e-5);

    // zero upstream gradient
    FNOCache cache;
    fno_forward(c, p0, Tensor({c.in_channels, 8, 8}, x0), &cache);
    Tensor gin;
    const auto gp = fno_backward(c, p0, cache, Tensor({c.out_channels, 8, 8}), &gin);
    for (double v : gp.flatten()) CHECK(v == 0.0);
    for (double v : gin.data) CHECK(v == 0.0);
}

TEST_CASE("fno backward: unexcited modes get no gradient in the first layer") {
    const auto c = tiny_config();
    const auto p = init_params(c, 3);
    // constant in theta: no energy at |s_theta| >= 1 after the pointwise lift
    Tensor in({c.in_channels, 8, 8});
    for (std::size_t ch = 0; ch < c.in_channels; ++ch)
        for (std::size_t t = 0; t < 8; ++t)
            for (std::size_t i = 0; i < 8; ++i)
                in.data[(ch * 8 + t) * 8 + i] = std::cos(2 * std::numbers::pi * static_cast<double>((ch + 1) * i) / 8.0);
    FNOCache cache;
    fno_forward(c, p, in, &cache);
    const auto gp = fno_backward(c, p, cache, Tensor({c.out_channels, 8, 8}, randn(c.out_channels * 64, 4)));
    const auto& gw = gp.layers[0].weights;
    const std::size_t m = c.modes_theta * c.modes_x;
    double frozen = 0, live = 0;
    for (std::size_t oi = 0; oi < c.width * c.width; ++oi)
        for (std::size_t at = 0; at < c.modes_theta; ++at)
            for (std::size_t ax = 0; ax < c.modes_x; ++ax) {
                const std::size_t k = oi * m + at * c.modes_x + ax;
                const double mag = std::hypot(gw[2 * k], gw[2 * k + 1]);
                (at == 0 ? live : frozen) = std::max(at == 0 ? live : frozen, mag);
            }
    CHECK(frozen < 1e-12);
    CHECK(live > 1e-6);
}

TEST_CASE("fno forward is resolution consistent for band-limited inputs") {
    FNOConfig c = tiny_config();
    c.n_layers = 1;
    c.width = 5;
    c.modes_theta = 3;
    c.modes_x = 4;
    c.n_theta = 8;
    c.n_x = 12;
    const auto p = init_params(c, 8);

    auto field = [&](std::size_t nt, std::size_t nx) {
        Tensor t({c.in_channels, nt, nx});
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(-1, 1);
        for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
            std::vector<double> a(9);
            for (auto& v : a) v = u(rng);
            for (std::size_t j = 0; j < nt; ++j)
                for (std::size_t i = 0; i < nx; ++i) {
                    const double th = 2 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(nt);
                    const double x = 2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(nx);
                    t.data[(ch * nt + j) * nx + i] = a[0] + a[1] * std::cos(th) + a[2] * std::sin(2 * th) +
                                                     a[3] * std::cos(3 * x) + a[4] * std::sin(x + th) +
                                                     a[5] * std::cos(2 * x - th) + a[6] * std::sin(5 * x) +
                                                     a[7] * std::cos(3 * th + 2 * x) + a[8];
                }
        }
        return t;
    };
    const auto coarse = fno_forward(c, p, field(8, 12));
    const auto fine = fno_forward(c, p, field(16, 24));
    double worst = 0;
    for (std::size_t o = 0; o < c.out_channels; ++o)
        for (std::size_t j = 0; j < 8; ++j)
            for (std::size_t i = 0; i < 12; ++i)
                worst = std::max(worst, std::abs(coarse.data[(o * 8 + j) * 12 + i] -
                                                 fine.data[(o * 16 + 2 * j) * 24 + 2 * i]));
    CHECK(worst < 1e-8);
}

TEST_CASE("init scale on the default config") {
    FNOConfig c;
    c.in_channels = 7;
    const auto p = init_params(c, 0);
    const auto x = randn(c.in_channels * c.n_theta * c.n_x, 1);
    const auto y = fno_forward(c, p, Tensor({c.in_channels, c.n_theta, c.n_x}, x));
    const double r = std::sqrt(dot(y.data, y.data) / static_cast<double>(y.size()));
    CHECK(r >= 0.01);
    CHECK(r <= 10.0);
}

TEST_CASE("adam") {
    FNOConfig c = tiny_config();
    auto p = init_params(c, 2);
    const auto before = p;
    auto s = make_adam(p);
    adam_step(p, zeros_like(p), s);
    CHECK(p == before);
    CHECK(s.step == 1);

    // first step of a scalar: -lr g / (|g| + eps)
    auto q = zeros_like(p);
    auto g = zeros_like(p);
    g.proj2_b[0] = 0.37;
    g.proj2_b[1] = -2e-3;
    auto sq = make_adam(q, 1e-3);
    adam_step(q, g, sq);
    CHECK(q.proj2_b[0] == doctest::Approx(-1e-3 * 0.37 / (0.37 + 1e-8)).epsilon(1e-13));
    CHECK(q.proj2_b[1] == doctest::Approx(1e-3 * 2e-3 / (2e-3 + 1e-8)).epsilon(1e-13));

    auto run = [&] {
        auto r = init_params(c, 5);
        auto st = make_adam(r);
        for (int k = 0; k < 3; ++k) {
            auto gr = zeros_like(r);
            auto flat = r.flatten();
            for (auto& v : flat) v = std::sin(v * 3.0 + k);
            gr.assign(flat);
            adam_step(r, gr, st);
        }
        return r;
    };
    CHECK(run() == run());
}

TEST_CASE("grad_check") {
    const std::vector<double> a{1.0, -2.0, 0.5};
    FlatObjective f = [&](const std::vector<double>& z, std::vector<double>* g) {
        double s = 0;
        if (g) g->assign(z.size(), 0.0);
        for (std::size_t i = 0; i < z.size(); ++i) {
            s += a[i] * z[i] * z[i];
            if (g) (*g)[i] = 2 * a[i] * z[i];
        }
        return s;
    };
    CHECK(grad_check({0.3, 0.7, -1.1}, f, 1e-4) < 1e-9);
    try {
        grad_check({0.3, 0.7, -1.1}, f, 0.0);
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()) == "invalid step");
    }
}

TEST_CASE("checkpoint round trip") {
    const auto c = tiny_config();
    Checkpoint ck{c, {init_params(c, 1), init_params(c, 2)}, {{"kind", "hs_fno"}}};
    const auto bytes = encode_checkpoint(ck);
    const auto back = decode_checkpoint(bytes);
    CHECK(back.config == c);
    REQUIRE(back.blocks.size() == 2);
    CHECK(back.blocks[0] == ck.blocks[0]);
    CHECK(back.blocks[1] == ck.blocks[1]);
    CHECK(back.extra.at("kind") == "hs_fno");

    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_WITH(decode_checkpoint(bad), "bad magic");
    bad = bytes;
    bad[bad.size() - 30] ^= 1;
    CHECK_THROWS_WITH(decode_checkpoint(bad), "checksum failure");
    CHECK_THROWS_WITH(decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 100)),
                      "truncated payload");
}
