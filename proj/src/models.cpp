#include "hsfno/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hsfno {

using nlohmann::json;

std::string_view to_string(ModelType t) {
    switch (t) {
        case ModelType::hs_fno: return "hs_fno";
        case ModelType::current_state: return "current_state";
        case ModelType::lag_stack: return "lag_stack";
        case ModelType::history2history: return "history2history";
    }
    return "?";
}

ModelType model_type_from_string(std::string_view name) {
    for (ModelType t : all_model_types())
        if (to_string(t) == name) return t;
    throw std::invalid_argument("unknown model kind: " + std::string(name));
}

std::vector<ModelType> all_model_types() {
    return {ModelType::hs_fno, ModelType::current_state, ModelType::lag_stack, ModelType::history2history};
}

std::string_view to_string(CondMode c) {
    switch (c) {
        case CondMode::none: return "none";
        case CondMode::no_delay: return "no_delay";
        case CondMode::full: return "full";
    }
    return "?";
}

CondMode cond_mode_from_string(std::string_view name) {
    for (CondMode c : {CondMode::none, CondMode::no_delay, CondMode::full})
        if (to_string(c) == name) return c;
    throw std::invalid_argument("unknown conditioning mode: " + std::string(name));
}

std::vector<std::size_t> lag_rows(const ModelKind& kind, std::size_t m_slices) {
    if (kind.n_lags < 1) throw std::invalid_argument("lag_stack: n_lags must be >= 1");
    std::size_t spacing = kind.lag_spacing;
    if (spacing == 0) spacing = kind.n_lags > 1 ? std::max<std::size_t>(1, m_slices / (kind.n_lags - 1)) : 1;
    if ((kind.n_lags - 1) * spacing > m_slices) throw std::invalid_argument("lag_stack: lags do not fit in [-tau, 0]");
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < kind.n_lags; ++k) rows.push_back(m_slices - k * spacing);
    return rows;
}

std::size_t SurrogateModel::head_slices() const {
    return kind.type == ModelType::history2history ? m_slices + 1 : m;
}

namespace {

std::size_t cond_scalar_count(const ModelKind& kind, Family family) {
    std::size_t n = 0;
    if (kind.cond != CondMode::none) n += mu_names_for(family).size() + (family == Family::epidemic ? 1 : 0);
    if (kind.cond == CondMode::full) n += 2;
    return n;
}

std::size_t state_offset(const ModelKind& kind) { return kind.type == ModelType::lag_stack ? 1 : 0; }

void check_dt(const SurrogateModel& model, const HistoryState& h, const Conditioning& cond) {
    const double want = static_cast<double>(model.m) * h.h_grid().delta_theta();
    if (std::abs(cond.dt - want) > 1e-9 * want) throw std::invalid_argument("predict_step: dt misaligned");
}

void check_history(const SurrogateModel& model, const HistoryState& h) {
    if (h.h_grid().m_slices() != model.m_slices || !(h.s_grid() == model.s_grid) || h.channels() != model.channels())
        throw std::invalid_argument("predict_step: history does not match model grids");
}

bool finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}


}  // namespace

std::size_t input_channels(const ModelKind& kind, Family family) {
    return channels_for_family(family) + state_offset(kind) + 2 + cond_scalar_count(kind, family);
}

SurrogateModel make_model(const ModelKind& kind, Family family, std::size_t m_slices, const SpatialGrid& s_grid,
                          std::size_t m, const BackboneConfig& backbone, std::uint64_t seed) {
    if (m < 1 || m > m_slices) throw std::invalid_argument("make_model: m out of range");
    if (kind.type == ModelType::lag_stack) (void)lag_rows(kind, m_slices);
    SurrogateModel model{kind, family, m_slices, s_grid, m, {}, {}};
    FNOConfig& c = model.config;
    c.in_channels = input_channels(kind, family);
    c.out_channels = model.channels() * model.head_slices();
    c.width = backbone.width;
    c.n_layers = backbone.n_layers;
    c.n_theta = m_slices + 1;
    c.n_x = s_grid.n_x();
    // budgets larger than the grid are clamped to the full spectrum
    c.modes_theta = std::min(backbone.modes_theta, c.n_theta / 2 + 1);
    c.modes_x = std::min(backbone.modes_x, c.n_x / 2 + 1);
    c.validate();
    model.params = init_params(c, seed);
    return model;
}

std::size_t output_dim(ModelType type, std::size_t channels, std::size_t m_slices, std::size_t n_x, std::size_t m) {
    return channels * (type == ModelType::history2history ? m_slices + 1 : m) * n_x;
}

std::size_t parameter_count(const SurrogateModel& model) { return model.params.count(); }

std::size_t head_parameter_count(const SurrogateModel& model) {
    return model.params.proj2_w.size() + model.params.proj2_b.size();
}

Tensor assemble_input(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond) {
    check_history(model, history);
    const std::size_t C = model.channels(), nt = model.m_slices + 1, nx = model.s_grid.n_x(), P = nt * nx;
    const auto& kind = model.kind;
    Tensor t({model.config.in_channels, nt, nx});
    auto plane = [&](std::size_t ch) { return t.data.begin() + static_cast<std::ptrdiff_t>(ch * P); };

    const std::size_t M = model.m_slices;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < nt; ++j) {
            std::size_t src = j;
            if (kind.type == ModelType::current_state) src = M;
            const auto f = history.field(src, c);
            std::copy(f.begin(), f.end(), plane(c) + static_cast<std::ptrdiff_t>(j * nx));
        }
    }
    std::size_t ch = C;
    if (kind.type == ModelType::lag_stack) {
        const auto rows = lag_rows(kind, M);
        for (std::size_t j = 0; j < nt; ++j) {
            const bool seen = std::find(rows.begin(), rows.end(), j) != rows.end();
            if (!seen)
                for (std::size_t c = 0; c < C; ++c)
                    std::fill_n(plane(c) + static_cast<std::ptrdiff_t>(j * nx), nx, 0.0);
            std::fill_n(plane(ch) + static_cast<std::ptrdiff_t>(j * nx), nx, seen ? 1.0 : 0.0);
        }
        ++ch;
    }
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < nx; ++i) {
            t.data[ch * P + j * nx + i] = history.h_grid().theta(j) / history.h_grid().tau();
            t.data[(ch + 1) * P + j * nx + i] = model.s_grid.x(i) / model.s_grid.length();
        }
    ch += 2;

    std::vector<double> scalars;
    if (kind.cond != CondMode::none) {
        if (cond.mu.size() != mu_names_for(model.family).size())
            throw std::invalid_argument("assemble_input: conditioning length mismatch");
        scalars = cond.mu;
    }
    if (kind.cond == CondMode::full) {
        scalars.push_back(cond.tau);
        scalars.push_back(cond.dt);
    }
    for (double s : scalars) std::fill_n(plane(ch++), P, s);
    if (kind.cond != CondMode::none && model.family == Family::epidemic) {
        if (cond.aux_field.size() != nx) throw std::invalid_argument("assemble_input: S_field length mismatch");
        for (std::size_t j = 0; j < nt; ++j)
            std::copy(cond.aux_field.begin(), cond.aux_field.end(), plane(ch) + static_cast<std::ptrdiff_t>(j * nx));
        ++ch;
    }
    return t;
}

namespace {

// Head slices read from the newest theta row: channel block k holds slice k.
std::vector<double> read_head(const SurrogateModel& model, const Tensor& out, std::size_t used) {
    const std::size_t C = model.channels(), nt = out.dim(1), nx = out.dim(2), M = nt - 1;
    std::vector<double> slices(used * C * nx);
    for (std::size_t k = 0; k < used; ++k)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t ch = k * C + c;
            std::copy_n(out.data.begin() + static_cast<std::ptrdiff_t>((ch * nt + M) * nx), nx,
                        slices.begin() + static_cast<std::ptrdiff_t>((k * C + c) * nx));
        }
    return slices;
}

HistoryState apply_head(const SurrogateModel& model, const HistoryState& history, std::span<const double> slices,
                        std::size_t used) {
    if (!finite(slices)) throw NonFiniteError();
    if (model.kind.type == ModelType::history2history) {
        const double t = history.t_now() + static_cast<double>(model.m) * history.h_grid().delta_theta();
        return HistoryState(history.h_grid(), history.s_grid(), history.channels(), t,
                            {slices.begin(), slices.end()});
    }
    return shift_append(history, slices, used);
}

}  // namespace

SlicePredictor learned_predictor(const SurrogateModel& model) {
    return [&model](const HistoryState& h, const Conditioning& cond) {
        const Tensor in = assemble_input(model, h, cond);
        const Tensor out = fno_forward(model.config, model.params, in);
        return read_head(model, out, model.head_slices());
    };
}

SlicePredictor oracle_predictor(const BenchmarkSpec& spec, std::size_t m) {
    return [spec, m](const HistoryState& h, const Conditioning&) {
        HistoryState buf = fine_buffer_from(spec, h);
        std::vector<double> out;
        for (std::size_t k = 0; k < m; ++k) {
            SaveStep s = step_save_interval(spec, buf);
            if (!s.valid) return std::vector<double>(m * h.slice_size(), std::nan(""));
            buf = std::move(s.buffer);
            const auto newest = buf.slice(buf.n_slices() - 1);
            out.insert(out.end(), newest.begin(), newest.end());
        }
        return out;
    };
}

HistoryState predict_step(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond) {
    check_history(model, history);
    check_dt(model, history, cond);
    const auto slices = learned_predictor(model)(history, cond);
    return apply_head(model, history, slices, model.head_slices());
}

HistoryState predict_step(const SlicePredictor& predictor, const HistoryState& history, const Conditioning& cond,
                          std::size_t m) {
    const auto slices = predictor(history, cond);
    if (slices.size() != m * history.slice_size()) throw std::invalid_argument("predict_step: predictor shape mismatch");
    if (!finite(slices)) throw NonFiniteError();
    return shift_append(history, slices, m);
}

HistoryState advance_slices(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond,
                            std::size_t j) {
    if (j == 0) return history;
    const bool h2h = model.kind.type == ModelType::history2history;
    if (h2h && j % model.m != 0) throw std::invalid_argument("advance_slices: history2history needs whole steps");
    HistoryState h = history;
    StepTape tape{history, 0, {}};
    while (j >= model.m) {
        h = step_forward(model, h, cond, h2h ? model.head_slices() : model.m, tape);
        j -= model.m;
    }
    if (j > 0) h = step_forward(model, h, cond, j, tape);
    return h;
}

RolloutResult rollout(const StepFn& step, const HistoryState& h0, std::size_t K) {
    if (K < 1) throw std::invalid_argument("rollout: K must be >= 1");
    RolloutResult r;
    const HistoryState* cur = &h0;
    for (std::size_t k = 1; k <= K; ++k) {
        try {
            HistoryState next = step(*cur);
            if (!next.all_finite()) throw NonFiniteError();
            r.states.push_back(std::move(next));
        } catch (const NonFiniteError&) {
            r.truncated = true;
            r.truncated_at = k;
            break;
        }
        cur = &r.states.back();
    }
    return r;
}

RolloutResult rollout(const SurrogateModel& model, const HistoryState& h0, const Conditioning& cond, std::size_t K) {
    return rollout([&](const HistoryState& h) { return predict_step(model, h, cond); }, h0, K);
}

HistoryState step_forward(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond,
                          std::size_t used, StepTape& tape) {
    check_history(model, history);
    check_dt(model, history, cond);
    if (used < 1 || used > model.head_slices()) throw std::invalid_argument("step_forward: slice count out of range");
    if (model.kind.type == ModelType::history2history && used != model.head_slices())
        throw std::invalid_argument("step_forward: history2history predicts whole histories");
    tape.history = history;
    tape.used = used;
    const Tensor in = assemble_input(model, history, cond);
    const Tensor out = fno_forward(model.config, model.params, in, &tape.cache);
    const auto slices = read_head(model, out, used);
    return apply_head(model, history, slices, used);
}

std::vector<double> step_backward(const SurrogateModel& model, const StepTape& tape, std::span<const double> grad_next,
                                  FNOParams& grads) {
    const HistoryState& h = tape.history;
    const std::size_t C = model.channels(), nt = h.n_slices(), nx = h.n_x(), M = nt - 1, S = h.slice_size();
    if (grad_next.size() != nt * S) throw std::invalid_argument("step_backward: gradient shape mismatch");
    const bool h2h = model.kind.type == ModelType::history2history;
    const std::size_t used = tape.used;

    std::vector<double> g_hist(nt * S, 0.0);
    // transported slices: next[j] = history[j + used]
    if (!h2h)
        for (std::size_t j = 0; j + used <= M; ++j)
            for (std::size_t q = 0; q < S; ++q) g_hist[(j + used) * S + q] += grad_next[j * S + q];

    // predicted slices sit in the last `used` rows of the next history
    Tensor g_out({model.config.out_channels, nt, nx});
    const std::size_t first = h2h ? 0 : nt - used;
    for (std::size_t k = 0; k < used; ++k)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t ch = k * C + c;
            std::copy_n(grad_next.begin() + static_cast<std::ptrdiff_t>((first + k) * S + c * nx), nx,
                        g_out.data.begin() + static_cast<std::ptrdiff_t>((ch * nt + M) * nx));
        }

    Tensor g_in;
    const FNOParams g = fno_backward(model.config, model.params, tape.cache, g_out, &g_in);
    std::vector<double*> dst;
    grads.for_each([&](std::vector<double>& v) { dst.push_back(v.data()); });
    std::size_t a = 0;
    g.for_each([&](const std::vector<double>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) dst[a][i] += v[i];
        ++a;
    });

    // adjoint of the state channels of assemble_input
    const std::size_t P = nt * nx;
    std::vector<std::size_t> rows;
    if (model.kind.type == ModelType::lag_stack) rows = lag_rows(model.kind, M);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < nt; ++j) {
            std::size_t dst_row = j;
            if (model.kind.type == ModelType::current_state) dst_row = M;
            if (model.kind.type == ModelType::lag_stack && std::find(rows.begin(), rows.end(), j) == rows.end())
                continue;
            for (std::size_t i = 0; i < nx; ++i) g_hist[dst_row * S + c * nx + i] += g_in.data[c * P + j * nx + i];
        }
    return g_hist;
}

Checkpoint to_checkpoint(const SurrogateModel& model) {
    json extra{{"model", std::string(to_string(model.kind.type))},
               {"conditioning", std::string(to_string(model.kind.cond))},
               {"n_lags", model.kind.n_lags},
               {"lag_spacing", model.kind.lag_spacing},
               {"family", std::string(to_string(model.family))},
               {"history_slices", model.m_slices},
               {"n_x", model.s_grid.n_x()},
               {"length", model.s_grid.length()},
               {"boundary", std::string(to_string(model.s_grid.boundary()))},
               {"m", model.m}};
    return Checkpoint{model.config, {model.params}, extra};
}

SurrogateModel from_checkpoint(const Checkpoint& ck) {
    const json& e = ck.extra;
    if (ck.blocks.empty()) throw std::runtime_error("checkpoint has no parameters");
    SurrogateModel model;
    model.kind.type = model_type_from_string(e.at("model").get<std::string>());
    model.kind.cond = cond_mode_from_string(e.at("conditioning").get<std::string>());
    model.kind.n_lags = e.at("n_lags").get<std::size_t>();
    model.kind.lag_spacing = e.at("lag_spacing").get<std::size_t>();
    model.family = family_from_string(e.at("family").get<std::string>());
    model.m_slices = e.at("history_slices").get<std::size_t>();
    model.s_grid = SpatialGrid(e.at("n_x").get<std::size_t>(), e.at("length").get<double>(),
                               boundary_from_string(e.at("boundary").get<std::string>()));
    model.m = e.at("m").get<std::size_t>();
    model.config = ck.config;
    model.params = ck.blocks.front();
    if (model.config.in_channels != input_channels(model.kind, model.family) ||
        model.config.out_channels != model.channels() * model.head_slices())
        throw std::runtime_error("checkpoint does not match its model description");
    return model;
}

}  // namespace hsfno
