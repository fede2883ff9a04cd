#include "hsfno/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace hsfno {

using json = nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// JSON has no inf / nan; spell them as strings so reports round-trip.
json num_to_json(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double num_from_json(const json& j) {
    if (j.is_number()) return j.get<double>();
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::nan("");
    throw std::runtime_error("bad number in report: " + s);
}

std::size_t full_step(const SurrogateModel& model) {
    return model.kind.type == ModelType::history2history ? model.head_slices() : model.m;
}

// Mean square of pred - ref; adds scale * d/d(pred) into g when given.
double mse(std::span<const double> pred, std::span<const double> ref, double scale, std::vector<double>* g) {
    if (pred.size() != ref.size()) throw std::invalid_argument("loss: shape mismatch");
    const double n = static_cast<double>(pred.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - ref[i];
        acc += d * d;
        if (g) (*g)[i] += scale * 2.0 * d / n;
    }
    return acc / n;
}

// advance_slices, keeping one tape per head evaluation
HistoryState advance_taped(const SurrogateModel& model, const HistoryState& h0, const Conditioning& cond,
                           std::size_t j, std::vector<StepTape>& tapes) {
    const bool h2h = model.kind.type == ModelType::history2history;
    if (h2h && j % model.m != 0) throw std::invalid_argument("loss_semi: misaligned s, r for history2history");
    HistoryState h = h0;
    while (j >= model.m) {
        tapes.push_back(StepTape{h, 0, {}});
        h = step_forward(model, h, cond, full_step(model), tapes.back());
        j -= model.m;
    }
    if (j > 0) {
        tapes.push_back(StepTape{h, 0, {}});
        h = step_forward(model, h, cond, j, tapes.back());
    }
    return h;
}

void backprop_chain(const SurrogateModel& model, const std::vector<StepTape>& tapes, std::vector<double> g,
                    FNOParams& grads) {
    for (auto it = tapes.rbegin(); it != tapes.rend(); ++it) g = step_backward(model, *it, g, grads);
}

double data_term(const SurrogateModel& model, const SupervisedPair& pair, double scale, FNOParams* grad) {
    if (pair.m != model.m) throw std::invalid_argument("loss_data: pair m differs from model m");
    StepTape tape{pair.history, 0, {}};
    const HistoryState pred = step_forward(model, pair.history, pair.cond, full_step(model), tape);
    if (!grad) return mse(pred.values(), pair.target_history.values(), 0.0, nullptr);
    std::vector<double> g(pred.values().size(), 0.0);
    const double l = mse(pred.values(), pair.target_history.values(), scale, &g);
    step_backward(model, tape, g, *grad);
    return l;
}

double rollout_term(const SurrogateModel& model, const RolloutWindow& window, const std::vector<double>& w,
                    double scale, FNOParams* grad) {
    const std::size_t K = w.size();
    if (K < 1) throw std::invalid_argument("loss_rollout: K must be >= 1");
    if (window.targets.size() < K) throw std::invalid_argument("loss_rollout: window shorter than K");
    if (window.m != model.m) throw std::invalid_argument("loss_rollout: window m differs from model m");
    for (double wk : w)
        if (!(wk >= 0.0)) throw std::invalid_argument("loss_rollout: negative weight");

    std::vector<StepTape> tapes(K, StepTape{window.history, 0, {}});
    std::vector<HistoryState> states;
    states.reserve(K);
    const HistoryState* cur = &window.history;
    for (std::size_t k = 0; k < K; ++k) {
        states.push_back(step_forward(model, *cur, window.cond, full_step(model), tapes[k]));
        cur = &states.back();
    }
    double loss = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        loss += w[k] * mse(states[k].values(), window.targets[k].values(), 0.0, nullptr);
    if (!grad) return loss;

    std::vector<double> g(window.history.values().size(), 0.0);
    for (std::size_t k = K; k-- > 0;) {
        mse(states[k].values(), window.targets[k].values(), scale * w[k], &g);
        g = step_backward(model, tapes[k], g, *grad);
    }
    return loss;
}

double semi_term(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond, std::size_t s,
                 std::size_t r, double scale, FNOParams* grad) {
    if (s < 1 || r < 1) throw std::invalid_argument("loss_semi: s and r must be positive slice counts");
    std::vector<StepTape> ta, tb;
    HistoryState mid = advance_taped(model, history, cond, s, ta);
    const HistoryState a = advance_taped(model, mid, cond, r, ta);
    const HistoryState b = advance_taped(model, history, cond, s + r, tb);
    if (!grad) return mse(a.values(), b.values(), 0.0, nullptr);
    std::vector<double> ga(a.values().size(), 0.0);
    const double l = mse(a.values(), b.values(), scale, &ga);
    std::vector<double> gb(ga.size());
    for (std::size_t i = 0; i < ga.size(); ++i) gb[i] = -ga[i];
    backprop_chain(model, ta, std::move(ga), *grad);
    backprop_chain(model, tb, std::move(gb), *grad);
    return l;
}

}  // namespace

double squared_history_error(const HistoryState& pred, const HistoryState& ref) {
    return mse(pred.values(), ref.values(), 0.0, nullptr);
}

double loss_data(const SurrogateModel& model, const SupervisedPair& pair, FNOParams* grad) {
    return data_term(model, pair, 1.0, grad);
}

double loss_rollout(const SurrogateModel& model, const RolloutWindow& window, const std::vector<double>& w,
                    FNOParams* grad) {
    return rollout_term(model, window, w, 1.0, grad);
}

double loss_semi(const SurrogateModel& model, const HistoryState& history, const Conditioning& cond, std::size_t s,
                 std::size_t r, FNOParams* grad) {
    return semi_term(model, history, cond, s, r, 1.0, grad);
}

// ---------------------------------------------------------------------------
// config

void TrainConfig::validate() const {
    for (double l : {lambda_data, lambda_rollout, lambda_semi})
        if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    if (!(lambda_data > 0.0 || lambda_rollout > 0.0 || lambda_semi > 0.0))
        throw std::invalid_argument("TrainConfig: at least one lambda must be positive");
    if (k_train < 1) throw std::invalid_argument("TrainConfig: k_train must be >= 1");
    if (!w_k.empty() && w_k.size() != k_train) throw std::invalid_argument("TrainConfig: w_k length != k_train");
    for (double w : w_k)
        if (!(w >= 0.0)) throw std::invalid_argument("TrainConfig: w_k must be >= 0");
    if (semi_s < 1 || semi_r < 1) throw std::invalid_argument("TrainConfig: semi_s and semi_r must be >= 1");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("TrainConfig: lr must be >= 0");
    if (!(decay_factor > 0.0)) throw std::invalid_argument("TrainConfig: decay_factor must be > 0");
}

std::vector<double> TrainConfig::rollout_weights() const {
    return w_k.empty() ? std::vector<double>(k_train, 1.0) : w_k;
}

json to_json(const TrainConfig& c) {
    return json{{"lambda_data", c.lambda_data},
                {"lambda_rollout", c.lambda_rollout},
                {"lambda_semi", c.lambda_semi},
                {"k_train", c.k_train},
                {"w_k", c.rollout_weights()},
                {"semi_s", c.semi_s},
                {"semi_r", c.semi_r},
                {"epochs", c.epochs},
                {"max_steps", c.max_steps},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"lr", c.lr},
                {"lr_schedule", c.decay_every > 0 ? "step" : "constant"},
                {"decay_every", c.decay_every},
                {"decay_factor", c.decay_factor}};
}

TrainConfig train_config_from_json(const json& j) {
    static const std::set<std::string> known{"lambda_data", "lambda_rollout", "lambda_semi", "k_train",
                                             "w_k",         "semi_s",         "semi_r",      "epochs",
                                             "max_steps",   "batch_size",     "seed",        "lr",
                                             "lr_schedule", "decay_every",    "decay_factor"};
    if (!j.is_object()) throw std::invalid_argument("train config must be an object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw std::invalid_argument("train config: unknown field '" + k + "'");
    TrainConfig c;
    c.lambda_data = j.value("lambda_data", c.lambda_data);
    c.lambda_rollout = j.value("lambda_rollout", c.lambda_rollout);
    c.lambda_semi = j.value("lambda_semi", c.lambda_semi);
    c.k_train = j.value("k_train", c.k_train);
    c.w_k = j.value("w_k", c.w_k);
    c.semi_s = j.value("semi_s", c.semi_s);
    c.semi_r = j.value("semi_r", c.semi_r);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.lr = j.value("lr", c.lr);
    const std::string sched = j.value("lr_schedule", std::string("constant"));
    c.decay_every = j.value("decay_every", c.decay_every);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    if (sched == "constant") {
        c.decay_every = 0;
    } else if (sched == "step") {
        if (c.decay_every == 0) throw std::invalid_argument("train config: step schedule needs decay_every > 0");
    } else {
        throw std::invalid_argument("train config: unknown lr_schedule '" + sched + "'");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// training

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
    std::mt19937_64 rng;
    std::istringstream is(s);
    is >> rng;
    if (!is) throw std::runtime_error("corrupt optimizer rng state");
    return rng;
}

// Plain Fisher-Yates so the order does not depend on the library's shuffle.
std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng() % i]);
    return p;
}

double scheduled_lr(const TrainConfig& cfg, std::size_t steps) {
    if (cfg.decay_every == 0) return cfg.lr;
    return cfg.lr * std::pow(cfg.decay_factor, static_cast<double>(steps / cfg.decay_every));
}

double item_objective(const SurrogateModel& model, const SupervisedPair* pair, const RolloutWindow* window,
                      const TrainConfig& cfg, double scale, FNOParams* grad) {
    double l = 0.0;
    if (pair && cfg.lambda_data > 0.0) l += cfg.lambda_data * data_term(model, *pair, scale * cfg.lambda_data, grad);
    if (pair && cfg.lambda_semi > 0.0)
        l += cfg.lambda_semi * semi_term(model, pair->history, pair->cond, cfg.semi_s, cfg.semi_r,
                                         scale * cfg.lambda_semi, grad);
    if (window && cfg.lambda_rollout > 0.0)
        l += cfg.lambda_rollout *
             rollout_term(model, *window, cfg.rollout_weights(), scale * cfg.lambda_rollout, grad);
    return l;
}

}  // namespace

double mean_objective(const SurrogateModel& model, const std::vector<SupervisedPair>& pairs,
                      const std::vector<RolloutWindow>& windows, const TrainConfig& cfg) {
    try {
        double total = 0.0;
        if (!pairs.empty() && (cfg.lambda_data > 0.0 || cfg.lambda_semi > 0.0)) {
            double acc = 0.0;
            for (const auto& p : pairs) acc += item_objective(model, &p, nullptr, cfg, 1.0, nullptr);
            total += acc / static_cast<double>(pairs.size());
        }
        if (!windows.empty() && cfg.lambda_rollout > 0.0) {
            double acc = 0.0;
            for (const auto& w : windows) acc += item_objective(model, nullptr, &w, cfg, 1.0, nullptr);
            total += acc / static_cast<double>(windows.size());
        }
        return total;
    } catch (const NonFiniteError&) {
        return std::numeric_limits<double>::infinity();
    }
}

TrainState start_training(SurrogateModel model, const TrainConfig& cfg) {
    cfg.validate();
    TrainState st;
    st.adam = make_adam(model.params, cfg.lr);
    st.best_params = model.params;
    st.model = std::move(model);
    st.rng_state = rng_to_string(std::mt19937_64(mix_seed(cfg.seed, 0x7e57)));
    return st;
}

void train_epochs(TrainState& st, const TrainData& data, const TrainConfig& cfg, std::size_t n_epochs) {
    cfg.validate();
    if (data.train_pairs.empty()) throw std::invalid_argument("train: empty dataset");
    const bool use_windows = cfg.lambda_rollout > 0.0;
    if (use_windows && data.train_windows.empty())
        throw std::invalid_argument("train: rollout loss needs training windows");
    if (st.diverged || st.finished) return;

    std::mt19937_64 rng = rng_from_string(st.rng_state);
    const std::size_t last = n_epochs == 0 ? cfg.epochs : std::min(cfg.epochs, st.epoch + n_epochs);
    const std::size_t n = data.train_pairs.size();
    auto capped = [&] { return cfg.max_steps > 0 && st.steps >= cfg.max_steps; };

    while (st.epoch < last && !capped()) {
        const auto perm = permutation(n, rng);
        const auto wperm = use_windows ? permutation(data.train_windows.size(), rng) : std::vector<std::size_t>{};
        double sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b0 = 0; b0 < n && !capped(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
            const double inv = 1.0 / static_cast<double>(b1 - b0);
            FNOParams grads = zeros_like(st.model.params);
            double batch = 0.0;
            try {
                for (std::size_t i = b0; i < b1; ++i) {
                    const RolloutWindow* w = use_windows ? &data.train_windows[wperm[i % wperm.size()]] : nullptr;
                    batch += item_objective(st.model, &data.train_pairs[perm[i]], w, cfg, inv, &grads);
                }
            } catch (const NonFiniteError&) {
                batch = std::nan("");
            }
            if (!std::isfinite(batch) || !grads.all_finite()) {
                st.diverged = true;
                st.log.push_back({st.epoch + 1, "train", std::nan("")});
                st.rng_state = rng_to_string(rng);
                return;
            }
            st.adam.lr = scheduled_lr(cfg, st.steps);
            adam_step(st.model.params, grads, st.adam);
            ++st.steps;
            sum += batch;
            seen += b1 - b0;
        }
        ++st.epoch;
        const double train_loss = seen ? sum / static_cast<double>(seen) : 0.0;
        const double val = data.val_pairs.empty() && data.val_windows.empty()
                               ? train_loss
                               : mean_objective(st.model, data.val_pairs, data.val_windows, cfg);
        st.log.push_back({st.epoch, "train", train_loss});
        st.log.push_back({st.epoch, "val", val});
        if (val < st.best_val) {
            st.best_val = val;
            st.best_params = st.model.params;
            st.best_epoch = st.epoch;
        }
    }
    if (st.epoch >= cfg.epochs || capped()) st.finished = true;
    st.rng_state = rng_to_string(rng);
}

TrainState train(SurrogateModel model, const TrainData& data, const TrainConfig& cfg) {
    TrainState st = start_training(std::move(model), cfg);
    train_epochs(st, data, cfg);
    return st;
}

Checkpoint train_state_checkpoint(const TrainState& st) {
    Checkpoint ck = to_checkpoint(st.model);
    ck.blocks = {st.model.params, st.adam.m, st.adam.v, st.best_params};
    json log = json::array();
    for (const auto& r : st.log) log.push_back(json::array({r.epoch, r.split, num_to_json(r.loss)}));
    ck.extra["train"] = json{{"steps", st.steps},
                             {"epoch", st.epoch},
                             {"adam_step", st.adam.step},
                             {"adam_lr", st.adam.lr},
                             {"rng", st.rng_state},
                             {"best_val", num_to_json(st.best_val)},
                             {"best_epoch", st.best_epoch},
                             {"diverged", st.diverged},
                             {"finished", st.finished},
                             {"log", log}};
    return ck;
}

TrainState train_state_from_checkpoint(const Checkpoint& ck) {
    if (ck.blocks.size() != 4 || !ck.extra.contains("train"))
        throw std::runtime_error("checkpoint lacks optimizer state");
    TrainState st;
    st.model = from_checkpoint(ck);
    const json& t = ck.extra.at("train");
    st.adam = make_adam(st.model.params, t.at("adam_lr").get<double>());
    st.adam.m = ck.blocks[1];
    st.adam.v = ck.blocks[2];
    st.adam.step = t.at("adam_step").get<std::uint64_t>();
    st.best_params = ck.blocks[3];
    st.best_val = num_from_json(t.at("best_val"));
    st.best_epoch = t.at("best_epoch").get<std::size_t>();
    st.epoch = t.at("epoch").get<std::size_t>();
    st.steps = t.at("steps").get<std::size_t>();
    st.rng_state = t.at("rng").get<std::string>();
    st.diverged = t.at("diverged").get<bool>();
    st.finished = t.at("finished").get<bool>();
    for (const auto& r : t.at("log"))
        st.log.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::string>(), num_from_json(r.at(2))});
    return st;
}

std::string loss_log_csv(const std::vector<LossLogRow>& log) {
    std::string out = "epoch,split,loss\n";
    for (const auto& r : log) out += std::to_string(r.epoch) + "," + r.split + "," + fmt(r.loss) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// metrics

double relative_slice_error(std::span<const double> pred, std::span<const double> ref) {
    if (pred.size() != ref.size()) throw std::invalid_argument("relative_slice_error: shape mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        num += (pred[i] - ref[i]) * (pred[i] - ref[i]);
        den += ref[i] * ref[i];
    }
    if (!(den > 0.0)) throw std::invalid_argument("relative_slice_error: degenerate reference");
    return std::sqrt(num / den);
}

namespace {

double newest_error(const HistoryState& pred, const HistoryState& ref) {
    if (!pred.same_layout(ref)) throw std::invalid_argument("metric: layout mismatch");
    const std::size_t M = ref.n_slices() - 1;
    return relative_slice_error(pred.slice(M), ref.slice(M));
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("metric: no samples");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

double metric_one_step(const std::vector<HistoryState>& preds, const std::vector<HistoryState>& refs) {
    if (preds.size() != refs.size()) throw std::invalid_argument("metric_one_step: count mismatch");
    std::vector<double> e;
    for (std::size_t i = 0; i < preds.size(); ++i) e.push_back(newest_error(preds[i], refs[i]));
    return mean_of(e);
}

double metric_hist(const std::vector<HistoryState>& preds, const std::vector<HistoryState>& refs) {
    if (preds.size() != refs.size()) throw std::invalid_argument("metric_hist: count mismatch");
    std::vector<double> e;
    for (std::size_t i = 0; i < preds.size(); ++i) e.push_back(relative_history_error(preds[i], refs[i]));
    return mean_of(e);
}

RollMetric metric_roll(const std::vector<std::vector<HistoryState>>& preds,
                       const std::vector<std::vector<HistoryState>>& refs, std::size_t K) {
    if (K < 1) throw std::invalid_argument("metric_roll: K must be >= 1");
    if (preds.size() != refs.size()) throw std::invalid_argument("metric_roll: count mismatch");
    RollMetric r;
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> e;
        for (std::size_t w = 0; w < preds.size(); ++w) {
            if (refs[w].size() < K) throw std::invalid_argument("metric_roll: reference shorter than K");
            e.push_back(k < preds[w].size() ? newest_error(preds[w][k], refs[w][k])
                                            : std::numeric_limits<double>::infinity());
        }
        r.per_step.push_back(mean_of(e));
    }
    r.mean = mean_of(r.per_step);
    return r;
}

double metric_semi(const std::vector<HistoryState>& composed, const std::vector<HistoryState>& direct) {
    if (composed.size() != direct.size()) throw std::invalid_argument("metric_semi: count mismatch");
    std::vector<double> e;
    for (std::size_t i = 0; i < composed.size(); ++i) e.push_back(relative_history_error(composed[i], direct[i]));
    return mean_of(e);
}

CellMetrics evaluate_model(const SurrogateModel& model, const std::vector<SupervisedPair>& pairs,
                           const std::vector<RolloutWindow>& windows, std::size_t K,
                           const std::vector<std::pair<std::size_t, std::size_t>>& semi_pairs) {
    if (pairs.empty() || windows.empty()) throw std::invalid_argument("evaluate_model: empty test set");
    const double inf = std::numeric_limits<double>::infinity();
    CellMetrics out;

    std::vector<double> one, hist;
    for (const auto& p : pairs) {
        if (p.m != model.m) throw std::invalid_argument("evaluate_model: pair m differs from model m");
        try {
            const HistoryState pred = predict_step(model, p.history, p.cond);
            one.push_back(newest_error(pred, p.target_history));
            hist.push_back(relative_history_error(pred, p.target_history));
        } catch (const NonFiniteError&) {
            one.push_back(inf);
            hist.push_back(inf);
        }
    }
    out.e_one = mean_of(one);
    out.e_hist = mean_of(hist);

    std::vector<std::vector<HistoryState>> preds, refs;
    for (const auto& w : windows) {
        if (w.targets.size() < K) throw std::invalid_argument("evaluate_model: window shorter than K");
        RolloutResult r = rollout(model, w.history, w.cond, K);
        if (r.truncated) ++out.truncated;
        preds.push_back(std::move(r.states));
        refs.emplace_back(w.targets.begin(), w.targets.begin() + static_cast<std::ptrdiff_t>(K));
    }
    out.e_roll = metric_roll(preds, refs, K);

    std::vector<double> semi;
    for (const auto& w : windows)
        for (const auto& [s, r] : semi_pairs) {
            try {
                const HistoryState a = advance_slices(model, advance_slices(model, w.history, w.cond, s), w.cond, r);
                const HistoryState b = advance_slices(model, w.history, w.cond, s + r);
                semi.push_back(relative_history_error(a, b));
            } catch (const NonFiniteError&) {
                semi.push_back(inf);
            }
        }
    out.e_semi = semi.empty() ? 0.0 : mean_of(semi);
    return out;
}

CI bootstrap_ci(const std::vector<double>& seed_means, std::size_t n_resamples, double level, std::uint64_t seed) {
    if (seed_means.empty()) throw std::invalid_argument("bootstrap_ci: no values");
    if (n_resamples < 1) throw std::invalid_argument("bootstrap_ci: n_resamples must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level must be in (0, 1)");
    const std::size_t n = seed_means.size();
    CI ci;
    ci.mean = mean_of(seed_means);
    if (std::all_of(seed_means.begin(), seed_means.end(), [&](double v) { return v == seed_means.front(); })) {
        ci.lo = ci.mean = ci.hi = seed_means.front();
        return ci;
    }
    std::mt19937_64 rng(mix_seed(seed, 0xb007));
    std::vector<double> boots(n_resamples);
    for (auto& b : boots) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += seed_means[rng() % n];
        b = s / static_cast<double>(n);
    }
    std::sort(boots.begin(), boots.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(boots.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, boots.size() - 1);
        return boots[lo] + (pos - static_cast<double>(lo)) * (boots[hi] - boots[lo]);
    };
    const double alpha = (1.0 - level) / 2.0;
    ci.lo = quantile(alpha);
    ci.hi = quantile(1.0 - alpha);
    return ci;
}

// ---------------------------------------------------------------------------
// reports

MetricsReport build_report(const std::vector<EvalCell>& cells, const std::map<std::string, ModelEfficiency>& efficiency,
                           std::size_t n_resamples, std::uint64_t seed) {
    MetricsReport rep;
    rep.efficiency = efficiency;
    for (const auto& c : cells) {
        auto row = [&](const std::string& metric, std::size_t step, double v) {
            rep.rows.push_back({c.model, c.family, c.regime, c.seed, metric, step, v});
        };
        row("e_one", 0, c.metrics.e_one);
        row("e_hist", 0, c.metrics.e_hist);
        for (std::size_t k = 0; k < c.metrics.e_roll.per_step.size(); ++k)
            row("e_roll", k + 1, c.metrics.e_roll.per_step[k]);
        row("e_roll_mean", 0, c.metrics.e_roll.mean);
        row("e_semi", 0, c.metrics.e_semi);
    }

    // (model, regime, metric, step) -> seed -> cell values over families
    using Key = std::tuple<std::string, std::string, std::string, std::size_t>;
    std::map<Key, std::map<std::uint64_t, std::vector<double>>> groups;
    std::vector<Key> order;
    for (const auto& r : rep.rows) {
        const auto key = std::make_tuple(r.model, r.regime, r.metric, r.step);
        if (!groups.count(key)) order.push_back(key);
        groups[key][r.seed].push_back(r.value);
    }
    for (const auto& key : order) {
        AggregateEntry a;
        std::tie(a.model, a.regime, a.metric, a.step) = key;
        for (const auto& [s, vals] : groups[key]) a.seed_means.push_back(mean_of(vals));
        a.ci = bootstrap_ci(a.seed_means, n_resamples, 0.95, seed);
        rep.aggregates.push_back(std::move(a));
    }
    return rep;
}

std::string report_csv(const MetricsReport& r) {
    std::string out = "model,family,regime,seed,metric,step,value\n";
    for (const auto& row : r.rows)
        out += row.model + "," + row.family + "," + row.regime + "," + std::to_string(row.seed) + "," + row.metric +
               "," + std::to_string(row.step) + "," + fmt(row.value) + "\n";
    return out;
}

json report_json(const MetricsReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"model", row.model},
                        {"family", row.family},
                        {"regime", row.regime},
                        {"seed", row.seed},
                        {"metric", row.metric},
                        {"step", row.step},
                        {"value", num_to_json(row.value)}});
    json aggs = json::array();
    for (const auto& a : r.aggregates) {
        json means = json::array();
        for (double v : a.seed_means) means.push_back(num_to_json(v));
        aggs.push_back({{"model", a.model},
                        {"regime", a.regime},
                        {"metric", a.metric},
                        {"step", a.step},
                        {"seed_means", means},
                        {"ci", {{"lo", num_to_json(a.ci.lo)}, {"mean", num_to_json(a.ci.mean)},
                                {"hi", num_to_json(a.ci.hi)}, {"level", 0.95}}}});
    }
    json eff = json::object();
    for (const auto& [name, e] : r.efficiency)
        eff[name] = {{"parameter_count", e.parameter_count},
                     {"output_dim", e.output_dim},
                     {"peak_memory_bytes", e.peak_memory_bytes}};
    return json{{"format", "hsfno-report-1"}, {"rows", rows}, {"aggregates", aggs}, {"efficiency", eff}};
}

MetricsReport report_from_json(const json& j) {
    if (j.value("format", std::string()) != "hsfno-report-1") throw std::runtime_error("not a metrics report");
    MetricsReport r;
    for (const auto& x : j.at("rows"))
        r.rows.push_back({x.at("model").get<std::string>(), x.at("family").get<std::string>(),
                          x.at("regime").get<std::string>(), x.at("seed").get<std::uint64_t>(),
                          x.at("metric").get<std::string>(), x.at("step").get<std::size_t>(),
                          num_from_json(x.at("value"))});
    for (const auto& x : j.at("aggregates")) {
        AggregateEntry a;
        a.model = x.at("model").get<std::string>();
        a.regime = x.at("regime").get<std::string>();
        a.metric = x.at("metric").get<std::string>();
        a.step = x.at("step").get<std::size_t>();
        for (const auto& v : x.at("seed_means")) a.seed_means.push_back(num_from_json(v));
        const json& ci = x.at("ci");
        a.ci = {num_from_json(ci.at("lo")), num_from_json(ci.at("mean")), num_from_json(ci.at("hi"))};
        r.aggregates.push_back(std::move(a));
    }
    for (const auto& [name, e] : j.at("efficiency").items())
        r.efficiency[name] = {e.at("parameter_count").get<std::size_t>(), e.at("output_dim").get<std::size_t>(),
                              e.at("peak_memory_bytes").get<std::size_t>()};
    return r;
}

std::size_t peak_memory_estimate(const SurrogateModel& model) {
    const FNOConfig& c = model.config;
    const std::size_t P = c.n_theta * c.n_x, w = c.width, L = c.n_layers;
    std::size_t doubles = 0;
    doubles += c.in_channels * P;          // assembled input
    doubles += (L + 1) * w * P;            // layer inputs
    doubles += L * w * P * 2;              // layer spectra (complex)
    doubles += L * w * P;                  // pre-activations
    doubles += 2 * w * P;                  // projection hidden layer
    doubles += c.out_channels * P;         // output
    doubles += model.params.count();
    return doubles * sizeof(double);
}

double time_predict_step(const SurrogateModel& model, const HistoryState& h, const Conditioning& cond) {
    using clock = std::chrono::steady_clock;
    for (int i = 0; i < 3; ++i) (void)predict_step(model, h, cond);
    std::vector<double> t;
    for (int i = 0; i < 20; ++i) {
        const auto a = clock::now();
        (void)predict_step(model, h, cond);
        t.push_back(std::chrono::duration<double>(clock::now() - a).count());
    }
    std::sort(t.begin(), t.end());
    return 0.5 * (t[9] + t[10]);
}

}  // namespace hsfno
