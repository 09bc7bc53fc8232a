#pragma once

// Online training schedules for sequential models plus the sliding-window
// trainer for static baselines. Three schedules:
//
//   chunk_stride  - accumulate recency-weighted per-step objectives over a
//                   W-step chunk, one optimizer step and state detach at the
//                   boundary (the main configuration).
//   exact_rolling - advance the stream without keeping a graph, and every S
//                   steps rebuild the last W steps from a detached ring
//                   checkpoint under current parameters.
//   approx_stride - single-step micro-updates every S steps plus a full
//                   window recompute at window end.
//
// Per-step reparameterization noise is derived from (seed, epoch, step,
// sample), so recomputing a window reproduces the advance pass bit-exactly
// and schedules can be cross-checked against each other.

#include <chrono>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "latenttrack/model.hpp"
#include "latenttrack/optimizer.hpp"
#include "latenttrack/static_bayes.hpp"
#include "latenttrack/stream.hpp"

namespace lt {

enum class TrainAlgorithm { exact_rolling, chunk_stride, approx_stride };

inline std::string algorithm_name(TrainAlgorithm a) {
    switch (a) {
        case TrainAlgorithm::exact_rolling: return "exact_rolling";
        case TrainAlgorithm::chunk_stride: return "chunk_stride";
        case TrainAlgorithm::approx_stride: return "approx_stride";
    }
    return "?";
}

inline TrainAlgorithm parse_algorithm(const std::string& s) {
    if (s == "exact_rolling") return TrainAlgorithm::exact_rolling;
    if (s == "chunk_stride") return TrainAlgorithm::chunk_stride;
    if (s == "approx_stride") return TrainAlgorithm::approx_stride;
    throw std::invalid_argument("unknown training algorithm '" + s + "'");
}

struct TrainConfig {
    TrainAlgorithm algorithm = TrainAlgorithm::chunk_stride;
    int window = 256;
    int stride = 32;
    double lambda = 0.9;        // fixed recency decay, in (0, 1]
    double alpha = 0.0;         // surprise gain; 0 disables the modulation
    double ema_decay = 0.99;
    double beta_max = 1.0;
    long beta_warmup = 575;     // optimizer updates
    int k_train = 1;
    int epochs = 6;
    double lr = 1e-4;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    bool detach_checkpoint = true;  // exact_rolling: refresh the carried state after updates

    void validate() const {
        if (window < 1) throw std::invalid_argument("train config: window must be >= 1");
        if (stride < 1) throw std::invalid_argument("train config: stride must be >= 1");
        if (lambda <= 0.0 || lambda > 1.0)
            throw std::invalid_argument("train config: lambda must be in (0, 1]");
        if (alpha < 0.0) throw std::invalid_argument("train config: alpha must be >= 0");
        if (k_train < 1) throw std::invalid_argument("train config: k_train must be >= 1");
        if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    }
};

struct TrainLogRecord {
    long step = 0;
    int epoch = 0;
    double elbo = 0.0;
    double nll = 0.0;
    double kl = 0.0;
    double beta = 0.0;
    double grad_norm = 0.0;  // nonzero only on rows where an update ran
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<TrainLogRecord> log;
    std::vector<double> update_losses;  // normalized window loss at each optimizer step
    long updates = 0;
    long skipped_nonfinite = 0;
};

inline constexpr const char* kTrainLogSchema = "train_log.v1";

inline void save_train_log(const std::filesystem::path& path, const TrainResult& r) {
    ColumnarTable t;
    t.schema = kTrainLogSchema;
    t.columns = {"step", "epoch", "elbo", "nll", "kl", "beta", "grad_norm", "wall_ms"};
    for (const auto& rec : r.log)
        t.rows.push_back({static_cast<double>(rec.step), static_cast<double>(rec.epoch), rec.elbo,
                          rec.nll, rec.kl, rec.beta, rec.grad_norm, rec.wall_ms});
    t.save(path);
}

// w_tau = lambda^(t - tau), emitted as plain constants.
inline std::vector<double> recency_weights(long t, std::span<const long> taus, double lambda) {
    std::vector<double> w(taus.size());
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (taus[i] > t) throw std::invalid_argument("recency_weights: tau exceeds t");
        w[i] = std::pow(lambda, static_cast<double>(t - taus[i]));
    }
    return w;
}

inline std::vector<double> recency_weights_window(int len, double lambda) {
    std::vector<double> w(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i)
        w[static_cast<std::size_t>(i)] = std::pow(lambda, static_cast<double>(len - 1 - i));
    return w;
}

// Causal exponential moving average of per-step NLL; the surprise factor at a
// step compares against the average of strictly earlier steps.
struct SurpriseEma {
    double value = 0.0;
    bool initialized = false;
    double decay = 0.99;

    double current(double fallback) const { return initialized ? value : fallback; }
    void update(double nll) {
        value = initialized ? decay * value + (1.0 - decay) * nll : nll;
        initialized = true;
    }
};

// w_tau *= exp(alpha * max(nll_tau - ema_tau, 0)). `emas[i]` is the EMA seen
// at step i (before absorbing that step's NLL).
inline std::vector<double> surprise_weights(std::span<const double> base,
                                            std::span<const double> nlls,
                                            std::span<const double> emas, double alpha) {
    if (base.size() != nlls.size() || base.size() != emas.size())
        throw std::invalid_argument("surprise_weights: length mismatch");
    std::vector<double> w(base.begin(), base.end());
    if (alpha == 0.0) return w;
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] *= std::exp(alpha * std::max(nlls[i] - emas[i], 0.0));
    return w;
}

namespace detail {

struct WindowAccum {
    std::vector<Var> elbos;
    std::vector<double> nlls;
    std::vector<double> emas;

    void push(Var elbo, double nll, SurpriseEma& ema) {
        elbos.push_back(elbo);
        nlls.push_back(nll);
        emas.push_back(ema.current(nll));
        ema.update(nll);
    }

    void clear() {
        elbos.clear();
        nlls.clear();
        emas.clear();
    }

    // Normalized negated weighted ELBO: the quantity the optimizer minimizes.
    Var loss(Tape& tape, const TrainConfig& cfg) const {
        const auto base = recency_weights_window(static_cast<int>(elbos.size()), cfg.lambda);
        const auto w = surprise_weights(base, nlls, emas, cfg.alpha);
        double z_norm = 0.0;
        Var acc = tape.constant_scalar(0.0);
        for (std::size_t i = 0; i < elbos.size(); ++i) {
            acc = add(acc, mul_scalar(elbos[i], w[i]));
            z_norm += w[i];
        }
        return neg(mul_scalar(acc, 1.0 / std::max(z_norm, kWindowNormEps)));
    }
};

inline double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Applies one optimizer step on a built window loss; skips (and records) if
// the loss came out non-finite.
inline double apply_update(Tape& tape, AdamOptimizer& opt, Var loss, TrainResult& result) {
    const double loss_val = loss.scalar();
    result.update_losses.push_back(loss_val);
    if (!std::isfinite(loss_val)) {
        ++result.skipped_nonfinite;
        ++result.updates;
        return 0.0;
    }
    opt.zero_grad();
    tape.backward(loss);
    const double norm = opt.grad_norm();
    if (!opt.step()) ++result.skipped_nonfinite;
    ++result.updates;
    return norm;
}

}  // namespace detail

// State advance that reproduces elbo_step's carried-state path exactly but
// keeps no graph.
inline SeqState train_advance(const SequentialModel& model, const SeqState& state,
                              std::span<const double> x, double y, int k_train,
                              std::uint64_t seed, std::uint64_t noise) {
    Tape tape(/*grad_enabled=*/false);
    auto sv = model.lift_state(tape, state);
    auto r = model.elbo_step(tape, sv, x, y, k_train, 0.0, seed, noise);
    return model.lower_state(r.next);
}

inline TrainResult train_chunk_stride(SequentialModel& model, const Stream& stream,
                                      const TrainConfig& cfg) {
    cfg.validate();
    if (stream.empty()) throw std::invalid_argument("train: empty stream");
    TrainResult result;
    AdamOptimizer opt(model.named_params(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip});
    const long T = static_cast<long>(stream.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        SeqState state = model.initial_state(cfg.k_train);
        Tape tape;
        auto sv = model.lift_state(tape, state);
        detail::WindowAccum acc;
        SurpriseEma ema{0.0, false, cfg.ema_decay};

        for (long i = 0; i < T; ++i) {
            const double t0 = detail::now_ms();
            const double beta = beta_schedule(opt.steps(), cfg.beta_warmup, cfg.beta_max);
            auto r = model.elbo_step(tape, sv, stream[static_cast<std::size_t>(i)].x,
                                     stream[static_cast<std::size_t>(i)].y, cfg.k_train, beta,
                                     cfg.seed, noise_id(epoch, i));
            sv = r.next;
            acc.push(r.elbo, r.nll, ema);
            TrainLogRecord rec{i, epoch, r.elbo.scalar(), r.nll, r.kl, beta, 0.0, 0.0};

            if (static_cast<long>(acc.elbos.size()) == cfg.window || i == T - 1) {
                rec.grad_norm = detail::apply_update(tape, opt, acc.loss(tape, cfg), result);
                state = model.lower_state(sv);  // stop_grad at the chunk boundary
                tape.reset();
                sv = model.lift_state(tape, state);
                acc.clear();
            }
            rec.wall_ms = detail::now_ms() - t0;
            result.log.push_back(rec);
        }
    }
    return result;
}

inline TrainResult train_exact_rolling(SequentialModel& model, const Stream& stream,
                                       const TrainConfig& cfg) {
    cfg.validate();
    if (stream.empty()) throw std::invalid_argument("train: empty stream");
    TrainResult result;
    AdamOptimizer opt(model.named_params(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip});
    const long T = static_cast<long>(stream.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        SeqState state = model.initial_state(cfg.k_train);
        // before[i % (W+1)] = detached state before consuming step i.
        std::vector<SeqState> before(static_cast<std::size_t>(cfg.window) + 1);

        for (long i = 0; i < T; ++i) {
            const double t0 = detail::now_ms();
            before[static_cast<std::size_t>(i % (cfg.window + 1))] = state;
            state = train_advance(model, state, stream[static_cast<std::size_t>(i)].x,
                                  stream[static_cast<std::size_t>(i)].y, cfg.k_train, cfg.seed,
                                  noise_id(epoch, i));
            TrainLogRecord rec{i, epoch, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};

            if ((i + 1) % cfg.stride == 0 || i == T - 1) {
                const long tmin = std::max(0L, i - cfg.window + 1);
                Tape tape;
                auto sv = model.lift_state(tape, before[static_cast<std::size_t>(tmin % (cfg.window + 1))]);
                detail::WindowAccum acc;
                SurpriseEma ema{0.0, false, cfg.ema_decay};
                const double beta = beta_schedule(opt.steps(), cfg.beta_warmup, cfg.beta_max);
                for (long tau = tmin; tau <= i; ++tau) {
                    auto r = model.elbo_step(tape, sv, stream[static_cast<std::size_t>(tau)].x,
                                             stream[static_cast<std::size_t>(tau)].y, cfg.k_train,
                                             beta, cfg.seed, noise_id(epoch, tau));
                    sv = r.next;
                    acc.push(r.elbo, r.nll, ema);
                    if (tau == i) {
                        rec.elbo = r.elbo.scalar();
                        rec.nll = r.nll;
                        rec.kl = r.kl;
                        rec.beta = beta;
                    }
                }
                rec.grad_norm = detail::apply_update(tape, opt, acc.loss(tape, cfg), result);
                if (cfg.detach_checkpoint) state = model.lower_state(sv);
            }
            rec.wall_ms = detail::now_ms() - t0;
            result.log.push_back(rec);
        }
    }
    return result;
}

inline TrainResult train_approx_stride(SequentialModel& model, const Stream& stream,
                                       const TrainConfig& cfg) {
    cfg.validate();
    if (stream.empty()) throw std::invalid_argument("train: empty stream");
    TrainResult result;
    AdamOptimizer opt(model.named_params(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip});
    const long T = static_cast<long>(stream.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        SeqState state = model.initial_state(cfg.k_train);
        SeqState window_start = state;
        long t0_index = 0;

        for (long i = 0; i < T; ++i) {
            const double t0 = detail::now_ms();
            const long pos = i - t0_index + 1;
            TrainLogRecord rec{i, epoch, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};

            if (pos % cfg.stride == 0 && pos < cfg.window) {
                // Micro-step: one-step graph from the detached carried state.
                Tape tape;
                auto sv = model.lift_state(tape, state);
                const double beta = beta_schedule(opt.steps(), cfg.beta_warmup, cfg.beta_max);
                auto r = model.elbo_step(tape, sv, stream[static_cast<std::size_t>(i)].x,
                                         stream[static_cast<std::size_t>(i)].y, cfg.k_train, beta,
                                         cfg.seed, noise_id(epoch, i));
                rec.elbo = r.elbo.scalar();
                rec.nll = r.nll;
                rec.kl = r.kl;
                rec.beta = beta;
                rec.grad_norm = detail::apply_update(tape, opt, neg(r.elbo), result);
            }

            state = train_advance(model, state, stream[static_cast<std::size_t>(i)].x,
                                  stream[static_cast<std::size_t>(i)].y, cfg.k_train, cfg.seed,
                                  noise_id(epoch, i));

            if (pos == cfg.window || i == T - 1) {
                // Window-end TBPTT: fresh graph over the whole window.
                Tape tape;
                auto sv = model.lift_state(tape, window_start);
                detail::WindowAccum acc;
                SurpriseEma ema{0.0, false, cfg.ema_decay};
                const double beta = beta_schedule(opt.steps(), cfg.beta_warmup, cfg.beta_max);
                for (long tau = t0_index; tau <= i; ++tau) {
                    auto r = model.elbo_step(tape, sv, stream[static_cast<std::size_t>(tau)].x,
                                             stream[static_cast<std::size_t>(tau)].y, cfg.k_train,
                                             beta, cfg.seed, noise_id(epoch, tau));
                    sv = r.next;
                    acc.push(r.elbo, r.nll, ema);
                }
                rec.grad_norm = detail::apply_update(tape, opt, acc.loss(tape, cfg), result);
                state = model.lower_state(sv);
                t0_index = i + 1;
                window_start = state;
            }
            rec.wall_ms = detail::now_ms() - t0;
            result.log.push_back(rec);
        }
    }
    return result;
}

inline TrainResult train_sequential(SequentialModel& model, const Stream& stream,
                                    const TrainConfig& cfg) {
    switch (cfg.algorithm) {
        case TrainAlgorithm::exact_rolling: return train_exact_rolling(model, stream, cfg);
        case TrainAlgorithm::chunk_stride: return train_chunk_stride(model, stream, cfg);
        case TrainAlgorithm::approx_stride: return train_approx_stride(model, stream, cfg);
    }
    throw std::logic_error("unreachable");
}

// One optimizer step per member on a recency-weighted window objective.
inline void static_fit_window(StaticModel& model, std::span<const StreamStep> window,
                              std::span<const double> weights, std::vector<AdamOptimizer>& opts,
                              double beta, std::uint64_t seed, std::uint64_t noise,
                              TrainResult& result) {
    if (window.empty()) throw std::invalid_argument("static_fit_window: empty window");
    for (int m = 0; m < model.member_count(); ++m) {
        Tape tape;
        Var loss = model.window_loss(tape, m, window, weights, beta, seed, noise);
        detail::apply_update(tape, opts[static_cast<std::size_t>(m)], loss, result);
    }
}

// Overlapping sliding windows of length W and stride S over the stream, one
// fit per window position per epoch.
inline TrainResult train_static(StaticModel& model, const Stream& stream, const TrainConfig& cfg) {
    cfg.validate();
    if (stream.empty()) throw std::invalid_argument("train: empty stream");
    TrainResult result;
    std::vector<AdamOptimizer> opts;
    for (int m = 0; m < model.member_count(); ++m)
        opts.emplace_back(model.member_params(m), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip});

    const long T = static_cast<long>(stream.size());
    long window_updates = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (long end = std::min<long>(cfg.window, T); end <= T;) {
            const double t0 = detail::now_ms();
            const long begin = std::max(0L, end - cfg.window);
            const auto window = std::span<const StreamStep>(stream.data() + begin,
                                                            static_cast<std::size_t>(end - begin));
            const auto weights = recency_weights_window(static_cast<int>(window.size()), cfg.lambda);
            const double beta = beta_schedule(window_updates, cfg.beta_warmup, cfg.beta_max);
            static_fit_window(model, window, weights, opts, beta, cfg.seed,
                              noise_id(epoch, end), result);
            ++window_updates;
            TrainLogRecord rec{end - 1, epoch, -result.update_losses.back(),
                               result.update_losses.back(), 0.0, beta, 0.0,
                               detail::now_ms() - t0};
            result.log.push_back(rec);
            if (end == T) break;
            end = std::min(end + cfg.stride, T);
        }
    }
    return result;
}

}  // namespace lt
