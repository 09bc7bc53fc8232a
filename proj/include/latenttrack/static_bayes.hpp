#pragma once

// Static uncertainty baselines: MC-Dropout, Bayes-by-Backprop, and Deep
// Ensembles. None keeps persistent temporal state; all share the
// hidden-tanh Gaussian-head predictor and the common mixture decomposition.
// Training happens on overlapping sliding windows (see training.hpp).

#include <span>
#include <string>
#include <vector>

#include "latenttrack/model.hpp"
#include "latenttrack/nn.hpp"
#include "latenttrack/stream.hpp"

namespace lt {

inline constexpr double kBbbInitLogVar = -6.0;
inline constexpr double kWindowNormEps = 1e-8;

struct GaussianMlp {
    LinearLayer hidden;
    GaussianHead head;

    GaussianMlp() = default;
    GaussianMlp(int x_dim, int hidden_dim) : hidden(hidden_dim, x_dim), head(hidden_dim, 1) {}

    void init(Rng& rng) {
        hidden.init(rng);
        head.init(rng);
    }

    std::pair<Var, Var> forward(Tape& tape, Var x) const {
        auto& m = const_cast<GaussianMlp&>(*this);
        return predictor_forward(tape.leaf(m.hidden.weight), tape.leaf(m.hidden.bias),
                                 tape.leaf(m.head.mean_head.weight), tape.leaf(m.head.mean_head.bias),
                                 tape.leaf(m.head.logvar_head.weight),
                                 tape.leaf(m.head.logvar_head.bias), x);
    }

    long param_count() const { return hidden.param_count() + head.param_count(); }

    NamedParams named_params() {
        NamedParams p;
        append_params(p, "hidden", hidden.named_params());
        append_params(p, "head", head.named_params());
        return p;
    }
};

inline long gaussian_mlp_param_count(int x_dim, int hidden) {
    return linear_param_count(hidden, x_dim) + 2L * linear_param_count(1, hidden);
}

class StaticModel {
  public:
    virtual ~StaticModel() = default;

    virtual std::string kind() const = 0;
    virtual int input_dim() const = 0;
    virtual NamedParams named_params() = 0;
    virtual ParamCounts param_counts() const = 0;
    virtual KvFile checkpoint_header() const = 0;

    virtual int member_count() const { return 1; }
    virtual NamedParams member_params(int /*member*/) { return named_params(); }

    // Recency-weighted objective over one sliding window for one member.
    virtual Var window_loss(Tape& tape, int member, std::span<const StreamStep> window,
                            std::span<const double> weights, double beta, std::uint64_t seed,
                            std::uint64_t noise) const = 0;

    virtual MixturePrediction predict(std::span<const double> x, int K, std::uint64_t seed,
                                      std::uint64_t noise) const = 0;
};

namespace detail {

inline Var weighted_nll_sum(Tape& tape, std::span<const StreamStep> window,
                            std::span<const double> weights,
                            const std::function<std::pair<Var, Var>(Tape&, Var, std::size_t)>& fwd) {
    if (window.empty()) throw std::invalid_argument("window_loss: empty window");
    if (window.size() != weights.size())
        throw std::invalid_argument("window_loss: weight count mismatch");
    Var acc = tape.constant_scalar(0.0);
    double z_norm = 0.0;
    for (std::size_t i = 0; i < window.size(); ++i) {
        Var x = tape.constant_span(Shape{static_cast<int>(window[i].x.size())}, window[i].x);
        Var y = tape.constant(Shape{1}, {window[i].y});
        auto [mean_v, logvar_v] = fwd(tape, x, i);
        acc = add(acc, mul_scalar(gaussian_nll(y, mean_v, logvar_v), weights[i]));
        z_norm += weights[i];
    }
    return mul_scalar(acc, 1.0 / std::max(z_norm, kWindowNormEps));
}

}  // namespace detail

// MC-Dropout: inverted dropout on the hidden activations during both
// training and the K stochastic prediction passes.
class McDropoutModel final : public StaticModel {
  public:
    McDropoutModel(int x_dim, int hidden, double drop_p, std::uint64_t seed)
        : x_dim_(x_dim), hidden_(hidden), drop_p_(drop_p), net_(x_dim, hidden) {
        Rng rng = derive_rng(seed, RngStream::init);
        net_.init(rng);
    }

    std::string kind() const override { return "mc_dropout"; }
    int input_dim() const override { return x_dim_; }

    NamedParams named_params() override { return net_.named_params(); }

    ParamCounts param_counts() const override {
        const long n = gaussian_mlp_param_count(x_dim_, hidden_);
        return {n, n};
    }

    KvFile checkpoint_header() const override {
        KvFile h;
        h.set("kind", kind());
        h.set("dim.x", x_dim_);
        h.set("dim.hidden", hidden_);
        h.set("dropout_p", drop_p_);
        return h;
    }

    std::pair<Var, Var> forward_masked(Tape& tape, Var x, Rng& rng) const {
        auto& m = const_cast<McDropoutModel&>(*this);
        Var hid = tanh(add(matvec(tape.leaf(m.net_.hidden.weight), x), tape.leaf(m.net_.hidden.bias)));
        if (drop_p_ > 0.0) {
            std::vector<double> mask(static_cast<std::size_t>(hidden_));
            const double scale = 1.0 / (1.0 - drop_p_);
            for (auto& v : mask) v = rng.uniform01() < drop_p_ ? 0.0 : scale;
            hid = mul(hid, tape.constant(Shape{hidden_}, std::move(mask)));
        }
        Var mean_v = add(matvec(tape.leaf(m.net_.head.mean_head.weight), hid),
                         tape.leaf(m.net_.head.mean_head.bias));
        Var logvar_v = clamp(add(matvec(tape.leaf(m.net_.head.logvar_head.weight), hid),
                                 tape.leaf(m.net_.head.logvar_head.bias)),
                             kLogVarMin, kLogVarMax);
        return {mean_v, logvar_v};
    }

    Var window_loss(Tape& tape, int /*member*/, std::span<const StreamStep> window,
                    std::span<const double> weights, double /*beta*/, std::uint64_t seed,
                    std::uint64_t noise) const override {
        return detail::weighted_nll_sum(tape, window, weights,
                                        [&](Tape& tp, Var x, std::size_t i) {
                                            Rng rng = derive_rng(seed, RngStream::dropout, noise, i);
                                            return forward_masked(tp, x, rng);
                                        });
    }

    MixturePrediction predict(std::span<const double> x, int K, std::uint64_t seed,
                              std::uint64_t noise) const override {
        validate_finite(x, "mc_dropout predict");
        Tape tape(/*grad_enabled=*/false);
        Var xv = tape.constant_span(Shape{x_dim_}, x);
        std::vector<double> means, vars;
        for (int k = 0; k < K; ++k) {
            Rng rng = derive_rng(seed, RngStream::eval_noise, noise, static_cast<std::uint64_t>(k));
            auto [mean_v, logvar_v] = forward_masked(tape, xv, rng);
            means.push_back(mean_v.value()[0]);
            vars.push_back(std::exp(logvar_v.value()[0]));
        }
        return make_mixture_prediction(std::move(means), std::move(vars));
    }

    GaussianMlp& net() { return net_; }
    double drop_p() const { return drop_p_; }

  private:
    int x_dim_;
    int hidden_;
    double drop_p_;
    GaussianMlp net_;
};

// Bayes-by-Backprop: mean-field Gaussian over every predictor weight,
// reparameterized draws, standard-normal prior on the weights.
class BbbModel final : public StaticModel {
  public:
    BbbModel(int x_dim, int hidden, std::uint64_t seed) : x_dim_(x_dim), hidden_(hidden) {
        const std::vector<std::pair<std::string, Shape>> layout = {
            {"w_hidden", {hidden, x_dim}}, {"b_hidden", {hidden}}, {"w_mean", {1, hidden}},
            {"b_mean", {1}},               {"w_logvar", {1, hidden}}, {"b_logvar", {1}},
        };
        Rng rng = derive_rng(seed, RngStream::init);
        for (const auto& [name, shape] : layout) {
            Tensor mu(shape, true);
            const int fan_in = shape.size() == 2 ? shape[1] : hidden;
            init_uniform_fanin(mu, fan_in, rng);
            if (shape.size() == 1 || name[0] == 'b') mu.data.assign(mu.data.size(), 0.0);
            Tensor lv(shape, true);
            lv.data.assign(lv.data.size(), kBbbInitLogVar);
            names_.push_back(name);
            mu_.push_back(std::move(mu));
            lv_.push_back(std::move(lv));
        }
    }

    std::string kind() const override { return "bbb"; }
    int input_dim() const override { return x_dim_; }

    NamedParams named_params() override {
        NamedParams p;
        for (std::size_t i = 0; i < names_.size(); ++i) {
            p.emplace_back(names_[i] + ".mu", &mu_[i]);
            p.emplace_back(names_[i] + ".logvar", &lv_[i]);
        }
        return p;
    }

    ParamCounts param_counts() const override {
        const long n = 2L * gaussian_mlp_param_count(x_dim_, hidden_);
        return {n, n};  // both moments are needed to sample at test time
    }

    KvFile checkpoint_header() const override {
        KvFile h;
        h.set("kind", kind());
        h.set("dim.x", x_dim_);
        h.set("dim.hidden", hidden_);
        return h;
    }

    // Draw one full weight set on the tape (reparameterized).
    std::vector<Var> sample_weights(Tape& tape, Rng& rng) const {
        auto& m = const_cast<BbbModel&>(*this);
        std::vector<Var> ws;
        for (std::size_t i = 0; i < mu_.size(); ++i) {
            Var mu = tape.leaf(m.mu_[i]);
            Var lv = clamp(tape.leaf(m.lv_[i]), kLogVarMin, kLogVarMax);
            Var eps = tape.constant(mu_[i].shape, rng.normal_vec(static_cast<int>(mu_[i].numel())));
            ws.push_back(add(mu, mul(exp(mul_scalar(lv, 0.5)), eps)));
        }
        return ws;
    }

    std::pair<Var, Var> forward_with(Tape& /*tape*/, const std::vector<Var>& ws, Var x) const {
        return predictor_forward(ws[0], ws[1], ws[2], ws[3], ws[4], ws[5], x);
    }

    Var weight_kl(Tape& tape) const {
        auto& m = const_cast<BbbModel&>(*this);
        Var acc = tape.constant_scalar(0.0);
        for (std::size_t i = 0; i < mu_.size(); ++i) {
            Var mu = reshape(tape.leaf(m.mu_[i]), Shape{static_cast<int>(mu_[i].numel())});
            Var lv = clamp(reshape(tape.leaf(m.lv_[i]), Shape{static_cast<int>(lv_[i].numel())}),
                           kLogVarMin, kLogVarMax);
            Var zeros = tape.constant(Shape{static_cast<int>(mu_[i].numel())},
                                      std::vector<double>(mu_[i].numel(), 0.0));
            acc = add(acc, gaussian_kl(mu, lv, zeros, zeros));
        }
        return acc;
    }

    // Weighted NLL with a single weight draw per window plus the beta-scaled
    // weight KL normalized per window point.
    Var window_loss(Tape& tape, int /*member*/, std::span<const StreamStep> window,
                    std::span<const double> weights, double beta, std::uint64_t seed,
                    std::uint64_t noise) const override {
        Rng rng = derive_rng(seed, RngStream::train_noise, noise, 0);
        auto ws = sample_weights(tape, rng);
        Var nll = detail::weighted_nll_sum(
            tape, window, weights,
            [&](Tape& tp, Var x, std::size_t) { return forward_with(tp, ws, x); });
        if (beta == 0.0) return nll;
        Var kl = mul_scalar(weight_kl(tape), beta / static_cast<double>(window.size()));
        return add(nll, kl);
    }

    MixturePrediction predict(std::span<const double> x, int K, std::uint64_t seed,
                              std::uint64_t noise) const override {
        validate_finite(x, "bbb predict");
        Tape tape(/*grad_enabled=*/false);
        Var xv = tape.constant_span(Shape{x_dim_}, x);
        std::vector<double> means, vars;
        for (int k = 0; k < K; ++k) {
            Rng rng = derive_rng(seed, RngStream::eval_noise, noise, static_cast<std::uint64_t>(k));
            auto ws = sample_weights(tape, rng);
            auto [mean_v, logvar_v] = forward_with(tape, ws, xv);
            means.push_back(mean_v.value()[0]);
            vars.push_back(std::exp(logvar_v.value()[0]));
        }
        return make_mixture_prediction(std::move(means), std::move(vars));
    }

    Tensor& weight_logvar(std::size_t i) { return lv_[i]; }
    std::size_t tensor_count() const { return mu_.size(); }

  private:
    int x_dim_;
    int hidden_;
    std::vector<std::string> names_;
    std::vector<Tensor> mu_;
    std::vector<Tensor> lv_;
};

// Deep ensemble of independently initialized predictors; members train
// independently on the same windows and mix at prediction time.
class EnsembleModel final : public StaticModel {
  public:
    EnsembleModel(int x_dim, int hidden, int members, std::uint64_t seed)
        : x_dim_(x_dim), hidden_(hidden) {
        for (int m = 0; m < members; ++m) {
            members_.emplace_back(x_dim, hidden);
            Rng rng = derive_rng(seed, RngStream::init, static_cast<std::uint64_t>(m));
            members_.back().init(rng);
        }
    }

    std::string kind() const override { return "ensemble"; }
    int input_dim() const override { return x_dim_; }
    int member_count() const override { return static_cast<int>(members_.size()); }

    NamedParams named_params() override {
        NamedParams p;
        for (std::size_t m = 0; m < members_.size(); ++m)
            append_params(p, "member" + std::to_string(m), members_[m].named_params());
        return p;
    }

    NamedParams member_params(int member) override {
        return members_[static_cast<std::size_t>(member)].named_params();
    }

    ParamCounts param_counts() const override {
        const long n = static_cast<long>(members_.size()) * gaussian_mlp_param_count(x_dim_, hidden_);
        return {n, n};
    }

    KvFile checkpoint_header() const override {
        KvFile h;
        h.set("kind", kind());
        h.set("dim.x", x_dim_);
        h.set("dim.hidden", hidden_);
        h.set("members", member_count());
        return h;
    }

    Var window_loss(Tape& tape, int member, std::span<const StreamStep> window,
                    std::span<const double> weights, double /*beta*/, std::uint64_t /*seed*/,
                    std::uint64_t /*noise*/) const override {
        const GaussianMlp& net = members_[static_cast<std::size_t>(member)];
        return detail::weighted_nll_sum(
            tape, window, weights,
            [&](Tape& tp, Var x, std::size_t) { return net.forward(tp, x); });
    }

    MixturePrediction predict(std::span<const double> x, int /*K*/, std::uint64_t /*seed*/,
                              std::uint64_t /*noise*/) const override {
        validate_finite(x, "ensemble predict");
        Tape tape(/*grad_enabled=*/false);
        Var xv = tape.constant_span(Shape{x_dim_}, x);
        std::vector<double> means, vars;
        for (const auto& member : members_) {
            auto [mean_v, logvar_v] = member.forward(tape, xv);
            means.push_back(mean_v.value()[0]);
            vars.push_back(std::exp(logvar_v.value()[0]));
        }
        return make_mixture_prediction(std::move(means), std::move(vars));
    }

    GaussianMlp& member(int m) { return members_[static_cast<std::size_t>(m)]; }

  private:
    int x_dim_;
    int hidden_;
    std::vector<GaussianMlp> members_;
};

}  // namespace lt
