#pragma once

// Parameterized building blocks shared by every model: linear maps, a GRU
// cell, diagonal-Gaussian heads, fan-in-scaled initialization and parameter
// accounting. All log-variances are clamped to [kLogVarMin, kLogVarMax] so
// densities stay finite even when a model diverges.

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "latenttrack/rng.hpp"
#include "latenttrack/tensor.hpp"

namespace lt {

inline constexpr double kLogVarMin = -12.0;
inline constexpr double kLogVarMax = 12.0;
inline constexpr double kLn2Pi = 1.8378770664093454835606594728112;

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

inline void append_params(NamedParams& dst, const std::string& prefix, NamedParams src) {
    for (auto& [name, tensor] : src) dst.emplace_back(prefix + "." + name, tensor);
}

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline void init_uniform_fanin(Tensor& w, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : w.data) v = rng.uniform(-bound, bound);
}

struct LinearLayer {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    LinearLayer() = default;
    LinearLayer(int out, int in)
        : weight(Shape{out, in}, true), bias(Shape{out}, true) {}

    int out_dim() const { return weight.shape.empty() ? 0 : weight.shape[0]; }
    int in_dim() const { return weight.shape.empty() ? 0 : weight.shape[1]; }

    void init(Rng& rng) {
        init_uniform_fanin(weight, in_dim(), rng);
        for (auto& v : bias.data) v = 0.0;
    }

    Var forward(Tape& tape, Var x) const {
        Tensor& w = const_cast<Tensor&>(weight);
        Tensor& b = const_cast<Tensor&>(bias);
        return add(matvec(tape.leaf(w), x), tape.leaf(b));
    }

    long param_count() const { return static_cast<long>(weight.numel() + bias.numel()); }

    NamedParams named_params() {
        return {{"weight", &weight}, {"bias", &bias}};
    }
};

inline long linear_param_count(int out, int in) { return static_cast<long>(out) * in + out; }

// One hidden layer, tanh, arbitrary output width.
struct Mlp {
    LinearLayer hidden;
    LinearLayer out;

    Mlp() = default;
    Mlp(int in, int hidden_dim, int out_dim) : hidden(hidden_dim, in), out(out_dim, hidden_dim) {}

    void init(Rng& rng) {
        hidden.init(rng);
        out.init(rng);
    }

    Var forward(Tape& tape, Var x) const { return out.forward(tape, tanh(hidden.forward(tape, x))); }

    long param_count() const { return hidden.param_count() + out.param_count(); }

    NamedParams named_params() {
        NamedParams p;
        append_params(p, "hidden", hidden.named_params());
        append_params(p, "out", out.named_params());
        return p;
    }
};

inline long mlp_param_count(int in, int hidden, int out) {
    return linear_param_count(hidden, in) + linear_param_count(out, hidden);
}

// Convention: z = sigma(Wz e + Uz h + bz), r = sigma(Wr e + Ur h + br),
// c = tanh(Wc e + r (.) (Uc h) + bc), h' = (1 - z) (.) h + z (.) c.
// With zero weights and biases this keeps half the previous state.
struct GruCell {
    Tensor w_z, u_z, b_z;
    Tensor w_r, u_r, b_r;
    Tensor w_c, u_c, b_c;

    GruCell() = default;
    GruCell(int hidden, int in)
        : w_z(Shape{hidden, in}, true), u_z(Shape{hidden, hidden}, true), b_z(Shape{hidden}, true),
          w_r(Shape{hidden, in}, true), u_r(Shape{hidden, hidden}, true), b_r(Shape{hidden}, true),
          w_c(Shape{hidden, in}, true), u_c(Shape{hidden, hidden}, true), b_c(Shape{hidden}, true) {}

    int hidden_dim() const { return w_z.shape.empty() ? 0 : w_z.shape[0]; }
    int in_dim() const { return w_z.shape.empty() ? 0 : w_z.shape[1]; }

    void init(Rng& rng) {
        const int h = hidden_dim(), e = in_dim();
        for (Tensor* w : {&w_z, &w_r, &w_c}) init_uniform_fanin(*w, e, rng);
        for (Tensor* u : {&u_z, &u_r, &u_c}) init_uniform_fanin(*u, h, rng);
        for (Tensor* b : {&b_z, &b_r, &b_c}) b->data.assign(b->data.size(), 0.0);
    }

    Var step(Tape& tape, Var h_prev, Var e) const {
        shape_check(h_prev.shape() == Shape{hidden_dim()}, "gru_step", h_prev.shape(),
                    Shape{hidden_dim()});
        shape_check(e.shape() == Shape{in_dim()}, "gru_step", e.shape(), Shape{in_dim()});
        auto& m = const_cast<GruCell&>(*this);
        Var wz = tape.leaf(m.w_z), uz = tape.leaf(m.u_z), bz = tape.leaf(m.b_z);
        Var wr = tape.leaf(m.w_r), ur = tape.leaf(m.u_r), br = tape.leaf(m.b_r);
        Var wc = tape.leaf(m.w_c), uc = tape.leaf(m.u_c), bc = tape.leaf(m.b_c);
        Var zg = sigmoid(add(add(matvec(wz, e), matvec(uz, h_prev)), bz));
        Var rg = sigmoid(add(add(matvec(wr, e), matvec(ur, h_prev)), br));
        Var cand = tanh(add(add(matvec(wc, e), mul(rg, matvec(uc, h_prev))), bc));
        Var keep = mul(sub(tape.constant_scalar(1.0), zg), h_prev);
        return add(keep, mul(zg, cand));
    }

    long param_count() const {
        const long h = hidden_dim(), e = in_dim();
        return 3 * (h * e + h * h + h);
    }

    NamedParams named_params() {
        return {{"w_z", &w_z}, {"u_z", &u_z}, {"b_z", &b_z}, {"w_r", &w_r}, {"u_r", &u_r},
                {"b_r", &b_r}, {"w_c", &w_c}, {"u_c", &u_c}, {"b_c", &b_c}};
    }
};

inline long gru_param_count(int hidden, int in) {
    return 3L * (static_cast<long>(hidden) * in + static_cast<long>(hidden) * hidden + hidden);
}

// Pair of linear heads emitting (mean, clamped log-variance).
struct GaussianHead {
    LinearLayer mean_head;
    LinearLayer logvar_head;

    GaussianHead() = default;
    GaussianHead(int in, int out) : mean_head(out, in), logvar_head(out, in) {}

    void init(Rng& rng) {
        mean_head.init(rng);
        logvar_head.init(rng);
    }

    std::pair<Var, Var> forward(Tape& tape, Var x) const {
        return {mean_head.forward(tape, x), clamp(logvar_head.forward(tape, x), kLogVarMin, kLogVarMax)};
    }

    long param_count() const { return mean_head.param_count() + logvar_head.param_count(); }

    NamedParams named_params() {
        NamedParams p;
        append_params(p, "mean", mean_head.named_params());
        append_params(p, "logvar", logvar_head.named_params());
        return p;
    }
};

// Hidden-tanh Gaussian-output MLP evaluated from explicit weight nodes, so
// generated, sampled, and directly held weights all share one forward path.
inline std::pair<Var, Var> predictor_forward(Var w_hidden, Var b_hidden, Var w_mean, Var b_mean,
                                             Var w_logvar, Var b_logvar, Var x) {
    Var hid = tanh(add(matvec(w_hidden, x), b_hidden));
    Var mean_v = add(matvec(w_mean, hid), b_mean);
    Var logvar_v = clamp(add(matvec(w_logvar, hid), b_logvar), kLogVarMin, kLogVarMax);
    return {mean_v, logvar_v};
}

// Diagonal Gaussian negative log-likelihood:
// 1/2 sum_i [ logvar_i + (y_i - mean_i)^2 / exp(logvar_i) + ln 2pi ].
inline Var gaussian_nll(Var y, Var mean_v, Var logvar_v) {
    shape_check(y.shape() == mean_v.shape(), "gaussian_nll", y.shape(), mean_v.shape());
    shape_check(y.shape() == logvar_v.shape(), "gaussian_nll", y.shape(), logvar_v.shape());
    Var resid = sub(y, mean_v);
    Var quad = mul(mul(resid, resid), exp(neg(logvar_v)));
    Var terms = add_scalar(add(logvar_v, quad), kLn2Pi);
    return mul_scalar(sum(terms), 0.5);
}

// Closed-form KL between diagonal Gaussians q and p:
// 1/2 sum_i [ exp(ql - pl) + (qm - pm)^2 exp(-pl) - 1 + pl - ql ].
inline Var gaussian_kl(Var q_mean, Var q_logvar, Var p_mean, Var p_logvar) {
    shape_check(q_mean.shape() == q_logvar.shape(), "gaussian_kl", q_mean.shape(), q_logvar.shape());
    shape_check(q_mean.shape() == p_mean.shape(), "gaussian_kl", q_mean.shape(), p_mean.shape());
    shape_check(q_mean.shape() == p_logvar.shape(), "gaussian_kl", q_mean.shape(), p_logvar.shape());
    Var ratio = exp(sub(q_logvar, p_logvar));
    Var dm = sub(q_mean, p_mean);
    Var quad = mul(mul(dm, dm), exp(neg(p_logvar)));
    Var terms = add(add_scalar(add(ratio, quad), -1.0), sub(p_logvar, q_logvar));
    return mul_scalar(sum(terms), 0.5);
}

// Scalar-double versions used on gradient-free paths.
inline double gaussian_nll_value(double y, double mean, double logvar) {
    const double r = y - mean;
    return 0.5 * (logvar + r * r * std::exp(-logvar) + kLn2Pi);
}

inline double gaussian_log_pdf(double y, double mean, double var) {
    const double r = y - mean;
    return -0.5 * (std::log(var) + r * r / var + kLn2Pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// On-tape diagonal-Gaussian belief over a latent vector.
struct LatentBelief {
    Var mean;
    Var logvar;  // clamped by the producing head
};

// Reparameterized draw z = mean + exp(logvar / 2) (.) eps.
inline Var sample_gaussian(Tape& tape, const LatentBelief& belief, std::span<const double> eps) {
    Var e = tape.constant_span(belief.mean.shape(), eps);
    Var scale = exp(mul_scalar(belief.logvar, 0.5));
    return add(belief.mean, mul(scale, e));
}

// Monte Carlo mixture decomposition over per-component Gaussians. Epistemic
// uses the population variance of component means; total = aleatoric +
// epistemic by construction (law of total variance).
struct MixtureStats {
    double mean = 0.0;
    double var_alea = 0.0;
    double var_epi = 0.0;
    double var_tot = 0.0;
};

inline MixtureStats mixture_stats(std::span<const double> comp_means,
                                  std::span<const double> comp_vars) {
    MixtureStats s;
    const std::size_t k = comp_means.size();
    // Work relative to the first component mean: identical components then
    // give an exactly zero epistemic term, and large means stay conditioned.
    const double anchor = comp_means[0];
    double shifted_sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        shifted_sum += comp_means[i] - anchor;
        s.var_alea += comp_vars[i];
    }
    const double shifted_mean = shifted_sum / static_cast<double>(k);
    s.mean = anchor + shifted_mean;
    s.var_alea /= static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double d = (comp_means[i] - anchor) - shifted_mean;
        s.var_epi += d * d;
    }
    s.var_epi /= static_cast<double>(k);
    s.var_tot = s.var_alea + s.var_epi;
    return s;
}

// -log of the mixture density via log-sum-exp over component log densities.
inline double mixture_nll(double y, std::span<const double> comp_means,
                          std::span<const double> comp_vars) {
    const std::size_t k = comp_means.size();
    double max_lp = -std::numeric_limits<double>::infinity();
    std::vector<double> lps(k);
    for (std::size_t i = 0; i < k; ++i) {
        lps[i] = gaussian_log_pdf(y, comp_means[i], comp_vars[i]);
        max_lp = std::max(max_lp, lps[i]);
    }
    if (!std::isfinite(max_lp)) return std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (double lp : lps) acc += std::exp(lp - max_lp);
    return -(max_lp + std::log(acc / static_cast<double>(k)));
}

// Mixture CDF at y: average of component Gaussian CDFs (PIT value).
inline double mixture_cdf(double y, std::span<const double> comp_means,
                          std::span<const double> comp_vars) {
    double acc = 0.0;
    for (std::size_t i = 0; i < comp_means.size(); ++i)
        acc += normal_cdf((y - comp_means[i]) / std::sqrt(comp_vars[i]));
    return acc / static_cast<double>(comp_means.size());
}

}  // namespace lt
