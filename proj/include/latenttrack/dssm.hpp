#pragma once

// Deep state-space baseline: the recurrent state is purely observation
// driven (h_t = GRU(h_{t-1}, phi_e([x_t, y_t]))) and the latent only
// modulates the emission. The decoder conditions on the pre-update state
// [h_{t-1}, z_t, x_t]; conditioning on h_t would let the emission read the
// very target it scores and breaks the causal prediction path, so the
// pre-update state is used consistently in training and evaluation. The
// amortized posterior over [h_{t-1}, e_t] is training-only and excluded from
// inference-time parameter counts.

#include <span>
#include <string>
#include <vector>

#include "latenttrack/model.hpp"
#include "latenttrack/nn.hpp"

namespace lt {

struct DssmDims {
    int x_dim = 1;
    int d_z = 8;
    int d_h = 64;
    int enc_e = 8;
    int prior_hidden = 8;
    int dec_hidden = 16;
    int post_hidden = 8;
};

class DssmModel final : public SequentialModel {
  public:
    DssmModel(DssmDims dims, std::uint64_t seed)
        : dims_(dims), phi_e_(dims.enc_e, dims.x_dim + 1), gru_(dims.d_h, dims.enc_e),
          prior_net_(dims.d_h, dims.prior_hidden, 2 * dims.d_z),
          dec_net_(dims.d_h + dims.d_z + dims.x_dim, dims.dec_hidden, 2),
          post_net_(dims.d_h + dims.enc_e, dims.post_hidden, 2 * dims.d_z) {
        init(seed);
    }

    void init(std::uint64_t seed) {
        Rng rng = derive_rng(seed, RngStream::init);
        phi_e_.init(rng);
        gru_.init(rng);
        prior_net_.init(rng);
        dec_net_.init(rng);
        post_net_.init(rng);
    }

    std::string kind() const override { return "dssm"; }
    const DssmDims& dims() const { return dims_; }
    int input_dim() const override { return dims_.x_dim; }

    NamedParams named_params() override {
        NamedParams p;
        append_params(p, "phi_e", phi_e_.named_params());
        append_params(p, "gru", gru_.named_params());
        append_params(p, "prior", prior_net_.named_params());
        append_params(p, "dec", dec_net_.named_params());
        append_params(p, "post", post_net_.named_params());
        return p;
    }

    ParamCounts param_counts() const override {
        ParamCounts c;
        c.total = phi_e_.param_count() + gru_.param_count() + prior_net_.param_count() +
                  dec_net_.param_count() + post_net_.param_count();
        c.inference = c.total - post_net_.param_count();  // posterior is training-only
        return c;
    }

    KvFile checkpoint_header() const override {
        KvFile h;
        h.set("kind", kind());
        h.set("dim.x", dims_.x_dim);
        h.set("dim.z", dims_.d_z);
        h.set("dim.h", dims_.d_h);
        h.set("dim.enc_e", dims_.enc_e);
        h.set("dim.prior_hidden", dims_.prior_hidden);
        h.set("dim.dec_hidden", dims_.dec_hidden);
        h.set("dim.post_hidden", dims_.post_hidden);
        return h;
    }

    SeqState initial_state(int /*components*/) const override {
        SeqState s;
        s.h.assign(static_cast<std::size_t>(dims_.d_h), 0.0);
        return s;
    }

    StepVars lift_state(Tape& tape, const SeqState& s) const override {
        return {tape.constant(Shape{dims_.d_h}, s.h), {}};
    }

    SeqState lower_state(const StepVars& sv) const override { return {sv.h.to_vector(), {}}; }

    LatentBelief split_belief(Var out) const {
        return {slice(out, 0, dims_.d_z),
                clamp(slice(out, dims_.d_z, dims_.d_z), kLogVarMin, kLogVarMax)};
    }

    Var encode_pair(Tape& tape, Var x, Var y) const {
        return tanh(phi_e_.forward(tape, concat(x, y)));
    }

    std::pair<Var, Var> decode(Tape& tape, Var h_prev, Var z, Var x) const {
        Var out = dec_net_.forward(tape, concat(std::vector<Var>{h_prev, z, x}));
        return {slice(out, 0, 1), clamp(slice(out, 1, 1), kLogVarMin, kLogVarMax)};
    }

    ElboResult elbo_step(Tape& tape, const StepVars& state, std::span<const double> x, double y,
                         int K, double beta, std::uint64_t seed,
                         std::uint64_t noise) const override {
        if (K < 1) throw std::invalid_argument("elbo_step: K must be >= 1");
        validate_finite(x, "dssm elbo_step");
        Var h_prev = state.h;
        Var x_v = tape.constant_span(Shape{dims_.x_dim}, x);
        Var y_v = tape.constant(Shape{1}, {y});

        LatentBelief prior = split_belief(prior_net_.forward(tape, h_prev));
        Var e = encode_pair(tape, x_v, y_v);
        LatentBelief post = split_belief(post_net_.forward(tape, concat(h_prev, e)));

        Var elog = tape.constant_scalar(0.0);
        for (int k = 0; k < K; ++k) {
            Rng rng = derive_rng(seed, RngStream::train_noise, noise, static_cast<std::uint64_t>(k));
            Var z = sample_gaussian(tape, post, rng.normal_vec(dims_.d_z));
            auto [mean_v, logvar_v] = decode(tape, h_prev, z, x_v);
            elog = add(elog, neg(gaussian_nll(y_v, mean_v, logvar_v)));
        }
        elog = mul_scalar(elog, 1.0 / static_cast<double>(K));
        Var kl = gaussian_kl(post.mean, post.logvar, prior.mean, prior.logvar);

        ElboResult r;
        r.elbo = sub(elog, mul_scalar(kl, beta));
        r.nll = -elog.scalar();
        r.kl = kl.scalar();
        r.next.h = gru_.step(tape, h_prev, e);  // latent-free recurrence
        return r;
    }

    MixturePrediction predict(const SeqState& state, std::span<const double> x, int K,
                              std::uint64_t seed, std::uint64_t noise) const override {
        if (K < 1) throw std::invalid_argument("predict: K must be >= 1");
        validate_finite(x, "dssm predict");
        Tape tape(/*grad_enabled=*/false);
        Var h_prev = tape.constant(Shape{dims_.d_h}, state.h);
        Var x_v = tape.constant_span(Shape{dims_.x_dim}, x);
        LatentBelief prior = split_belief(prior_net_.forward(tape, h_prev));
        std::vector<double> means, vars;
        for (int k = 0; k < K; ++k) {
            Rng rng = derive_rng(seed, RngStream::eval_noise, noise, static_cast<std::uint64_t>(k));
            Var z = sample_gaussian(tape, prior, rng.normal_vec(dims_.d_z));
            auto [mean_v, logvar_v] = decode(tape, h_prev, z, x_v);
            means.push_back(mean_v.value()[0]);
            vars.push_back(std::exp(logvar_v.value()[0]));
        }
        return make_mixture_prediction(std::move(means), std::move(vars));
    }

    SeqState update_state(const SeqState& state, std::span<const double> x, double y,
                          std::uint64_t /*seed*/, std::uint64_t /*noise*/) const override {
        Tape tape(/*grad_enabled=*/false);
        Var h_prev = tape.constant(Shape{dims_.d_h}, state.h);
        Var x_v = tape.constant_span(Shape{dims_.x_dim}, x);
        Var y_v = tape.constant(Shape{1}, {y});
        Var e = encode_pair(tape, x_v, y_v);
        return {gru_.step(tape, h_prev, e).to_vector(), {}};
    }

    Mlp& post_net() { return post_net_; }

  private:
    DssmDims dims_;
    LinearLayer phi_e_;
    GruCell gru_;
    Mlp prior_net_;
    Mlp dec_net_;
    Mlp post_net_;
};

inline ParamCounts dssm_param_counts(const DssmDims& d) {
    const long post = mlp_param_count(d.d_h + d.enc_e, d.post_hidden, 2 * d.d_z);
    const long total = linear_param_count(d.enc_e, d.x_dim + 1) + gru_param_count(d.d_h, d.enc_e) +
                       mlp_param_count(d.d_h, d.prior_hidden, 2 * d.d_z) +
                       mlp_param_count(d.d_h + d.d_z + d.x_dim, d.dec_hidden, 2) + post;
    return {total, total - post};
}

}  // namespace lt
