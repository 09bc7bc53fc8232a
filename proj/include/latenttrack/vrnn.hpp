#pragma once

// Variational RNN baseline adapted to conditional regression. The sampled
// latent enters the recurrent update: h_t = GRU(h_{t-1}, [phi_x(x_t);
// phi_z(z_t)]), so latent information propagates forward through the state.
// Prior conditions on h_{t-1}; the decoder sees [h_t, z_t, x_t]; the
// posterior amortizes over [h_{t-1}, x_t, y_t] and is also used at test time
// to drive the state update, so every parameter is inference-active.

#include <span>
#include <string>
#include <vector>

#include "latenttrack/model.hpp"
#include "latenttrack/nn.hpp"

namespace lt {

struct VrnnDims {
    int x_dim = 1;
    int d_z = 8;
    int d_h = 64;
    int enc_x = 8;
    int enc_z = 4;
    int prior_hidden = 8;
    int dec_hidden = 16;
    int post_hidden = 8;
};

class VrnnModel final : public SequentialModel {
  public:
    VrnnModel(VrnnDims dims, std::uint64_t seed)
        : dims_(dims), phi_x_(dims.enc_x, dims.x_dim), phi_z_(dims.enc_z, dims.d_z),
          gru_(dims.d_h, dims.enc_x + dims.enc_z),
          prior_net_(dims.d_h, dims.prior_hidden, 2 * dims.d_z),
          dec_net_(dims.d_h + dims.d_z + dims.x_dim, dims.dec_hidden, 2),
          post_net_(dims.d_h + dims.x_dim + 1, dims.post_hidden, 2 * dims.d_z) {
        init(seed);
    }

    void init(std::uint64_t seed) {
        Rng rng = derive_rng(seed, RngStream::init);
        phi_x_.init(rng);
        phi_z_.init(rng);
        gru_.init(rng);
        prior_net_.init(rng);
        dec_net_.init(rng);
        post_net_.init(rng);
    }

    std::string kind() const override { return "vrnn"; }
    const VrnnDims& dims() const { return dims_; }
    int input_dim() const override { return dims_.x_dim; }

    NamedParams named_params() override {
        NamedParams p;
        append_params(p, "phi_x", phi_x_.named_params());
        append_params(p, "phi_z", phi_z_.named_params());
        append_params(p, "gru", gru_.named_params());
        append_params(p, "prior", prior_net_.named_params());
        append_params(p, "dec", dec_net_.named_params());
        append_params(p, "post", post_net_.named_params());
        return p;
    }

    ParamCounts param_counts() const override {
        ParamCounts c;
        c.total = phi_x_.param_count() + phi_z_.param_count() + gru_.param_count() +
                  prior_net_.param_count() + dec_net_.param_count() + post_net_.param_count();
        c.inference = c.total;  // posterior drives the test-time state update
        return c;
    }

    KvFile checkpoint_header() const override {
        KvFile h;
        h.set("kind", kind());
        h.set("dim.x", dims_.x_dim);
        h.set("dim.z", dims_.d_z);
        h.set("dim.h", dims_.d_h);
        h.set("dim.enc_x", dims_.enc_x);
        h.set("dim.enc_z", dims_.enc_z);
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

    Var recur(Tape& tape, Var h_prev, Var x, Var z) const {
        Var ex = tanh(phi_x_.forward(tape, x));
        Var ez = tanh(phi_z_.forward(tape, z));
        return gru_.step(tape, h_prev, concat(ex, ez));
    }

    std::pair<Var, Var> decode(Tape& tape, Var h, Var z, Var x) const {
        Var out = dec_net_.forward(tape, concat(std::vector<Var>{h, z, x}));
        return {slice(out, 0, 1), clamp(slice(out, 1, 1), kLogVarMin, kLogVarMax)};
    }

    ElboResult elbo_step(Tape& tape, const StepVars& state, std::span<const double> x, double y,
                         int K, double beta, std::uint64_t seed,
                         std::uint64_t noise) const override {
        if (K < 1) throw std::invalid_argument("elbo_step: K must be >= 1");
        validate_finite(x, "vrnn elbo_step");
        Var h_prev = state.h;
        Var x_v = tape.constant_span(Shape{dims_.x_dim}, x);
        Var y_v = tape.constant(Shape{1}, {y});

        LatentBelief prior = split_belief(prior_net_.forward(tape, h_prev));
        LatentBelief post =
            split_belief(post_net_.forward(tape, concat(std::vector<Var>{h_prev, x_v, y_v})));

        Var elog = tape.constant_scalar(0.0);
        Var h_carry;
        for (int k = 0; k < K; ++k) {
            Rng rng = derive_rng(seed, RngStream::train_noise, noise, static_cast<std::uint64_t>(k));
            Var z = sample_gaussian(tape, post, rng.normal_vec(dims_.d_z));
            Var h = recur(tape, h_prev, x_v, z);
            if (k == 0) h_carry = h;  // carried state follows the first draw
            auto [mean_v, logvar_v] = decode(tape, h, z, x_v);
            elog = add(elog, neg(gaussian_nll(y_v, mean_v, logvar_v)));
        }
        elog = mul_scalar(elog, 1.0 / static_cast<double>(K));
        Var kl = gaussian_kl(post.mean, post.logvar, prior.mean, prior.logvar);

        ElboResult r;
        r.elbo = sub(elog, mul_scalar(kl, beta));
        r.nll = -elog.scalar();
        r.kl = kl.scalar();
        r.next.h = h_carry;
        return r;
    }

    MixturePrediction predict(const SeqState& state, std::span<const double> x, int K,
                              std::uint64_t seed, std::uint64_t noise) const override {
        if (K < 1) throw std::invalid_argument("predict: K must be >= 1");
        validate_finite(x, "vrnn predict");
        Tape tape(/*grad_enabled=*/false);
        Var h_prev = tape.constant(Shape{dims_.d_h}, state.h);
        Var x_v = tape.constant_span(Shape{dims_.x_dim}, x);
        LatentBelief prior = split_belief(prior_net_.forward(tape, h_prev));
        std::vector<double> means, vars;
        for (int k = 0; k < K; ++k) {
            Rng rng = derive_rng(seed, RngStream::eval_noise, noise, static_cast<std::uint64_t>(k));
            Var z = sample_gaussian(tape, prior, rng.normal_vec(dims_.d_z));
            Var h = recur(tape, h_prev, x_v, z);
            auto [mean_v, logvar_v] = decode(tape, h, z, x_v);
            means.push_back(mean_v.value()[0]);
            vars.push_back(std::exp(logvar_v.value()[0]));
        }
        return make_mixture_prediction(std::move(means), std::move(vars));
    }

    SeqState update_state(const SeqState& state, std::span<const double> x, double y,
                          std::uint64_t seed, std::uint64_t noise) const override {
        Tape tape(/*grad_enabled=*/false);
        Var h_prev = tape.constant(Shape{dims_.d_h}, state.h);
        Var x_v = tape.constant_span(Shape{dims_.x_dim}, x);
        Var y_v = tape.constant(Shape{1}, {y});
        LatentBelief post =
            split_belief(post_net_.forward(tape, concat(std::vector<Var>{h_prev, x_v, y_v})));
        Rng rng = derive_rng(seed, RngStream::state_update, noise, 0);
        Var z = sample_gaussian(tape, post, rng.normal_vec(dims_.d_z));
        return {recur(tape, h_prev, x_v, z).to_vector(), {}};
    }

    Mlp& prior_net() { return prior_net_; }
    Mlp& post_net() { return post_net_; }
    Mlp& dec_net() { return dec_net_; }

  private:
    VrnnDims dims_;
    LinearLayer phi_x_;
    LinearLayer phi_z_;
    GruCell gru_;
    Mlp prior_net_;
    Mlp dec_net_;
    Mlp post_net_;
};

inline ParamCounts vrnn_param_counts(const VrnnDims& d) {
    long total = linear_param_count(d.enc_x, d.x_dim) + linear_param_count(d.enc_z, d.d_z) +
                 gru_param_count(d.d_h, d.enc_x + d.enc_z) +
                 mlp_param_count(d.d_h, d.prior_hidden, 2 * d.d_z) +
                 mlp_param_count(d.d_h + d.d_z + d.x_dim, d.dec_hidden, 2) +
                 mlp_param_count(d.d_h + d.x_dim + 1, d.post_hidden, 2 * d.d_z);
    return {total, total};
}

}  // namespace lt
