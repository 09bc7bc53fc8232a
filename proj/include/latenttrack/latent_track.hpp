#pragma once

// The latent-track model: a causal GRU summarizer over encoded (x, y) pairs,
// linear Gaussian belief heads over a low-dimensional latent, and a linear
// hypernetwork mapping latent draws to the full weight vector of a small
// Gaussian-head MLP predictor.
//
// Variants:
//   unstructured - marginal prior head on h_{t-1}; KL(q || prior). The prior
//                  path alone drives prediction, so the posterior head is
//                  excluded from inference-time parameter counts.
//   structured   - transition head on [h_{t-1}; z_{t-1}]; the KL targets the
//                  transition kernel averaged over carried posterior samples.
//                  There is no marginal prior head: the transition kernel is
//                  the prediction path, and every parameter is active at
//                  inference.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latenttrack/model.hpp"
#include "latenttrack/nn.hpp"
#include "latenttrack/rng.hpp"

namespace lt {

struct LtDims {
    int x_dim = 1;
    int d_z = 8;
    int d_h = 64;
    int embed = 9;
    int pred_hidden = 3;
};

enum class LtVariant { structured, unstructured };

inline std::string variant_name(LtVariant v) {
    return v == LtVariant::structured ? "structured" : "unstructured";
}

// Flat layout of the generated predictor: one hidden tanh layer and two
// scalar heads (mean, log-variance).
struct PredictorManifest {
    int x_dim = 0;
    int hidden = 0;

    struct Entry {
        std::string name;
        Shape shape;
        long offset;
    };

    std::vector<Entry> entries() const {
        std::vector<Entry> e;
        long off = 0;
        auto push = [&](const std::string& name, Shape shape) {
            e.push_back({name, shape, off});
            off += static_cast<long>(shape_numel(shape));
        };
        push("w_hidden", {hidden, x_dim});
        push("b_hidden", {hidden});
        push("w_mean", {1, hidden});
        push("b_mean", {1});
        push("w_logvar", {1, hidden});
        push("b_logvar", {1});
        return e;
    }

    long theta_size() const {
        return static_cast<long>(hidden) * x_dim + hidden + 2L * (hidden + 1);
    }
};

// Generated weights plus the manifest mapping them onto the predictor.
struct GeneratedPredictor {
    Var theta;
    const PredictorManifest* manifest = nullptr;
};

class LtModel final : public SequentialModel {
  public:
    LtModel(LtVariant variant, LtDims dims, std::uint64_t seed)
        : variant_(variant), dims_(dims), manifest_{dims.x_dim, dims.pred_hidden},
          enc_(dims.embed, dims.x_dim + 1), gru_(dims.d_h, dims.embed),
          post_head_(2 * dims.d_z, dims.d_h),
          hyper_(static_cast<int>(manifest_.theta_size()), dims.d_z) {
        if (variant_ == LtVariant::unstructured)
            prior_head_ = LinearLayer(2 * dims.d_z, dims.d_h);
        else
            trans_head_ = LinearLayer(2 * dims.d_z, dims.d_h + dims.d_z);
        init(seed);
    }

    void init(std::uint64_t seed) {
        Rng rng = derive_rng(seed, RngStream::init);
        enc_.init(rng);
        gru_.init(rng);
        if (variant_ == LtVariant::unstructured) prior_head_.init(rng);
        post_head_.init(rng);
        if (variant_ == LtVariant::structured) trans_head_.init(rng);
        hyper_.init(rng);
    }

    std::string kind() const override {
        return variant_ == LtVariant::structured ? "lt_structured" : "lt_unstructured";
    }
    LtVariant variant() const { return variant_; }
    const LtDims& dims() const { return dims_; }
    const PredictorManifest& manifest() const { return manifest_; }
    int input_dim() const override { return dims_.x_dim; }

    NamedParams named_params() override {
        NamedParams p;
        append_params(p, "enc", enc_.named_params());
        append_params(p, "gru", gru_.named_params());
        if (variant_ == LtVariant::unstructured) append_params(p, "prior", prior_head_.named_params());
        append_params(p, "post", post_head_.named_params());
        if (variant_ == LtVariant::structured) append_params(p, "trans", trans_head_.named_params());
        append_params(p, "hyper", hyper_.named_params());
        return p;
    }

    ParamCounts param_counts() const override {
        ParamCounts c;
        c.total = enc_.param_count() + gru_.param_count() + post_head_.param_count() +
                  hyper_.param_count();
        if (variant_ == LtVariant::unstructured) {
            c.total += prior_head_.param_count();
            c.inference = c.total - post_head_.param_count();
        } else {
            c.total += trans_head_.param_count();
            c.inference = c.total;  // posterior and transition both active at test time
        }
        return c;
    }

    KvFile checkpoint_header() const override {
        KvFile h;
        h.set("kind", kind());
        h.set("variant", variant_name(variant_));
        h.set("dim.x", dims_.x_dim);
        h.set("dim.z", dims_.d_z);
        h.set("dim.h", dims_.d_h);
        h.set("dim.embed", dims_.embed);
        h.set("dim.pred_hidden", dims_.pred_hidden);
        return h;
    }

    // --- per-operation surface ---

    Var encode_step(Tape& tape, std::span<const double> x, double y) const {
        validate_finite(x, "encode_step");
        validate_finite(std::span<const double>(&y, 1), "encode_step");
        Var xv = tape.constant_span(Shape{dims_.x_dim}, x);
        Var yv = tape.constant(Shape{1}, {y});
        return tanh(enc_.forward(tape, concat(xv, yv)));
    }

    LatentBelief split_belief(Var head_out) const {
        return {slice(head_out, 0, dims_.d_z),
                clamp(slice(head_out, dims_.d_z, dims_.d_z), kLogVarMin, kLogVarMax)};
    }

    LatentBelief prior_belief(Tape& tape, Var h_prev) const {
        if (variant_ != LtVariant::unstructured)
            throw VariantError("prior_belief: structured variant has no marginal prior head");
        return split_belief(prior_head_.forward(tape, h_prev));
    }

    LatentBelief posterior_belief(Tape& tape, Var h) const {
        return split_belief(post_head_.forward(tape, h));
    }

    LatentBelief transition_belief(Tape& tape, Var h_prev, Var z_prev) const {
        if (variant_ != LtVariant::structured)
            throw VariantError("transition_belief: unstructured variant has no transition head");
        return split_belief(trans_head_.forward(tape, concat(h_prev, z_prev)));
    }

    GeneratedPredictor generate_weights(Tape& tape, Var z) const {
        shape_check(z.shape() == Shape{dims_.d_z}, "generate_weights", z.shape(), Shape{dims_.d_z});
        return {hyper_.forward(tape, z), &manifest_};
    }

    std::pair<Var, Var> predict_with(Tape& /*tape*/, const GeneratedPredictor& gp, Var x) const {
        const auto entries = gp.manifest->entries();
        auto part = [&](int i) {
            const auto& e = entries[static_cast<std::size_t>(i)];
            Var s = slice(gp.theta, static_cast<int>(e.offset),
                          static_cast<int>(shape_numel(e.shape)));
            return e.shape.size() == 2 ? reshape(s, e.shape) : s;
        };
        return predictor_forward(part(0), part(1), part(2), part(3), part(4), part(5), x);
    }

    // --- SequentialModel surface ---

    SeqState initial_state(int components) const override {
        SeqState s;
        s.h.assign(static_cast<std::size_t>(dims_.d_h), 0.0);
        if (variant_ == LtVariant::structured)
            s.z.assign(static_cast<std::size_t>(components) * dims_.d_z, 0.0);
        return s;
    }

    StepVars lift_state(Tape& tape, const SeqState& s) const override {
        StepVars sv;
        sv.h = tape.constant(Shape{dims_.d_h}, s.h);
        const int m = static_cast<int>(s.z.size()) / std::max(dims_.d_z, 1);
        for (int k = 0; k < m; ++k)
            sv.z.push_back(tape.constant_span(
                Shape{dims_.d_z},
                std::span<const double>(s.z.data() + static_cast<std::size_t>(k) * dims_.d_z,
                                        static_cast<std::size_t>(dims_.d_z))));
        return sv;
    }

    SeqState lower_state(const StepVars& sv) const override {
        SeqState s;
        s.h = sv.h.to_vector();
        for (const Var& z : sv.z) {
            auto v = z.to_vector();
            s.z.insert(s.z.end(), v.begin(), v.end());
        }
        return s;
    }

    ElboResult elbo_step(Tape& tape, const StepVars& state, std::span<const double> x, double y,
                         int K, double beta, std::uint64_t seed,
                         std::uint64_t noise) const override {
        if (K < 1) throw std::invalid_argument("elbo_step: K must be >= 1");
        ElboResult r;
        Var h_prev = state.h;

        // Predict: belief over z_t from the pre-observation state.
        std::vector<LatentBelief> kl_targets;
        if (variant_ == LtVariant::unstructured) {
            kl_targets.push_back(prior_belief(tape, h_prev));
        } else {
            for (const Var& z_prev : state.z)
                kl_targets.push_back(transition_belief(tape, h_prev, z_prev));
        }

        // Update: absorb D_t and form the posterior.
        Var e = encode_step(tape, x, y);
        Var h = gru_.step(tape, h_prev, e);
        LatentBelief post = posterior_belief(tape, h);

        // Generate: expected log-likelihood through hypernetwork weights.
        Var y_v = tape.constant(Shape{1}, {y});
        Var x_v = tape.constant_span(Shape{dims_.x_dim}, x);
        Var elog = tape.constant_scalar(0.0);
        std::vector<Var> z_samples;
        for (int k = 0; k < K; ++k) {
            Rng rng = derive_rng(seed, RngStream::train_noise, noise, static_cast<std::uint64_t>(k));
            Var z = sample_gaussian(tape, post, rng.normal_vec(dims_.d_z));
            z_samples.push_back(z);
            auto gp = generate_weights(tape, z);
            auto [mean_v, logvar_v] = predict_with(tape, gp, x_v);
            elog = add(elog, neg(gaussian_nll(y_v, mean_v, logvar_v)));
        }
        elog = mul_scalar(elog, 1.0 / static_cast<double>(K));

        Var kl = tape.constant_scalar(0.0);
        for (const auto& target : kl_targets)
            kl = add(kl, gaussian_kl(post.mean, post.logvar, target.mean, target.logvar));
        kl = mul_scalar(kl, 1.0 / static_cast<double>(kl_targets.size()));

        r.elbo = sub(elog, mul_scalar(kl, beta));
        r.nll = -elog.scalar();
        r.kl = kl.scalar();
        r.next.h = h;
        if (variant_ == LtVariant::structured) r.next.z = std::move(z_samples);
        return r;
    }

    MixturePrediction predict(const SeqState& state, std::span<const double> x, int K,
                              std::uint64_t seed, std::uint64_t noise) const override {
        if (K < 1) throw std::invalid_argument("predict: K must be >= 1");
        validate_finite(x, "predict");
        Tape tape(/*grad_enabled=*/false);
        StepVars sv = lift_state(tape, state);
        Var x_v = tape.constant_span(Shape{dims_.x_dim}, x);
        std::vector<double> means, vars;
        means.reserve(static_cast<std::size_t>(K));
        vars.reserve(static_cast<std::size_t>(K));
        if (variant_ == LtVariant::structured &&
            static_cast<int>(sv.z.size()) != K)
            throw std::invalid_argument("predict: structured state carries " +
                                        std::to_string(sv.z.size()) + " latent samples, need K=" +
                                        std::to_string(K));
        for (int k = 0; k < K; ++k) {
            LatentBelief belief = variant_ == LtVariant::unstructured
                                      ? prior_belief(tape, sv.h)
                                      : transition_belief(tape, sv.h, sv.z[static_cast<std::size_t>(k)]);
            Rng rng = derive_rng(seed, RngStream::eval_noise, noise, static_cast<std::uint64_t>(k));
            Var z = sample_gaussian(tape, belief, rng.normal_vec(dims_.d_z));
            auto gp = generate_weights(tape, z);
            auto [mean_v, logvar_v] = predict_with(tape, gp, x_v);
            means.push_back(mean_v.value()[0]);
            vars.push_back(std::exp(logvar_v.value()[0]));
        }
        return make_mixture_prediction(std::move(means), std::move(vars));
    }

    SeqState update_state(const SeqState& state, std::span<const double> x, double y,
                          std::uint64_t seed, std::uint64_t noise) const override {
        Tape tape(/*grad_enabled=*/false);
        StepVars sv = lift_state(tape, state);
        Var e = encode_step(tape, x, y);
        Var h = gru_.step(tape, sv.h, e);
        SeqState next;
        next.h = h.to_vector();
        if (variant_ == LtVariant::structured) {
            LatentBelief post = posterior_belief(tape, h);
            const int m = static_cast<int>(state.z.size()) / dims_.d_z;
            next.z.reserve(state.z.size());
            for (int k = 0; k < m; ++k) {
                Rng rng =
                    derive_rng(seed, RngStream::state_update, noise, static_cast<std::uint64_t>(k));
                auto z = sample_gaussian(tape, post, rng.normal_vec(dims_.d_z)).to_vector();
                next.z.insert(next.z.end(), z.begin(), z.end());
            }
        }
        return next;
    }

    // Direct access used by tests and the budget planner.
    LinearLayer& enc() { return enc_; }
    GruCell& gru() { return gru_; }
    LinearLayer& prior_head() { return prior_head_; }
    LinearLayer& post_head() { return post_head_; }
    LinearLayer& trans_head() { return trans_head_; }
    LinearLayer& hyper() { return hyper_; }

  private:
    LtVariant variant_;
    LtDims dims_;
    PredictorManifest manifest_;
    LinearLayer enc_;
    GruCell gru_;
    LinearLayer prior_head_;
    LinearLayer post_head_;
    LinearLayer trans_head_;
    LinearLayer hyper_;
};

inline ParamCounts lt_param_counts(LtVariant variant, const LtDims& d) {
    const long theta = static_cast<long>(d.pred_hidden) * d.x_dim + d.pred_hidden +
                       2L * (d.pred_hidden + 1);
    long total = linear_param_count(d.embed, d.x_dim + 1) + gru_param_count(d.d_h, d.embed) +
                 linear_param_count(2 * d.d_z, d.d_h) /* posterior */ +
                 linear_param_count(static_cast<int>(theta), d.d_z);
    ParamCounts c;
    if (variant == LtVariant::unstructured) {
        total += linear_param_count(2 * d.d_z, d.d_h);  // prior head
        c.total = total;
        c.inference = total - linear_param_count(2 * d.d_z, d.d_h);
    } else {
        total += linear_param_count(2 * d.d_z, d.d_h + d.d_z);  // transition head
        c.total = total;
        c.inference = total;
    }
    return c;
}

}  // namespace lt
