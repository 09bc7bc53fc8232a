#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "latenttrack/gradcheck.hpp"
#include "latenttrack/latent_track.hpp"
#include "oracles.hpp"

using namespace lt;

namespace {

LtDims tiny_dims() {
    LtDims d;
    d.x_dim = 3;
    d.d_z = 2;
    d.d_h = 4;
    d.embed = 3;
    d.pred_hidden = 3;
    return d;
}

std::vector<double> random_x(Rng& rng, int n) { return rng.normal_vec(n); }

}  // namespace

TEST(Encode, DeterministicAndShaped) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 5);
    std::vector<double> x = {0.3, -0.2, 1.1};
    Tape t;
    Var e1 = m.encode_step(t, x, 0.7);
    Var e2 = m.encode_step(t, x, 0.7);
    EXPECT_EQ(e1.shape(), (Shape{3}));
    EXPECT_EQ(e1.to_vector(), e2.to_vector());
}

TEST(Encode, RejectsNonFiniteInput) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 5);
    std::vector<double> x = {0.3, std::nan(""), 1.1};
    Tape t;
    EXPECT_THROW(m.encode_step(t, x, 0.7), std::invalid_argument);
    std::vector<double> ok = {0.3, 0.0, 1.1};
    EXPECT_THROW(m.encode_step(t, ok, std::numeric_limits<double>::infinity()),
                 std::invalid_argument);
}

TEST(Encode, GradientMatchesFiniteDifferences) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 6);
    std::vector<double> x = {0.5, -1.0, 0.2};
    auto loss_fn = [&](Tape& t) { return sum(m.encode_step(t, x, -0.4)); };
    auto report = gradient_check(m.enc().named_params(), loss_fn);
    EXPECT_LT(report.max_rel_err, 1e-5);
}

TEST(Beliefs, ZeroHeadGivesStandardNormalLike) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 7);
    for (auto& v : m.prior_head().weight.data) v = 0.0;
    for (auto& v : m.prior_head().bias.data) v = 0.0;
    Tape t;
    Var h = t.constant({4}, {0.9, -0.5, 0.3, 0.1});
    auto belief = m.prior_belief(t, h);
    for (double v : belief.mean.value()) EXPECT_DOUBLE_EQ(v, 0.0);
    for (double v : belief.logvar.value()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Beliefs, ShapesAreTwiceLatentDim) {
    LtDims d;  // paper-scale latent
    d.x_dim = 5;
    d.d_z = 8;
    d.d_h = 64;
    d.embed = 4;
    d.pred_hidden = 3;
    LtModel m(LtVariant::unstructured, d, 8);
    Tape t;
    Var h = t.constant(Shape{64}, std::vector<double>(64, 0.1));
    auto belief = m.prior_belief(t, h);
    EXPECT_EQ(belief.mean.shape(), (Shape{8}));
    EXPECT_EQ(belief.logvar.shape(), (Shape{8}));
    auto post = m.posterior_belief(t, h);
    EXPECT_EQ(post.mean.shape(), (Shape{8}));
}

TEST(Beliefs, VariantErrors) {
    LtModel u(LtVariant::unstructured, tiny_dims(), 9);
    LtModel s(LtVariant::structured, tiny_dims(), 9);
    Tape t;
    Var h = t.constant(Shape{4}, std::vector<double>(4, 0.0));
    Var z = t.constant(Shape{2}, std::vector<double>(2, 0.0));
    EXPECT_THROW(u.transition_belief(t, h, z), VariantError);
    EXPECT_THROW(s.prior_belief(t, h), VariantError);
}

TEST(Beliefs, TransitionRespondsToPreviousLatent) {
    LtModel s(LtVariant::structured, tiny_dims(), 10);
    Tape t;
    Var h = t.constant(Shape{4}, std::vector<double>(4, 0.2));
    Var z1 = t.constant({2}, {0.5, -0.5});
    Var z2 = t.constant({2}, {-1.0, 1.0});
    auto b1 = s.transition_belief(t, h, z1);
    auto b2 = s.transition_belief(t, h, z2);
    EXPECT_NE(b1.mean.to_vector(), b2.mean.to_vector());

    for (auto& v : s.trans_head().weight.data) v = 0.0;
    for (auto& v : s.trans_head().bias.data) v = 0.0;
    auto b3 = s.transition_belief(t, h, z1);
    for (double v : b3.mean.value()) EXPECT_DOUBLE_EQ(v, 0.0);
    for (double v : b3.logvar.value()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Hypernet, DeterministicAndSized) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 11);
    Tape t;
    Var z = t.constant({2}, {0.4, -0.9});
    auto gp1 = m.generate_weights(t, z);
    auto gp2 = m.generate_weights(t, z);
    EXPECT_EQ(gp1.theta.to_vector(), gp2.theta.to_vector());
    EXPECT_EQ(static_cast<long>(gp1.theta.value().size()), m.manifest().theta_size());
    // 3 hidden units on 3 inputs: 3*3+3 + 2*(3+1) = 20
    EXPECT_EQ(m.manifest().theta_size(), 20);
}

TEST(Hypernet, GradientFlowsThroughGeneratedWeights) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 12);
    Rng rng(77);
    std::vector<double> x = random_x(rng, 3);
    std::vector<double> z = random_x(rng, 2);
    auto loss_fn = [&](Tape& t) {
        auto gp = m.generate_weights(t, t.constant_span(Shape{2}, z));
        auto [mean_v, logvar_v] = m.predict_with(t, gp, t.constant_span(Shape{3}, x));
        return gaussian_nll(t.constant({1}, {0.8}), mean_v, logvar_v);
    };
    auto report = gradient_check(m.hyper().named_params(), loss_fn);
    EXPECT_LT(report.max_rel_err, 1e-5);
    EXPECT_GT(report.checked, 0);
}

TEST(Predictor, AllZeroThetaGivesZeroHeads) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 13);
    Tape t;
    Var theta = t.constant(Shape{static_cast<int>(m.manifest().theta_size())},
                           std::vector<double>(m.manifest().theta_size(), 0.0));
    GeneratedPredictor gp{theta, &m.manifest()};
    auto [mean_v, logvar_v] = m.predict_with(t, gp, t.constant({3}, {2.0, -3.0, 0.5}));
    EXPECT_DOUBLE_EQ(mean_v.value()[0], 0.0);
    EXPECT_DOUBLE_EQ(logvar_v.value()[0], 0.0);
}

// Reassembly equivalence: generated flat weights, once mapped through the
// manifest, predict bit-identically to directly constructed layers holding
// the same values.
TEST(Predictor, ReassemblyEquivalenceBitIdentical) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 14);
    Rng rng(21);
    for (int draw = 0; draw < 10; ++draw) {
        std::vector<double> z = random_x(rng, 2);
        std::vector<double> x = random_x(rng, 3);

        Tape t;
        auto gp = m.generate_weights(t, t.constant_span(Shape{2}, z));
        auto [gen_mean, gen_logvar] = m.predict_with(t, gp, t.constant_span(Shape{3}, x));

        const auto theta = gp.theta.to_vector();
        const auto entries = m.manifest().entries();
        LinearLayer hidden(3, 3), mean_head(1, 3), logvar_head(1, 3);
        auto fill = [&](Tensor& dst, int entry) {
            const auto& e = entries[static_cast<std::size_t>(entry)];
            for (std::size_t i = 0; i < dst.data.size(); ++i)
                dst.data[i] = theta[static_cast<std::size_t>(e.offset) + i];
        };
        fill(hidden.weight, 0);
        fill(hidden.bias, 1);
        fill(mean_head.weight, 2);
        fill(mean_head.bias, 3);
        fill(logvar_head.weight, 4);
        fill(logvar_head.bias, 5);

        Tape t2;
        auto [dir_mean, dir_logvar] = predictor_forward(
            t2.leaf(hidden.weight), t2.leaf(hidden.bias), t2.leaf(mean_head.weight),
            t2.leaf(mean_head.bias), t2.leaf(logvar_head.weight), t2.leaf(logvar_head.bias),
            t2.constant_span(Shape{3}, x));
        EXPECT_EQ(gen_mean.value()[0], dir_mean.value()[0]);      // bit-identical
        EXPECT_EQ(gen_logvar.value()[0], dir_logvar.value()[0]);
    }
}

TEST(ElboUnstructured, BetaZeroIsPureLikelihood) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 15);
    std::vector<double> x = {0.2, 0.4, -0.1};
    SeqState s = m.initial_state(1);
    s.h = {0.1, -0.2, 0.3, 0.0};
    Tape t;
    auto sv = m.lift_state(t, s);
    auto r0 = m.elbo_step(t, sv, x, 0.9, 1, 0.0, 99, 1);
    EXPECT_DOUBLE_EQ(r0.elbo.scalar(), -r0.nll);
    EXPECT_GT(r0.kl, 0.0);
}

TEST(ElboUnstructured, TiedHeadsOnFixedStateGiveZeroKl) {
    LtDims d = tiny_dims();
    LtModel m(LtVariant::unstructured, d, 16);
    // Zero summarizer path so h_t == h_{t-1} == 0, then tie the heads.
    for (auto* w : {&m.gru().w_z, &m.gru().u_z, &m.gru().w_r, &m.gru().u_r, &m.gru().w_c,
                    &m.gru().u_c})
        for (auto& v : w->data) v = 0.0;
    m.post_head().weight.data = m.prior_head().weight.data;
    m.post_head().bias.data = m.prior_head().bias.data;
    std::vector<double> x = {1.0, 0.0, -1.0};
    SeqState s = m.initial_state(1);  // h = 0
    Tape t;
    auto sv = m.lift_state(t, s);
    auto r = m.elbo_step(t, sv, x, 0.4, 1, 1.0, 5, 2);
    EXPECT_NEAR(r.kl, 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(r.elbo.scalar(), -r.nll);
}

TEST(ElboUnstructured, GradientMatchesFiniteDifferences) {
    for (int draw = 0; draw < 20; ++draw) {
        LtModel m(LtVariant::unstructured, tiny_dims(), 400 + draw);
        Rng rng(800 + draw);
        std::vector<double> x = random_x(rng, 3);
        const double y = rng.normal();
        SeqState s = m.initial_state(1);
        s.h = rng.normal_vec(4);
        auto loss_fn = [&](Tape& t) {
            auto sv = m.lift_state(t, s);
            return m.elbo_step(t, sv, x, y, 2, 0.7, 1234 + draw, 3).elbo;
        };
        auto report = gradient_check(m.named_params(), loss_fn);
        EXPECT_LT(report.max_rel_err, 1e-5) << "draw " << draw << " worst " << report.worst_param;
    }
}

TEST(ElboStructured, GradientMatchesFiniteDifferences) {
    for (int draw = 0; draw < 20; ++draw) {
        LtModel m(LtVariant::structured, tiny_dims(), 500 + draw);
        Rng rng(900 + draw);
        std::vector<double> x = random_x(rng, 3);
        const double y = rng.normal();
        SeqState s = m.initial_state(2);
        s.h = rng.normal_vec(4);
        s.z = rng.normal_vec(4);  // two carried samples of d_z=2
        auto loss_fn = [&](Tape& t) {
            auto sv = m.lift_state(t, s);
            return m.elbo_step(t, sv, x, y, 2, 0.9, 4321 + draw, 4).elbo;
        };
        auto report = gradient_check(m.named_params(), loss_fn);
        EXPECT_LT(report.max_rel_err, 1e-5) << "draw " << draw << " worst " << report.worst_param;
    }
}

// With the latent columns of the transition head zeroed and the remaining
// weights copied into an unstructured twin's prior head, both variants
// compute the same objective.
TEST(ElboStructured, CollapsesToUnstructuredWhenTransitionIgnoresLatent) {
    LtDims d = tiny_dims();
    LtModel s(LtVariant::structured, d, 17);
    LtModel u(LtVariant::unstructured, d, 17);

    // Shared components: same init seed covers enc/gru/post ordering, but the
    // hypernet draw differs because the structured init also draws the
    // transition head. Copy them explicitly.
    u.enc().weight.data = s.enc().weight.data;
    u.enc().bias.data = s.enc().bias.data;
    auto copy_gru = [&](GruCell& dst, GruCell& src) {
        auto dp = dst.named_params();
        auto sp = src.named_params();
        for (std::size_t i = 0; i < dp.size(); ++i) dp[i].second->data = sp[i].second->data;
    };
    copy_gru(u.gru(), s.gru());
    u.post_head().weight.data = s.post_head().weight.data;
    u.post_head().bias.data = s.post_head().bias.data;
    u.hyper().weight.data = s.hyper().weight.data;
    u.hyper().bias.data = s.hyper().bias.data;

    // Transition ignores z_prev; its h-columns become the prior head.
    for (int row = 0; row < 2 * d.d_z; ++row) {
        for (int col = 0; col < d.d_h; ++col)
            u.prior_head().weight.data[static_cast<std::size_t>(row) * d.d_h + col] =
                s.trans_head().weight.data[static_cast<std::size_t>(row) * (d.d_h + d.d_z) + col];
        for (int col = d.d_h; col < d.d_h + d.d_z; ++col)
            s.trans_head().weight.data[static_cast<std::size_t>(row) * (d.d_h + d.d_z) + col] = 0.0;
    }
    u.prior_head().bias.data = s.trans_head().bias.data;

    Rng rng(31);
    std::vector<double> x = random_x(rng, 3);
    SeqState ss = s.initial_state(2);
    ss.h = rng.normal_vec(4);
    ss.z = rng.normal_vec(4);
    SeqState su = u.initial_state(1);
    su.h = ss.h;

    Tape ts, tu;
    auto rs = s.elbo_step(ts, s.lift_state(ts, ss), x, 0.3, 1, 0.8, 7, 9);
    auto ru = u.elbo_step(tu, u.lift_state(tu, su), x, 0.3, 1, 0.8, 7, 9);
    EXPECT_DOUBLE_EQ(rs.elbo.scalar(), ru.elbo.scalar());
    EXPECT_DOUBLE_EQ(rs.kl, ru.kl);
}

// Single carried sample: the structured KL term is exactly one Gaussian KL.
TEST(ElboStructured, SingleSampleKlIsPlainGaussianKl) {
    LtDims d = tiny_dims();
    LtModel s(LtVariant::structured, d, 18);
    Rng rng(33);
    std::vector<double> x = random_x(rng, 3);
    SeqState ss = s.initial_state(1);
    ss.h = rng.normal_vec(4);
    ss.z = rng.normal_vec(2);
    Tape t;
    auto sv = s.lift_state(t, ss);
    auto r = s.elbo_step(t, sv, x, -0.2, 1, 1.0, 3, 11);

    Tape t2;
    auto sv2 = s.lift_state(t2, ss);
    Var e = s.encode_step(t2, x, -0.2);
    Var h = s.gru().step(t2, sv2.h, e);
    auto post = s.posterior_belief(t2, h);
    auto trans = s.transition_belief(t2, sv2.h, sv2.z[0]);
    const double kl = gaussian_kl(post.mean, post.logvar, trans.mean, trans.logvar).scalar();
    EXPECT_DOUBLE_EQ(r.kl, kl);
}

// Appendix-style looseness on a 1-d latent: the expected KL to the
// transition dominates the KL to the exact mixture marginal of the
// transition over the carried draws.
TEST(ElboStructured, ExpectedTransitionKlDominatesMarginalKl) {
    Rng rng(55);
    int strict_gap = 0;
    for (int inst = 0; inst < 25; ++inst) {
        const double qm = rng.normal();
        const double qlv = rng.uniform(-1.5, 1.0);
        const int m_samples = 2 + static_cast<int>(rng.next_u64() % 4);
        std::vector<double> tm(m_samples), tv(m_samples);
        double expected_kl = 0.0;
        for (int m = 0; m < m_samples; ++m) {
            tm[m] = rng.normal() * 1.5;
            tv[m] = std::exp(rng.uniform(-1.5, 1.0));
            Tape t;
            expected_kl += gaussian_kl(t.constant({1}, {qm}), t.constant({1}, {qlv}),
                                       t.constant({1}, {tm[m]}), t.constant({1}, {std::log(tv[m])}))
                               .scalar();
        }
        expected_kl /= m_samples;
        const double marginal_kl =
            oracle::kl_q_vs_mixture_quadrature(qm, std::exp(qlv), tm, tv);
        EXPECT_GE(expected_kl, marginal_kl - 1e-6) << "instance " << inst;
        if (expected_kl > marginal_kl + 1e-4) ++strict_gap;
    }
    EXPECT_GT(strict_gap, 0);  // looseness is generically strict
}

// One-step evidence lower bound on a 1-d latent model: the deterministic
// ELBO (quadrature expected log-likelihood minus closed-form KL) must sit
// below the importance-sampling estimate of the marginal likelihood.
TEST(ElboUnstructured, BoundedByImportanceSampledEvidence) {
    LtDims d;
    d.x_dim = 1;
    d.d_z = 1;
    d.d_h = 3;
    d.embed = 2;
    d.pred_hidden = 2;
    for (int inst = 0; inst < 5; ++inst) {
        LtModel m(LtVariant::unstructured, d, 600 + inst);
        Rng rng(700 + inst);
        std::vector<double> x = {rng.normal()};
        const double y = rng.normal();
        SeqState s = m.initial_state(1);
        s.h = rng.normal_vec(3);

        Tape t;
        auto sv = m.lift_state(t, s);
        auto prior = m.prior_belief(t, sv.h);
        Var e = m.encode_step(t, x, y);
        Var h = m.gru().step(t, sv.h, e);
        auto post = m.posterior_belief(t, h);
        const double pm = prior.mean.scalar(), plv = prior.logvar.scalar();
        const double qm = post.mean.scalar(), qlv = post.logvar.scalar();
        const double kl = gaussian_kl(post.mean, post.logvar, prior.mean, prior.logvar).scalar();

        auto loglik_at = [&](double z) {
            Tape tz(/*grad_enabled=*/false);
            auto gp = m.generate_weights(tz, tz.constant({1}, {z}));
            auto [mv, lv] = m.predict_with(tz, gp, tz.constant_span(Shape{1}, x));
            return -gaussian_nll_value(y, mv.value()[0], lv.value()[0]);
        };

        // E_q[log p] by quadrature over the 1-d posterior.
        const double qsd = std::exp(0.5 * qlv);
        const double elog = oracle::simpson(
            [&](double z) { return oracle::normal_pdf(z, qm, std::exp(qlv)) * loglik_at(z); },
            qm - 10 * qsd, qm + 10 * qsd, 4000);
        const double elbo = elog - kl;

        // Importance sampling of the evidence with the prior as proposal.
        const int n = 1000000;
        Rng is_rng(4000 + inst);
        const double psd = std::exp(0.5 * plv);
        double acc = 0.0, acc2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double z = pm + psd * is_rng.normal();
            const double w = std::exp(loglik_at(z));
            acc += w;
            acc2 += w * w;
        }
        const double p_hat = acc / n;
        const double var_hat = std::max(acc2 / n - p_hat * p_hat, 0.0);
        const double se_log = std::sqrt(var_hat / n) / p_hat;
        EXPECT_LE(elbo, std::log(p_hat) + 4.0 * se_log) << "instance " << inst;
    }
}

TEST(PredictiveMixture, LawOfTotalVarianceOnModelOutput) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 19);
    SeqState s = m.initial_state(8);
    Rng rng(61);
    s.h = rng.normal_vec(4);
    std::vector<double> x = random_x(rng, 3);
    auto p = m.predict(s, x, 8, 11, 0);
    EXPECT_DOUBLE_EQ(p.var_tot, p.var_alea + p.var_epi);
    EXPECT_EQ(p.comp_mean.size(), 8u);
    ASSERT_FALSE(p.comp_var.empty());
    for (double v : p.comp_var) EXPECT_GT(v, 0.0);
}

TEST(PredictiveMixture, StructuredRequiresMatchingComponents) {
    LtModel m(LtVariant::structured, tiny_dims(), 20);
    SeqState s = m.initial_state(4);
    std::vector<double> x = {0.1, 0.2, 0.3};
    EXPECT_THROW(m.predict(s, x, 8, 1, 0), std::invalid_argument);
    EXPECT_NO_THROW(m.predict(s, x, 4, 1, 0));
}

TEST(Causality, PriorPathIgnoresCurrentObservation) {
    LtModel m(LtVariant::unstructured, tiny_dims(), 22);
    SeqState s = m.initial_state(1);
    Rng rng(71);
    s.h = rng.normal_vec(4);
    std::vector<double> x = random_x(rng, 3);
    auto p1 = m.predict(s, x, 5, 9, 3);
    // Absorbing data at step t must not affect the prediction made at step t.
    (void)m.update_state(s, x, 123.0, 9, 3);
    auto p2 = m.predict(s, x, 5, 9, 3);
    EXPECT_EQ(p1.comp_mean, p2.comp_mean);
    EXPECT_EQ(p1.comp_var, p2.comp_var);
}

TEST(Checkpoint, RoundTripBitExact) {
    const auto dir = std::filesystem::temp_directory_path() / "lt_ckpt_test";
    std::filesystem::create_directories(dir);
    LtModel m(LtVariant::structured, tiny_dims(), 23);
    auto params = m.named_params();
    save_checkpoint(dir / "model", m.checkpoint_header(), params);

    LtModel loaded(LtVariant::structured, tiny_dims(), 999);  // different init
    auto loaded_params = loaded.named_params();
    KvFile manifest = load_checkpoint(dir / "model", loaded_params);
    EXPECT_EQ(manifest.require("kind"), "lt_structured");
    for (std::size_t i = 0; i < params.size(); ++i)
        EXPECT_EQ(params[i].second->data, loaded_params[i].second->data) << params[i].first;

    // Mismatched architecture is rejected.
    LtDims other = tiny_dims();
    other.pred_hidden = 4;
    LtModel wrong(LtVariant::structured, other, 1);
    auto wrong_params = wrong.named_params();
    EXPECT_THROW(load_checkpoint(dir / "model", wrong_params), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST(ParamCounts, MatchPlannerAndBudgetAnchors) {
    // Jena-scale structured configuration: 14 variables x history 8 plus 4
    // time encodings, embed 9, predictor hidden 3.
    LtDims d;
    d.x_dim = 116;
    d.d_z = 8;
    d.d_h = 64;
    d.embed = 9;
    d.pred_hidden = 3;
    EXPECT_EQ(lt_param_counts(LtVariant::structured, d).total, 20709);
    EXPECT_EQ(lt_param_counts(LtVariant::structured, d).inference, 20709);

    LtModel m(LtVariant::structured, d, 1);
    EXPECT_EQ(m.param_counts().total, 20709);

    LtModel u(LtVariant::unstructured, d, 1);
    EXPECT_EQ(u.param_counts().total, lt_param_counts(LtVariant::unstructured, d).total);
    EXPECT_EQ(u.param_counts().total - u.param_counts().inference, 1040);  // posterior head
}
