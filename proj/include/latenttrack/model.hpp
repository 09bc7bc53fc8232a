#pragma once

// Common surfaces: the sequential-model training interface (shared by the
// latent-track variants, VRNN and DSSM), the gradient-free streaming
// predictor interface every model exposes for evaluation, and checkpoint
// plumbing.

#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latenttrack/io.hpp"
#include "latenttrack/nn.hpp"
#include "latenttrack/rng.hpp"
#include "latenttrack/tensor.hpp"

namespace lt {

struct VariantError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ParamCounts {
    long total = 0;
    long inference = 0;
};

struct MixturePrediction {
    double mean = 0.0;
    double var_alea = 0.0;
    double var_epi = 0.0;
    double var_tot = 0.0;
    std::vector<double> comp_mean;
    std::vector<double> comp_var;
};

inline MixturePrediction make_mixture_prediction(std::vector<double> comp_mean,
                                                 std::vector<double> comp_var) {
    MixturePrediction p;
    const auto s = mixture_stats(comp_mean, comp_var);
    p.mean = s.mean;
    p.var_alea = s.var_alea;
    p.var_epi = s.var_epi;
    p.var_tot = s.var_tot;
    p.comp_mean = std::move(comp_mean);
    p.comp_var = std::move(comp_var);
    return p;
}

// Detached filtering state. `h` is the causal summary; `z` carries latent
// samples for models whose prediction path conditions on the previous latent
// (structured latent-track). Fixed size for a given model and component
// count, independent of how much stream has been consumed.
struct SeqState {
    std::vector<double> h;
    std::vector<double> z;

    std::vector<unsigned char> serialize() const {
        std::vector<unsigned char> out(sizeof(std::uint64_t) * 2 +
                                       (h.size() + z.size()) * sizeof(double));
        std::uint64_t nh = h.size(), nz = z.size();
        unsigned char* p = out.data();
        std::memcpy(p, &nh, sizeof nh), p += sizeof nh;
        std::memcpy(p, &nz, sizeof nz), p += sizeof nz;
        std::memcpy(p, h.data(), h.size() * sizeof(double)), p += h.size() * sizeof(double);
        std::memcpy(p, z.data(), z.size() * sizeof(double));
        return out;
    }
};

// Identifies the noise slot of one stream position; epochs get disjoint ids.
inline std::uint64_t noise_id(int epoch, long step) {
    return static_cast<std::uint64_t>(epoch) * 0x10000000000ULL + static_cast<std::uint64_t>(step);
}

class SequentialModel {
  public:
    // On-tape counterpart of SeqState during a training window.
    struct StepVars {
        Var h;
        std::vector<Var> z;
    };

    struct ElboResult {
        Var elbo;
        StepVars next;
        double nll = 0.0;  // Monte Carlo estimate of -E_q[log p(y | x)]
        double kl = 0.0;
    };

    virtual ~SequentialModel() = default;

    virtual std::string kind() const = 0;
    virtual NamedParams named_params() = 0;
    virtual ParamCounts param_counts() const = 0;
    virtual KvFile checkpoint_header() const = 0;
    virtual int input_dim() const = 0;

    // `components` sizes the carried latent-sample set where applicable.
    virtual SeqState initial_state(int components) const = 0;

    virtual StepVars lift_state(Tape& tape, const SeqState& s) const = 0;
    virtual SeqState lower_state(const StepVars& sv) const = 0;

    // One per-step training objective; builds graph nodes on `tape`.
    virtual ElboResult elbo_step(Tape& tape, const StepVars& state, std::span<const double> x,
                                 double y, int K, double beta, std::uint64_t seed,
                                 std::uint64_t noise) const = 0;

    // Gradient-free prior-path prediction from the carried state.
    virtual MixturePrediction predict(const SeqState& state, std::span<const double> x, int K,
                                      std::uint64_t seed, std::uint64_t noise) const = 0;

    // Gradient-free state update after observing (x, y).
    virtual SeqState update_state(const SeqState& state, std::span<const double> x, double y,
                                  std::uint64_t seed, std::uint64_t noise) const = 0;
};

// Streaming-evaluation surface common to sequential and static models.
class OnlinePredictor {
  public:
    virtual ~OnlinePredictor() = default;
    virtual MixturePrediction predict(std::span<const double> x, int K, long t) = 0;
    virtual void observe(std::span<const double> x, double y, long t) = 0;
    virtual std::vector<unsigned char> serialize_state() const = 0;
};

class SequentialOnlineAdapter final : public OnlinePredictor {
  public:
    SequentialOnlineAdapter(const SequentialModel& model, std::uint64_t seed, int components)
        : model_(model), seed_(seed), state_(model.initial_state(components)) {}

    MixturePrediction predict(std::span<const double> x, int K, long t) override {
        return model_.predict(state_, x, K, seed_, noise_id(0, t));
    }

    void observe(std::span<const double> x, double y, long t) override {
        state_ = model_.update_state(state_, x, y, seed_, noise_id(0, t));
    }

    std::vector<unsigned char> serialize_state() const override { return state_.serialize(); }

    const SeqState& state() const { return state_; }
    void set_state(SeqState s) { state_ = std::move(s); }

  private:
    const SequentialModel& model_;
    std::uint64_t seed_;
    SeqState state_;
};

inline void validate_finite(std::span<const double> x, const char* what) {
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

}  // namespace lt
