#pragma once

// Central finite-difference verification of reverse-mode gradients. Used by
// the `gradcheck` CLI subcommand and the test suites.

#include <functional>
#include <string>
#include <vector>

#include "latenttrack/nn.hpp"
#include "latenttrack/tensor.hpp"

namespace lt {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double ad_value = 0.0;
    double fd_value = 0.0;
    long checked = 0;
};

// rel_err = |ad - fd| / max(|ad|, |fd|, floor). The floor turns the test into
// an absolute one for near-zero entries, above the finite-difference noise
// floor for the O(1) losses checked here.
inline double grad_rel_err(double ad, double fd, double floor = 1e-3) {
    const double denom = std::max({std::abs(ad), std::abs(fd), floor});
    return std::abs(ad - fd) / denom;
}

// `loss_fn` must build a fresh graph on the given tape from the tensors'
// current values and return the scalar loss node.
inline GradCheckReport gradient_check(NamedParams params,
                                      const std::function<Var(Tape&)>& loss_fn,
                                      double step = 1e-5) {
    for (auto& [name, t] : params) t->zero_grad();
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);

    std::vector<std::vector<double>> ad_grads;
    ad_grads.reserve(params.size());
    for (auto& [name, t] : params) ad_grads.push_back(t->grad);

    const auto eval_loss = [&]() {
        Tape fresh(/*grad_enabled=*/false);
        return loss_fn(fresh).scalar();
    };

    GradCheckReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p].second;
        if (!t.requires_grad) continue;
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const double saved = t.data[i];
            t.data[i] = saved + step;
            const double up = eval_loss();
            t.data[i] = saved - step;
            const double down = eval_loss();
            t.data[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double ad = ad_grads[p][i];
            const double err = grad_rel_err(ad, fd);
            ++report.checked;
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_param = params[p].first;
                report.worst_index = i;
                report.ad_value = ad;
                report.fd_value = fd;
            }
        }
    }
    return report;
}

}  // namespace lt
