#pragma once

// Independent numerical oracles used only by tests: quadrature, brute-force
// statistics, density evaluation. Deliberately naive implementations that do
// not share code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

inline double normal_pdf(double x, double mean, double var) {
    const double r = x - mean;
    return std::exp(-0.5 * r * r / var) / std::sqrt(2.0 * M_PI * var);
}

// Composite Simpson rule on [a, b] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
    if (n % 2 != 0) ++n;
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + h * i) * (i % 2 == 0 ? 2.0 : 4.0);
    return acc * h / 3.0;
}

// KL(q || p) between 1-d Gaussians by quadrature over a wide support.
inline double kl_1d_quadrature(double qm, double qv, double pm, double pv) {
    const double lo = std::min(qm, pm) - 12.0 * std::sqrt(std::max(qv, pv));
    const double hi = std::max(qm, pm) + 12.0 * std::sqrt(std::max(qv, pv));
    return simpson(
        [&](double z) {
            const double q = normal_pdf(z, qm, qv);
            if (q < 1e-300) return 0.0;
            return q * (std::log(q) - std::log(std::max(normal_pdf(z, pm, pv), 1e-300)));
        },
        lo, hi);
}

// KL(q || mixture of Gaussians) by quadrature.
inline double kl_q_vs_mixture_quadrature(double qm, double qv, const std::vector<double>& means,
                                         const std::vector<double>& vars) {
    double lo = qm - 12.0 * std::sqrt(qv);
    double hi = qm + 12.0 * std::sqrt(qv);
    for (std::size_t i = 0; i < means.size(); ++i) {
        lo = std::min(lo, means[i] - 12.0 * std::sqrt(vars[i]));
        hi = std::max(hi, means[i] + 12.0 * std::sqrt(vars[i]));
    }
    return simpson(
        [&](double z) {
            const double q = normal_pdf(z, qm, qv);
            if (q < 1e-300) return 0.0;
            double mix = 0.0;
            for (std::size_t i = 0; i < means.size(); ++i)
                mix += normal_pdf(z, means[i], vars[i]);
            mix /= static_cast<double>(means.size());
            return q * (std::log(q) - std::log(std::max(mix, 1e-300)));
        },
        lo, hi, 40000);
}

// --- brute-force statistics used against metrics-eval ---

inline double bf_mean(std::vector<double> v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

inline double bf_median_lower(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[(v.size() - 1) / 2];
}

// Drop the ceil(0.01 n) largest values, then summarize.
inline std::vector<double> bf_trim_top1pct(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t drop =
        static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(v.size())));
    v.resize(v.size() > drop ? v.size() - drop : 0);
    return v;
}

}  // namespace oracle
