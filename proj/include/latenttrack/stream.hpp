#pragma once

// Stream primitives shared by data construction, training, and evaluation.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "latenttrack/io.hpp"

namespace lt {

struct StreamStep {
    long t = 0;
    std::vector<double> x;
    double y = 0.0;
};

using Stream = std::vector<StreamStep>;

inline void check_stream_order(const Stream& s) {
    for (std::size_t i = 1; i < s.size(); ++i)
        if (s[i].t <= s[i - 1].t)
            throw std::invalid_argument("stream out of order at position " + std::to_string(i));
}

inline std::uint64_t stream_hash(const Stream& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& step : s) {
        h = fnv1a64(&step.t, sizeof step.t, h);
        h = fnv1a64(step.x.data(), step.x.size() * sizeof(double), h);
        h = fnv1a64(&step.y, sizeof step.y, h);
    }
    return h;
}

inline int stream_x_dim(const Stream& s) {
    return s.empty() ? 0 : static_cast<int>(s.front().x.size());
}

}  // namespace lt
