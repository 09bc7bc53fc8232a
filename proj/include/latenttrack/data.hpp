#pragma once

// Stream construction: delimited-table ingestion (Jena-style climate files
// with a leading timestamp column), downsampling, rolling-history feature
// assembly with train-split-only normalization, and synthetic nonstationary
// generators for desk-scale experiments.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "latenttrack/io.hpp"
#include "latenttrack/rng.hpp"
#include "latenttrack/stream.hpp"

namespace lt {

struct RowError {
    long line = 0;
    std::string message;
};

struct RawTable {
    std::vector<std::string> names;            // data columns, file order
    std::vector<std::vector<double>> columns;  // per data column
    bool has_time = false;
    std::vector<double> time_hours;  // hours since epoch, when a timestamp column exists
    std::vector<RowError> rejected;

    std::size_t row_count() const { return columns.empty() ? 0 : columns[0].size(); }

    int column_index(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return static_cast<int>(i);
        return -1;
    }
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

// Days since 1970-01-01 for a civil date (proleptic Gregorian).
inline long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

// "dd.mm.yyyy HH:MM:SS" -> hours since epoch.
inline bool parse_timestamp(const std::string& s, double& hours_out) {
    int d, mo, y, h, mi, sec;
    if (std::sscanf(s.c_str(), "%d.%d.%d %d:%d:%d", &d, &mo, &y, &h, &mi, &sec) != 6) return false;
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23) return false;
    hours_out = static_cast<double>(days_from_civil(y, mo, d)) * 24.0 + h + mi / 60.0 + sec / 3600.0;
    return true;
}

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
        } else if (c == delim && !quoted) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t\r");
        const auto e = f.find_last_not_of(" \t\r");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

}  // namespace detail

// Parses a delimited file with a header row. A first column whose values
// look like "dd.mm.yyyy HH:MM:SS" becomes the timestamp; all other cells
// must be numeric. Malformed rows are rejected and reported by line number.
inline RawTable load_table(const std::filesystem::path& path, char delim = ',') {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    RawTable t;
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error(path.string() + ": empty file, no header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = detail::split_fields(line, delim);
    if (header.empty()) throw std::runtime_error(path.string() + ": header has no columns");

    long line_no = 1;
    std::size_t time_col = std::string::npos;
    bool first_data_row = true;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_fields(line, delim);
        if (fields.size() != header.size()) {
            t.rejected.push_back({line_no, "expected " + std::to_string(header.size()) +
                                               " fields, got " + std::to_string(fields.size())});
            continue;
        }
        if (first_data_row) {
            double hours;
            if (detail::parse_timestamp(fields[0], hours)) {
                t.has_time = true;
                time_col = 0;
            }
            t.names.assign(header.begin() + (t.has_time ? 1 : 0), header.end());
            t.columns.assign(t.names.size(), {});
            first_data_row = false;
        }
        double hours = 0.0;
        std::vector<double> vals(t.names.size());
        bool ok = true;
        std::string err;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i == time_col) {
                if (!detail::parse_timestamp(fields[i], hours)) {
                    ok = false;
                    err = "bad timestamp '" + fields[i] + "'";
                    break;
                }
                continue;
            }
            const std::size_t j = t.has_time ? i - 1 : i;
            if (!detail::parse_double(fields[i], vals[j])) {
                ok = false;
                err = "non-numeric cell '" + fields[i] + "' in column '" + t.names[j] + "'";
                break;
            }
        }
        if (!ok) {
            t.rejected.push_back({line_no, err});
            continue;
        }
        if (t.has_time) t.time_hours.push_back(hours);
        for (std::size_t j = 0; j < vals.size(); ++j) t.columns[j].push_back(vals[j]);
    }
    if (first_data_row) throw std::runtime_error(path.string() + ": no data rows");
    return t;
}

// Keeps every factor-th row starting at index 0.
inline RawTable downsample(const RawTable& t, int factor) {
    if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
    if (factor == 1) return t;
    RawTable out;
    out.names = t.names;
    out.has_time = t.has_time;
    out.rejected = t.rejected;
    out.columns.assign(t.names.size(), {});
    for (std::size_t r = 0; r < t.row_count(); r += static_cast<std::size_t>(factor)) {
        if (t.has_time) out.time_hours.push_back(t.time_hours[r]);
        for (std::size_t j = 0; j < t.columns.size(); ++j)
            out.columns[j].push_back(t.columns[j][r]);
    }
    return out;
}

struct BuildOptions {
    int history = 8;
    int horizon = 6;
    std::string target = "T (degC)";
    bool normalize = true;
    double split_fraction = 0.7;
    double step_hours = 1.0;  // used only when the table has no timestamps
};

struct BuildMeta {
    long split_boundary = 0;  // first evaluation step index
    int x_dim = 0;
    double effective_step_hours = 0.0;
    std::vector<double> feature_mean;  // per data column, train split only
    std::vector<double> feature_std;
};

// x_t stacks the normalized last `history` rows of every data column
// (oldest first) followed by sin/cos encodings of time-of-day and
// day-of-week at the anchor row; y_t is the raw target `horizon` rows ahead.
inline std::pair<Stream, BuildMeta> build_stream(const RawTable& table, const BuildOptions& opt) {
    const long rows = static_cast<long>(table.row_count());
    const long h = opt.history;
    if (h < 1) throw std::invalid_argument("build_stream: history must be >= 1");
    if (rows <= h + opt.horizon)
        throw std::invalid_argument("build_stream: table has " + std::to_string(rows) +
                                    " rows, need more than " + std::to_string(h + opt.horizon));
    const int target_idx = table.column_index(opt.target);
    if (target_idx < 0) throw std::runtime_error("build_stream: missing column '" + opt.target + "'");

    const long n_steps = rows - opt.horizon - (h - 1);
    const long n_train = std::llround(opt.split_fraction * static_cast<double>(n_steps));

    BuildMeta meta;
    meta.split_boundary = n_train;
    const std::size_t n_cols = table.columns.size();
    meta.feature_mean.assign(n_cols, 0.0);
    meta.feature_std.assign(n_cols, 1.0);
    if (opt.normalize) {
        // Statistics over the rows reachable from training steps only.
        const long last_train_row = (h - 1) + (n_train - 1);
        const long n = std::max(last_train_row + 1, 1L);
        for (std::size_t c = 0; c < n_cols; ++c) {
            double acc = 0.0;
            for (long r = 0; r < n; ++r) acc += table.columns[c][static_cast<std::size_t>(r)];
            const double mean = acc / static_cast<double>(n);
            double sq = 0.0;
            for (long r = 0; r < n; ++r) {
                const double d = table.columns[c][static_cast<std::size_t>(r)] - mean;
                sq += d * d;
            }
            meta.feature_mean[c] = mean;
            meta.feature_std[c] = std::max(std::sqrt(sq / static_cast<double>(n)), 1e-9);
        }
    }

    double step_hours = opt.step_hours;
    if (table.has_time && rows >= 2) {
        std::vector<double> diffs;
        for (long r = 1; r < std::min(rows, 64L); ++r)
            diffs.push_back(table.time_hours[static_cast<std::size_t>(r)] -
                            table.time_hours[static_cast<std::size_t>(r - 1)]);
        std::sort(diffs.begin(), diffs.end());
        step_hours = diffs[diffs.size() / 2];
    }
    meta.effective_step_hours = step_hours;

    const double two_pi = 6.283185307179586476925286766559;
    Stream stream;
    stream.reserve(static_cast<std::size_t>(n_steps));
    for (long s = 0; s < n_steps; ++s) {
        const long anchor = s + h - 1;
        StreamStep step;
        step.t = s;
        step.x.reserve(n_cols * static_cast<std::size_t>(h) + 4);
        for (long r = anchor - h + 1; r <= anchor; ++r)
            for (std::size_t c = 0; c < n_cols; ++c)
                step.x.push_back((table.columns[c][static_cast<std::size_t>(r)] -
                                  meta.feature_mean[c]) /
                                 meta.feature_std[c]);
        const double hours = table.has_time ? table.time_hours[static_cast<std::size_t>(anchor)]
                                            : static_cast<double>(anchor) * step_hours;
        const double tod = std::fmod(hours, 24.0);
        const double dow = std::fmod(hours / 24.0, 7.0);
        step.x.push_back(std::sin(two_pi * tod / 24.0));
        step.x.push_back(std::cos(two_pi * tod / 24.0));
        step.x.push_back(std::sin(two_pi * dow / 7.0));
        step.x.push_back(std::cos(two_pi * dow / 7.0));
        step.y = table.columns[static_cast<std::size_t>(target_idx)]
                              [static_cast<std::size_t>(anchor + opt.horizon)];
        stream.push_back(std::move(step));
    }
    meta.x_dim = stream_x_dim(stream);
    return {std::move(stream), std::move(meta)};
}

// --- synthetic nonstationary streams ---

enum class SynthKind { regime_switch, seasonal_drift, anomaly_spike };

inline std::string synth_kind_name(SynthKind k) {
    switch (k) {
        case SynthKind::regime_switch: return "regime_switch";
        case SynthKind::seasonal_drift: return "seasonal_drift";
        case SynthKind::anomaly_spike: return "anomaly_spike";
    }
    return "?";
}

inline SynthKind parse_synth_kind(const std::string& s) {
    if (s == "regime_switch") return SynthKind::regime_switch;
    if (s == "seasonal_drift") return SynthKind::seasonal_drift;
    if (s == "anomaly_spike") return SynthKind::anomaly_spike;
    throw std::invalid_argument("unknown synthetic stream kind '" + s + "'");
}

struct SynthOptions {
    SynthKind kind = SynthKind::regime_switch;
    long length = 5000;
    std::uint64_t seed = 0;
    double noise = 0.3;   // innovation scale
    int switches = 5;     // regime_switch only
};

struct SynthMeta {
    std::string kind;
    std::uint64_t seed = 0;
    long anomaly_index = -1;
    std::vector<long> switch_indices;
};

inline std::pair<Stream, SynthMeta> synth_stream(const SynthOptions& opt) {
    if (opt.length < 1) throw std::invalid_argument("synth_stream: length must be >= 1");
    Stream stream;
    stream.reserve(static_cast<std::size_t>(opt.length));
    SynthMeta meta;
    meta.kind = synth_kind_name(opt.kind);
    meta.seed = opt.seed;

    switch (opt.kind) {
        case SynthKind::regime_switch: {
            const int segments = opt.switches + 1;
            const long seg_len = std::max(opt.length / segments, 1L);
            Rng coeff_rng = derive_rng(opt.seed, RngStream::synth, 0xc0ffee);
            std::vector<double> a(static_cast<std::size_t>(segments)), b(a.size());
            for (int r = 0; r < segments; ++r) {
                const double mag = coeff_rng.uniform(0.8, 2.5);
                a[static_cast<std::size_t>(r)] = (r % 2 == 0) ? mag : -mag;
                b[static_cast<std::size_t>(r)] = coeff_rng.uniform(-1.0, 1.0);
            }
            for (long t = 0; t < opt.length; ++t) {
                const int r = std::min<long>(t / seg_len, segments - 1);
                if (t > 0 && t % seg_len == 0 && r < segments)
                    meta.switch_indices.push_back(t);
                Rng rng = derive_rng(opt.seed, RngStream::synth, static_cast<std::uint64_t>(t));
                const double x = rng.uniform(-2.0, 2.0);
                const double y = a[static_cast<std::size_t>(r)] * x +
                                 b[static_cast<std::size_t>(r)] + opt.noise * rng.normal();
                stream.push_back({t, {x}, y});
            }
            break;
        }
        case SynthKind::seasonal_drift: {
            const double period = 200.0;
            const double two_pi = 6.283185307179586476925286766559;
            for (long t = 0; t < opt.length; ++t) {
                Rng rng = derive_rng(opt.seed, RngStream::synth, static_cast<std::uint64_t>(t));
                const double theta = two_pi * static_cast<double>(t) / period;
                const double phase = two_pi * 2.0 * static_cast<double>(t) /
                                     static_cast<double>(opt.length);
                const double y = 2.0 * std::sin(theta + phase) + opt.noise * rng.normal();
                stream.push_back({t, {std::sin(theta), std::cos(theta)}, y});
            }
            break;
        }
        case SynthKind::anomaly_spike: {
            // AR(1) driven by its own lag as the covariate; one injected
            // extreme innovation propagates briefly then decays.
            const double ar = 0.3, c = 0.2;
            meta.anomaly_index = static_cast<long>(0.85 * static_cast<double>(opt.length));
            double prev = c / (1.0 - ar);
            for (long t = 0; t < opt.length; ++t) {
                Rng rng = derive_rng(opt.seed, RngStream::synth, static_cast<std::uint64_t>(t));
                double inno = opt.noise * rng.normal();
                if (t == meta.anomaly_index) inno += 30.0 * opt.noise;
                const double y = ar * prev + c + inno;
                stream.push_back({t, {prev}, y});
                prev = y;
            }
            break;
        }
    }
    return {std::move(stream), std::move(meta)};
}

// Chronological split; returns the first evaluation index.
inline long split_index(const Stream& s, double fraction) {
    if (fraction <= 0.0 || fraction >= 1.0)
        throw std::invalid_argument("split fraction must be in (0, 1)");
    return std::llround(fraction * static_cast<double>(s.size()));
}

// --- stream cache persistence (same columnar format family as metrics) ---

inline constexpr const char* kStreamCacheSchema = "stream_cache.v1";

inline void save_stream(const std::filesystem::path& path, const Stream& s) {
    ColumnarTable t;
    t.schema = kStreamCacheSchema;
    t.columns = {"t", "y"};
    const int d = stream_x_dim(s);
    for (int i = 0; i < d; ++i) t.columns.push_back("x" + std::to_string(i));
    for (const auto& step : s) {
        std::vector<double> row = {static_cast<double>(step.t), step.y};
        row.insert(row.end(), step.x.begin(), step.x.end());
        t.rows.push_back(std::move(row));
    }
    t.save(path);
}

inline Stream load_stream(const std::filesystem::path& path) {
    ColumnarTable t = ColumnarTable::load(path);
    if (t.schema != kStreamCacheSchema)
        throw std::runtime_error(path.string() + ": unexpected schema '" + t.schema + "'");
    Stream s;
    for (const auto& row : t.rows) {
        StreamStep step;
        step.t = static_cast<long>(row[0]);
        step.y = row[1];
        step.x.assign(row.begin() + 2, row.end());
        s.push_back(std::move(step));
    }
    return s;
}

}  // namespace lt
