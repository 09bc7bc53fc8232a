#pragma once

// File formats shared across the project: flat key-value manifests, columnar
// text tables, and the checkpoint blob. All writers are deterministic so
// re-emission of the same content is byte-identical.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latenttrack/tensor.hpp"

namespace lt {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return buf;
}

// Ordered `key = value` text with '#' comments. Order is preserved on write;
// lookups see the last occurrence of a key.
class KvFile {
  public:
    void set(const std::string& key, const std::string& value) {
        entries_.emplace_back(key, value);
    }
    void set(const std::string& key, double v) { set(key, format_double(v)); }
    void set(const std::string& key, long v) { set(key, std::to_string(v)); }
    void set(const std::string& key, int v) { set(key, std::to_string(v)); }

    std::optional<std::string> get(const std::string& key) const {
        std::optional<std::string> out;
        for (const auto& [k, v] : entries_)
            if (k == key) out = v;
        return out;
    }

    std::string require(const std::string& key) const {
        auto v = get(key);
        if (!v) throw std::runtime_error("missing key '" + key + "'");
        return *v;
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string serialize() const {
        std::ostringstream out;
        for (const auto& [k, v] : entries_) out << k << " = " << v << "\n";
        return out.str();
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + path.string());
        f << serialize();
    }

    static KvFile parse(std::istream& in) {
        KvFile kv;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash_pos = line.find('#');
            if (hash_pos != std::string::npos) line.resize(hash_pos);
            const auto strip = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                const auto e = s.find_last_not_of(" \t\r");
                return s.substr(b, e - b + 1);
            };
            if (strip(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("line " + std::to_string(line_no) +
                                         ": expected 'key = value', got '" + line + "'");
            kv.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
        }
        return kv;
    }

    static KvFile load(const std::filesystem::path& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot read " + path.string());
        return parse(f);
    }

  private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Columnar text table: '#' comment lines (schema first), then a header row of
// column names, then one space-separated row per record.
struct ColumnarTable {
    std::string schema;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void save(const std::filesystem::path& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + path.string());
        f << "# schema=" << schema << "\n";
        for (std::size_t i = 0; i < columns.size(); ++i) f << (i ? " " : "") << columns[i];
        f << "\n";
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) f << (i ? " " : "") << format_double(row[i]);
            f << "\n";
        }
    }

    static ColumnarTable load(const std::filesystem::path& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot read " + path.string());
        ColumnarTable t;
        std::string line;
        bool header_seen = false;
        while (std::getline(f, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            if (line[0] == '#') {
                const std::string tag = "# schema=";
                if (line.rfind(tag, 0) == 0) t.schema = line.substr(tag.size());
                continue;
            }
            std::istringstream ss(line);
            if (!header_seen) {
                std::string name;
                while (ss >> name) t.columns.push_back(name);
                header_seen = true;
                continue;
            }
            std::vector<double> row;
            double v;
            while (ss >> v) row.push_back(v);
            if (row.size() != t.columns.size())
                throw std::runtime_error(path.string() + ": row has " + std::to_string(row.size()) +
                                         " fields, expected " + std::to_string(t.columns.size()));
            t.rows.push_back(std::move(row));
        }
        return t;
    }

    int column_index(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return static_cast<int>(i);
        throw std::runtime_error("no column '" + name + "'");
    }

    std::vector<double> column(const std::string& name) const {
        const int idx = column_index(name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r[static_cast<std::size_t>(idx)]);
        return out;
    }
};

// Checkpoint: `<prefix>.txt` manifest (header keys plus one `param` line per
// tensor giving name, shape and flat offset) and `<prefix>.bin` holding the
// concatenated little-endian doubles in manifest order. Round-trips bit-exact.
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& prefix, const KvFile& header,
                            const std::vector<std::pair<std::string, Tensor*>>& params) {
    KvFile manifest;
    manifest.set("checkpoint_version", kCheckpointVersion);
    for (const auto& [k, v] : header.entries()) manifest.set(k, v);
    long offset = 0;
    for (const auto& [name, t] : params) {
        std::ostringstream line;
        line << name << " ";
        for (std::size_t i = 0; i < t->shape.size(); ++i) line << (i ? "x" : "") << t->shape[i];
        line << " " << offset;
        manifest.set("param", line.str());
        offset += static_cast<long>(t->numel());
    }
    manifest.set("blob_doubles", offset);
    manifest.save(prefix.string() + ".txt");

    std::ofstream blob(prefix.string() + ".bin", std::ios::binary);
    if (!blob) throw std::runtime_error("cannot write " + prefix.string() + ".bin");
    for (const auto& [name, t] : params)
        blob.write(reinterpret_cast<const char*>(t->data.data()),
                   static_cast<std::streamsize>(t->data.size() * sizeof(double)));
}

// Loads blob values into the given tensors, which must match the manifest's
// names and shapes exactly. Returns the manifest for header inspection.
inline KvFile load_checkpoint(const std::filesystem::path& prefix,
                              const std::vector<std::pair<std::string, Tensor*>>& params) {
    KvFile manifest = KvFile::load(prefix.string() + ".txt");
    std::vector<std::string> param_lines;
    for (const auto& [k, v] : manifest.entries())
        if (k == "param") param_lines.push_back(v);
    if (param_lines.size() != params.size())
        throw std::runtime_error("checkpoint has " + std::to_string(param_lines.size()) +
                                 " params, model has " + std::to_string(params.size()));

    std::ifstream blob(prefix.string() + ".bin", std::ios::binary);
    if (!blob) throw std::runtime_error("cannot read " + prefix.string() + ".bin");
    long offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::istringstream line(param_lines[i]);
        std::string name, shape_txt;
        long file_offset = 0;
        line >> name >> shape_txt >> file_offset;
        Tensor& t = *params[i].second;
        std::string want_shape;
        for (std::size_t d = 0; d < t.shape.size(); ++d)
            want_shape += (d ? "x" : "") + std::to_string(t.shape[d]);
        if (name != params[i].first || shape_txt != want_shape || file_offset != offset)
            throw std::runtime_error("checkpoint param mismatch at '" + params[i].first +
                                     "': manifest says '" + param_lines[i] + "'");
        blob.read(reinterpret_cast<char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!blob) throw std::runtime_error("checkpoint blob truncated at '" + name + "'");
        offset += static_cast<long>(t.numel());
    }
    return manifest;
}

}  // namespace lt
