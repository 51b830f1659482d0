#ifndef MCADOT_COMMON_HPP
#define MCADOT_COMMON_HPP

#include <cstdint>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mcadot {

/// Raised for malformed inputs: unreadable files, bad headers, invalid
/// records, inconsistent shapes. The CLI maps it to exit code 2.
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw data_error(msg);
}

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// mt19937_64 is fully specified by the standard; the distribution helpers
// below are hand-rolled so that draws are bit-identical on every platform
// (std::uniform_*_distribution is implementation-defined).
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Mix a base seed with stream indices (case id, epoch, sample, ...) to
/// derive independent deterministic substreams.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(base ^ (a * 0x9e3779b97f4a7c15ULL)) ^ b);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (no cached spare, so the draw count
    /// per call is fixed).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Unbiased integer in [0, n) by rejection.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
        std::uint64_t x;
        do { x = gen_(); } while (x >= limit);
        return x % n;
    }

    /// Uniform integer in [lo, hi], both ends inclusive.
    long long uniform_int(long long lo, long long hi) {
        return lo + static_cast<long long>(bounded(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    /// Fisher-Yates shuffle using bounded() so results are platform-stable.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[bounded(i)]);
    }

private:
    std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Little-endian scalar encoding (file formats are little-endian everywhere).
// ---------------------------------------------------------------------------

template <typename T>
inline void store_le(std::vector<unsigned char>& buf, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char tmp[sizeof(T)];
    std::memcpy(tmp, &value, sizeof(T));
    buf.insert(buf.end(), tmp, tmp + sizeof(T));
}

template <typename T>
inline T load_le(const unsigned char* p) {
    static_assert(std::is_trivially_copyable_v<T>);
    T value;
    std::memcpy(&value, p, sizeof(T));
    return value;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    std::streamoff n = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(static_cast<std::size_t>(n));
    if (n > 0) in.read(reinterpret_cast<char*>(buf.data()), n);
    if (!in) throw data_error("read failed: " + path);
    return buf;
}

inline void write_file_bytes(const std::string& path, const unsigned char* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    out.flush();
    if (!out) throw data_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Plain-text key-value configuration files: one "key = value" per line,
// '#' starts a comment, blank lines ignored.
// ---------------------------------------------------------------------------

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw data_error(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw data_error(path + ":" + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, val).second)
            throw data_error(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return kv;
}

inline double parse_double(const std::string& s, const std::string& what) {
    std::size_t pos = 0;
    double v = 0;
    try { v = std::stod(s, &pos); } catch (const std::exception&) { pos = 0; }
    if (pos != s.size() || s.empty()) throw data_error("invalid number for " + what + ": '" + s + "'");
    return v;
}

inline long parse_long(const std::string& s, const std::string& what) {
    std::size_t pos = 0;
    long v = 0;
    try { v = std::stol(s, &pos); } catch (const std::exception&) { pos = 0; }
    if (pos != s.size() || s.empty()) throw data_error("invalid integer for " + what + ": '" + s + "'");
    return v;
}

/// Shortest-round-trip float formatting, stable across runs; used by every
/// text report so reruns are byte-identical.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = std::strtod(buf, nullptr);
    if (back == v) {
        for (int prec = 1; prec <= 16; ++prec) {
            char shorter[40];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
            if (std::strtod(shorter, nullptr) == v) return shorter;
        }
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Block-partitioned parallel loop. Results must be written to disjoint
// slots; the partition is static, so output never depends on scheduling.
// ---------------------------------------------------------------------------

inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    int usable = workers < 1 ? 1 : workers;
    if (static_cast<std::size_t>(usable) > n) usable = static_cast<int>(n);
    if (usable == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(usable));
    std::size_t chunk = (n + usable - 1) / usable;
    for (int w = 0; w < usable; ++w) {
        std::size_t lo = w * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        pool.emplace_back([&, lo, hi, w] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace mcadot

#endif
