#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace vecsketch {

// Error taxonomy. CLI maps these to exit codes (config 2, backend 3, numeric 4);
// plain std::domain_error / std::invalid_argument mark contract violations in the math APIs.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct BackendError : std::runtime_error {
    explicit BackendError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

inline double sq(double v) { return v * v; }

// FNV-1a 64-bit. Used for config hashes, artifact checksums and stream naming.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}
inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic random stream. All randomness in the toolkit flows from one master
// seed through named sub-streams ("init", "augment", "timestep", "noise", ...).
// Distributions are hand-rolled so traces are bit-identical across runs and toolchains.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : state_(splitmix64(seed ^ 0x6a09e667f3bcc908ull)) {}

    std::uint64_t next_u64() {
        state_ = splitmix64(state_ + 0x9e3779b97f4a7c15ull);
        return state_;
    }
    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    // integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw std::domain_error("uniform_index: empty range");
        return next_u64() % n;
    }
    // standard normal via Box-Muller (cached spare)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }
    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    std::vector<double> normal_vec(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = normal();
        return v;
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Root of the seed hierarchy: sub-streams are derived by name (+ optional index),
// so e.g. the "augment" stream is unaffected by how much noise the "noise" stream drew.
class RngHub {
public:
    explicit RngHub(std::uint64_t master_seed) : master_(master_seed) {}
    std::uint64_t master_seed() const { return master_; }

    RandomStream stream(std::string_view name) const {
        return RandomStream(splitmix64(master_ ^ fnv1a64(name)));
    }
    RandomStream stream(std::string_view name, std::uint64_t index) const {
        return RandomStream(splitmix64(splitmix64(master_ ^ fnv1a64(name)) + index));
    }
    std::uint64_t derived_seed(std::string_view name, std::uint64_t index) const {
        return splitmix64(splitmix64(master_ ^ fnv1a64(name)) + index);
    }

private:
    std::uint64_t master_;
};

// Little-endian scalar IO shared by the binary artifact formats (displacement
// tensors, embedding files). Readers return false at EOF instead of throwing so
// callers can produce format-specific messages.
namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
    const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                       char((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline void put_f32le(std::ostream& os, double v) {
    put_u32le(os, std::bit_cast<std::uint32_t>(float(v)));
}

inline bool get_u32le(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
        std::uint32_t(b[3]) << 24;
    return true;
}

inline bool get_f32le(std::istream& is, double& v) {
    std::uint32_t u;
    if (!get_u32le(is, u)) return false;
    v = double(std::bit_cast<float>(u));
    return true;
}

}  // namespace detail

// Deterministic parallel map over [0, n): results land by index, so worker count
// never changes the output. Used for seeds / letters / probe runs.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    if (n == 0) return;
    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    workers = std::min<unsigned>(workers, static_cast<unsigned>(n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace vecsketch
