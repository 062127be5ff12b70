/*
 * Small shared utilities: numerically stable accumulation, deterministic
 * counter-based RNG, and index helpers used across the pipeline.
 */
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>

namespace deltamap {

// Kahan compensated accumulator. Keeps large reductions (centroids,
// covariances, histogram mass) independent of summation order to ~1e-16.
class KahanSum {
public:
    void add(double x) {
        const double y = x - comp_;
        const double t = sum_ + y;
        comp_ = (t - sum_) - y;
        sum_ = t;
    }
    double value() const { return sum_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// splitmix64: tiny stateless generator. Used where a stream must be derived
// from a composite key (seed, channel, azimuth) so results do not depend on
// thread scheduling.
inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(s);
}

// Counter-based RNG stream. Deterministic for a given key regardless of how
// work is scheduled across threads.
class CounterRng {
public:
    explicit CounterRng(uint64_t key) : state_(key) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // standard normal via Box-Muller
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return mag * std::cos(2.0 * M_PI * u2);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Process-wide cap on worker threads. Results never depend on the value;
// only wall time does.
inline std::atomic<int>& max_threads_slot() {
    static std::atomic<int> v{0};
    return v;
}
inline void set_max_threads(int n) { max_threads_slot() = n; }
inline int max_threads() {
    const int v = max_threads_slot();
    if (v > 0) return v;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

inline bool is_finite(double v) { return std::isfinite(v); }

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace deltamap
