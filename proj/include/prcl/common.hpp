#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace prcl {

using Vec = std::vector<double>;

// Contract violations (bad arguments, broken invariants) throw this.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numeric failures detected at runtime (NaN loss, non-finite activations).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Deterministic RNG. mt19937_64 output is fixed by the standard; the
// distribution transforms are hand-rolled here because the std distribution
// objects are implementation-defined and would break byte-identical runs
// across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        check(n > 0, "Rng::below: n must be positive");
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller, one spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t raw() { return gen_(); }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace prcl
