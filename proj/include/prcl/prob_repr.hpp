#pragma once

#include <algorithm>
#include <atomic>
#include <numeric>
#include <span>

#include "prcl/common.hpp"

namespace prcl {

inline constexpr double kVarianceFloor = 1e-8;
inline constexpr double kVarianceCeiling = 1e8;

// Count of variance values clamped into [floor, ceiling] at construction.
inline std::atomic<std::uint64_t>& variance_clamp_count() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}

// A pixel embedding as a diagonal Gaussian: mean vector and per-dimension
// variance. Variances are stored directly (not log-variances) and are
// strictly positive.
struct ProbRepr {
    Vec mu;
    Vec sigma2;

    ProbRepr() = default;

    ProbRepr(Vec mean, Vec variance) : mu(std::move(mean)), sigma2(std::move(variance)) {
        check(mu.size() == sigma2.size(), "ProbRepr: mu and sigma2 dimension mismatch");
        check(all_finite(mu), "ProbRepr: non-finite mean");
        check(all_finite(sigma2), "ProbRepr: non-finite variance");
        for (double& v : sigma2) {
            check(v > 0.0, "ProbRepr: variance must be strictly positive");
            if (v < kVarianceFloor || v > kVarianceCeiling) {
                v = std::clamp(v, kVarianceFloor, kVarianceCeiling);
                variance_clamp_count().fetch_add(1, std::memory_order_relaxed);
            }
        }
    }

    std::size_t dim() const { return mu.size(); }
};

// Mutual likelihood score over raw mean/variance spans. The second variance
// may contain zeros (virtual negatives) as long as each per-dimension sum
// stays positive.
inline double mls_raw(std::span<const double> mu_a, std::span<const double> s2_a,
                      std::span<const double> mu_b, std::span<const double> s2_b) {
    const std::size_t d = mu_a.size();
    check(mu_b.size() == d && s2_a.size() == d && s2_b.size() == d,
          "mls: dimension mismatch");
    double acc = 0.0;
    for (std::size_t l = 0; l < d; ++l) {
        const double s = s2_a[l] + s2_b[l];
        const double diff = mu_a[l] - mu_b[l];
        acc += diff * diff / s + std::log(s);
    }
    const double out = -0.5 * acc - 0.5 * static_cast<double>(d) * std::log(2.0 * M_PI);
    check(std::isfinite(out), "mls: non-finite result");
    return out;
}

// Mutual likelihood score between two probabilistic representations:
//   -1/2 sum_l [ (mu_a-mu_b)^2/(s2_a+s2_b) + log(s2_a+s2_b) ] - D/2 log(2 pi)
inline double mls(const ProbRepr& a, const ProbRepr& b) {
    check(a.dim() == b.dim(), "mls: dimension mismatch");
    return mls_raw(a.mu, a.sigma2, b.mu, b.sigma2);
}

struct MlsGrad {
    Vec d_mu_a, d_sigma2_a, d_mu_b, d_sigma2_b;
};

// Analytic partials of mls with respect to both arguments' means and
// variances. Means enter only through their difference, so
// d_mu_a == -d_mu_b componentwise.
inline MlsGrad mls_grad(const ProbRepr& a, const ProbRepr& b) {
    const std::size_t d = a.dim();
    check(b.dim() == d, "mls_grad: dimension mismatch");
    MlsGrad g;
    g.d_mu_a.resize(d);
    g.d_sigma2_a.resize(d);
    g.d_mu_b.resize(d);
    g.d_sigma2_b.resize(d);
    for (std::size_t l = 0; l < d; ++l) {
        const double s = a.sigma2[l] + b.sigma2[l];
        const double diff = a.mu[l] - b.mu[l];
        g.d_mu_a[l] = -diff / s;
        g.d_mu_b[l] = diff / s;
        // d/ds [ -1/2 (diff^2/s + log s) ] = 1/2 (diff^2/s^2 - 1/s)
        const double ds = 0.5 * (diff * diff / (s * s) - 1.0 / s);
        g.d_sigma2_a[l] = ds;
        g.d_sigma2_b[l] = ds;
    }
    return g;
}

namespace detail {
// Canonical ordering of representations: lexicographic on (mu, sigma2).
// Fusion sums run left-to-right over this order so the result is
// bit-reproducible regardless of input permutation.
inline std::vector<std::size_t> canonical_order(std::span<const ProbRepr> reps) {
    std::vector<std::size_t> idx(reps.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
        if (reps[i].mu != reps[j].mu) return reps[i].mu < reps[j].mu;
        return reps[i].sigma2 < reps[j].sigma2;
    });
    return idx;
}
}  // namespace detail

// Precision-weighted fusion of a set of Gaussians:
//   1/s2_hat = sum_i 1/s2_i,  mu_hat = s2_hat * sum_i mu_i/s2_i
inline ProbRepr fuse(std::span<const ProbRepr> reps) {
    check(!reps.empty(), "fuse: empty input");
    const std::size_t d = reps.front().dim();
    for (const auto& r : reps) check(r.dim() == d, "fuse: dimension mismatch");
    if (reps.size() == 1) return reps.front();  // identity, bit-exact

    const auto order = detail::canonical_order(reps);
    Vec precision(d, 0.0), weighted_mu(d, 0.0);
    for (std::size_t i : order) {
        for (std::size_t l = 0; l < d; ++l) {
            precision[l] += 1.0 / reps[i].sigma2[l];
            weighted_mu[l] += reps[i].mu[l] / reps[i].sigma2[l];
        }
    }
    Vec mu(d), sigma2(d);
    for (std::size_t l = 0; l < d; ++l) {
        sigma2[l] = 1.0 / precision[l];
        mu[l] = sigma2[l] * weighted_mu[l];
    }
    return ProbRepr(std::move(mu), std::move(sigma2));
}

inline ProbRepr fuse(const std::vector<ProbRepr>& reps) {
    return fuse(std::span<const ProbRepr>(reps));
}

}  // namespace prcl
