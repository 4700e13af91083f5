#pragma once

#include <cstdint>
#include <map>
#include <optional>

#include "prcl/prob_repr.hpp"

namespace prcl {

// Streaming per-class posterior prototype. The first update copies the local
// prototype (flat prior); every later update accumulates precision:
//   1/s2_g(t) = 1/s2_g(t-1) + 1/s2_l(t)
//   mu_g(t)   = s2_g(t) * (mu_g(t-1)/s2_g(t-1) + mu_l(t)/s2_l(t))
struct GlobalPrototype {
    int class_id = -1;
    Vec mu_hat;
    Vec sigma2_hat;
    std::uint64_t n_updates = 0;

    bool initialized() const { return n_updates > 0; }
};

// Count of GDP updates skipped because the local prototype was non-finite.
inline std::atomic<std::uint64_t>& gdp_skip_count() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}

inline GlobalPrototype gdp_update(const GlobalPrototype& prev, const ProbRepr& local) {
    if (!all_finite(local.mu) || !all_finite(local.sigma2)) {
        gdp_skip_count().fetch_add(1, std::memory_order_relaxed);
        return prev;
    }
    if (!prev.initialized()) {
        GlobalPrototype out;
        out.class_id = prev.class_id;
        out.mu_hat = local.mu;
        out.sigma2_hat = local.sigma2;
        out.n_updates = 1;
        return out;
    }
    const std::size_t d = prev.mu_hat.size();
    check(local.dim() == d, "gdp_update: dimension mismatch");
    GlobalPrototype out;
    out.class_id = prev.class_id;
    out.mu_hat.resize(d);
    out.sigma2_hat.resize(d);
    out.n_updates = prev.n_updates + 1;
    for (std::size_t l = 0; l < d; ++l) {
        const double precision = 1.0 / prev.sigma2_hat[l] + 1.0 / local.sigma2[l];
        out.sigma2_hat[l] = 1.0 / precision;
        out.mu_hat[l] = out.sigma2_hat[l] *
                        (prev.mu_hat[l] / prev.sigma2_hat[l] + local.mu[l] / local.sigma2[l]);
    }
    return out;
}

// Local prototype of one class in one iteration (Gaussian fusion of that
// class's representations).
inline ProbRepr local_prototype(const std::vector<ProbRepr>& reps_of_class) {
    check(!reps_of_class.empty(), "local_prototype: empty class");
    return fuse(reps_of_class);
}

// Closed-form batch posterior over all representations at once. Independent
// re-implementation kept free of the fuse/gdp_update code path; it is the
// equivalence oracle for the streaming update.
inline ProbRepr gdp_batch_oracle(const std::vector<ProbRepr>& all_reps) {
    check(!all_reps.empty(), "gdp_batch_oracle: empty input");
    const std::size_t d = all_reps.front().dim();
    Vec prec_sum(d, 0.0);
    Vec mean_sum(d, 0.0);
    for (const ProbRepr& r : all_reps) {
        check(r.dim() == d, "gdp_batch_oracle: dimension mismatch");
        for (std::size_t l = 0; l < d; ++l) {
            prec_sum[l] += 1.0 / r.sigma2[l];
            mean_sum[l] += r.mu[l] / r.sigma2[l];
        }
    }
    Vec mu(d), s2(d);
    for (std::size_t l = 0; l < d; ++l) {
        s2[l] = 1.0 / prec_sum[l];
        mu[l] = mean_sum[l] / prec_sum[l];
    }
    return ProbRepr(std::move(mu), std::move(s2));
}

// Mean-only EMA prototype update (the deterministic "Baseline+" rule).
inline Vec ema_prototype_update(const Vec& prev, const Vec& local, double momentum) {
    check(momentum >= 0.0 && momentum <= 1.0, "ema_prototype_update: momentum outside [0,1]");
    check(prev.size() == local.size(), "ema_prototype_update: dimension mismatch");
    Vec out(prev.size());
    for (std::size_t l = 0; l < prev.size(); ++l)
        out[l] = momentum * prev[l] + (1.0 - momentum) * local[l];
    return out;
}

enum class PrototypeStrategy { None, Ema, Gdp };

// One optional prototype per class. Mutated only by the training thread
// between forward and backward passes.
struct PrototypeBank {
    PrototypeStrategy strategy = PrototypeStrategy::Gdp;
    std::map<int, GlobalPrototype> entries;

    const GlobalPrototype* find(int class_id) const {
        auto it = entries.find(class_id);
        if (it == entries.end() || !it->second.initialized()) return nullptr;
        return &it->second;
    }

    void absorb(int class_id, const ProbRepr& local, double ema_momentum = 0.99) {
        auto& slot = entries[class_id];
        slot.class_id = class_id;
        if (strategy == PrototypeStrategy::Ema) {
            if (!slot.initialized()) {
                slot.mu_hat = local.mu;
                slot.sigma2_hat = Vec(local.dim(), 1.0);
                slot.n_updates = 1;
            } else {
                slot.mu_hat = ema_prototype_update(slot.mu_hat, local.mu, ema_momentum);
                ++slot.n_updates;
            }
        } else {
            slot = gdp_update(slot, local);
        }
    }

    // Persistent footprint: 2*D doubles plus the counter per class.
    std::size_t state_bytes() const {
        std::size_t bytes = 0;
        for (const auto& [id, p] : entries) {
            if (!p.initialized()) continue;
            bytes += sizeof(double) * (p.mu_hat.size() + p.sigma2_hat.size()) +
                     sizeof(std::uint64_t) + sizeof(int);
        }
        return bytes;
    }
};

// Euclidean displacement of one class's prototype mean between two banks.
// Absent when either bank lacks an initialized entry for the class.
inline std::optional<double> prototype_shift(const PrototypeBank& before,
                                             const PrototypeBank& after, int class_id) {
    const GlobalPrototype* a = before.find(class_id);
    const GlobalPrototype* b = after.find(class_id);
    if (a == nullptr || b == nullptr) return std::nullopt;
    double acc = 0.0;
    for (std::size_t l = 0; l < a->mu_hat.size(); ++l) {
        const double diff = a->mu_hat[l] - b->mu_hat[l];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

}  // namespace prcl
