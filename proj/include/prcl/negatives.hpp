#pragma once

#include <deque>

#include "prcl/prototypes.hpp"

namespace prcl {

// Synthetic negative drawn from a class GDP. Its probability is zero-padded:
// sigma2 is exactly zero in every dimension.
struct VirtualNegative {
    int class_id = -1;
    Vec value;
    Vec sigma2;  // all zeros

    std::size_t dim() const { return value.size(); }
};

struct ScoredRepr {
    ProbRepr repr;
    double confidence = 0.0;
    std::size_t pixel_index = 0;  // position in the originating batch
};

enum class VnScale { Variance, Stddev };

// Count of real-negative draws dropped after exhausting redraw attempts.
inline std::atomic<std::uint64_t>& negative_redraw_skip_count() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}

// Validity filter: keep representations whose confidence exceeds the weak
// threshold.
inline std::vector<ScoredRepr> filter_valid(const std::vector<ScoredRepr>& reps,
                                            double delta_w) {
    std::vector<ScoredRepr> out;
    for (const auto& r : reps)
        if (r.confidence > delta_w) out.push_back(r);
    return out;
}

// Anchors are hard pixels: confidence below the strong threshold. Up to k
// are drawn uniformly without replacement.
inline std::vector<ScoredRepr> sample_anchors(const std::vector<ScoredRepr>& valid,
                                              double delta_s, std::size_t k, Rng& rng) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < valid.size(); ++i)
        if (valid[i].confidence < delta_s) pool.push_back(i);
    // partial Fisher-Yates
    const std::size_t take = std::min(k, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<ScoredRepr> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(valid[pool[i]]);
    return out;
}

// Softmax over MLS(anchor GDP, candidate GDP) across initialized classes
// other than the anchor's. Classes similar to the anchor get more mass.
inline std::map<int, double> negative_class_distribution(int anchor_class,
                                                         const PrototypeBank& bank,
                                                         double temperature_n) {
    check(temperature_n > 0.0, "negative_class_distribution: temperature must be positive");
    const GlobalPrototype* anchor = bank.find(anchor_class);
    check(anchor != nullptr, "negative_class_distribution: anchor GDP uninitialized");
    const ProbRepr anchor_repr(anchor->mu_hat, anchor->sigma2_hat);

    std::map<int, double> scores;
    double max_score = -HUGE_VAL;
    for (const auto& [id, proto] : bank.entries) {
        if (id == anchor_class || !proto.initialized()) continue;
        const double s = mls(anchor_repr, ProbRepr(proto.mu_hat, proto.sigma2_hat));
        scores[id] = s / temperature_n;
        max_score = std::max(max_score, scores[id]);
    }
    if (scores.empty()) return {};

    double norm = 0.0;
    for (auto& [id, s] : scores) {
        s = std::exp(s - max_score);
        norm += s;
    }
    for (auto& [id, s] : scores) s /= norm;
    return scores;
}

// Draws k_total class labels i.i.d. from the distribution, then a uniform
// representation within each drawn class. A drawn class with an empty pool
// is redrawn up to a bounded retry count.
inline std::map<int, std::vector<ProbRepr>> sample_real_negatives(
    const std::map<int, std::vector<ProbRepr>>& valid_by_class,
    const std::map<int, double>& distribution, std::size_t k_total, Rng& rng) {
    constexpr int kMaxRedraws = 8;
    std::map<int, std::vector<ProbRepr>> out;
    if (distribution.empty()) return out;

    auto draw_class = [&]() {
        double u = rng.uniform();
        for (const auto& [id, p] : distribution) {
            if (u < p) return id;
            u -= p;
        }
        return distribution.rbegin()->first;  // rounding remainder
    };

    for (std::size_t i = 0; i < k_total; ++i) {
        int chosen = -1;
        for (int attempt = 0; attempt <= kMaxRedraws; ++attempt) {
            const int c = draw_class();
            auto it = valid_by_class.find(c);
            if (it != valid_by_class.end() && !it->second.empty()) {
                chosen = c;
                break;
            }
        }
        if (chosen < 0) {
            negative_redraw_skip_count().fetch_add(1, std::memory_order_relaxed);
            continue;
        }
        const auto& pool = valid_by_class.at(chosen);
        out[chosen].push_back(pool[rng.below(pool.size())]);
    }
    return out;
}

// Virtual negatives via the modified reparameterization trick:
//   value = mu_g + beta * (eps (.) scale),  eps ~ N(0, 1) per dimension,
// where scale is the GDP variance vector (literal form) or its square root
// when the stddev switch is selected.
inline std::vector<VirtualNegative> generate_vn(const GlobalPrototype& gdp, double beta,
                                                std::size_t count, Rng& rng,
                                                VnScale scale = VnScale::Variance) {
    check(gdp.initialized(), "generate_vn: uninitialized GDP");
    check(beta >= 0.0, "generate_vn: beta must be nonnegative");
    const std::size_t d = gdp.mu_hat.size();
    std::vector<VirtualNegative> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        VirtualNegative vn;
        vn.class_id = gdp.class_id;
        vn.value.resize(d);
        vn.sigma2.assign(d, 0.0);
        for (std::size_t l = 0; l < d; ++l) {
            const double s = scale == VnScale::Variance ? gdp.sigma2_hat[l]
                                                        : std::sqrt(gdp.sigma2_hat[l]);
            vn.value[l] = gdp.mu_hat[l] + beta * rng.normal() * s;
        }
        check(all_finite(vn.value), "generate_vn: non-finite output");
        out.push_back(std::move(vn));
    }
    return out;
}

// FIFO per-class store of past representations. Comparison baseline only;
// capacity is shared across classes.
class MemoryBank {
  public:
    explicit MemoryBank(std::size_t capacity) : capacity_(capacity) {
        check(capacity > 0, "MemoryBank: capacity must be positive");
    }

    void enqueue(int class_id, const ProbRepr& r) {
        entries_.push_back({class_id, r});
        if (entries_.size() > capacity_) entries_.pop_front();
    }

    std::vector<ProbRepr> sample(int class_id, std::size_t k, Rng& rng) const {
        std::vector<const ProbRepr*> pool;
        for (const auto& e : entries_)
            if (e.class_id == class_id) pool.push_back(&e.repr);
        std::vector<ProbRepr> out;
        if (pool.empty()) return out;
        for (std::size_t i = 0; i < k; ++i) out.push_back(*pool[rng.below(pool.size())]);
        return out;
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }

    std::size_t state_bytes() const {
        std::size_t bytes = 0;
        for (const auto& e : entries_)
            bytes += sizeof(int) + sizeof(double) * (e.repr.mu.size() + e.repr.sigma2.size());
        return bytes;
    }

  private:
    struct Entry {
        int class_id;
        ProbRepr repr;
    };
    std::size_t capacity_;
    std::deque<Entry> entries_;
};

}  // namespace prcl
