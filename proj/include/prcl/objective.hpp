#pragma once

#include "prcl/negatives.hpp"

namespace prcl {

// Every scalar knob of the training objective and sampling machinery.
struct HyperParams {
    double tau = 0.5;               // contrastive temperature
    double delta_s = 0.80;          // strong threshold (anchor sampling)
    double delta_w = 0.70;          // weak threshold (validity filter)
    double delta_u = 0.80;          // unsupervised confidence threshold
    double beta = 1.0;              // virtual radius
    double lambda_c0 = 0.1;         // initial contrastive weight
    double alpha_sched = 2.302585092994046;  // ln 10
    int vn_count = 4;               // virtual negatives per class
    int anchors_per_class = 8;
    int negatives_total = 32;
    double teacher_momentum = 0.99;
    double ema_proto_momentum = 0.99;
    double lr_main = 6.4e-3;
    double lr_prob_head = 5e-5;
    double temperature_n = 1.0;     // negative-class softmax temperature
    VnScale vn_scale = VnScale::Variance;
    std::uint64_t seed = 1;

    void validate() const {
        check(tau > 0.0, "HyperParams: tau must be positive");
        check(delta_s >= 0.0 && delta_s <= 1.0, "HyperParams: delta_s outside [0,1]");
        check(delta_w >= 0.0 && delta_w <= 1.0, "HyperParams: delta_w outside [0,1]");
        check(delta_u >= 0.0 && delta_u <= 1.0, "HyperParams: delta_u outside [0,1]");
        check(delta_w <= delta_s, "HyperParams: delta_w must not exceed delta_s");
        check(beta >= 0.0, "HyperParams: beta must be nonnegative");
        check(lambda_c0 >= 0.0, "HyperParams: lambda_c0 must be nonnegative");
        check(vn_count >= 0, "HyperParams: vn_count must be nonnegative");
        check(anchors_per_class >= 0, "HyperParams: anchors_per_class negative");
        check(negatives_total >= 0, "HyperParams: negatives_total negative");
        check(teacher_momentum >= 0.0 && teacher_momentum <= 1.0,
              "HyperParams: teacher_momentum outside [0,1]");
        check(ema_proto_momentum >= 0.0 && ema_proto_momentum <= 1.0,
              "HyperParams: ema_proto_momentum outside [0,1]");
        check(lr_main > 0.0 && lr_prob_head > 0.0, "HyperParams: learning rates must be positive");
        check(temperature_n > 0.0, "HyperParams: temperature_n must be positive");
    }
};

// Contrastive weight schedule: lambda_c0 * exp(alpha * (t/T)^2).
inline double lambda_schedule(std::uint64_t t, std::uint64_t t_total, double lambda_c0,
                              double alpha_sched) {
    check(t_total > 0, "lambda_schedule: T_total must be positive");
    check(t <= t_total, "lambda_schedule: t exceeds T_total");
    const double frac = static_cast<double>(t) / static_cast<double>(t_total);
    return lambda_c0 * std::exp(alpha_sched * frac * frac);
}

inline double total_loss(double ls, double lu, double lc, double lambda_t) {
    return ls + lu + lambda_t * lc;
}

struct CeResult {
    double loss = 0.0;
    std::vector<Vec> d_logits;  // one gradient row per pixel
};

namespace detail {
// Stable softmax in place; returns log of the normalizer shifted by max.
inline void softmax(Vec& v) {
    double m = -HUGE_VAL;
    for (double x : v) m = std::max(m, x);
    double norm = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        norm += x;
    }
    for (double& x : v) x /= norm;
}
}  // namespace detail

// Mean cross-entropy over labeled pixels. A label of -1 marks an unlabeled
// pixel and is skipped. Empty labeled set yields zero loss and gradients.
inline CeResult supervised_ce(const std::vector<Vec>& logits, const std::vector<int>& labels) {
    check(logits.size() == labels.size(), "supervised_ce: size mismatch");
    CeResult out;
    out.d_logits.assign(logits.size(), Vec{});
    std::size_t n = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out.d_logits[i].assign(logits[i].size(), 0.0);
        if (labels[i] >= 0) ++n;
    }
    if (n == 0) return out;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (labels[i] < 0) continue;
        check(static_cast<std::size_t>(labels[i]) < logits[i].size(),
              "supervised_ce: label out of range");
        Vec p = logits[i];
        detail::softmax(p);
        out.loss += -std::log(std::max(p[labels[i]], 1e-300));
        for (std::size_t c = 0; c < p.size(); ++c)
            out.d_logits[i][c] = (p[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) /
                                 static_cast<double>(n);
    }
    out.loss /= static_cast<double>(n);
    return out;
}

// Confidence-weighted cross-entropy against pseudo-labels:
//   omega = #{confidence > delta_u} / #pixels, loss = omega * mean CE.
inline CeResult unsupervised_weighted_ce(const std::vector<Vec>& logits,
                                         const std::vector<int>& pseudo_labels,
                                         const Vec& confidences, double delta_u) {
    check(logits.size() == pseudo_labels.size() && logits.size() == confidences.size(),
          "unsupervised_weighted_ce: size mismatch");
    CeResult out;
    out.d_logits.assign(logits.size(), Vec{});
    for (std::size_t i = 0; i < logits.size(); ++i) out.d_logits[i].assign(logits[i].size(), 0.0);
    if (logits.empty()) return out;

    std::size_t n_confident = 0;
    for (double c : confidences) {
        check(c >= 0.0 && c <= 1.0, "unsupervised_weighted_ce: confidence outside [0,1]");
        if (c > delta_u) ++n_confident;
    }
    const double omega = static_cast<double>(n_confident) / static_cast<double>(logits.size());
    if (omega == 0.0) return out;

    const double scale = omega / static_cast<double>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        Vec p = logits[i];
        detail::softmax(p);
        out.loss += -std::log(std::max(p[pseudo_labels[i]], 1e-300));
        for (std::size_t c = 0; c < p.size(); ++c)
            out.d_logits[i][c] =
                scale * (p[c] - (static_cast<int>(c) == pseudo_labels[i] ? 1.0 : 0.0));
    }
    out.loss = omega * out.loss / static_cast<double>(logits.size());
    return out;
}

struct Anchor {
    int class_id = -1;
    std::size_t pixel_index = 0;  // position in the caller's pixel batch
    ProbRepr repr;
};

struct SampleSet {
    std::vector<Anchor> anchors;
    std::map<int, std::vector<ProbRepr>> real_negatives;
    std::map<int, std::vector<VirtualNegative>> virtual_negatives;
};

struct ContrastiveResult {
    double loss = 0.0;
    std::vector<Vec> d_mu;      // per anchor, same order as samples.anchors
    std::vector<Vec> d_sigma2;  // per anchor
    int classes_used = 0;
    int classes_skipped = 0;
};

// InfoNCE over MLS. Each anchor's positive is its class GDP; the denominator
// adds real negatives from other classes and virtual negatives from other
// classes. Gradients flow to anchors only; GDP parameters and negatives are
// constants in the backward pass. Normalization is 1/(|C| * |Z_c|) over
// classes that contributed at least one anchor with an initialized GDP.
inline ContrastiveResult contrastive_loss(const SampleSet& samples, const PrototypeBank& bank,
                                          const HyperParams& hp) {
    ContrastiveResult out;
    out.d_mu.resize(samples.anchors.size());
    out.d_sigma2.resize(samples.anchors.size());
    for (std::size_t i = 0; i < samples.anchors.size(); ++i) {
        const std::size_t d = samples.anchors[i].repr.dim();
        out.d_mu[i].assign(d, 0.0);
        out.d_sigma2[i].assign(d, 0.0);
    }

    // group anchor indices by class, keeping only classes with a GDP
    std::map<int, std::vector<std::size_t>> by_class;
    std::map<int, bool> skipped;
    for (std::size_t i = 0; i < samples.anchors.size(); ++i) {
        const int c = samples.anchors[i].class_id;
        if (bank.find(c) == nullptr) {
            skipped[c] = true;
            continue;
        }
        by_class[c].push_back(i);
    }
    out.classes_skipped = static_cast<int>(skipped.size());
    out.classes_used = static_cast<int>(by_class.size());
    if (by_class.empty()) return out;

    const double class_norm = 1.0 / static_cast<double>(by_class.size());

    for (const auto& [c, anchor_idx] : by_class) {
        const GlobalPrototype* gdp = bank.find(c);
        const ProbRepr positive(gdp->mu_hat, gdp->sigma2_hat);
        const double anchor_norm = class_norm / static_cast<double>(anchor_idx.size());

        for (std::size_t ai : anchor_idx) {
            const ProbRepr& z = samples.anchors[ai].repr;

            // scores: index 0 is the positive, then real negatives, then VNs
            std::vector<double> scores;
            std::vector<MlsGrad> grads;
            scores.push_back(mls(z, positive) / hp.tau);
            grads.push_back(mls_grad(z, positive));
            for (const auto& [nc, reps] : samples.real_negatives) {
                if (nc == c) continue;
                for (const ProbRepr& neg : reps) {
                    scores.push_back(mls(z, neg) / hp.tau);
                    grads.push_back(mls_grad(z, neg));
                }
            }
            for (const auto& [nc, vns] : samples.virtual_negatives) {
                if (nc == c) continue;
                for (const VirtualNegative& vn : vns) {
                    scores.push_back(mls_raw(z.mu, z.sigma2, vn.value, vn.sigma2) / hp.tau);
                    // zero-padded variance: same gradient form with s2_b = 0
                    MlsGrad g;
                    const std::size_t d = z.dim();
                    g.d_mu_a.resize(d);
                    g.d_sigma2_a.resize(d);
                    for (std::size_t l = 0; l < d; ++l) {
                        const double s = z.sigma2[l];
                        const double diff = z.mu[l] - vn.value[l];
                        g.d_mu_a[l] = -diff / s;
                        g.d_sigma2_a[l] = 0.5 * (diff * diff / (s * s) - 1.0 / s);
                    }
                    grads.push_back(std::move(g));
                }
            }

            // -log softmax(positive)
            double m = -HUGE_VAL;
            for (double s : scores) m = std::max(m, s);
            double norm = 0.0;
            for (double s : scores) norm += std::exp(s - m);
            const double log_norm = m + std::log(norm);
            out.loss += anchor_norm * (log_norm - scores[0]);

            // d/dz: sum_k p_k ds_k/dz / tau - ds_0/dz / tau
            const std::size_t d = z.dim();
            for (std::size_t k = 0; k < scores.size(); ++k) {
                const double p_k = std::exp(scores[k] - log_norm);
                const double w = anchor_norm * (p_k - (k == 0 ? 1.0 : 0.0)) / hp.tau;
                for (std::size_t l = 0; l < d; ++l) {
                    out.d_mu[ai][l] += w * grads[k].d_mu_a[l];
                    out.d_sigma2[ai][l] += w * grads[k].d_sigma2_a[l];
                }
            }
        }
    }
    check(std::isfinite(out.loss), "contrastive_loss: non-finite loss");
    return out;
}

}  // namespace prcl
