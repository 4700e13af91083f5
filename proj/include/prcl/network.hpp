#pragma once

#include "prcl/prob_repr.hpp"

namespace prcl {

inline constexpr double kLogVarClamp = 6.0;  // raw log-variance clamp bound

struct Linear {
    int in = 0, out = 0;
    Vec w;  // row-major, out x in
    Vec b;

    void init(int in_dim, int out_dim, Rng& rng) {
        in = in_dim;
        out = out_dim;
        w.resize(static_cast<std::size_t>(in) * out);
        b.resize(out);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& x : w) x = rng.uniform(-bound, bound);
        for (double& x : b) x = rng.uniform(-bound, bound);
    }

    void apply(const Vec& x, Vec& y) const {
        y.resize(out);
        for (int o = 0; o < out; ++o) {
            double acc = b[o];
            const double* row = w.data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += row[i] * x[i];
            y[o] = acc;
        }
    }
};

// Student model: per-pixel encoder f, segmentation head g, representation
// head h (mean) and probability head p (log-variance, clamped then
// exponentiated).
struct ModelParams {
    int feature_dim = 0, hidden_dim = 0, num_classes = 0, repr_dim = 0;
    Linear enc;            // F -> H, tanh
    Linear seg;            // H -> C
    Linear repr1, repr2;   // H -> H tanh -> D
    Linear prob1, prob2;   // H -> H tanh -> D (raw log-variance)

    static ModelParams init(int f, int h, int c, int d, Rng& rng) {
        ModelParams m;
        m.feature_dim = f;
        m.hidden_dim = h;
        m.num_classes = c;
        m.repr_dim = d;
        m.enc.init(f, h, rng);
        m.seg.init(h, c, rng);
        m.repr1.init(h, h, rng);
        m.repr2.init(h, d, rng);
        m.prob1.init(h, h, rng);
        m.prob2.init(h, d, rng);
        return m;
    }

    // visits every layer; is_prob_head marks the soft-freeze group
    template <typename Fn>
    void for_each_layer(Fn&& fn) {
        fn(enc, false);
        fn(seg, false);
        fn(repr1, false);
        fn(repr2, false);
        fn(prob1, true);
        fn(prob2, true);
    }
    template <typename Fn>
    void for_each_layer(Fn&& fn) const {
        fn(enc, false);
        fn(seg, false);
        fn(repr1, false);
        fn(repr2, false);
        fn(prob1, true);
        fn(prob2, true);
    }
};

// Parallel parameter copy updated only by EMA of the student.
struct TeacherState {
    ModelParams params;
    double momentum = 0.99;
};

struct ForwardCache {
    std::vector<Vec> input, h1, r1, p1, raw;  // per pixel
};

struct ForwardResult {
    std::vector<Vec> logits;
    std::vector<ProbRepr> reprs;
    ForwardCache cache;
};

inline ForwardResult forward(const ModelParams& m, const std::vector<Vec>& pixels) {
    ForwardResult out;
    const std::size_t n = pixels.size();
    out.logits.resize(n);
    out.reprs.resize(n);
    out.cache.input = pixels;
    out.cache.h1.resize(n);
    out.cache.r1.resize(n);
    out.cache.p1.resize(n);
    out.cache.raw.resize(n);
    Vec tmp;
    for (std::size_t i = 0; i < n; ++i) {
        check(all_finite(pixels[i]), "forward: non-finite input");
        m.enc.apply(pixels[i], tmp);
        Vec& h1 = out.cache.h1[i];
        h1.resize(tmp.size());
        for (std::size_t k = 0; k < tmp.size(); ++k) h1[k] = std::tanh(tmp[k]);

        m.seg.apply(h1, out.logits[i]);

        m.repr1.apply(h1, tmp);
        Vec& r1 = out.cache.r1[i];
        r1.resize(tmp.size());
        for (std::size_t k = 0; k < tmp.size(); ++k) r1[k] = std::tanh(tmp[k]);
        Vec mu;
        m.repr2.apply(r1, mu);

        m.prob1.apply(h1, tmp);
        Vec& p1 = out.cache.p1[i];
        p1.resize(tmp.size());
        for (std::size_t k = 0; k < tmp.size(); ++k) p1[k] = std::tanh(tmp[k]);
        Vec& raw = out.cache.raw[i];
        m.prob2.apply(p1, raw);

        Vec sigma2(raw.size());
        for (std::size_t k = 0; k < raw.size(); ++k)
            sigma2[k] = std::exp(std::clamp(raw[k], -kLogVarClamp, kLogVarClamp));

        if (!all_finite(out.logits[i]) || !all_finite(mu))
            throw NumericError("forward: non-finite activations");
        out.reprs[i] = ProbRepr(std::move(mu), std::move(sigma2));
    }
    return out;
}

// Gradient buffers with the same shapes as the model.
struct ParamGrads {
    Linear enc, seg, repr1, repr2, prob1, prob2;

    static ParamGrads zeros_like(const ModelParams& m) {
        ParamGrads g;
        auto shape = [](Linear& dst, const Linear& src) {
            dst.in = src.in;
            dst.out = src.out;
            dst.w.assign(src.w.size(), 0.0);
            dst.b.assign(src.b.size(), 0.0);
        };
        shape(g.enc, m.enc);
        shape(g.seg, m.seg);
        shape(g.repr1, m.repr1);
        shape(g.repr2, m.repr2);
        shape(g.prob1, m.prob1);
        shape(g.prob2, m.prob2);
        return g;
    }

    template <typename Fn>
    void for_each_layer(Fn&& fn) {
        fn(enc, false);
        fn(seg, false);
        fn(repr1, false);
        fn(repr2, false);
        fn(prob1, true);
        fn(prob2, true);
    }
};

namespace detail {
// accumulate dL/dW, dL/db and return dL/dx for one affine layer
inline void linear_backward(const Linear& layer, const Vec& x, const Vec& d_y, Linear& grad,
                            Vec& d_x) {
    d_x.assign(layer.in, 0.0);
    for (int o = 0; o < layer.out; ++o) {
        const double g = d_y[o];
        grad.b[o] += g;
        double* grow = grad.w.data() + static_cast<std::size_t>(o) * layer.in;
        const double* wrow = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
        for (int i = 0; i < layer.in; ++i) {
            grow[i] += g * x[i];
            d_x[i] += g * wrow[i];
        }
    }
}
}  // namespace detail

// Analytic backprop through the four-head topology. d_sigma2 is the upstream
// gradient with respect to sigma^2 itself; the exp/clamp chain is applied
// here. Any upstream vector may be empty, meaning zero.
inline void backward(const ModelParams& m, const ForwardCache& cache,
                     const std::vector<Vec>& d_logits, const std::vector<Vec>& d_mu,
                     const std::vector<Vec>& d_sigma2, ParamGrads& grads) {
    const std::size_t n = cache.input.size();
    check(d_logits.empty() || d_logits.size() == n, "backward: d_logits size mismatch");
    check(d_mu.empty() || d_mu.size() == n, "backward: d_mu size mismatch");
    check(d_sigma2.empty() || d_sigma2.size() == n, "backward: d_sigma2 size mismatch");

    Vec d_h1, d_tmp, d_raw, d_r1, d_p1, d_in;
    for (std::size_t i = 0; i < n; ++i) {
        d_h1.assign(m.hidden_dim, 0.0);

        if (!d_logits.empty() && !d_logits[i].empty()) {
            detail::linear_backward(m.seg, cache.h1[i], d_logits[i], grads.seg, d_tmp);
            for (int k = 0; k < m.hidden_dim; ++k) d_h1[k] += d_tmp[k];
        }

        if (!d_mu.empty() && !d_mu[i].empty()) {
            detail::linear_backward(m.repr2, cache.r1[i], d_mu[i], grads.repr2, d_r1);
            for (std::size_t k = 0; k < d_r1.size(); ++k)
                d_r1[k] *= 1.0 - cache.r1[i][k] * cache.r1[i][k];
            detail::linear_backward(m.repr1, cache.h1[i], d_r1, grads.repr1, d_tmp);
            for (int k = 0; k < m.hidden_dim; ++k) d_h1[k] += d_tmp[k];
        }

        if (!d_sigma2.empty() && !d_sigma2[i].empty()) {
            d_raw.assign(m.repr_dim, 0.0);
            bool any = false;
            for (int k = 0; k < m.repr_dim; ++k) {
                const double raw = cache.raw[i][k];
                if (raw > -kLogVarClamp && raw < kLogVarClamp) {
                    // d sigma2 / d raw = sigma2
                    d_raw[k] = d_sigma2[i][k] * std::exp(raw);
                    any = any || d_raw[k] != 0.0;
                }
            }
            if (any) {
                detail::linear_backward(m.prob2, cache.p1[i], d_raw, grads.prob2, d_p1);
                for (std::size_t k = 0; k < d_p1.size(); ++k)
                    d_p1[k] *= 1.0 - cache.p1[i][k] * cache.p1[i][k];
                detail::linear_backward(m.prob1, cache.h1[i], d_p1, grads.prob1, d_tmp);
                for (int k = 0; k < m.hidden_dim; ++k) d_h1[k] += d_tmp[k];
            }
        }

        for (int k = 0; k < m.hidden_dim; ++k) d_h1[k] *= 1.0 - cache.h1[i][k] * cache.h1[i][k];
        detail::linear_backward(m.enc, cache.input[i], d_h1, grads.enc, d_in);
    }
}

// Teacher pseudo-labels: per-pixel argmax (ties toward the lowest class
// index) and max softmax probability as confidence.
inline void pseudo_label(const std::vector<Vec>& teacher_logits, std::vector<int>& labels,
                         Vec& confidences) {
    labels.resize(teacher_logits.size());
    confidences.resize(teacher_logits.size());
    for (std::size_t i = 0; i < teacher_logits.size(); ++i) {
        const Vec& logits = teacher_logits[i];
        check(all_finite(logits), "pseudo_label: non-finite logits");
        int best = 0;
        for (std::size_t c = 1; c < logits.size(); ++c)
            if (logits[c] > logits[best]) best = static_cast<int>(c);
        labels[i] = best;
        double norm = 0.0;
        for (double x : logits) norm += std::exp(x - logits[best]);
        confidences[i] = 1.0 / norm;
    }
}

inline void teacher_ema_step(TeacherState& teacher, const ModelParams& student) {
    check(teacher.momentum >= 0.0 && teacher.momentum <= 1.0,
          "teacher_ema_step: momentum outside [0,1]");
    const double m = teacher.momentum;
    auto blend = [m](Vec& t, const Vec& s) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = m * t[i] + (1.0 - m) * s[i];
    };
    blend(teacher.params.enc.w, student.enc.w);
    blend(teacher.params.enc.b, student.enc.b);
    blend(teacher.params.seg.w, student.seg.w);
    blend(teacher.params.seg.b, student.seg.b);
    blend(teacher.params.repr1.w, student.repr1.w);
    blend(teacher.params.repr1.b, student.repr1.b);
    blend(teacher.params.repr2.w, student.repr2.w);
    blend(teacher.params.repr2.b, student.repr2.b);
    blend(teacher.params.prob1.w, student.prob1.w);
    blend(teacher.params.prob1.b, student.prob1.b);
    blend(teacher.params.prob2.w, student.prob2.w);
    blend(teacher.params.prob2.b, student.prob2.b);
}

// Soft-freeze SGD: every group uses lr_main except the probability head,
// which uses lr_prob_head. Poly decay (1 - iter/total)^0.9 scales both.
inline void sgd_step(ModelParams& params, ParamGrads& grads, double lr_main, double lr_prob_head,
                     std::uint64_t iter, std::uint64_t total_iters) {
    check(lr_main > 0.0 && lr_prob_head > 0.0, "sgd_step: learning rates must be positive");
    const double frac = total_iters > 0
                            ? static_cast<double>(iter) / static_cast<double>(total_iters)
                            : 0.0;
    const double poly = std::pow(1.0 - std::min(frac, 1.0), 0.9);
    struct Pair {
        Linear* p;
        Linear* g;
        bool prob;
    };
    Pair pairs[] = {{&params.enc, &grads.enc, false},     {&params.seg, &grads.seg, false},
                    {&params.repr1, &grads.repr1, false}, {&params.repr2, &grads.repr2, false},
                    {&params.prob1, &grads.prob1, true},  {&params.prob2, &grads.prob2, true}};
    for (const Pair& pr : pairs) {
        const double lr = (pr.prob ? lr_prob_head : lr_main) * poly;
        for (std::size_t i = 0; i < pr.p->w.size(); ++i) pr.p->w[i] -= lr * pr.g->w[i];
        for (std::size_t i = 0; i < pr.p->b.size(); ++i) pr.p->b[i] -= lr * pr.g->b[i];
    }
}

}  // namespace prcl
