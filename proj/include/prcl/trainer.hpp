#pragma once

#include <chrono>
#include <cstdio>
#include <limits>

#include "prcl/checkpoint.hpp"
#include "prcl/config.hpp"
#include "prcl/metrics.hpp"

namespace prcl {

struct EvalMetrics {
    double miou = 0.0;
    double silhouette = 0.0;
    double dbi = 0.0;
};

struct TraceRow {
    std::uint64_t iteration = 0;
    double loss_s = 0.0, loss_u = 0.0, loss_c = 0.0, lambda = 0.0;
    EvalMetrics eval;
    double proto_shift_mean = 0.0;
    std::size_t neg_state_bytes = 0;
    double ms_per_iter = 0.0;  // reported in timing.csv, not metrics.csv
};

namespace detail {

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

// Seed-determined 20% holdout. Guarantees at least one labeled scene stays
// in the training split.
struct Split {
    std::vector<std::size_t> train, val;
};

inline Split make_split(const Dataset& data) {
    Split split;
    std::vector<std::size_t> order(data.scenes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(data.spec.seed ^ 0x5eed5eedULL);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
        std::swap(order[i], order[j]);
    }
    const std::size_t n_val = std::max<std::size_t>(1, order.size() / 5);
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? split.val : split.train).push_back(order[i]);

    bool labeled_in_train = false;
    for (std::size_t i : split.train) labeled_in_train |= data.scenes[i].is_labeled;
    if (!labeled_in_train) {
        for (auto it = split.val.begin(); it != split.val.end(); ++it) {
            if (data.scenes[*it].is_labeled) {
                split.train.push_back(*it);
                split.val.erase(it);
                break;
            }
        }
    }
    check(!split.train.empty() && !split.val.empty(), "make_split: degenerate dataset");
    return split;
}

}  // namespace detail

// Deterministic subsample of validation pixels used for the clustering
// metrics and the embedding dump.
inline std::vector<std::pair<std::size_t, std::size_t>> eval_pixel_sample(
    const Dataset& data, const std::vector<std::size_t>& val_scenes, std::size_t cap = 1500) {
    const std::size_t pixels = static_cast<std::size_t>(data.spec.grid) * data.spec.grid;
    const std::size_t total = val_scenes.size() * pixels;
    const std::size_t stride = std::max<std::size_t>(1, total / cap);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t k = 0; k < total; k += stride)
        out.emplace_back(val_scenes[k / pixels], k % pixels);
    return out;
}

// Evaluation is a pure function of the parameters and dataset, so a trained
// run's final row and a later checkpoint eval agree bit for bit.
inline EvalMetrics evaluate_model(const ModelParams& params, const Dataset& data,
                                  const std::vector<std::size_t>& val_scenes) {
    ConfusionMatrix cm(data.spec.num_classes);
    std::map<std::size_t, ForwardResult> cached;
    for (std::size_t si : val_scenes) {
        const ToyScene& scene = data.scenes[si];
        ForwardResult fwd = forward(params, scene.features);
        for (std::size_t p = 0; p < scene.labels.size(); ++p) {
            int best = 0;
            for (std::size_t c = 1; c < fwd.logits[p].size(); ++c)
                if (fwd.logits[p][c] > fwd.logits[p][best]) best = static_cast<int>(c);
            cm.add(scene.labels[p], best);
        }
        cached.emplace(si, std::move(fwd));
    }

    std::vector<std::pair<Vec, int>> points;
    for (const auto& [si, pi] : eval_pixel_sample(data, val_scenes))
        points.emplace_back(cached.at(si).reprs[pi].mu, data.scenes[si].labels[pi]);

    EvalMetrics m;
    m.miou = miou(cm);
    try {
        m.silhouette = silhouette(points);
        m.dbi = davies_bouldin(points);
    } catch (const ContractError&) {
        m.silhouette = std::numeric_limits<double>::quiet_NaN();
        m.dbi = std::numeric_limits<double>::quiet_NaN();
    }
    return m;
}

struct TrainResult {
    std::vector<TraceRow> trace;
    Checkpoint final_checkpoint;
    std::vector<std::size_t> val_scenes;
};

class Trainer {
  public:
    Trainer(RunConfig cfg, Dataset data)
        : cfg_(std::move(cfg)),
          data_(std::move(data)),
          rng_(cfg_.hp.seed),
          split_(detail::make_split(data_)) {
        cfg_.validate();
        check(static_cast<std::uint32_t>(data_.spec.num_classes) >= 2, "Trainer: bad dataset");
        Rng init_rng(cfg_.hp.seed ^ 0x1417ULL);
        student_ = ModelParams::init(static_cast<int>(data_.spec.feature_dim), cfg_.hidden_dim,
                                     static_cast<int>(data_.spec.num_classes), cfg_.repr_dim,
                                     init_rng);
        teacher_.params = student_;
        teacher_.momentum = cfg_.hp.teacher_momentum;
        bank_.strategy = cfg_.strategy.prototype == PrototypeStrategy::Ema
                             ? PrototypeStrategy::Ema
                             : PrototypeStrategy::Gdp;
        if (cfg_.strategy.negatives == NegativeSource::MemoryBank)
            mbank_.emplace(cfg_.strategy.memory_bank_capacity);
        for (std::size_t i : split_.train)
            (data_.scenes[i].is_labeled ? labeled_train_ : unlabeled_train_).push_back(i);
        check(!labeled_train_.empty(), "Trainer: no labeled training scenes");
    }

    TrainResult run() {
        TrainResult result;
        result.val_scenes = split_.val;
        auto window_start = std::chrono::steady_clock::now();
        std::uint64_t window_iters = 0;

        for (std::uint64_t iter = 1; iter <= cfg_.total_iters; ++iter) {
            step(iter);
            ++window_iters;
            if (iter % cfg_.eval_every == 0 || iter == cfg_.total_iters) {
                const auto now = std::chrono::steady_clock::now();
                TraceRow row;
                row.iteration = iter;
                row.loss_s = last_ls_;
                row.loss_u = last_lu_;
                row.loss_c = last_lc_;
                row.lambda = last_lambda_;
                row.eval = evaluate_model(student_, data_, split_.val);
                row.proto_shift_mean = last_shift_;
                row.neg_state_bytes = negative_state_bytes();
                row.ms_per_iter =
                    std::chrono::duration<double, std::milli>(now - window_start).count() /
                    static_cast<double>(window_iters);
                result.trace.push_back(row);
                window_start = std::chrono::steady_clock::now();
                window_iters = 0;
            }
        }

        result.final_checkpoint.grid = data_.spec.grid;
        result.final_checkpoint.iteration = cfg_.total_iters;
        result.final_checkpoint.student = student_;
        result.final_checkpoint.teacher = teacher_.params;
        result.final_checkpoint.bank = bank_;
        return result;
    }

    std::size_t negative_state_bytes() const {
        switch (cfg_.strategy.negatives) {
            case NegativeSource::Vn:
                return bank_.state_bytes();
            case NegativeSource::MemoryBank:
                return mbank_->state_bytes();
            case NegativeSource::None:
                return 0;
        }
        return 0;
    }

    const ModelParams& student() const { return student_; }
    const PrototypeBank& bank() const { return bank_; }

  private:
    struct BatchView {
        std::vector<int> classes;       // combined GT/pseudo class per pixel
        Vec confidences;                // student conf (labeled) / teacher conf (unlabeled)
        std::size_t n_labeled = 0;
    };

    void step(std::uint64_t iter) {
        const ToyScene& scene_l = data_.scenes[labeled_train_[rng_.below(labeled_train_.size())]];
        const ToyScene* scene_u = nullptr;
        if (!unlabeled_train_.empty())
            scene_u = &data_.scenes[unlabeled_train_[rng_.below(unlabeled_train_.size())]];

        ForwardResult fwd_l = forward(student_, scene_l.features);
        std::vector<int> labels_l(scene_l.labels.begin(), scene_l.labels.end());
        CeResult sup = supervised_ce(fwd_l.logits, labels_l);

        ForwardResult fwd_u;
        CeResult unsup;
        std::vector<int> pseudo;
        Vec pseudo_conf;
        if (scene_u != nullptr) {
            ForwardResult teacher_fwd = forward(teacher_.params, scene_u->features);
            pseudo_label(teacher_fwd.logits, pseudo, pseudo_conf);
            fwd_u = forward(student_, scene_u->features);
            unsup = unsupervised_weighted_ce(fwd_u.logits, pseudo, pseudo_conf, cfg_.hp.delta_u);
        }

        // combined representation batch: labeled pixels first
        BatchView batch;
        batch.n_labeled = fwd_l.reprs.size();
        std::vector<ScoredRepr> scored;
        for (std::size_t p = 0; p < fwd_l.reprs.size(); ++p) {
            Vec probs = fwd_l.logits[p];
            detail_softmax(probs);
            double conf = 0.0;
            for (double x : probs) conf = std::max(conf, x);
            scored.push_back({maybe_flatten(fwd_l.reprs[p]), conf, p});
            batch.classes.push_back(labels_l[p]);
            batch.confidences.push_back(conf);
        }
        if (scene_u != nullptr) {
            for (std::size_t p = 0; p < fwd_u.reprs.size(); ++p) {
                scored.push_back(
                    {maybe_flatten(fwd_u.reprs[p]), pseudo_conf[p], batch.n_labeled + p});
                batch.classes.push_back(pseudo[p]);
                batch.confidences.push_back(pseudo_conf[p]);
            }
        }

        // validity filter, grouped by class
        std::map<int, std::vector<ScoredRepr>> valid_by_class;
        {
            std::vector<ScoredRepr> valid = filter_valid(scored, cfg_.hp.delta_w);
            for (auto& r : valid) valid_by_class[batch.classes[r.pixel_index]].push_back(std::move(r));
        }

        // local prototypes and prototype updates
        PrototypeBank iteration_bank;  // used when prototype strategy is none
        PrototypeBank* positive_bank = &iteration_bank;
        const PrototypeBank before = bank_;
        for (const auto& [cls, members] : valid_by_class) {
            std::vector<ProbRepr> reps;
            reps.reserve(members.size());
            for (const auto& m : members) reps.push_back(m.repr);
            const ProbRepr local = local_prototype(reps);
            if (cfg_.strategy.prototype == PrototypeStrategy::None) {
                iteration_bank.absorb(cls, local);
            } else {
                bank_.absorb(cls, local, cfg_.hp.ema_proto_momentum);
            }
        }
        if (cfg_.strategy.prototype != PrototypeStrategy::None) positive_bank = &bank_;

        // mean prototype displacement over classes updated this iteration
        {
            double acc = 0.0;
            int n = 0;
            for (const auto& [cls, members] : valid_by_class) {
                if (auto shift = prototype_shift(before, bank_, cls)) {
                    acc += *shift;
                    ++n;
                }
            }
            last_shift_ = n > 0 ? acc / n : 0.0;
        }

        // contrastive loss, class by class (the per-class terms are averaged)
        double lc = 0.0;
        std::vector<Vec> d_mu(scored.size()), d_sigma2(scored.size());
        int anchor_classes = 0;
        std::vector<std::pair<int, SampleSet>> class_samples;
        for (const auto& [cls, members] : valid_by_class) {
            if (positive_bank->find(cls) == nullptr) continue;
            SampleSet ss;
            const auto anchors = sample_anchors(members, cfg_.hp.delta_s,
                                                static_cast<std::size_t>(cfg_.hp.anchors_per_class),
                                                rng_);
            if (anchors.empty()) continue;
            for (const auto& a : anchors)
                ss.anchors.push_back({cls, a.pixel_index, a.repr});

            const auto dist =
                negative_class_distribution(cls, *positive_bank, cfg_.hp.temperature_n);
            if (!dist.empty()) {
                std::map<int, std::vector<ProbRepr>> pools;
                for (const auto& [nc, ms] : valid_by_class) {
                    if (nc == cls) continue;
                    for (const auto& m : ms) pools[nc].push_back(m.repr);
                }
                ss.real_negatives = sample_real_negatives(
                    pools, dist, static_cast<std::size_t>(cfg_.hp.negatives_total), rng_);
                if (mbank_.has_value()) {
                    for (std::size_t k = 0;
                         k < static_cast<std::size_t>(cfg_.hp.negatives_total); ++k) {
                        double u = rng_.uniform();
                        int drawn = dist.rbegin()->first;
                        for (const auto& [nc, p] : dist) {
                            if (u < p) {
                                drawn = nc;
                                break;
                            }
                            u -= p;
                        }
                        auto extra = mbank_->sample(drawn, 1, rng_);
                        for (auto& r : extra) ss.real_negatives[drawn].push_back(std::move(r));
                    }
                }
            }
            if (cfg_.strategy.negatives == NegativeSource::Vn) {
                for (const auto& [nc, proto] : positive_bank->entries) {
                    if (nc == cls || !proto.initialized()) continue;
                    ss.virtual_negatives[nc] =
                        generate_vn(proto, cfg_.hp.beta,
                                    static_cast<std::size_t>(cfg_.hp.vn_count), rng_,
                                    cfg_.hp.vn_scale);
                }
            }
            class_samples.emplace_back(cls, std::move(ss));
        }
        anchor_classes = static_cast<int>(class_samples.size());
        const double lambda_t =
            lambda_schedule(iter, cfg_.total_iters, cfg_.hp.lambda_c0, cfg_.hp.alpha_sched);
        if (anchor_classes > 0) {
            const double class_scale = 1.0 / static_cast<double>(anchor_classes);
            for (auto& [cls, ss] : class_samples) {
                ContrastiveResult cr = contrastive_loss(ss, *positive_bank, cfg_.hp);
                lc += class_scale * cr.loss;
                for (std::size_t a = 0; a < ss.anchors.size(); ++a) {
                    const std::size_t pix = ss.anchors[a].pixel_index;
                    if (d_mu[pix].empty()) {
                        d_mu[pix].assign(cfg_.repr_dim, 0.0);
                        d_sigma2[pix].assign(cfg_.repr_dim, 0.0);
                    }
                    const double w = lambda_t * class_scale;
                    for (int l = 0; l < cfg_.repr_dim; ++l) {
                        d_mu[pix][l] += w * cr.d_mu[a][l];
                        d_sigma2[pix][l] += w * cr.d_sigma2[a][l];
                    }
                }
            }
        }

        last_ls_ = sup.loss;
        last_lu_ = unsup.loss;
        last_lc_ = lc;
        last_lambda_ = lambda_t;
        const double total = total_loss(sup.loss, unsup.loss, lc, lambda_t);
        if (!std::isfinite(total)) throw NumericError("training diverged: non-finite loss");

        // backward through both scene batches
        ParamGrads grads = ParamGrads::zeros_like(student_);
        const bool prob_grads = cfg_.strategy.representation == Representation::Probabilistic;
        {
            std::vector<Vec> dm(batch.n_labeled), ds(batch.n_labeled);
            for (std::size_t p = 0; p < batch.n_labeled; ++p) {
                dm[p] = d_mu[p];
                if (prob_grads) ds[p] = d_sigma2[p];
            }
            backward(student_, fwd_l.cache, sup.d_logits, dm, ds, grads);
        }
        if (scene_u != nullptr) {
            const std::size_t n_u = fwd_u.reprs.size();
            std::vector<Vec> dm(n_u), ds(n_u);
            for (std::size_t p = 0; p < n_u; ++p) {
                dm[p] = d_mu[batch.n_labeled + p];
                if (prob_grads) ds[p] = d_sigma2[batch.n_labeled + p];
            }
            backward(student_, fwd_u.cache, unsup.d_logits, dm, ds, grads);
        }
        sgd_step(student_, grads, cfg_.hp.lr_main, cfg_.hp.lr_prob_head, iter, cfg_.total_iters);
        teacher_ema_step(teacher_, student_);

        if (mbank_.has_value()) {
            for (const auto& [cls, members] : valid_by_class)
                for (const auto& m : members) mbank_->enqueue(cls, m.repr);
        }
    }

    // deterministic-representation mode replaces every variance with 1
    ProbRepr maybe_flatten(const ProbRepr& r) const {
        if (cfg_.strategy.representation == Representation::Probabilistic) return r;
        return ProbRepr(r.mu, Vec(r.dim(), 1.0));
    }

    static void detail_softmax(Vec& v) { detail::softmax(v); }

    RunConfig cfg_;
    Dataset data_;
    Rng rng_;
    detail::Split split_;
    std::vector<std::size_t> labeled_train_, unlabeled_train_;
    ModelParams student_;
    TeacherState teacher_;
    PrototypeBank bank_;
    std::optional<MemoryBank> mbank_;
    double last_ls_ = 0.0, last_lu_ = 0.0, last_lc_ = 0.0, last_lambda_ = 0.0,
           last_shift_ = 0.0;
};

inline const char* kMetricsHeader =
    "iteration,loss_s,loss_u,loss_c,lambda,miou_val,silhouette,dbi,proto_shift_mean,"
    "neg_state_bytes";

inline void write_metrics_csv(const std::vector<TraceRow>& trace,
                              const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string());
    os << kMetricsHeader << "\n";
    for (const auto& r : trace) {
        os << r.iteration << ',' << detail::fmt(r.loss_s) << ',' << detail::fmt(r.loss_u) << ','
           << detail::fmt(r.loss_c) << ',' << detail::fmt(r.lambda) << ','
           << detail::fmt(r.eval.miou) << ',' << detail::fmt(r.eval.silhouette) << ','
           << detail::fmt(r.eval.dbi) << ',' << detail::fmt(r.proto_shift_mean) << ','
           << r.neg_state_bytes << "\n";
    }
}

// Wall-clock timing is kept out of metrics.csv so that identical runs
// produce byte-identical metric files.
inline void write_timing_csv(const std::vector<TraceRow>& trace,
                             const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string());
    os << "iteration,ms_per_iter\n";
    for (const auto& r : trace) os << r.iteration << ',' << detail::fmt(r.ms_per_iter) << "\n";
}

// Line-delimited embedding dump: a schema header line, then one record per
// sampled validation pixel.
inline void write_embedding_dump(const ModelParams& params, const Dataset& data,
                                 const std::vector<std::size_t>& val_scenes,
                                 const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string());
    os << R"({"schema":"prcl-embeddings","version":1})" << "\n";
    std::map<std::size_t, ForwardResult> cached;
    auto vec_json = [](const Vec& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i > 0) s += ',';
            s += detail::fmt(v[i]);
        }
        return s + "]";
    };
    for (const auto& [si, pi] : eval_pixel_sample(data, val_scenes)) {
        auto it = cached.find(si);
        if (it == cached.end())
            it = cached.emplace(si, forward(params, data.scenes[si].features)).first;
        const ForwardResult& fwd = it->second;
        int pred = 0;
        for (std::size_t c = 1; c < fwd.logits[pi].size(); ++c)
            if (fwd.logits[pi][c] > fwd.logits[pi][pred]) pred = static_cast<int>(c);
        os << "{\"scene\":" << si << ",\"pixel\":" << pi
           << ",\"mu\":" << vec_json(fwd.reprs[pi].mu)
           << ",\"sigma2\":" << vec_json(fwd.reprs[pi].sigma2) << ",\"pred\":" << pred
           << ",\"gt\":" << static_cast<int>(data.scenes[si].labels[pi]) << "}\n";
    }
}

}  // namespace prcl
