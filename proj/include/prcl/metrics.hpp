#pragma once

#include <map>
#include <utility>

#include "prcl/common.hpp"

namespace prcl {

// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;  // row-major C x C

    explicit ConfusionMatrix(std::size_t c)
        : num_classes(c), counts(c * c, 0) {
        check(c > 0, "ConfusionMatrix: zero classes");
    }

    void add(int truth, int pred) {
        check(truth >= 0 && static_cast<std::size_t>(truth) < num_classes &&
                  pred >= 0 && static_cast<std::size_t>(pred) < num_classes,
              "ConfusionMatrix: class out of range");
        ++counts[static_cast<std::size_t>(truth) * num_classes + pred];
    }

    std::uint64_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * num_classes + pred];
    }

    std::uint64_t total() const {
        std::uint64_t n = 0;
        for (auto c : counts) n += c;
        return n;
    }
};

// Mean over classes present in GT or prediction of TP/(TP+FP+FN).
inline double miou(const ConfusionMatrix& cm) {
    const std::size_t c = cm.num_classes;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < c; ++k) {
        std::uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
        for (std::size_t j = 0; j < c; ++j) {
            if (j == k) continue;
            fn += cm.at(k, j);
            fp += cm.at(j, k);
        }
        const std::uint64_t denom = tp + fp + fn;
        if (denom == 0) continue;  // absent from both GT and prediction
        sum += static_cast<double>(tp) / static_cast<double>(denom);
        ++used;
    }
    check(used > 0, "miou: empty confusion matrix");
    return sum / static_cast<double>(used);
}

namespace detail {
inline double euclidean(const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}
}  // namespace detail

// Mean silhouette coefficient with Euclidean distances. Points in singleton
// clusters contribute 0, as does the a==b degenerate case.
inline double silhouette(const std::vector<std::pair<Vec, int>>& points) {
    std::map<int, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < points.size(); ++i) clusters[points[i].second].push_back(i);
    check(clusters.size() >= 2, "silhouette: need at least two classes");

    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const int own = points[i].second;
        if (clusters.at(own).size() < 2) continue;  // singleton contributes 0

        double a = 0.0;
        for (std::size_t j : clusters.at(own))
            if (j != i) a += detail::euclidean(points[i].first, points[j].first);
        a /= static_cast<double>(clusters.at(own).size() - 1);

        double b = HUGE_VAL;
        for (const auto& [cls, members] : clusters) {
            if (cls == own) continue;
            double mean = 0.0;
            for (std::size_t j : members) mean += detail::euclidean(points[i].first, points[j].first);
            b = std::min(b, mean / static_cast<double>(members.size()));
        }
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(points.size());
}

// Davies-Bouldin index: centroid Euclidean distances, arithmetic-mean
// intra-cluster scatter. Coinciding centroids are a contract violation.
inline double davies_bouldin(const std::vector<std::pair<Vec, int>>& points) {
    std::map<int, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < points.size(); ++i) clusters[points[i].second].push_back(i);
    check(clusters.size() >= 2, "davies_bouldin: need at least two classes");

    std::vector<Vec> centroids;
    std::vector<double> scatter;
    for (const auto& [cls, members] : clusters) {
        Vec c(points[members.front()].first.size(), 0.0);
        for (std::size_t j : members)
            for (std::size_t l = 0; l < c.size(); ++l) c[l] += points[j].first[l];
        for (double& x : c) x /= static_cast<double>(members.size());
        double s = 0.0;
        for (std::size_t j : members) s += detail::euclidean(points[j].first, c);
        scatter.push_back(s / static_cast<double>(members.size()));
        centroids.push_back(std::move(c));
    }

    const std::size_t k = centroids.size();
    double dbi = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double worst = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            const double d = detail::euclidean(centroids[i], centroids[j]);
            check(d > 0.0, "davies_bouldin: coinciding centroids");
            worst = std::max(worst, (scatter[i] + scatter[j]) / d);
        }
        dbi += worst;
    }
    return dbi / static_cast<double>(k);
}

}  // namespace prcl
