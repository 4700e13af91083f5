#pragma once

#include <cstdint>
#include <filesystem>

#include "prcl/binio.hpp"
#include "prcl/common.hpp"

namespace prcl {

struct DatasetSpec {
    std::uint32_t num_scenes = 200;
    double labeled_fraction = 0.05;
    std::uint32_t num_classes = 6;
    std::uint32_t grid = 16;          // scenes are grid x grid
    std::uint32_t feature_dim = 8;
    double class_separation = 4.0;    // approximate mean centroid distance
    double noise_sigma = 1.0;
    double boundary_blur = 0.15;      // feature-mixing probability at region edges
    std::uint64_t seed = 1;

    void validate() const {
        check(num_classes >= 2, "DatasetSpec: need at least 2 classes");
        check(num_classes <= grid * grid, "DatasetSpec: more classes than pixels");
        check(labeled_fraction > 0.0 && labeled_fraction <= 1.0,
              "DatasetSpec: labeled_fraction outside (0,1]");
        check(num_scenes > 0, "DatasetSpec: need at least one scene");
        check(grid > 0 && feature_dim > 0, "DatasetSpec: zero grid or feature dim");
        check(noise_sigma >= 0.0, "DatasetSpec: negative noise");
        check(boundary_blur >= 0.0 && boundary_blur <= 1.0,
              "DatasetSpec: boundary_blur outside [0,1]");
    }
};

// One synthetic segmentation sample. Ground-truth labels are kept for
// unlabeled scenes too (used only for evaluation).
struct ToyScene {
    std::vector<std::uint8_t> labels;  // G*G class ids
    std::vector<Vec> features;         // G*G vectors of dimension F
    bool is_labeled = false;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<ToyScene> scenes;

    std::size_t labeled_count() const {
        std::size_t n = 0;
        for (const auto& s : scenes) n += s.is_labeled ? 1 : 0;
        return n;
    }
};

namespace detail {

// quantize to float32 so the on-disk format round-trips bit-exactly
inline double quantize(double x) { return static_cast<double>(static_cast<float>(x)); }

inline std::vector<Vec> class_centroids(const DatasetSpec& spec, Rng& rng) {
    // i.i.d. Gaussian centroids; mean pairwise distance of N(0, s^2 I_F)
    // points is about s*sqrt(2F)
    const double s = spec.class_separation /
                     std::sqrt(2.0 * static_cast<double>(spec.feature_dim));
    std::vector<Vec> centroids(spec.num_classes, Vec(spec.feature_dim));
    for (auto& c : centroids)
        for (double& x : c) x = s * rng.normal();
    return centroids;
}

inline void paint_scene(const DatasetSpec& spec, Rng& rng, std::vector<std::uint8_t>& labels) {
    const int g = static_cast<int>(spec.grid);
    labels.assign(static_cast<std::size_t>(g) * g,
                  static_cast<std::uint8_t>(rng.below(spec.num_classes)));
    // layered axis-aligned rectangles
    const std::uint32_t layers = spec.num_classes + 2;
    for (std::uint32_t k = 0; k < layers; ++k) {
        const auto cls = static_cast<std::uint8_t>(rng.below(spec.num_classes));
        const int x0 = static_cast<int>(rng.below(g));
        const int y0 = static_cast<int>(rng.below(g));
        const int w = 1 + static_cast<int>(rng.below(g / 2 + 1));
        const int h = 1 + static_cast<int>(rng.below(g / 2 + 1));
        for (int y = y0; y < std::min(y0 + h, g); ++y)
            for (int x = x0; x < std::min(x0 + w, g); ++x)
                labels[static_cast<std::size_t>(y) * g + x] = cls;
    }
}

}  // namespace detail

// Deterministic synthetic benchmark. Scenes are layered random rectangles of
// class regions; features are class centroid plus Gaussian noise, with
// boundary pixels mixed toward an adjacent class's centroid with probability
// boundary_blur. Re-rolls (bounded) until every class appears somewhere.
inline Dataset generate(const DatasetSpec& spec) {
    spec.validate();
    constexpr int kMaxRerolls = 64;
    for (int attempt = 0; attempt < kMaxRerolls; ++attempt) {
        Rng rng(spec.seed + static_cast<std::uint64_t>(attempt) * 0x9e3779b97f4a7c15ULL);
        const auto centroids = detail::class_centroids(spec, rng);
        const int g = static_cast<int>(spec.grid);

        Dataset ds;
        ds.spec = spec;
        ds.scenes.resize(spec.num_scenes);
        std::vector<bool> class_seen(spec.num_classes, false);

        for (auto& scene : ds.scenes) {
            detail::paint_scene(spec, rng, scene.labels);
            scene.features.resize(scene.labels.size());
            for (int y = 0; y < g; ++y) {
                for (int x = 0; x < g; ++x) {
                    const std::size_t idx = static_cast<std::size_t>(y) * g + x;
                    const std::uint8_t cls = scene.labels[idx];
                    class_seen[cls] = true;

                    // adjacent classes differing from this pixel's class
                    std::vector<std::uint8_t> other;
                    const int dx[] = {1, -1, 0, 0};
                    const int dy[] = {0, 0, 1, -1};
                    for (int k = 0; k < 4; ++k) {
                        const int nx = x + dx[k], ny = y + dy[k];
                        if (nx < 0 || ny < 0 || nx >= g || ny >= g) continue;
                        const std::uint8_t nc = scene.labels[static_cast<std::size_t>(ny) * g + nx];
                        if (nc != cls) other.push_back(nc);
                    }

                    Vec base = centroids[cls];
                    if (!other.empty() && rng.uniform() < spec.boundary_blur) {
                        const std::uint8_t mix = other[rng.below(other.size())];
                        for (std::uint32_t l = 0; l < spec.feature_dim; ++l)
                            base[l] = 0.5 * base[l] + 0.5 * centroids[mix][l];
                    }
                    Vec f(spec.feature_dim);
                    for (std::uint32_t l = 0; l < spec.feature_dim; ++l)
                        f[l] = detail::quantize(base[l] + spec.noise_sigma * rng.normal());
                    scene.features[idx] = std::move(f);
                }
            }
        }

        bool all_seen = true;
        for (bool seen : class_seen) all_seen = all_seen && seen;
        if (!all_seen) continue;

        // seed-determined labeled split
        std::vector<std::size_t> order(spec.num_scenes);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
            std::swap(order[i], order[j]);
        }
        const auto n_labeled = std::max<std::size_t>(
            1, static_cast<std::size_t>(
                   std::llround(spec.labeled_fraction * static_cast<double>(spec.num_scenes))));
        for (std::size_t i = 0; i < std::min(n_labeled, order.size()); ++i)
            ds.scenes[order[i]].is_labeled = true;
        return ds;
    }
    throw ContractError("generate: could not cover every class; spec infeasible");
}

inline constexpr char kDatasetMagic[8] = {'P', 'R', 'C', 'L', 'D', 'A', 'T', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void export_scenes(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("export_scenes: cannot open " + path.string());
    binio::write_magic(os, kDatasetMagic);
    binio::write<std::uint32_t>(os, kDatasetVersion);
    binio::write<std::uint32_t>(os, ds.spec.num_scenes);
    binio::write<std::uint32_t>(os, ds.spec.num_classes);
    binio::write<std::uint32_t>(os, ds.spec.grid);
    binio::write<std::uint32_t>(os, ds.spec.feature_dim);
    binio::write<double>(os, ds.spec.labeled_fraction);
    binio::write<double>(os, ds.spec.class_separation);
    binio::write<double>(os, ds.spec.noise_sigma);
    binio::write<double>(os, ds.spec.boundary_blur);
    binio::write<std::uint64_t>(os, ds.spec.seed);
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(ds.scenes.size()));
    for (const auto& scene : ds.scenes) {
        binio::write<std::uint8_t>(os, scene.is_labeled ? 1 : 0);
        binio::write_bytes(os, scene.labels.data(), scene.labels.size());
        for (const Vec& f : scene.features)
            for (double x : f) binio::write<float>(os, static_cast<float>(x));
    }
    if (!os) throw IoError("export_scenes: write failed for " + path.string());
}

inline Dataset import_scenes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("import_scenes: cannot open " + path.string());
    binio::expect_magic(is, kDatasetMagic, "dataset");
    const auto version = binio::read<std::uint32_t>(is, "version");
    if (version != kDatasetVersion)
        throw ParseError("import_scenes: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.spec.num_scenes = binio::read<std::uint32_t>(is, "num_scenes");
    ds.spec.num_classes = binio::read<std::uint32_t>(is, "num_classes");
    ds.spec.grid = binio::read<std::uint32_t>(is, "grid");
    ds.spec.feature_dim = binio::read<std::uint32_t>(is, "feature_dim");
    ds.spec.labeled_fraction = binio::read<double>(is, "labeled_fraction");
    ds.spec.class_separation = binio::read<double>(is, "class_separation");
    ds.spec.noise_sigma = binio::read<double>(is, "noise_sigma");
    ds.spec.boundary_blur = binio::read<double>(is, "boundary_blur");
    ds.spec.seed = binio::read<std::uint64_t>(is, "seed");
    const auto n = binio::read<std::uint32_t>(is, "scene count");
    const std::size_t pixels = static_cast<std::size_t>(ds.spec.grid) * ds.spec.grid;
    ds.scenes.resize(n);
    for (auto& scene : ds.scenes) {
        scene.is_labeled = binio::read<std::uint8_t>(is, "is_labeled") != 0;
        scene.labels.resize(pixels);
        binio::read_bytes(is, scene.labels.data(), pixels, "labels");
        for (std::uint8_t c : scene.labels)
            if (c >= ds.spec.num_classes) throw ParseError("import_scenes: label out of range");
        scene.features.resize(pixels);
        for (Vec& f : scene.features) {
            f.resize(ds.spec.feature_dim);
            for (double& x : f) x = static_cast<double>(binio::read<float>(is, "feature"));
        }
    }
    return ds;
}

}  // namespace prcl
