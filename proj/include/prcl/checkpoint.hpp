#pragma once

#include "prcl/binio.hpp"
#include "prcl/network.hpp"
#include "prcl/prototypes.hpp"

namespace prcl {

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'C', 'L', 'C', 'K', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t grid = 0;
    std::uint64_t iteration = 0;
    ModelParams student;
    ModelParams teacher;
    PrototypeBank bank;
};

namespace detail {
inline void write_linear(std::ostream& os, const Linear& l) {
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.in));
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.out));
    for (double x : l.w) binio::write<double>(os, x);
    for (double x : l.b) binio::write<double>(os, x);
}

inline Linear read_linear(std::istream& is) {
    Linear l;
    l.in = static_cast<int>(binio::read<std::uint32_t>(is, "layer in dim"));
    l.out = static_cast<int>(binio::read<std::uint32_t>(is, "layer out dim"));
    l.w.resize(static_cast<std::size_t>(l.in) * l.out);
    l.b.resize(l.out);
    for (double& x : l.w) x = binio::read<double>(is, "layer weight");
    for (double& x : l.b) x = binio::read<double>(is, "layer bias");
    return l;
}

inline void write_model(std::ostream& os, const ModelParams& m) {
    write_linear(os, m.enc);
    write_linear(os, m.seg);
    write_linear(os, m.repr1);
    write_linear(os, m.repr2);
    write_linear(os, m.prob1);
    write_linear(os, m.prob2);
}

inline ModelParams read_model(std::istream& is, std::uint32_t f, std::uint32_t h,
                              std::uint32_t c, std::uint32_t d) {
    ModelParams m;
    m.feature_dim = static_cast<int>(f);
    m.hidden_dim = static_cast<int>(h);
    m.num_classes = static_cast<int>(c);
    m.repr_dim = static_cast<int>(d);
    m.enc = read_linear(is);
    m.seg = read_linear(is);
    m.repr1 = read_linear(is);
    m.repr2 = read_linear(is);
    m.prob1 = read_linear(is);
    m.prob2 = read_linear(is);
    return m;
}
}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_checkpoint: cannot open " + path.string());
    binio::write_magic(os, kCheckpointMagic);
    binio::write<std::uint32_t>(os, kCheckpointVersion);
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.student.repr_dim));
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.student.num_classes));
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.student.feature_dim));
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.student.hidden_dim));
    binio::write<std::uint32_t>(os, ckpt.grid);
    binio::write<std::uint64_t>(os, ckpt.iteration);
    detail::write_model(os, ckpt.student);
    detail::write_model(os, ckpt.teacher);

    std::uint32_t n_protos = 0;
    for (const auto& [id, p] : ckpt.bank.entries)
        if (p.initialized()) ++n_protos;
    binio::write<std::uint32_t>(os, n_protos);
    // flat records: class id, update count, mu, sigma2
    for (const auto& [id, p] : ckpt.bank.entries) {
        if (!p.initialized()) continue;
        binio::write<std::int64_t>(os, id);
        binio::write<std::uint64_t>(os, p.n_updates);
        for (double x : p.mu_hat) binio::write<double>(os, x);
        for (double x : p.sigma2_hat) binio::write<double>(os, x);
    }
    if (!os) throw IoError("save_checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path.string());
    binio::expect_magic(is, kCheckpointMagic, "checkpoint");
    const auto version = binio::read<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion)
        throw ParseError("load_checkpoint: unsupported version " + std::to_string(version));
    const auto d = binio::read<std::uint32_t>(is, "repr dim");
    const auto c = binio::read<std::uint32_t>(is, "num classes");
    const auto f = binio::read<std::uint32_t>(is, "feature dim");
    const auto h = binio::read<std::uint32_t>(is, "hidden dim");
    Checkpoint ckpt;
    ckpt.grid = binio::read<std::uint32_t>(is, "grid");
    ckpt.iteration = binio::read<std::uint64_t>(is, "iteration");
    ckpt.student = detail::read_model(is, f, h, c, d);
    ckpt.teacher = detail::read_model(is, f, h, c, d);

    const auto n_protos = binio::read<std::uint32_t>(is, "prototype count");
    for (std::uint32_t i = 0; i < n_protos; ++i) {
        GlobalPrototype p;
        p.class_id = static_cast<int>(binio::read<std::int64_t>(is, "prototype class"));
        p.n_updates = binio::read<std::uint64_t>(is, "prototype updates");
        p.mu_hat.resize(d);
        p.sigma2_hat.resize(d);
        for (double& x : p.mu_hat) x = binio::read<double>(is, "prototype mean");
        for (double& x : p.sigma2_hat) x = binio::read<double>(is, "prototype variance");
        ckpt.bank.entries[p.class_id] = std::move(p);
    }
    return ckpt;
}

}  // namespace prcl
