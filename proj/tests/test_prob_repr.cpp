#include <doctest.h>

#include "prcl/prob_repr.hpp"

using namespace prcl;

namespace {

ProbRepr random_repr(std::size_t d, Rng& rng) {
    Vec mu(d), s2(d);
    for (auto& x : mu) x = rng.uniform(-3.0, 3.0);
    for (auto& x : s2) x = std::exp(rng.uniform(-2.0, 2.0));
    return ProbRepr(std::move(mu), std::move(s2));
}

}  // namespace

TEST_CASE("mls zero-distance unit-variance-sum case") {
    ProbRepr a({0.0}, {0.5});
    ProbRepr b({0.0}, {0.5});
    // -1/2 log(1) - 1/2 log(2 pi)
    CHECK(mls(a, b) == doctest::Approx(-0.9189385332046727).epsilon(1e-12));
}

TEST_CASE("mls D=2 hand-evaluated value") {
    ProbRepr a({1.0, 0.0}, {1.0, 1.0});
    ProbRepr b({0.0, 0.0}, {1.0, 1.0});
    CHECK(mls(a, b) == doctest::Approx(-2.7810242469692907).epsilon(1e-12));
}

TEST_CASE("mls symmetry on random pairs") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        ProbRepr a = random_repr(5, rng);
        ProbRepr b = random_repr(5, rng);
        CHECK(mls(a, b) == doctest::Approx(mls(b, a)).epsilon(1e-14));
    }
}

TEST_CASE("mls contract violations") {
    ProbRepr a({0.0}, {1.0});
    ProbRepr b({0.0, 0.0}, {1.0, 1.0});
    CHECK_THROWS_AS(mls(a, b), ContractError);
    CHECK_THROWS_AS(ProbRepr({1.0}, {-1.0}), ContractError);
    CHECK_THROWS_AS(ProbRepr({std::nan("")}, {1.0}), ContractError);
}

TEST_CASE("variance clamped into bounds at construction") {
    const auto before = variance_clamp_count().load();
    ProbRepr r({0.0, 0.0}, {1e-12, 1e12});
    CHECK(r.sigma2[0] == kVarianceFloor);
    CHECK(r.sigma2[1] == kVarianceCeiling);
    CHECK(variance_clamp_count().load() == before + 2);
}

TEST_CASE("mls monotonically decreases in variance at zero distance") {
    Rng rng(11);
    for (int i = 0; i < 20; ++i) {
        ProbRepr a = random_repr(4, rng);
        ProbRepr b = a;
        const double base = mls(a, b);
        for (std::size_t l = 0; l < 4; ++l) {
            ProbRepr bigger = b;
            bigger.sigma2[l] *= 1.5;
            CHECK(mls(a, bigger) < base);
        }
    }
}

TEST_CASE("mls_grad is stationary in mean at zero distance") {
    ProbRepr a({1.0, -2.0}, {0.7, 1.3});
    const MlsGrad g = mls_grad(a, a);
    for (double x : g.d_mu_a) CHECK(x == 0.0);
}

TEST_CASE("mls_grad mean gradients are opposite") {
    Rng rng(13);
    for (int i = 0; i < 20; ++i) {
        ProbRepr a = random_repr(6, rng);
        ProbRepr b = random_repr(6, rng);
        const MlsGrad g = mls_grad(a, b);
        for (std::size_t l = 0; l < 6; ++l)
            CHECK(g.d_mu_a[l] == doctest::Approx(-g.d_mu_b[l]).epsilon(1e-14));
    }
}

TEST_CASE("mls_grad matches central finite differences") {
    Rng rng(17);
    const double h = 1e-6;
    for (int trial = 0; trial < 30; ++trial) {
        ProbRepr a = random_repr(4, rng);
        ProbRepr b = random_repr(4, rng);
        const MlsGrad g = mls_grad(a, b);
        auto fd = [&](Vec& slot, std::size_t l) {
            const double orig = slot[l];
            slot[l] = orig + h;
            const double up = mls(a, b);
            slot[l] = orig - h;
            const double down = mls(a, b);
            slot[l] = orig;
            return (up - down) / (2.0 * h);
        };
        for (std::size_t l = 0; l < 4; ++l) {
            CHECK(g.d_mu_a[l] == doctest::Approx(fd(a.mu, l)).epsilon(1e-6));
            CHECK(g.d_sigma2_a[l] == doctest::Approx(fd(a.sigma2, l)).epsilon(1e-6));
            CHECK(g.d_mu_b[l] == doctest::Approx(fd(b.mu, l)).epsilon(1e-6));
            CHECK(g.d_sigma2_b[l] == doctest::Approx(fd(b.sigma2, l)).epsilon(1e-6));
        }
    }
}

TEST_CASE("fuse equal-precision average") {
    std::vector<ProbRepr> reps = {ProbRepr({0.0}, {2.0}), ProbRepr({4.0}, {2.0})};
    const ProbRepr f = fuse(reps);
    CHECK(f.sigma2[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(f.mu[0] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("fuse singleton is the identity, bit-exact") {
    ProbRepr r({0.1, -0.7}, {0.3, 2.1});
    const ProbRepr f = fuse(std::vector<ProbRepr>{r});
    CHECK(f.mu == r.mu);
    CHECK(f.sigma2 == r.sigma2);
}

TEST_CASE("fuse two unequal-variance reps, hand-evaluated") {
    std::vector<ProbRepr> reps = {ProbRepr({0.0}, {1.0}), ProbRepr({4.0}, {3.0})};
    const ProbRepr f = fuse(reps);
    CHECK(f.sigma2[0] == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(f.mu[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("fuse rejects empty input") {
    CHECK_THROWS_AS(fuse(std::vector<ProbRepr>{}), ContractError);
}

TEST_CASE("precision additivity") {
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ProbRepr> reps;
        const std::size_t n = 2 + rng.below(10);
        for (std::size_t i = 0; i < n; ++i) reps.push_back(random_repr(3, rng));
        const ProbRepr f = fuse(reps);
        for (std::size_t l = 0; l < 3; ++l) {
            double prec = 0.0;
            for (const auto& r : reps) prec += 1.0 / r.sigma2[l];
            CHECK(1.0 / f.sigma2[l] == doctest::Approx(prec).epsilon(1e-12));
        }
    }
}

TEST_CASE("fused mean stays inside the componentwise hull") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ProbRepr> reps;
        const std::size_t n = 2 + rng.below(8);
        for (std::size_t i = 0; i < n; ++i) reps.push_back(random_repr(4, rng));
        const ProbRepr f = fuse(reps);
        for (std::size_t l = 0; l < 4; ++l) {
            double lo = HUGE_VAL, hi = -HUGE_VAL;
            for (const auto& r : reps) {
                lo = std::min(lo, r.mu[l]);
                hi = std::max(hi, r.mu[l]);
            }
            CHECK(f.mu[l] >= lo - 1e-12);
            CHECK(f.mu[l] <= hi + 1e-12);
        }
    }
}

TEST_CASE("fusion of fusions equals fusion of the union") {
    Rng rng(29);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<ProbRepr> group_a, group_b, all;
        for (std::size_t i = 0; i < 4 + rng.below(4); ++i) group_a.push_back(random_repr(3, rng));
        for (std::size_t i = 0; i < 4 + rng.below(4); ++i) group_b.push_back(random_repr(3, rng));
        all = group_a;
        all.insert(all.end(), group_b.begin(), group_b.end());
        const std::vector<ProbRepr> halves = {fuse(group_a), fuse(group_b)};
        const ProbRepr streamed = fuse(halves);
        const ProbRepr batch = fuse(all);
        for (std::size_t l = 0; l < 3; ++l) {
            CHECK(streamed.mu[l] == doctest::Approx(batch.mu[l]).epsilon(1e-10));
            CHECK(streamed.sigma2[l] == doctest::Approx(batch.sigma2[l]).epsilon(1e-10));
        }
    }
}

TEST_CASE("fuse is permutation invariant, bit-reproducible") {
    Rng rng(31);
    std::vector<ProbRepr> reps;
    for (int i = 0; i < 12; ++i) reps.push_back(random_repr(4, rng));
    const ProbRepr base = fuse(reps);
    for (int trial = 0; trial < 10; ++trial) {
        for (std::size_t i = 0; i + 1 < reps.size(); ++i)
            std::swap(reps[i], reps[i + rng.below(reps.size() - i)]);
        const ProbRepr shuffled = fuse(reps);
        CHECK(shuffled.mu == base.mu);
        CHECK(shuffled.sigma2 == base.sigma2);
    }
}
