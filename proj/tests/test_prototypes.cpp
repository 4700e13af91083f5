#include <doctest.h>

#include <limits>

#include "prcl/prototypes.hpp"

using namespace prcl;

namespace {

ProbRepr random_repr(std::size_t d, Rng& rng) {
    Vec mu(d), s2(d);
    for (auto& x : mu) x = rng.uniform(-3.0, 3.0);
    for (auto& x : s2) x = std::exp(rng.uniform(-2.0, 2.0));
    return ProbRepr(std::move(mu), std::move(s2));
}

GlobalPrototype stream(const std::vector<ProbRepr>& reps,
                       const std::vector<std::size_t>& chunk_sizes) {
    GlobalPrototype gdp;
    std::size_t pos = 0;
    for (std::size_t n : chunk_sizes) {
        std::vector<ProbRepr> chunk(reps.begin() + pos, reps.begin() + pos + n);
        pos += n;
        gdp = gdp_update(gdp, local_prototype(chunk));
    }
    REQUIRE(pos == reps.size());
    return gdp;
}

}  // namespace

TEST_CASE("local_prototype identity and averaging") {
    ProbRepr r({1.0, 2.0}, {0.5, 0.25});
    const ProbRepr single = local_prototype({r});
    CHECK(single.mu == r.mu);
    CHECK(single.sigma2 == r.sigma2);

    const ProbRepr pair = local_prototype({ProbRepr({0.0}, {2.0}), ProbRepr({4.0}, {2.0})});
    CHECK(pair.mu[0] == doctest::Approx(2.0));
    CHECK(pair.sigma2[0] == doctest::Approx(1.0));
}

TEST_CASE("local_prototype three reps with variances 1,2,4") {
    const ProbRepr p = local_prototype(
        {ProbRepr({1.0}, {1.0}), ProbRepr({2.0}, {2.0}), ProbRepr({3.0}, {4.0})});
    CHECK(1.0 / p.sigma2[0] == doctest::Approx(1.75).epsilon(1e-14));
    CHECK(p.sigma2[0] == doctest::Approx(4.0 / 7.0).epsilon(1e-14));
    // mu = s2 * (1/1 + 2/2 + 3/4)
    CHECK(p.mu[0] == doctest::Approx((4.0 / 7.0) * 2.75).epsilon(1e-14));
}

TEST_CASE("gdp_update equal-precision average") {
    GlobalPrototype prev;
    prev.class_id = 0;
    prev.mu_hat = {0.0};
    prev.sigma2_hat = {1.0};
    prev.n_updates = 1;
    const GlobalPrototype next = gdp_update(prev, ProbRepr({2.0}, {1.0}));
    CHECK(next.mu_hat[0] == doctest::Approx(1.0));
    CHECK(next.sigma2_hat[0] == doctest::Approx(0.5));
    CHECK(next.n_updates == 2);
}

TEST_CASE("first gdp_update copies the local prototype exactly") {
    GlobalPrototype empty;
    const ProbRepr local({3.0}, {0.2});
    const GlobalPrototype g = gdp_update(empty, local);
    CHECK(g.mu_hat == local.mu);
    CHECK(g.sigma2_hat == local.sigma2);
    CHECK(g.initialized());
    CHECK(g.n_updates == 1);
}

TEST_CASE("non-finite local prototype is skipped with a diagnostic") {
    GlobalPrototype g;
    g.class_id = 1;
    g.mu_hat = {1.0};
    g.sigma2_hat = {1.0};
    g.n_updates = 3;
    ProbRepr bad({0.0}, {1.0});
    bad.mu[0] = std::numeric_limits<double>::infinity();  // corrupt after construction
    const auto before = gdp_skip_count().load();
    const GlobalPrototype after = gdp_update(g, bad);
    CHECK(after.n_updates == 3);
    CHECK(after.mu_hat == g.mu_hat);
    CHECK(gdp_skip_count().load() == before + 1);
}

TEST_CASE("sequential stream of 50 locals matches the batch oracle") {
    Rng rng(101);
    std::vector<ProbRepr> reps;
    for (int i = 0; i < 50; ++i) reps.push_back(random_repr(8, rng));
    const GlobalPrototype streamed = stream(reps, std::vector<std::size_t>(50, 1));
    const ProbRepr batch = gdp_batch_oracle(reps);
    for (std::size_t l = 0; l < 8; ++l) {
        CHECK(streamed.mu_hat[l] == doctest::Approx(batch.mu[l]).epsilon(1e-10));
        CHECK(streamed.sigma2_hat[l] == doctest::Approx(batch.sigma2[l]).epsilon(1e-10));
    }
}

TEST_CASE("gdp_batch_oracle basics") {
    ProbRepr r({1.0, -1.0}, {0.4, 0.9});
    const ProbRepr single = gdp_batch_oracle({r});
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(single.mu[l] == doctest::Approx(r.mu[l]).epsilon(1e-14));
        CHECK(single.sigma2[l] == doctest::Approx(r.sigma2[l]).epsilon(1e-14));
    }
    const ProbRepr eq = gdp_batch_oracle(
        {ProbRepr({0.0}, {2.0}), ProbRepr({1.0}, {2.0}), ProbRepr({5.0}, {2.0})});
    CHECK(eq.mu[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK_THROWS_AS(gdp_batch_oracle({}), ContractError);
}

TEST_CASE("streaming equals batch for arbitrary partitions") {
    Rng rng(103);
    std::vector<ProbRepr> reps;
    for (int i = 0; i < 1000; ++i) reps.push_back(random_repr(4, rng));
    const ProbRepr batch = gdp_batch_oracle(reps);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::size_t> chunks;
        std::size_t left = reps.size();
        while (left > 0) {
            const std::size_t n = 1 + rng.below(std::min<std::size_t>(left, 37));
            chunks.push_back(n);
            left -= n;
        }
        const GlobalPrototype streamed = stream(reps, chunks);
        for (std::size_t l = 0; l < 4; ++l) {
            CHECK(streamed.mu_hat[l] == doctest::Approx(batch.mu[l]).epsilon(1e-9));
            CHECK(streamed.sigma2_hat[l] == doctest::Approx(batch.sigma2[l]).epsilon(1e-9));
        }
    }
}

TEST_CASE("gdp variance is nonincreasing across updates") {
    Rng rng(107);
    GlobalPrototype g;
    g.class_id = 0;
    for (int i = 0; i < 100; ++i) {
        const GlobalPrototype next = gdp_update(g, random_repr(5, rng));
        if (g.initialized())
            for (std::size_t l = 0; l < 5; ++l) CHECK(next.sigma2_hat[l] <= g.sigma2_hat[l]);
        g = next;
    }
}

TEST_CASE("ema_prototype_update endpoints and default momentum") {
    const Vec prev{0.0, 2.0}, local{1.0, 4.0};
    CHECK(ema_prototype_update(prev, local, 1.0) == prev);
    CHECK(ema_prototype_update(prev, local, 0.0) == local);
    const Vec v = ema_prototype_update({0.0}, {1.0}, 0.99);
    CHECK(v[0] == doctest::Approx(0.01).epsilon(1e-12));
    CHECK_THROWS_AS(ema_prototype_update(prev, local, 1.5), ContractError);
}

TEST_CASE("ema and gdp both converge under constant input") {
    const ProbRepr target({2.0, -3.0}, {0.5, 0.5});
    Vec ema = {0.0, 0.0};
    GlobalPrototype gdp;
    gdp.class_id = 0;
    for (int i = 0; i < 100; ++i) {
        ema = ema_prototype_update(ema, target.mu, 0.9);
        gdp = gdp_update(gdp, target);
    }
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(ema[l] == doctest::Approx(target.mu[l]).epsilon(1e-4));
        CHECK(gdp.mu_hat[l] == doctest::Approx(target.mu[l]).epsilon(1e-6));
    }
}

TEST_CASE("prototype_shift identical banks and Pythagorean case") {
    PrototypeBank a, b;
    a.absorb(0, ProbRepr({0.0, 0.0}, {1.0, 1.0}));
    b.entries = a.entries;
    CHECK(*prototype_shift(a, b, 0) == doctest::Approx(0.0));

    PrototypeBank c;
    c.entries[0] = a.entries.at(0);
    c.entries[0].mu_hat = {3.0, 4.0};
    CHECK(*prototype_shift(a, c, 0) == doctest::Approx(5.0));

    CHECK(!prototype_shift(a, b, 7).has_value());
}

TEST_CASE("bank state accounting is 2D doubles plus counters per class") {
    PrototypeBank bank;
    const std::size_t d = 16;
    Rng rng(109);
    for (int c = 0; c < 6; ++c) bank.absorb(c, random_repr(d, rng));
    CHECK(bank.state_bytes() == 6 * (2 * d * sizeof(double) + sizeof(std::uint64_t) + sizeof(int)));
}
