#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "alival/sim.hpp"

using namespace alival;

TEST_CASE("error-free mechanism makes the surrogate exact") {
    SimConfig cfg;
    cfg.cohort_size = 2000;
    cfg.set_tpr(1.0);
    cfg.set_fpr(0.0);
    cfg.missingness.fill(0.0);
    const auto pop = generate_population(cfg, 42);
    for (const auto& p : pop.patients) {
        REQUIRE(p.x_star.has_value());
        REQUIRE(p.x_val.has_value());
        CHECK(*p.x_star == p.x_full);
        CHECK(*p.x_val == p.x_full);
    }
}

TEST_CASE("fully missing cohort aborts with a diagnostic") {
    SimConfig cfg;
    cfg.cohort_size = 50;
    cfg.missingness.fill(1.0);
    cfg.set_recovery(0.0);
    CHECK_THROWS_AS(generate_population(cfg, 1), data_error);
}

TEST_CASE("empirical confusion rates match the configured mechanism") {
    SimConfig cfg;
    cfg.cohort_size = 10000;
    cfg.set_tpr(0.995);
    cfg.set_fpr(0.02);
    cfg.set_recovery(0.21);
    const auto pop = generate_population(cfg, 7);

    long t1 = 0, t1o1 = 0, t0 = 0, t0o1 = 0, miss = 0, rec = 0;
    for (const auto& p : pop.patients) {
        for (int c = 0; c < 10; ++c) {
            const std::size_t cc = static_cast<std::size_t>(c);
            if (p.observed[cc] < 0) {
                ++miss;
                rec += p.recovered[cc] ? 1 : 0;
                continue;
            }
            if (p.truth[cc] == 1) {
                ++t1;
                t1o1 += p.observed[cc];
            } else {
                ++t0;
                t0o1 += p.observed[cc];
            }
        }
    }
    const double tpr_hat = static_cast<double>(t1o1) / static_cast<double>(t1);
    const double fpr_hat = static_cast<double>(t0o1) / static_cast<double>(t0);
    const double rec_hat = static_cast<double>(rec) / static_cast<double>(miss);
    // Binomial Monte Carlo tolerance: 4 standard errors.
    CHECK(std::abs(tpr_hat - 0.995) <
          4.0 * std::sqrt(0.995 * 0.005 / static_cast<double>(t1)));
    CHECK(std::abs(fpr_hat - 0.02) <
          4.0 * std::sqrt(0.02 * 0.98 / static_cast<double>(t0)));
    CHECK(std::abs(rec_hat - 0.21) <
          4.0 * std::sqrt(0.21 * 0.79 / static_cast<double>(miss)));
}

TEST_CASE("outcome prevalence agrees with the generating model") {
    SimConfig cfg;
    cfg.cohort_size = 20000;
    const auto pop = generate_population(cfg, 11);
    double expected = 0.0;
    double observed = 0.0;
    for (const auto& p : pop.patients) {
        expected += expit(cfg.beta[0] + cfg.beta[1] * p.x_full + cfg.beta[2] * p.z);
        observed += p.y;
    }
    expected /= static_cast<double>(pop.patients.size());
    observed /= static_cast<double>(pop.patients.size());
    CHECK(std::abs(observed - expected) <
          4.0 * std::sqrt(expected * (1 - expected) /
                          static_cast<double>(pop.patients.size())));
}

TEST_CASE("default prevalences put the error-prone ALI median near 0.33") {
    for (std::uint64_t seed : {13u, 77u, 421u}) {
        SimConfig cfg;
        cfg.cohort_size = 10000;
        const auto pop = generate_population(cfg, seed);
        std::vector<double> xs;
        for (const auto& p : pop.patients) {
            if (p.x_star.has_value()) xs.push_back(*p.x_star);
        }
        std::sort(xs.begin(), xs.end());
        const double median = xs[xs.size() / 2];
        INFO("seed " << seed);
        CHECK(std::abs(median - 0.33) <= 0.02);
    }
}

TEST_CASE("populations are reproducible from the seed") {
    SimConfig cfg;
    cfg.cohort_size = 500;
    const auto a = generate_population(cfg, 99);
    const auto b = generate_population(cfg, 99);
    REQUIRE(a.patients.size() == b.patients.size());
    for (std::size_t i = 0; i < a.patients.size(); ++i) {
        CHECK(a.patients[i].y == b.patients[i].y);
        CHECK(a.patients[i].x_star == b.patients[i].x_star);
        CHECK(a.patients[i].x_val == b.patients[i].x_val);
        CHECK(a.patients[i].z == b.patients[i].z);
    }
}

TEST_CASE("run_replicates is bit-identical across thread counts") {
    SimConfig cfg;
    cfg.cohort_size = 200;
    cfg.budget = 40;
    cfg.replicates = 6;
    cfg.set_tpr(1.0);
    cfg.set_fpr(0.0);
    cfg.set_recovery(1.0);
    cfg.threads = 1;
    const auto a = run_replicates(cfg, {DesignKind::SRS, DesignKind::RS});
    cfg.threads = 2;
    const auto b = run_replicates(cfg, {DesignKind::SRS, DesignKind::RS});
    REQUIRE(a.cells.size() == b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].bias == b.cells[i].bias);
        CHECK(a.cells[i].empirical_se == b.cells[i].empirical_se);
        CHECK(a.cells[i].failures == b.cells[i].failures);
    }
    CHECK(a.naive_bias == b.naive_bias);
}

TEST_CASE("summarize_designs ranks by empirical SE and reports ties") {
    DesignComparisonTable t;
    t.scenario = "toy";
    DesignCell a, b, c;
    a.design = DesignKind::SRS;
    a.empirical_se = 0.30;
    a.rel_efficiency_vs_srs = 1.0;
    b.design = DesignKind::RS;
    b.empirical_se = 0.20;
    c.design = DesignKind::CC;
    c.empirical_se = 0.20;
    t.cells = {a, b, c};
    const auto summary = summarize_designs(t);
    REQUIRE(summary.ranking.size() == 3);
    CHECK(summary.ranking[0].rank == 1);
    CHECK(summary.ranking[1].rank == 1);
    CHECK(summary.ranking[2].rank == 3);
    CHECK(summary.winners.size() == 2);

    DesignComparisonTable single;
    single.cells = {a};
    const auto one = summarize_designs(single);
    CHECK(one.ranking.size() == 1);
    CHECK(one.ranking[0].rank == 1);
    CHECK(one.winners.size() == 1);
}

TEST_CASE("invalid simulation configs are rejected") {
    SimConfig cfg;
    cfg.budget = cfg.cohort_size + 1;
    CHECK_THROWS_AS(cfg.validate(), config_error);

    SimConfig bad_p;
    bad_p.prevalence[3] = 1.4;
    CHECK_THROWS_AS(bad_p.validate(), config_error);

    SimConfig ok;
    ok.replicates = 1;
    CHECK_THROWS_AS(run_replicates(ok, {DesignKind::SRS}), config_error);
}

TEST_CASE("empirical SE of the slope shrinks as the budget grows") {
    SimConfig cfg;
    cfg.cohort_size = 400;
    cfg.replicates = 40;
    cfg.set_tpr(1.0);
    cfg.set_fpr(0.005);
    cfg.set_recovery(1.0);
    std::vector<double> ses;
    for (int n : {50, 100, 200}) {
        cfg.budget = n;
        const auto table = run_replicates(cfg, {DesignKind::SRS});
        ses.push_back(table.cells[0].empirical_se);
    }
    // Statistical tolerance: allow a 10% wobble between adjacent budgets.
    CHECK(ses[1] < ses[0] * 1.10);
    CHECK(ses[2] < ses[1] * 1.10);
}
