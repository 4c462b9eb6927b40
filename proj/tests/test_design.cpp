#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "alival/design.hpp"
#include "alival/rng.hpp"
#include "alival/smle.hpp"

using namespace alival;

namespace {

std::vector<PhaseOneRow> make_cohort(int n, std::uint64_t seed) {
    Rng g = make_rng(seed);
    std::vector<PhaseOneRow> rows;
    for (int i = 0; i < n; ++i) {
        PhaseOneRow r;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "p%05d", i);
        r.patient_id = buf;
        r.x_star = static_cast<double>(uniform_index(g, 11)) / 10.0;
        r.z = uniform_real(g, 0.0, 4.7);
        r.y = bernoulli(g, expit(-1.0 + 1.0 * *r.x_star + 0.1 * r.z)) ? 1 : 0;
        rows.push_back(std::move(r));
    }
    return rows;
}

std::map<std::string, double> toy_residuals(const std::vector<PhaseOneRow>& rows) {
    std::map<std::string, double> res;
    for (const auto& r : rows) {
        res[r.patient_id] = r.y - expit(-1.0 + 1.0 * *r.x_star + 0.1 * r.z);
    }
    return res;
}

}  // namespace

TEST_CASE("residual sampling takes the extreme tails exactly") {
    const auto rows = make_cohort(948, 11);
    const auto residuals = toy_residuals(rows);
    DesignSpec spec;
    spec.kind = DesignKind::RS;
    spec.n = 48;
    spec.seed = 4;
    const auto sel = select_validation(spec, rows, &residuals);
    REQUIRE(sel.selected_ids.size() == 48);
    CHECK(sel.stratum_counts.at("low_tail") == 24);
    CHECK(sel.stratum_counts.at("high_tail") == 24);

    // The 24 smallest and 24 largest residuals, by direct sort.
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& r : rows) {
        ranked.push_back({residuals.at(r.patient_id), r.patient_id});
    }
    std::sort(ranked.begin(), ranked.end());
    std::set<std::string> expected;
    for (int i = 0; i < 24; ++i) expected.insert(ranked[static_cast<std::size_t>(i)].second);
    for (std::size_t i = ranked.size() - 24; i < ranked.size(); ++i) {
        expected.insert(ranked[i].second);
    }
    const std::set<std::string> got(sel.selected_ids.begin(),
                                    sel.selected_ids.end());
    CHECK(got == expected);
}

TEST_CASE("balanced case-control takes one per stratum at n = 4") {
    const auto rows = make_cohort(200, 13);
    DesignSpec spec;
    spec.kind = DesignKind::BCC;
    spec.n = 4;
    spec.seed = 9;
    spec.x_star_cut = 0.33;
    const auto sel = select_validation(spec, rows);
    REQUIRE(sel.selected_ids.size() == 4);
    for (const char* label : {"y1_xlo", "y1_xhi", "y0_xlo", "y0_xhi"}) {
        CHECK(sel.stratum_counts.at(label) == 1);
    }
}

TEST_CASE("SRS with the full budget selects everyone") {
    const auto rows = make_cohort(40, 17);
    DesignSpec spec;
    spec.kind = DesignKind::SRS;
    spec.n = 40;
    spec.seed = 2;
    const auto sel = select_validation(spec, rows);
    CHECK(sel.selected_ids.size() == 40);
    std::set<std::string> all;
    for (const auto& r : rows) all.insert(r.patient_id);
    CHECK(std::set<std::string>(sel.selected_ids.begin(),
                                sel.selected_ids.end()) == all);
}

TEST_CASE("quota exactness across all designs and random instances") {
    Rng g = make_rng(23);
    for (int rep = 0; rep < 200; ++rep) {
        const int n_pool = 60 + static_cast<int>(uniform_index(g, 300));
        const auto rows = make_cohort(n_pool, derive_seed(23, "cohort", rep));
        const auto residuals = toy_residuals(rows);
        for (DesignKind kind : {DesignKind::SRS, DesignKind::CC, DesignKind::BCC,
                                DesignKind::OPT, DesignKind::ETS, DesignKind::RS}) {
            DesignSpec spec;
            spec.kind = kind;
            spec.n = 4 * (1 + static_cast<int>(uniform_index(g, 5)));
            spec.seed = derive_seed(23, "seed", rep);
            spec.x_star_cut = 0.33;
            if (kind == DesignKind::OPT) {
                spec.pilot_beta = Eigen::Vector3d(-1.0, 1.0, 0.1);
            }
            ValidationSelection sel;
            try {
                sel = select_validation(spec, rows, &residuals);
            } catch (const data_error&) {
                continue;  // deficient stratum for this draw
            }
            REQUIRE(sel.selected_ids.size() == static_cast<std::size_t>(spec.n));
            std::set<std::string> uniq(sel.selected_ids.begin(),
                                       sel.selected_ids.end());
            REQUIRE(uniq.size() == sel.selected_ids.size());
            int total = 0;
            for (const auto& [label, count] : sel.stratum_counts) total += count;
            REQUIRE(total == spec.n);
        }
    }
}

TEST_CASE("selection is deterministic and ignores phase-two values") {
    const auto rows = make_cohort(500, 31);
    const auto residuals = toy_residuals(rows);
    for (DesignKind kind : {DesignKind::SRS, DesignKind::CC, DesignKind::BCC,
                            DesignKind::OPT, DesignKind::ETS, DesignKind::RS}) {
        DesignSpec spec;
        spec.kind = kind;
        spec.n = 40;
        spec.seed = 77;
        spec.x_star_cut = 0.33;
        if (kind == DesignKind::OPT) {
            spec.pilot_beta = Eigen::Vector3d(-1.0, 1.0, 0.1);
        }
        const auto a = select_validation(spec, rows, &residuals);
        const auto b = select_validation(spec, rows, &residuals);
        CHECK(a.selected_ids == b.selected_ids);

        // MAR by construction: two-phase datasets that differ only in the
        // validated exposure produce identical selections, because the
        // selection sees the phase-one view alone.
        TwoPhaseDataset real, poisoned;
        real.rows = poisoned.rows = rows;
        real.validated.assign(rows.size(), 0);
        poisoned.validated.assign(rows.size(), 0);
        Rng pg = make_rng(55);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            real.x_validated.push_back(uniform_real(pg));
            poisoned.x_validated.push_back(-999.0);  // sentinel
        }
        const auto from_real = select_validation(spec, real.rows, &residuals);
        const auto from_poisoned =
            select_validation(spec, poisoned.rows, &residuals);
        CHECK(from_real.selected_ids == from_poisoned.selected_ids);
        CHECK(a.selected_ids == from_real.selected_ids);
    }
}

TEST_CASE("different seeds move random designs but not rank-based ones") {
    const auto rows = make_cohort(300, 37);
    const auto residuals = toy_residuals(rows);
    DesignSpec a, b;
    a.kind = b.kind = DesignKind::SRS;
    a.n = b.n = 30;
    a.seed = 1;
    b.seed = 2;
    CHECK(select_validation(a, rows).selected_ids !=
          select_validation(b, rows).selected_ids);

    a.kind = b.kind = DesignKind::RS;
    CHECK(select_validation(a, rows, &residuals).selected_ids ==
          select_validation(b, rows, &residuals).selected_ids);
}

TEST_CASE("rank-based selection is invariant to increasing transforms") {
    const auto rows = make_cohort(200, 41);
    auto residuals = toy_residuals(rows);
    DesignSpec spec;
    spec.kind = DesignKind::RS;
    spec.n = 20;
    spec.seed = 5;
    const auto base = select_validation(spec, rows, &residuals);

    auto transformed = residuals;
    for (auto& [id, r] : transformed) r = std::tanh(2.0 * r) * 3.0 + 0.1;
    const auto moved = select_validation(spec, rows, &transformed);
    CHECK(base.selected_ids == moved.selected_ids);
}

TEST_CASE("excluded ids are never selected again") {
    const auto rows = make_cohort(120, 43);
    DesignSpec spec;
    spec.kind = DesignKind::SRS;
    spec.n = 30;
    spec.seed = 3;
    const auto first = select_validation(spec, rows);
    std::set<std::string> exclude(first.selected_ids.begin(),
                                  first.selected_ids.end());
    const auto second = select_validation(spec, rows, nullptr, exclude);
    for (const auto& id : second.selected_ids) {
        CHECK_FALSE(exclude.count(id));
    }
}

TEST_CASE("design errors: divisibility, deficient strata, missing residuals") {
    const auto rows = make_cohort(100, 47);
    DesignSpec spec;
    spec.kind = DesignKind::CC;
    spec.n = 31;
    CHECK_THROWS_AS(select_validation(spec, rows), config_error);

    spec.kind = DesignKind::BCC;
    spec.n = 30;
    CHECK_THROWS_AS(select_validation(spec, rows), config_error);

    spec.kind = DesignKind::RS;
    spec.n = 30;
    CHECK_THROWS_AS(select_validation(spec, rows), data_error);

    // A cohort with no cases cannot satisfy a case quota.
    auto controls_only = rows;
    for (auto& r : controls_only) r.y = 0;
    spec.kind = DesignKind::CC;
    spec.n = 10;
    CHECK_THROWS_AS(select_validation(spec, controls_only), data_error);

    spec.kind = DesignKind::SRS;
    spec.n = 101;
    CHECK_THROWS_AS(select_validation(spec, rows), data_error);
}

TEST_CASE("neyman allocation splits evenly under symmetry") {
    std::vector<StratumStat> strata = {{"a", 1000, 2.0}, {"b", 1000, 2.0}};
    const auto alloc = allocate_optimal(strata, 50);
    CHECK(alloc == std::vector<int>{25, 25});
}

TEST_CASE("zero-information strata receive no budget") {
    std::vector<StratumStat> strata = {{"a", 500, 1.5}, {"b", 500, 0.0},
                                       {"c", 500, 1.5}};
    const auto alloc = allocate_optimal(strata, 30);
    CHECK(alloc[1] == 0);
    CHECK(alloc[0] + alloc[2] == 30);
}

TEST_CASE("allocation matches the brute-force integer minimizer") {
    // Influence variances (4,1,1,1) over equal strata: the continuous rule
    // gives (14,7,7,7) at n = 35; exhaustive enumeration is the oracle.
    const std::vector<StratumStat> strata = {
        {"a", 10000, 4.0}, {"b", 10000, 1.0}, {"c", 10000, 1.0}, {"d", 10000, 1.0}};
    const int n = 35;
    const auto alloc = allocate_optimal(strata, n);
    CHECK(alloc == std::vector<int>{14, 7, 7, 7});

    auto objective = [&](int a, int b, int c, int d) {
        const double w = 0.25;
        return w * w * (4.0 / a + 1.0 / b + 1.0 / c + 1.0 / d);
    };
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_alloc;
    for (int a = 1; a <= n - 3; ++a) {
        for (int b = 1; b <= n - a - 2; ++b) {
            for (int c = 1; c <= n - a - b - 1; ++c) {
                const int d = n - a - b - c;
                if (d < 1) continue;
                const double obj = objective(a, b, c, d);
                if (obj < best) {
                    best = obj;
                    best_alloc = {a, b, c, d};
                }
            }
        }
    }
    CHECK(alloc == best_alloc);

    std::vector<StratumStat> empty_info = {{"a", 10, 0.0}, {"b", 10, 0.0}};
    CHECK_THROWS_AS(allocate_optimal(empty_info, 5), data_error);
}
