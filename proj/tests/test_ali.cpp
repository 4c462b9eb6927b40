#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "alival/ali.hpp"
#include "alival/rng.hpp"

using namespace alival;

namespace {

StressorProfile random_profile(Rng& g) {
    StressorProfile p;
    for (int c = 0; c < kNumComponents; ++c) {
        const auto u = uniform_index(g, 3);
        p.stressor[static_cast<std::size_t>(c)] = static_cast<Stressor>(u);
    }
    return p;
}

}  // namespace

TEST_CASE("classify_component at the documented cutoffs") {
    const auto t = ThresholdTable::defaults();

    CHECK(classify_component({Component::Hba1c, 6.5, Sex::female}, t) ==
          Stressor::one);
    CHECK(classify_component({Component::Hba1c, 5.6, Sex::female}, t) ==
          Stressor::zero);
    CHECK(classify_component({Component::Hba1c, std::nullopt, Sex::female}, t) ==
          Stressor::missing);
    CHECK(classify_component({Component::SystolicBp, 140.0, Sex::male}, t) ==
          Stressor::zero);
    CHECK(classify_component({Component::SystolicBp, 140.5, Sex::male}, t) ==
          Stressor::one);
}

TEST_CASE("boundary inclusivity matches the threshold table for all 10") {
    const auto t = ThresholdTable::defaults();
    struct Case {
        Component c;
        double boundary;
        Stressor at_boundary;
        Sex sex;
    };
    // Strict comparisons leave the boundary healthy; inclusive ones flag it.
    const Case cases[] = {
        {Component::SystolicBp, 140.0, Stressor::zero, Sex::male},
        {Component::DiastolicBp, 90.0, Stressor::zero, Sex::male},
        {Component::Bmi, 30.0, Stressor::zero, Sex::male},
        {Component::Triglycerides, 150.0, Stressor::one, Sex::male},
        {Component::TotalCholesterol, 200.0, Stressor::one, Sex::male},
        {Component::Crp, 10.0, Stressor::one, Sex::male},
        {Component::Hba1c, 6.5, Stressor::one, Sex::male},
        {Component::SerumAlbumin, 3.5, Stressor::one, Sex::male},
        {Component::CreatinineClearance, 110.0, Stressor::zero, Sex::male},
        {Component::Homocysteine, 50.0, Stressor::zero, Sex::male},
    };
    for (const auto& k : cases) {
        INFO(component_name(k.c));
        CHECK(classify_component({k.c, k.boundary, k.sex}, t) == k.at_boundary);
    }
}

TEST_CASE("creatinine clearance cutoff is sex-specific") {
    const auto t = ThresholdTable::defaults();
    // Between the female (100) and male (110) cutoffs.
    CHECK(classify_component({Component::CreatinineClearance, 105.0, Sex::male},
                             t) == Stressor::one);
    CHECK(classify_component({Component::CreatinineClearance, 105.0, Sex::female},
                             t) == Stressor::zero);
    CHECK(classify_component({Component::CreatinineClearance, 99.0, Sex::female},
                             t) == Stressor::one);
}

TEST_CASE("compute_ali counts ones over non-missing components") {
    StressorProfile p;
    for (int c = 0; c < 2; ++c) p.stressor[static_cast<std::size_t>(c)] = Stressor::one;
    for (int c = 2; c < 6; ++c) p.stressor[static_cast<std::size_t>(c)] = Stressor::zero;
    const auto ali = compute_ali(p);
    REQUIRE(ali.value.has_value());
    CHECK(ali.numerator == 2);
    CHECK(ali.denominator == 6);
    CHECK_THAT(*ali.value, Catch::Matchers::WithinAbs(2.0 / 6.0, 1e-15));

    StressorProfile zeros;
    zeros.stressor.fill(Stressor::zero);
    const auto best = compute_ali(zeros);
    REQUIRE(best.value.has_value());
    CHECK(*best.value == 0.0);
    CHECK(best.denominator == 10);

    StressorProfile empty;
    CHECK_FALSE(compute_ali(empty).value.has_value());
}

TEST_CASE("roadmap recovers missing HbA1c from a diabetes diagnosis") {
    const auto t = ThresholdTable::defaults();
    StressorProfile p;
    p.stressor.fill(Stressor::zero);
    p.stressor[static_cast<std::size_t>(Component::Hba1c)] = Stressor::missing;

    const auto out = apply_roadmap(p, {"Type 2 Diabetes Mellitus"}, t);
    CHECK(out.stressor[static_cast<std::size_t>(Component::Hba1c)] ==
          Stressor::one);
    CHECK(out.recovered[static_cast<std::size_t>(Component::Hba1c)]);
    out.check();
}

TEST_CASE("serum albumin has no auxiliary terms and stays missing") {
    const auto t = ThresholdTable::defaults();
    for (int c = 0; c < kNumComponents; ++c) {
        const auto& terms = t.at(static_cast<Component>(c)).aux_terms;
        if (static_cast<Component>(c) == Component::SerumAlbumin) {
            CHECK(terms.empty());
        } else {
            CHECK_FALSE(terms.empty());
        }
    }
    StressorProfile p;
    p.stressor[static_cast<std::size_t>(Component::SerumAlbumin)] =
        Stressor::missing;
    const auto out = apply_roadmap(
        p, {"Hypoalbuminemia", "Sepsis", "Diabetes", "Renal Failure"}, t);
    CHECK(out.stressor[static_cast<std::size_t>(Component::SerumAlbumin)] ==
          Stressor::missing);
}

TEST_CASE("roadmap is a no-op on complete profiles") {
    const auto t = ThresholdTable::defaults();
    StressorProfile p;
    p.stressor.fill(Stressor::zero);
    p.stressor[3] = Stressor::one;
    const auto out = apply_roadmap(p, {"Diabetes", "Hypertension", "Obesity"}, t);
    CHECK(out.stressor == p.stressor);
    CHECK(out.recovered == p.recovered);
}

TEST_CASE("roadmap matching is case-insensitive substring") {
    const auto t = ThresholdTable::defaults();
    StressorProfile p;
    p.stressor[static_cast<std::size_t>(Component::Bmi)] = Stressor::missing;
    const auto out = apply_roadmap(p, {"history of MORBID OBESITY, class III"}, t);
    CHECK(out.stressor[static_cast<std::size_t>(Component::Bmi)] == Stressor::one);
}

TEST_CASE("roadmap properties: monotone, never flips, idempotent") {
    const auto t = ThresholdTable::defaults();
    const std::set<std::string> charts[] = {
        {},
        {"Diabetes"},
        {"Hypertension", "Obesity", "Sepsis"},
        {"Renal Failure", "Hyperhomocysteinemia", "Hypertriglyceridemia",
         "Hypercholesterolemia", "Impaired Glycemic Control"},
    };
    Rng g = make_rng(42);
    for (int rep = 0; rep < 200; ++rep) {
        const auto p = random_profile(g);
        const auto& chart = charts[uniform_index(g, 4)];
        const auto q = apply_roadmap(p, chart, t);
        q.check();

        int before = 0, after = 0;
        for (int c = 0; c < kNumComponents; ++c) {
            const std::size_t cc = static_cast<std::size_t>(c);
            if (p.stressor[cc] != Stressor::missing) {
                CHECK(q.stressor[cc] == p.stressor[cc]);
                ++before;
            }
            if (q.stressor[cc] != Stressor::missing) ++after;
        }
        CHECK(after >= before);

        const auto q2 = apply_roadmap(q, chart, t);
        CHECK(q2.stressor == q.stressor);
        CHECK(q2.recovered == q.recovered);

        const auto ali = compute_ali(q);
        if (ali.value.has_value()) {
            CHECK(*ali.value >= 0.0);
            CHECK(*ali.value <= 1.0);
            CHECK_THAT(*ali.value,
                       Catch::Matchers::WithinAbs(
                           static_cast<double>(ali.numerator) / ali.denominator,
                           1e-15));
        }
    }
}

TEST_CASE("adding a flagged component moves the ALI consistently") {
    const auto t = ThresholdTable::defaults();
    Rng g = make_rng(7);
    for (int rep = 0; rep < 200; ++rep) {
        auto p = random_profile(g);
        std::vector<int> missing;
        for (int c = 0; c < kNumComponents; ++c) {
            if (p.stressor[static_cast<std::size_t>(c)] == Stressor::missing) {
                missing.push_back(c);
            }
        }
        if (missing.empty()) continue;
        const auto before = compute_ali(p);
        auto q = p;
        const int c = missing[uniform_index(g, missing.size())];
        q.stressor[static_cast<std::size_t>(c)] = Stressor::one;
        const auto after = compute_ali(q);
        REQUIRE(after.value.has_value());
        CHECK(after.numerator == before.numerator + 1);
        CHECK(after.denominator == before.denominator + 1);
        if (before.value.has_value()) {
            // (a+1)/(b+1) >= a/b for a <= b.
            CHECK(*after.value >= *before.value - 1e-15);
        }
    }
}

TEST_CASE("mean-before-threshold across encounters") {
    const auto t = ThresholdTable::defaults();
    EncounterValues e1, e2;
    e1.value[static_cast<std::size_t>(Component::Hba1c)] = 6.0;
    e2.value[static_cast<std::size_t>(Component::Hba1c)] = 7.2;
    // Mean 6.6 >= 6.5 flags even though one encounter is below.
    const auto p = profile_from_encounters({e1, e2}, Sex::female, t);
    CHECK(p.stressor[static_cast<std::size_t>(Component::Hba1c)] == Stressor::one);
    CHECK(p.stressor[static_cast<std::size_t>(Component::Bmi)] ==
          Stressor::missing);
}

TEST_CASE("unknown component names are rejected") {
    CHECK_THROWS_AS(parse_component("hba1c_percent"), config_error);
    CHECK_NOTHROW(parse_component("hba1c"));
}
