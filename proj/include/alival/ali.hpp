#pragma once

// Allostatic load index core: the ten component stressors, their clinical
// thresholds, the missing-aware index, and roadmap-based recovery of missing
// components from auxiliary chart diagnoses.

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "alival/common.hpp"

namespace alival {

inline constexpr int kNumComponents = 10;

enum class Component : int {
    SystolicBp = 0,
    DiastolicBp,
    Bmi,
    Triglycerides,
    TotalCholesterol,
    Crp,
    Hba1c,
    SerumAlbumin,
    CreatinineClearance,
    Homocysteine,
};

enum class Sex { male, female };

inline const std::array<const char*, kNumComponents>& component_names() {
    static const std::array<const char*, kNumComponents> names = {
        "systolic_bp",      "diastolic_bp",     "bmi",
        "triglycerides",    "total_cholesterol", "crp",
        "hba1c",            "serum_albumin",     "creatinine_clearance",
        "homocysteine",
    };
    return names;
}

inline const char* component_name(Component c) {
    return component_names()[static_cast<int>(c)];
}

inline const char* component_display_name(Component c) {
    static const std::array<const char*, kNumComponents> names = {
        "Systolic Blood Pressure", "Diastolic Blood Pressure", "Body Mass Index",
        "Triglycerides",           "Total Cholesterol",        "C-Reactive Protein",
        "Hemoglobin A1C",          "Serum Albumin",            "Creatinine Clearance",
        "Homocysteine",
    };
    return names[static_cast<int>(c)];
}

inline const char* component_body_system(Component c) {
    switch (c) {
        case Component::SystolicBp:
        case Component::DiastolicBp:
            return "Cardiovascular";
        case Component::Bmi:
        case Component::Triglycerides:
        case Component::TotalCholesterol:
            return "Metabolic";
        default:
            return "Inflammation";
    }
}

inline Component parse_component(const std::string& name) {
    const auto& names = component_names();
    for (int i = 0; i < kNumComponents; ++i) {
        if (name == names[i]) return static_cast<Component>(i);
    }
    throw config_error("unknown ALI component: '" + name + "'");
}

// One raw measurement. Sex is carried because the creatinine clearance
// cutoff is sex-specific.
struct ComponentMeasurement {
    Component component;
    std::optional<double> value;
    Sex patient_sex = Sex::female;
};

enum class Stressor : int { zero = 0, one = 1, missing = 2 };

struct ComponentThreshold {
    double cutoff_male = 0.0;    // equal to cutoff_female unless sex-specific
    double cutoff_female = 0.0;
    bool flag_above = true;      // stressor side: true = high values flag
    bool inclusive = false;      // cutoff itself flags
    std::vector<std::string> aux_terms;

    double cutoff(Sex s) const {
        return s == Sex::male ? cutoff_male : cutoff_female;
    }
};

// Clinical cutoffs and roadmap auxiliary-diagnosis terms per component.
class ThresholdTable {
public:
    // The standard ten-component table. High serum albumin is flagged here,
    // reproducing the source definition verbatim even though the usual
    // clinical risk state is low albumin; the direction stays configurable.
    static ThresholdTable defaults() {
        ThresholdTable t;
        auto set = [&t](Component c, double cut, bool above, bool incl,
                        std::vector<std::string> aux) {
            ComponentThreshold th;
            th.cutoff_male = th.cutoff_female = cut;
            th.flag_above = above;
            th.inclusive = incl;
            th.aux_terms = std::move(aux);
            t.rows_[static_cast<int>(c)] = th;
        };
        set(Component::SystolicBp, 140.0, true, false, {"Hypertension"});
        set(Component::DiastolicBp, 90.0, true, false, {"Hypertension"});
        set(Component::Bmi, 30.0, true, false,
            {"Obesity", "Morbid Obesity", "Grade I, II or III Obesity"});
        set(Component::Triglycerides, 150.0, true, true, {"Hypertriglyceridemia"});
        set(Component::TotalCholesterol, 200.0, true, true, {"Hypercholesterolemia"});
        set(Component::Crp, 10.0, true, true,
            {"Sepsis", "Infection", "Auto-Immune Inflammatory Syndrome"});
        set(Component::Hba1c, 6.5, true, true, {"Diabetes", "Impaired Glycemic Control"});
        set(Component::SerumAlbumin, 3.5, true, true, {});
        set(Component::Homocysteine, 50.0, true, false,
            {"Hyperhomocysteinemia", "Vitamin deficiency"});
        ComponentThreshold cc;
        cc.cutoff_male = 110.0;
        cc.cutoff_female = 100.0;
        cc.flag_above = false;
        cc.inclusive = false;
        cc.aux_terms = {"Renal Failure", "Insufficiency", "Acute Kidney Injury",
                        "Chronic Renal Failure"};
        t.rows_[static_cast<int>(Component::CreatinineClearance)] = cc;
        return t;
    }

    const ComponentThreshold& at(Component c) const {
        return rows_[static_cast<int>(c)];
    }

    ComponentThreshold& at(Component c) { return rows_[static_cast<int>(c)]; }

private:
    std::array<ComponentThreshold, kNumComponents> rows_{};
};

// Per-patient stressor vector plus flags marking components whose value came
// from roadmap auxiliary information rather than a measurement.
struct StressorProfile {
    std::array<Stressor, kNumComponents> stressor{};
    std::array<bool, kNumComponents> recovered{};

    StressorProfile() {
        stressor.fill(Stressor::missing);
        recovered.fill(false);
    }

    void check() const {
        for (int i = 0; i < kNumComponents; ++i) {
            if (recovered[i] && stressor[i] == Stressor::missing) {
                throw data_error("recovery flag set on a missing component");
            }
        }
    }
};

// value = numerator / denominator over non-missing components; absent when
// every component is missing.
struct AliValue {
    std::optional<double> value;
    int numerator = 0;
    int denominator = 0;
};

inline Stressor classify_component(const ComponentMeasurement& m,
                                   const ThresholdTable& t) {
    if (!m.value.has_value()) return Stressor::missing;
    const ComponentThreshold& th = t.at(m.component);
    const double v = *m.value;
    const double cut = th.cutoff(m.patient_sex);
    bool flagged;
    if (th.flag_above) {
        flagged = th.inclusive ? (v >= cut) : (v > cut);
    } else {
        flagged = th.inclusive ? (v <= cut) : (v < cut);
    }
    return flagged ? Stressor::one : Stressor::zero;
}

inline AliValue compute_ali(const StressorProfile& p) {
    AliValue out;
    for (int i = 0; i < kNumComponents; ++i) {
        if (p.stressor[i] == Stressor::missing) continue;
        ++out.denominator;
        if (p.stressor[i] == Stressor::one) ++out.numerator;
    }
    if (out.denominator > 0) {
        out.value = static_cast<double>(out.numerator) / out.denominator;
    }
    return out;
}

inline std::string to_lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Case-insensitive substring match of any roadmap term for `c` against a
// normalized diagnosis list.
inline bool roadmap_hit(Component c, const std::set<std::string>& chart_terms_lower,
                        const ThresholdTable& t) {
    for (const auto& term : t.at(c).aux_terms) {
        const std::string needle = to_lower(term);
        for (const auto& diag : chart_terms_lower) {
            if (diag.find(needle) != std::string::npos) return true;
        }
    }
    return false;
}

// For each missing component whose auxiliary terms appear among the chart
// diagnoses, set the stressor to one and mark it recovered. Non-missing
// components are never altered; recovery only ever asserts a "yes".
inline StressorProfile apply_roadmap(const StressorProfile& p,
                                     const std::set<std::string>& chart_terms,
                                     const ThresholdTable& t) {
    std::set<std::string> lowered;
    for (const auto& s : chart_terms) lowered.insert(to_lower(s));

    StressorProfile out = p;
    for (int i = 0; i < kNumComponents; ++i) {
        if (out.stressor[i] != Stressor::missing) continue;
        if (roadmap_hit(static_cast<Component>(i), lowered, t)) {
            out.stressor[i] = Stressor::one;
            out.recovered[i] = true;
        }
    }
    return out;
}

// Mean of available measurements per component across a patient's
// encounters, taken before thresholding.
struct EncounterValues {
    std::array<std::optional<double>, kNumComponents> value{};
};

inline StressorProfile profile_from_encounters(
    const std::vector<EncounterValues>& encounters, Sex sex,
    const ThresholdTable& t) {
    StressorProfile out;
    for (int c = 0; c < kNumComponents; ++c) {
        double sum = 0.0;
        int n = 0;
        for (const auto& e : encounters) {
            if (e.value[c].has_value()) {
                sum += *e.value[c];
                ++n;
            }
        }
        if (n > 0) {
            ComponentMeasurement m{static_cast<Component>(c), sum / n, sex};
            out.stressor[c] = classify_component(m, t);
        }
    }
    return out;
}

}  // namespace alival
