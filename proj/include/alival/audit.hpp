#pragma once

// Audit workbook tooling: wide-to-long transform with roadmap hints,
// findings classification, data-quality metrics (TPR/FPR on discretized
// stressors, recovery rate), and Fleiss' kappa for inter-auditor agreement.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "alival/ali.hpp"
#include "alival/common.hpp"
#include "alival/csv.hpp"

namespace alival {

// One long-format workbook row: a single variable for one encounter.
struct AuditRow {
    std::string patient_id;
    std::string encounter_date;
    Component variable = Component::SystolicBp;
    std::optional<double> extracted_value;
    std::string roadmap_hint;    // "; "-joined auxiliary terms, missing rows only
    std::string reviewed_value;  // blank until the audit is complete
    std::string notes;
};

enum class Finding {
    ExtractedCorrect,
    ExtractedIncorrect,
    ExtractedNotFound,
    AuxiliaryFound,
    AuxiliaryNotFound,
};

inline const char* finding_name(Finding f) {
    switch (f) {
        case Finding::ExtractedCorrect: return "extracted_correct";
        case Finding::ExtractedIncorrect: return "extracted_incorrect";
        case Finding::ExtractedNotFound: return "extracted_not_found";
        case Finding::AuxiliaryFound: return "auxiliary_found";
        case Finding::AuxiliaryNotFound: return "auxiliary_not_found";
    }
    return "?";
}

inline Finding parse_finding(const std::string& s) {
    for (Finding f : {Finding::ExtractedCorrect, Finding::ExtractedIncorrect,
                      Finding::ExtractedNotFound, Finding::AuxiliaryFound,
                      Finding::AuxiliaryNotFound}) {
        if (s == finding_name(f)) return f;
    }
    throw data_error("unknown finding category: '" + s + "'");
}

// One wide extract row: a patient encounter with its component columns.
struct WideRow {
    std::string patient_id;
    std::string encounter_date;
    Sex sex = Sex::female;
    std::array<std::optional<double>, kNumComponents> value{};
};

inline std::string join_terms(const std::vector<std::string>& terms) {
    std::string out;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (i) out += "; ";
        out += terms[i];
    }
    return out;
}

// One output row per (patient, encounter, variable), missing cells included
// so auditors see the roadmap hints for them.
inline std::vector<AuditRow> widen_to_long(const std::vector<WideRow>& wide,
                                           const ThresholdTable& roadmap) {
    std::vector<AuditRow> out;
    out.reserve(wide.size() * kNumComponents);
    for (const auto& w : wide) {
        for (int c = 0; c < kNumComponents; ++c) {
            AuditRow row;
            row.patient_id = w.patient_id;
            row.encounter_date = w.encounter_date;
            row.variable = static_cast<Component>(c);
            row.extracted_value = w.value[static_cast<std::size_t>(c)];
            if (!row.extracted_value.has_value()) {
                row.roadmap_hint =
                    join_terms(roadmap.at(static_cast<Component>(c)).aux_terms);
            }
            out.push_back(std::move(row));
        }
    }
    return out;
}

// Inverse of widen_to_long for rows produced by it (same ordering contract).
inline std::vector<WideRow> long_to_wide(const std::vector<AuditRow>& rows) {
    std::vector<WideRow> out;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (const auto& r : rows) {
        const auto key = std::make_pair(r.patient_id, r.encounter_date);
        auto it = index.find(key);
        if (it == index.end()) {
            WideRow w;
            w.patient_id = r.patient_id;
            w.encounter_date = r.encounter_date;
            index.emplace(key, out.size());
            out.push_back(std::move(w));
            it = index.find(key);
        }
        out[it->second].value[static_cast<std::size_t>(r.variable)] =
            r.extracted_value;
    }
    return out;
}

namespace detail {

inline bool is_not_found(const std::string& reviewed) {
    return to_lower(csv::trim(reviewed)) == "not found";
}

}  // namespace detail

// Assign the audit finding for a completed row. Three outcomes exist for
// rows extracted with a value, two for rows extracted missing.
inline Finding classify_finding(const AuditRow& row) {
    const std::string reviewed = csv::trim(row.reviewed_value);
    if (reviewed.empty()) {
        throw data_error("audit incomplete: blank reviewed value for patient " +
                         row.patient_id + ", encounter " + row.encounter_date +
                         ", variable " + component_name(row.variable));
    }
    const std::optional<double> reviewed_num = csv::parse_double(reviewed);
    if (row.extracted_value.has_value()) {
        if (detail::is_not_found(reviewed)) return Finding::ExtractedNotFound;
        if (!reviewed_num.has_value()) {
            throw data_error(
                "unexpected non-numeric review entry '" + reviewed +
                "' for a non-missing extract (patient " + row.patient_id +
                ", variable " + component_name(row.variable) + ")");
        }
        return std::abs(*reviewed_num - *row.extracted_value) <= 1e-9
                   ? Finding::ExtractedCorrect
                   : Finding::ExtractedIncorrect;
    }
    return detail::is_not_found(reviewed) ? Finding::AuxiliaryNotFound
                                          : Finding::AuxiliaryFound;
}

// Optional rate: absent instead of 0/0 when the denominator is empty.
struct Rate {
    std::optional<double> value;
    long numerator = 0;
    long denominator = 0;

    static Rate of(long num, long den) {
        Rate r;
        r.numerator = num;
        r.denominator = den;
        if (den > 0) r.value = static_cast<double>(num) / static_cast<double>(den);
        return r;
    }
};

// Stressor-level agreement between the unvalidated extract and the
// validated data for one component (or overall).
struct ComponentQuality {
    // Counts over components non-missing both before and after validation;
    // cell[e][v] = #(EHR stressor = e, validated stressor = v).
    long n11 = 0, n10 = 0, n01 = 0, n00 = 0;
    long missing_pre = 0;    // missing in the extract, among validated patients
    long recovered = 0;      // of those, resolved during validation
    Rate tpr;                // Pr(EHR = 1 | validated = 1)
    Rate fpr;                // Pr(EHR = 1 | validated = 0)
    Rate tpr_reverse;        // Pr(validated = 1 | EHR = 1)
    Rate fpr_reverse;        // Pr(validated = 1 | EHR = 0)
    Rate recovery_rate;

    void finalize() {
        tpr = Rate::of(n11, n11 + n01);
        fpr = Rate::of(n10, n10 + n00);
        tpr_reverse = Rate::of(n11, n11 + n10);
        fpr_reverse = Rate::of(n01, n01 + n00);
        recovery_rate = Rate::of(recovered, missing_pre);
    }
};

struct QualityReport {
    ComponentQuality overall;
    std::array<ComponentQuality, kNumComponents> per_component;
    std::map<std::string, long> finding_counts;  // over workbook data points
    long total_rows = 0;
};

// Pre- and post-validation stressor profiles reconstructed from a completed
// workbook. Pre thresholds the mean of extracted values per component; post
// uses reviewed numbers (corrections included), treats not-found extracts as
// missing, and lets roadmap hits assert a stressor of one.
inline std::pair<std::map<std::string, StressorProfile>,
                 std::map<std::string, StressorProfile>>
stressor_profiles_from_workbook(const std::vector<AuditRow>& rows,
                                const std::map<std::string, Sex>& sex_by_patient,
                                const ThresholdTable& thresholds) {
    struct Acc {
        std::array<double, kNumComponents> pre_sum{};
        std::array<int, kNumComponents> pre_n{};
        std::array<double, kNumComponents> post_sum{};
        std::array<int, kNumComponents> post_n{};
        std::array<bool, kNumComponents> aux_found{};
    };
    std::map<std::string, Acc> acc;
    for (const auto& r : rows) {
        Acc& a = acc[r.patient_id];
        const std::size_t c = static_cast<std::size_t>(r.variable);
        const Finding f = classify_finding(r);
        if (r.extracted_value.has_value()) {
            a.pre_sum[c] += *r.extracted_value;
            ++a.pre_n[c];
        }
        switch (f) {
            case Finding::ExtractedCorrect:
            case Finding::ExtractedIncorrect: {
                const double v = *csv::parse_double(csv::trim(r.reviewed_value));
                a.post_sum[c] += v;
                ++a.post_n[c];
                break;
            }
            case Finding::ExtractedNotFound:
                break;  // value absent from the chart: missing post-validation
            case Finding::AuxiliaryFound:
                a.aux_found[c] = true;
                break;
            case Finding::AuxiliaryNotFound:
                break;
        }
    }

    std::map<std::string, StressorProfile> pre, post;
    for (const auto& [id, a] : acc) {
        auto sex_it = sex_by_patient.find(id);
        if (sex_it == sex_by_patient.end()) {
            throw data_error("no sex on record for patient " + id +
                             " (needed for creatinine clearance)");
        }
        StressorProfile p_pre, p_post;
        for (int c = 0; c < kNumComponents; ++c) {
            const std::size_t cc = static_cast<std::size_t>(c);
            const Component comp = static_cast<Component>(c);
            if (a.pre_n[cc] > 0) {
                p_pre.stressor[cc] = classify_component(
                    {comp, a.pre_sum[cc] / a.pre_n[cc], sex_it->second},
                    thresholds);
            }
            if (a.post_n[cc] > 0) {
                p_post.stressor[cc] = classify_component(
                    {comp, a.post_sum[cc] / a.post_n[cc], sex_it->second},
                    thresholds);
            } else if (a.aux_found[cc]) {
                p_post.stressor[cc] = Stressor::one;
                p_post.recovered[cc] = a.pre_n[cc] == 0;
            }
        }
        pre[id] = p_pre;
        post[id] = p_post;
    }
    return {pre, post};
}

// Aggregate data-quality metrics from classified findings plus the pre/post
// stressor comparison. Only components the audit actually touched (that have
// workbook rows for the patient) enter the component-level rates.
inline QualityReport quality_report(
    const std::vector<AuditRow>& rows,
    const std::map<std::string, StressorProfile>& pre,
    const std::map<std::string, StressorProfile>& post) {
    QualityReport rep;
    rep.total_rows = static_cast<long>(rows.size());
    std::map<std::string, std::array<bool, kNumComponents>> audited;
    for (const auto& r : rows) {
        rep.finding_counts[finding_name(classify_finding(r))] += 1;
        audited[r.patient_id][static_cast<std::size_t>(r.variable)] = true;
    }
    for (const auto& [id, p_pre] : pre) {
        auto it = post.find(id);
        if (it == post.end()) {
            throw data_error("patient " + id + " has no post-validation profile");
        }
        const auto audit_it = audited.find(id);
        const StressorProfile& p_post = it->second;
        for (int c = 0; c < kNumComponents; ++c) {
            const std::size_t cc = static_cast<std::size_t>(c);
            if (audit_it == audited.end() || !audit_it->second[cc]) continue;
            ComponentQuality& q = rep.per_component[cc];
            const Stressor e = p_pre.stressor[cc];
            const Stressor v = p_post.stressor[cc];
            if (e == Stressor::missing) {
                ++q.missing_pre;
                ++rep.overall.missing_pre;
                if (v != Stressor::missing) {
                    ++q.recovered;
                    ++rep.overall.recovered;
                }
                continue;
            }
            if (v == Stressor::missing) continue;  // not comparable
            const bool e1 = e == Stressor::one;
            const bool v1 = v == Stressor::one;
            if (e1 && v1) { ++q.n11; ++rep.overall.n11; }
            if (e1 && !v1) { ++q.n10; ++rep.overall.n10; }
            if (!e1 && v1) { ++q.n01; ++rep.overall.n01; }
            if (!e1 && !v1) { ++q.n00; ++rep.overall.n00; }
        }
    }
    rep.overall.finalize();
    for (auto& q : rep.per_component) q.finalize();
    return rep;
}

// Fleiss' multi-rater kappa. ratings[item][rater] holds category indices;
// every cell must be filled.
inline double fleiss_kappa(const std::vector<std::vector<int>>& ratings) {
    const std::size_t n_items = ratings.size();
    if (n_items < 2) throw data_error("fleiss_kappa needs at least 2 items");
    const std::size_t n_raters = ratings.front().size();
    if (n_raters < 2) throw data_error("fleiss_kappa needs at least 2 raters");
    int max_cat = 0;
    for (const auto& item : ratings) {
        if (item.size() != n_raters) {
            throw data_error("fleiss_kappa: unrated cells (ragged rating matrix)");
        }
        for (int c : item) {
            if (c < 0) throw data_error("fleiss_kappa: negative category index");
            max_cat = std::max(max_cat, c);
        }
    }
    const std::size_t n_cats = static_cast<std::size_t>(max_cat) + 1;

    std::vector<double> cat_share(n_cats, 0.0);
    double p_bar = 0.0;
    const double m = static_cast<double>(n_raters);
    for (const auto& item : ratings) {
        std::vector<int> counts(n_cats, 0);
        for (int c : item) ++counts[static_cast<std::size_t>(c)];
        double agree = 0.0;
        for (std::size_t c = 0; c < n_cats; ++c) {
            agree += static_cast<double>(counts[c]) * (counts[c] - 1);
            cat_share[c] += counts[c];
        }
        p_bar += agree / (m * (m - 1.0));
    }
    p_bar /= static_cast<double>(n_items);
    double pe = 0.0;
    for (std::size_t c = 0; c < n_cats; ++c) {
        const double share = cat_share[c] / (m * static_cast<double>(n_items));
        pe += share * share;
    }
    if (1.0 - pe <= 1e-15) {
        return 1.0;  // a single observed category: perfect agreement
    }
    return (p_bar - pe) / (1.0 - pe);
}

}  // namespace alival
