#pragma once

// Readers and writers for every file format the CLI speaks: component
// extracts, diagnoses, phase-one data, selections, audit workbooks,
// findings, quality reports, fit summaries, and simulation configs.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "alival/ali.hpp"
#include "alival/audit.hpp"
#include "alival/common.hpp"
#include "alival/csv.hpp"
#include "alival/design.hpp"
#include "alival/logistic.hpp"
#include "alival/sim.hpp"
#include "alival/smle.hpp"

namespace alival::formats {

inline Sex parse_sex(const std::string& raw, const std::string& context) {
    const std::string s = to_lower(csv::trim(raw));
    if (s == "male" || s == "m") return Sex::male;
    if (s == "female" || s == "f") return Sex::female;
    throw data_error("unrecognized sex '" + raw + "' " + context);
}

// --- components extract: patient_id, encounter_date, sex, <10 components> ---

inline std::vector<WideRow> read_components_csv(const std::string& path) {
    const auto t = csv::read_file(path);
    const int c_id = t.require_column("patient_id", path);
    const int c_date = t.require_column("encounter_date", path);
    const int c_sex = t.require_column("sex", path);
    std::array<int, kNumComponents> comp_col{};
    for (int c = 0; c < kNumComponents; ++c) {
        comp_col[static_cast<std::size_t>(c)] =
            t.require_column(component_names()[static_cast<std::size_t>(c)], path);
    }
    // Reject unexpected columns so typos do not silently drop a component.
    for (const auto& h : t.header) {
        bool known = h == "patient_id" || h == "encounter_date" || h == "sex";
        for (const char* name : component_names()) known = known || h == name;
        if (!known) {
            throw data_error(path + ": unknown column '" + h + "'");
        }
    }
    std::vector<WideRow> rows;
    for (const auto& r : t.rows) {
        WideRow w;
        w.patient_id = r[static_cast<std::size_t>(c_id)];
        w.encounter_date = r[static_cast<std::size_t>(c_date)];
        w.sex = parse_sex(r[static_cast<std::size_t>(c_sex)],
                          "for patient " + w.patient_id + " in " + path);
        for (int c = 0; c < kNumComponents; ++c) {
            const std::string& cell =
                r[static_cast<std::size_t>(comp_col[static_cast<std::size_t>(c)])];
            if (!csv::trim(cell).empty()) {
                auto v = csv::parse_double(cell);
                if (!v.has_value()) {
                    throw data_error(path + ": non-numeric value '" + cell +
                                     "' for " +
                                     component_names()[static_cast<std::size_t>(c)]);
                }
                w.value[static_cast<std::size_t>(c)] = v;
            }
        }
        rows.push_back(std::move(w));
    }
    return rows;
}

// --- diagnoses: patient_id, diagnosis_text ---

inline std::map<std::string, std::set<std::string>> read_diagnoses_csv(
    const std::string& path) {
    const auto t = csv::read_file(path);
    const int c_id = t.require_column("patient_id", path);
    const int c_text = t.require_column("diagnosis_text", path);
    std::map<std::string, std::set<std::string>> out;
    for (const auto& r : t.rows) {
        out[r[static_cast<std::size_t>(c_id)]].insert(
            r[static_cast<std::size_t>(c_text)]);
    }
    return out;
}

// --- phase-one data: patient_id, Y, X_star, age_years ---

inline std::vector<PhaseOneRow> read_phase_one_csv(const std::string& path) {
    const auto t = csv::read_file(path);
    const int c_id = t.require_column("patient_id", path);
    const int c_y = t.require_column("Y", path);
    const int c_x = t.require_column("X_star", path);
    const int c_age = t.require_column("age_years", path);
    std::vector<PhaseOneRow> rows;
    std::set<std::string> seen;
    for (const auto& r : t.rows) {
        PhaseOneRow row;
        row.patient_id = r[static_cast<std::size_t>(c_id)];
        if (!seen.insert(row.patient_id).second) {
            throw data_error(path + ": duplicate patient_id " + row.patient_id);
        }
        const auto y = csv::parse_double(r[static_cast<std::size_t>(c_y)]);
        if (!y.has_value() || (*y != 0.0 && *y != 1.0)) {
            throw data_error(path + ": Y must be 0 or 1 for patient " +
                             row.patient_id);
        }
        row.y = static_cast<int>(*y);
        const std::string& xs = r[static_cast<std::size_t>(c_x)];
        if (!csv::trim(xs).empty()) {
            const auto x = csv::parse_double(xs);
            if (!x.has_value() || *x < 0.0 || *x > 1.0) {
                throw data_error(path + ": X_star must lie in [0,1] for patient " +
                                 row.patient_id);
            }
            row.x_star = x;
        }
        const auto age = csv::parse_double(r[static_cast<std::size_t>(c_age)]);
        if (!age.has_value()) {
            throw data_error(path + ": missing age_years for patient " +
                             row.patient_id);
        }
        row.z = age_to_z(*age);
        rows.push_back(std::move(row));
    }
    return rows;
}

// --- validation data: patient_id, X_validated ---

inline std::map<std::string, double> read_validation_csv(const std::string& path) {
    const auto t = csv::read_file(path);
    const int c_id = t.require_column("patient_id", path);
    const int c_x = t.require_column("X_validated", path);
    std::map<std::string, double> out;
    for (const auto& r : t.rows) {
        const std::string id = r[static_cast<std::size_t>(c_id)];
        const auto x = csv::parse_double(r[static_cast<std::size_t>(c_x)]);
        if (!x.has_value() || *x < 0.0 || *x > 1.0) {
            throw data_error(path + ": X_validated must lie in [0,1] for patient " +
                             id);
        }
        if (!out.emplace(id, *x).second) {
            throw data_error(path + ": duplicate patient_id " + id);
        }
    }
    return out;
}

// --- residuals: patient_id, residual ---

inline void write_residuals_csv(const std::string& path,
                                const Residuals& residuals) {
    csv::Writer w(path);
    w.row({"patient_id", "residual"});
    for (const auto& [id, r] : residuals.values) {
        w.row({id, csv::format_field(r)});
    }
    w.close();
}

inline std::map<std::string, double> read_residuals_csv(const std::string& path) {
    const auto t = csv::read_file(path);
    const int c_id = t.require_column("patient_id", path);
    const int c_r = t.require_column("residual", path);
    std::map<std::string, double> out;
    for (const auto& r : t.rows) {
        const auto v = csv::parse_double(r[static_cast<std::size_t>(c_r)]);
        if (!v.has_value()) {
            throw data_error(path + ": non-numeric residual");
        }
        out[r[static_cast<std::size_t>(c_id)]] = *v;
    }
    return out;
}

// --- selection: patient_id, stratum, wave ---

inline void write_selection_csv(const std::string& path,
                                const ValidationSelection& sel, int wave) {
    csv::Writer w(path);
    w.row({"patient_id", "stratum", "wave"});
    for (const auto& id : sel.selected_ids) {
        const auto it = sel.stratum_of.find(id);
        w.row({id, it == sel.stratum_of.end() ? "" : it->second,
               std::to_string(wave)});
    }
    w.close();
}

inline std::set<std::string> read_selection_ids(const std::string& path) {
    const auto t = csv::read_file(path);
    const int c_id = t.require_column("patient_id", path);
    std::set<std::string> out;
    for (const auto& r : t.rows) out.insert(r[static_cast<std::size_t>(c_id)]);
    return out;
}

// --- audit workbook: Figure-style columns ---

inline const std::vector<std::string>& workbook_header() {
    static const std::vector<std::string> h = {
        "patient_id", "encounter_date", "variable",       "extracted_value",
        "roadmap_hint", "reviewed_value", "notes"};
    return h;
}

inline void write_workbook_csv(const std::string& path,
                               const std::vector<AuditRow>& rows,
                               const std::vector<Finding>* findings = nullptr) {
    csv::Writer w(path);
    auto header = workbook_header();
    if (findings) header.push_back("category");
    w.row(header);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        std::vector<std::string> fields = {
            r.patient_id,
            r.encounter_date,
            component_name(r.variable),
            r.extracted_value ? csv::format_field(*r.extracted_value) : "",
            r.roadmap_hint,
            r.reviewed_value,
            r.notes};
        if (findings) fields.push_back(finding_name((*findings)[i]));
        w.row(fields);
    }
    w.close();
}

inline std::vector<AuditRow> read_workbook_csv(const std::string& path) {
    const auto t = csv::read_file(path);
    const int c_id = t.require_column("patient_id", path);
    const int c_date = t.require_column("encounter_date", path);
    const int c_var = t.require_column("variable", path);
    const int c_ext = t.require_column("extracted_value", path);
    const int c_hint = t.require_column("roadmap_hint", path);
    const int c_rev = t.require_column("reviewed_value", path);
    const int c_notes = t.require_column("notes", path);
    std::vector<AuditRow> rows;
    for (const auto& r : t.rows) {
        AuditRow row;
        row.patient_id = r[static_cast<std::size_t>(c_id)];
        row.encounter_date = r[static_cast<std::size_t>(c_date)];
        row.variable = parse_component(r[static_cast<std::size_t>(c_var)]);
        const std::string& ext = r[static_cast<std::size_t>(c_ext)];
        if (!csv::trim(ext).empty()) {
            const auto v = csv::parse_double(ext);
            if (!v.has_value()) {
                throw data_error(path + ": non-numeric extracted_value '" + ext +
                                 "'");
            }
            row.extracted_value = v;
        }
        row.roadmap_hint = r[static_cast<std::size_t>(c_hint)];
        row.reviewed_value = r[static_cast<std::size_t>(c_rev)];
        row.notes = r[static_cast<std::size_t>(c_notes)];
        rows.push_back(std::move(row));
    }
    return rows;
}

// --- threshold table config ---

inline nlohmann::json thresholds_to_json(const ThresholdTable& t) {
    nlohmann::json components = nlohmann::json::array();
    for (int c = 0; c < kNumComponents; ++c) {
        const auto& th = t.at(static_cast<Component>(c));
        nlohmann::json j;
        j["name"] = component_names()[static_cast<std::size_t>(c)];
        if (th.cutoff_male == th.cutoff_female) {
            j["cutoff"] = th.cutoff_male;
        } else {
            j["cutoff_male"] = th.cutoff_male;
            j["cutoff_female"] = th.cutoff_female;
        }
        j["direction"] = th.flag_above ? "above" : "below";
        j["inclusive"] = th.inclusive;
        j["aux_terms"] = th.aux_terms;
        components.push_back(j);
    }
    return nlohmann::json{{"components", components}};
}

inline ThresholdTable thresholds_from_json(const nlohmann::json& j) {
    ThresholdTable t = ThresholdTable::defaults();
    std::set<std::string> seen;
    for (const auto& cj : j.at("components")) {
        const std::string name = cj.at("name").get<std::string>();
        if (!seen.insert(name).second) {
            throw config_error("duplicate component '" + name +
                               "' in threshold config");
        }
        ComponentThreshold th;
        if (cj.contains("cutoff")) {
            th.cutoff_male = th.cutoff_female = cj["cutoff"].get<double>();
        } else {
            th.cutoff_male = cj.at("cutoff_male").get<double>();
            th.cutoff_female = cj.at("cutoff_female").get<double>();
        }
        const std::string dir = cj.at("direction").get<std::string>();
        if (dir != "above" && dir != "below") {
            throw config_error("direction must be 'above' or 'below' for " + name);
        }
        th.flag_above = dir == "above";
        th.inclusive = cj.at("inclusive").get<bool>();
        if (cj.contains("aux_terms")) {
            th.aux_terms = cj["aux_terms"].get<std::vector<std::string>>();
        }
        t.at(parse_component(name)) = th;
    }
    if (seen.size() != kNumComponents) {
        throw config_error("threshold config must define all 10 components; got " +
                           std::to_string(seen.size()));
    }
    return t;
}

inline ThresholdTable load_thresholds(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open threshold config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("invalid threshold config " + path + ": " + e.what());
    }
    return thresholds_from_json(j);
}

// --- fit summaries ---

inline nlohmann::json logit_fit_to_json(const LogitFit& fit) {
    nlohmann::json j;
    j["model"] = "naive_logistic";
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["log_likelihood"] = round12(fit.log_likelihood);
    const std::vector<std::string> names = {"intercept", "ali", "age_per_decade"};
    const std::vector<double> scales = {1.0, 0.1, 1.0};
    for (int i = 0; i < 3; ++i) {
        nlohmann::json cj;
        cj["beta"] = round12(fit.beta(i));
        cj["se"] = round12(std::sqrt(std::max(0.0, fit.covariance(i, i))));
        const auto o = odds_ratio_ci(fit, i, scales[static_cast<std::size_t>(i)]);
        cj["or_scale"] = scales[static_cast<std::size_t>(i)];
        cj["odds_ratio"] = round12(o.odds_ratio);
        cj["ci_lower"] = round12(o.lower);
        cj["ci_upper"] = round12(o.upper);
        j["coefficients"][names[static_cast<std::size_t>(i)]] = cj;
    }
    return j;
}

inline nlohmann::json smle_fit_to_json(const SmleFit& fit,
                                       const std::string& se_method) {
    nlohmann::json j;
    j["model"] = "smle";
    j["converged"] = fit.converged;
    j["em_iterations"] = fit.em_iterations;
    j["final_loglik"] = round12(fit.final_loglik);
    j["se_method"] = se_method;
    const std::vector<std::string> names = {"intercept", "ali", "age_per_decade"};
    const std::vector<double> scales = {1.0, 0.1, 1.0};
    for (int i = 0; i < 3; ++i) {
        nlohmann::json cj;
        cj["beta"] = round12(fit.beta(i));
        const double scale = scales[static_cast<std::size_t>(i)];
        cj["or_scale"] = scale;
        cj["odds_ratio"] = round12(std::exp(scale * fit.beta(i)));
        if (fit.se.size() == 3) {
            const double se = fit.se(i);
            cj["se"] = round12(se);
            cj["ci_lower"] = round12(std::exp(scale * fit.beta(i) -
                                              1.96 * scale * se));
            cj["ci_upper"] = round12(std::exp(scale * fit.beta(i) +
                                              1.96 * scale * se));
        }
        j["coefficients"][names[static_cast<std::size_t>(i)]] = cj;
    }
    j["support_grid"] = nlohmann::json::array();
    for (double g : fit.grid) j["support_grid"].push_back(round12(g));
    j["p_matrix"] = nlohmann::json::array();
    for (Eigen::Index k = 0; k < fit.p_matrix.rows(); ++k) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index s = 0; s < fit.p_matrix.cols(); ++s) {
            row.push_back(round12(fit.p_matrix(k, s)));
        }
        j["p_matrix"].push_back(row);
    }
    j["loglik_trace"] = nlohmann::json::array();
    for (double v : fit.loglik_trace) j["loglik_trace"].push_back(round12(v));
    j["warnings"] = fit.warnings;
    return j;
}

// --- quality report ---

inline nlohmann::json rate_to_json(const Rate& r) {
    nlohmann::json j;
    j["numerator"] = r.numerator;
    j["denominator"] = r.denominator;
    if (r.value.has_value()) {
        j["value"] = round12(*r.value);
    } else {
        j["value"] = nullptr;
    }
    return j;
}

inline nlohmann::json component_quality_to_json(const ComponentQuality& q) {
    nlohmann::json j;
    j["confusion"] = {{"n11", q.n11}, {"n10", q.n10}, {"n01", q.n01},
                      {"n00", q.n00}};
    j["tpr"] = rate_to_json(q.tpr);
    j["fpr"] = rate_to_json(q.fpr);
    j["tpr_reverse"] = rate_to_json(q.tpr_reverse);
    j["fpr_reverse"] = rate_to_json(q.fpr_reverse);
    j["recovery_rate"] = rate_to_json(q.recovery_rate);
    return j;
}

inline nlohmann::json quality_report_to_json(const QualityReport& rep) {
    nlohmann::json j;
    j["total_rows"] = rep.total_rows;
    j["finding_counts"] = rep.finding_counts;
    j["overall"] = component_quality_to_json(rep.overall);
    for (int c = 0; c < kNumComponents; ++c) {
        j["per_component"][component_names()[static_cast<std::size_t>(c)]] =
            component_quality_to_json(
                rep.per_component[static_cast<std::size_t>(c)]);
    }
    return j;
}

// Long-format per-component metric table, one row per (component, metric).
inline void write_quality_heatmap_csv(const std::string& path,
                                      const QualityReport& rep) {
    csv::Writer w(path);
    w.row({"component", "metric", "value"});
    auto emit = [&w](const std::string& comp, const ComponentQuality& q) {
        auto put = [&](const char* metric, const Rate& r) {
            w.row({comp, metric,
                   r.value.has_value() ? csv::format_field(*r.value) : ""});
        };
        put("tpr", q.tpr);
        put("fpr", q.fpr);
        put("recovery_rate", q.recovery_rate);
    };
    for (int c = 0; c < kNumComponents; ++c) {
        emit(component_names()[static_cast<std::size_t>(c)],
             rep.per_component[static_cast<std::size_t>(c)]);
    }
    emit("overall", rep.overall);
    w.close();
}

// --- ratings for inter-auditor agreement: item_id, rater_id, category ---

inline std::vector<std::vector<int>> read_ratings_csv(const std::string& path) {
    const auto t = csv::read_file(path);
    const int c_item = t.require_column("item_id", path);
    const int c_rater = t.require_column("rater_id", path);
    const int c_cat = t.require_column("category", path);
    std::set<std::string> items, raters;
    std::map<std::pair<std::string, std::string>, std::string> cell;
    for (const auto& r : t.rows) {
        const std::string item = r[static_cast<std::size_t>(c_item)];
        const std::string rater = r[static_cast<std::size_t>(c_rater)];
        items.insert(item);
        raters.insert(rater);
        if (!cell.emplace(std::make_pair(item, rater),
                          r[static_cast<std::size_t>(c_cat)])
                 .second) {
            throw data_error(path + ": duplicate rating for item " + item +
                             ", rater " + rater);
        }
    }
    std::map<std::string, int> cat_index;
    std::vector<std::vector<int>> ratings;
    for (const auto& item : items) {
        std::vector<int> row;
        for (const auto& rater : raters) {
            auto it = cell.find(std::make_pair(item, rater));
            if (it == cell.end()) {
                throw data_error(path + ": item " + item + " unrated by " + rater);
            }
            auto [pos, inserted] = cat_index.emplace(
                it->second, static_cast<int>(cat_index.size()));
            row.push_back(pos->second);
        }
        ratings.push_back(std::move(row));
    }
    return ratings;
}

// --- simulation config and outputs ---

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
    SimConfig c;
    if (j.contains("cohort_size")) c.cohort_size = j["cohort_size"].get<int>();
    if (j.contains("budget")) c.budget = j["budget"].get<int>();
    if (j.contains("beta")) {
        const auto b = j["beta"].get<std::vector<double>>();
        if (b.size() != 3) throw config_error("beta must have 3 entries");
        c.beta = {b[0], b[1], b[2]};
    }
    if (j.contains("age_range")) {
        const auto a = j["age_range"].get<std::vector<double>>();
        if (a.size() != 2) throw config_error("age_range must have 2 entries");
        c.age_lo = a[0];
        c.age_hi = a[1];
    }
    auto fill10 = [&j](const char* key, std::array<double, 10>& target) {
        if (!j.contains(key)) return;
        if (j[key].is_number()) {
            target.fill(j[key].get<double>());
            return;
        }
        const auto v = j[key].get<std::vector<double>>();
        if (v.size() != 10) {
            throw config_error(std::string(key) +
                               " must be a scalar or a 10-vector");
        }
        for (int i = 0; i < 10; ++i) target[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
    };
    fill10("prevalence", c.prevalence);
    fill10("missingness", c.missingness);
    fill10("tpr", c.tpr);
    fill10("fpr", c.fpr);
    fill10("recovery", c.recovery);
    if (j.contains("replicates")) c.replicates = j["replicates"].get<int>();
    if (j.contains("master_seed")) {
        c.master_seed = j["master_seed"].get<std::uint64_t>();
    }
    if (j.contains("compute_model_se")) {
        c.compute_model_se = j["compute_model_se"].get<bool>();
    }
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
    if (j.contains("sieve_basis_dim")) {
        c.sieve.basis_dim = j["sieve_basis_dim"].get<int>();
    }
    if (j.contains("sieve_order")) c.sieve.order = j["sieve_order"].get<int>();
    c.validate();
    return c;
}

struct SimScenario {
    std::string label;
    SimConfig config;
};

// Top-level sim run file: a base config plus optional scenario overrides and
// the design list.
struct SimRunSpec {
    std::vector<SimScenario> scenarios;
    std::vector<DesignKind> designs;
};

inline SimRunSpec sim_run_spec_from_json(const nlohmann::json& j) {
    SimRunSpec spec;
    const SimConfig base = sim_config_from_json(j);
    if (j.contains("designs")) {
        for (const auto& d : j["designs"]) {
            spec.designs.push_back(parse_design(d.get<std::string>()));
        }
    } else {
        spec.designs = {DesignKind::SRS, DesignKind::CC, DesignKind::BCC,
                        DesignKind::RS};
    }
    if (j.contains("scenarios")) {
        for (const auto& sj : j["scenarios"]) {
            nlohmann::json merged = j;
            merged.erase("scenarios");
            for (auto it = sj.begin(); it != sj.end(); ++it) {
                if (it.key() != "label") merged[it.key()] = it.value();
            }
            SimScenario sc;
            sc.label = sj.contains("label") ? sj["label"].get<std::string>()
                                            : "scenario";
            sc.config = sim_config_from_json(merged);
            spec.scenarios.push_back(std::move(sc));
        }
    } else {
        spec.scenarios.push_back({"default", base});
    }
    return spec;
}

inline void write_comparison_csv(const std::string& path,
                                 const std::vector<DesignComparisonTable>& tables) {
    csv::Writer w(path);
    w.row({"scenario", "design", "replicates_ok", "failures", "flagged", "bias",
           "empirical_se", "mean_model_se", "rel_efficiency_vs_srs"});
    auto num = [](double v) {
        return std::isfinite(v) ? csv::format_field(v) : std::string();
    };
    for (const auto& t : tables) {
        for (const auto& c : t.cells) {
            w.row({t.scenario, design_name(c.design),
                   std::to_string(c.replicates_ok), std::to_string(c.failures),
                   c.flagged ? "1" : "0", num(c.bias), num(c.empirical_se),
                   num(c.mean_model_se), num(c.rel_efficiency_vs_srs)});
        }
        w.row({t.scenario, "naive", std::to_string(t.cells.empty() ? 0 :
                   t.cells.front().replicates_ok + t.cells.front().failures -
                       t.naive_failures),
               std::to_string(t.naive_failures), "0", num(t.naive_bias),
               num(t.naive_empirical_se), "", ""});
    }
    w.close();
}

// Plot-ready long format: scenario, design, metric, value.
inline void write_comparison_long_csv(
    const std::string& path, const std::vector<DesignComparisonTable>& tables) {
    csv::Writer w(path);
    w.row({"scenario", "design", "metric", "value"});
    auto put = [&w](const std::string& sc, const std::string& d,
                    const char* metric, double v) {
        if (std::isfinite(v)) w.row({sc, d, metric, csv::format_field(v)});
    };
    for (const auto& t : tables) {
        for (const auto& c : t.cells) {
            put(t.scenario, design_name(c.design), "bias", c.bias);
            put(t.scenario, design_name(c.design), "empirical_se", c.empirical_se);
            put(t.scenario, design_name(c.design), "mean_model_se",
                c.mean_model_se);
            put(t.scenario, design_name(c.design), "rel_efficiency_vs_srs",
                c.rel_efficiency_vs_srs);
        }
        put(t.scenario, "naive", "bias", t.naive_bias);
        put(t.scenario, "naive", "empirical_se", t.naive_empirical_se);
    }
    w.close();
}

}  // namespace alival::formats
