// Command-line entry points for the ALI validation-study toolkit:
// extract -> ALI -> naive fit -> design -> audit prep -> ingest -> quality
// -> SMLE -> simulate, plus persistent multi-wave state.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "alival/alival.hpp"
#include "alival/wave.hpp"

namespace {

using nlohmann::json;

struct GlobalOpts {
    std::uint64_t seed = 1;
    bool json_errors = false;
};

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw alival::data_error("cannot write " + path);
    out << j.dump(2) << '\n';
    out.flush();
    if (!out) throw alival::data_error("write failed: " + path);
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw alival::data_error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw alival::data_error("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

alival::ThresholdTable thresholds_or_default(const std::string& path) {
    if (path.empty()) return alival::ThresholdTable::defaults();
    return alival::formats::load_thresholds(path);
}

Eigen::VectorXd beta_from_fit_json(const std::string& path) {
    const json j = read_json_file(path);
    Eigen::VectorXd beta(3);
    try {
        beta(0) = j.at("coefficients").at("intercept").at("beta").get<double>();
        beta(1) = j.at("coefficients").at("ali").at("beta").get<double>();
        beta(2) =
            j.at("coefficients").at("age_per_decade").at("beta").get<double>();
    } catch (const json::exception& e) {
        throw alival::data_error("fit JSON " + path +
                                 " lacks coefficient entries: " + e.what());
    }
    return beta;
}

// --- ali compute ------------------------------------------------------------

void run_ali_compute(const std::string& components_path,
                     const std::string& diagnoses_path, bool apply_roadmap_flag,
                     const std::string& thresholds_path,
                     const std::string& out_path) {
    const auto thresholds = thresholds_or_default(thresholds_path);
    const auto wide = alival::formats::read_components_csv(components_path);

    std::map<std::string, std::set<std::string>> diagnoses;
    if (!diagnoses_path.empty()) {
        diagnoses = alival::formats::read_diagnoses_csv(diagnoses_path);
    }
    if (apply_roadmap_flag && diagnoses_path.empty()) {
        throw alival::config_error("--apply-roadmap requires --diagnoses");
    }

    // Group encounters per patient, preserving first-seen order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<alival::EncounterValues>> encounters;
    std::map<std::string, alival::Sex> sex_of;
    for (const auto& w : wide) {
        if (!encounters.count(w.patient_id)) {
            order.push_back(w.patient_id);
            sex_of[w.patient_id] = w.sex;
        } else if (sex_of[w.patient_id] != w.sex) {
            throw alival::data_error("conflicting sex entries for patient " +
                                     w.patient_id);
        }
        alival::EncounterValues ev;
        ev.value = w.value;
        encounters[w.patient_id].push_back(ev);
    }

    alival::csv::Writer out(out_path);
    out.row({"patient_id", "ali", "numerator", "denominator", "n_recovered"});
    for (const auto& id : order) {
        auto profile = alival::profile_from_encounters(encounters[id], sex_of[id],
                                                       thresholds);
        int recovered = 0;
        if (apply_roadmap_flag) {
            auto it = diagnoses.find(id);
            if (it != diagnoses.end()) {
                profile = alival::apply_roadmap(profile, it->second, thresholds);
                for (bool r : profile.recovered) recovered += r ? 1 : 0;
            }
        }
        const auto ali = alival::compute_ali(profile);
        out.row({id,
                 ali.value ? alival::csv::format_field(*ali.value) : "",
                 std::to_string(ali.numerator), std::to_string(ali.denominator),
                 std::to_string(recovered)});
    }
    out.close();
}

// --- fit naive / fit smle ----------------------------------------------------

void run_fit_naive(const std::string& phase_one_path, const std::string& out_path,
                   const std::string& residuals_path) {
    const auto rows = alival::formats::read_phase_one_csv(phase_one_path);
    std::vector<std::string> excluded;
    const auto fit = alival::fit_logistic(rows, &excluded);
    if (!excluded.empty()) {
        std::cerr << "warning: " << excluded.size()
                  << " rows without X_star excluded:";
        for (const auto& id : excluded) std::cerr << ' ' << id;
        std::cerr << '\n';
    }
    write_json_file(out_path, alival::formats::logit_fit_to_json(fit));
    if (!residuals_path.empty()) {
        alival::formats::write_residuals_csv(residuals_path,
                                             alival::compute_residuals(fit, rows));
    }
    std::cout << "naive fit written to " << out_path << '\n';
}

void run_fit_smle(const std::string& phase_one_path,
                  const std::string& validation_path, const std::string& out_path,
                  int basis_dim, int order, bool no_se, int bootstrap_reps,
                  std::uint64_t seed) {
    auto all_rows = alival::formats::read_phase_one_csv(phase_one_path);
    const auto validated = alival::formats::read_validation_csv(validation_path);

    std::vector<std::string> excluded;
    alival::TwoPhaseDataset data;
    for (auto& r : all_rows) {
        if (!r.x_star.has_value()) {
            if (validated.count(r.patient_id)) {
                throw alival::data_error("validated patient " + r.patient_id +
                                         " has no X_star in the phase-one file");
            }
            excluded.push_back(r.patient_id);
            continue;
        }
        const auto it = validated.find(r.patient_id);
        data.validated.push_back(it != validated.end() ? 1 : 0);
        data.x_validated.push_back(it != validated.end()
                                       ? it->second
                                       : std::numeric_limits<double>::quiet_NaN());
        data.rows.push_back(std::move(r));
    }
    if (!excluded.empty()) {
        std::cerr << "warning: " << excluded.size()
                  << " rows without X_star excluded:";
        for (const auto& id : excluded) std::cerr << ' ' << id;
        std::cerr << '\n';
    }
    for (const auto& [id, x] : validated) {
        bool found = false;
        for (const auto& r : data.rows) found = found || r.patient_id == id;
        if (!found) {
            throw alival::data_error("validation row for unknown patient " + id);
        }
    }

    alival::SieveConfig sieve;
    if (basis_dim > 0) sieve.basis_dim = basis_dim;
    sieve.order = order;
    std::vector<double> xs, knots;
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
        xs.push_back(*data.rows[i].x_star);
        if (data.validated[i]) knots.push_back(*data.rows[i].x_star);
    }
    const auto grid = alival::SupportGrid::default_grid();
    const auto basis = alival::build_sieve(xs, sieve, knots);
    auto fit = alival::em_fit(data, grid, basis);
    for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';

    std::string se_method = "none";
    if (!no_se) {
        alival::ProfileSeConfig pc;
        pc.sieve = sieve;
        pc.bootstrap_reps = bootstrap_reps;
        pc.seed = alival::derive_seed(seed, "smle-se");
        const auto se = alival::profile_se(fit, data, grid, basis, pc);
        fit.se = se.se;
        se_method = se.method;
    }
    write_json_file(out_path, alival::formats::smle_fit_to_json(fit, se_method));
    std::cout << "smle fit written to " << out_path << '\n';
}

// --- design select ------------------------------------------------------------

void run_design_select(const std::string& design, int n, std::uint64_t seed,
                       const std::string& phase_one_path,
                       const std::string& residuals_path,
                       const std::string& exclude_path, double cut,
                       const std::string& pilot_path,
                       const std::string& ets_score, int wave,
                       const std::string& out_path) {
    const auto rows = alival::formats::read_phase_one_csv(phase_one_path);
    alival::DesignSpec spec;
    spec.kind = alival::parse_design(design);
    spec.n = n;
    spec.seed = seed;
    spec.x_star_cut = cut;
    if (ets_score == "residual") {
        spec.ets_score = alival::EtsScore::residual;
    } else if (ets_score != "x_star") {
        throw alival::config_error("--ets-score must be x_star or residual");
    }
    if (!pilot_path.empty()) spec.pilot_beta = beta_from_fit_json(pilot_path);

    std::map<std::string, double> residuals;
    const std::map<std::string, double>* residuals_ptr = nullptr;
    if (!residuals_path.empty()) {
        residuals = alival::formats::read_residuals_csv(residuals_path);
        residuals_ptr = &residuals;
    }
    std::set<std::string> exclude;
    if (!exclude_path.empty()) {
        exclude = alival::formats::read_selection_ids(exclude_path);
    }
    const auto sel =
        alival::select_validation(spec, rows, residuals_ptr, exclude);
    alival::formats::write_selection_csv(out_path, sel, wave);
    std::cout << "selected " << sel.selected_ids.size() << " patients ("
              << design << ") -> " << out_path << '\n';
}

// --- audit subcommands ---------------------------------------------------------

void run_audit_prepare(const std::string& components_path,
                       const std::string& thresholds_path,
                       const std::string& selection_path,
                       const std::string& out_path) {
    const auto thresholds = thresholds_or_default(thresholds_path);
    auto wide = alival::formats::read_components_csv(components_path);
    if (!selection_path.empty()) {
        const auto keep = alival::formats::read_selection_ids(selection_path);
        std::vector<alival::WideRow> filtered;
        for (auto& w : wide) {
            if (keep.count(w.patient_id)) filtered.push_back(std::move(w));
        }
        wide = std::move(filtered);
    }
    const auto workbook = alival::widen_to_long(wide, thresholds);
    alival::formats::write_workbook_csv(out_path, workbook);
    std::cout << "workbook with " << workbook.size() << " rows -> " << out_path
              << '\n';
}

void run_audit_ingest(const std::string& workbook_path,
                      const std::string& out_path) {
    const auto rows = alival::formats::read_workbook_csv(workbook_path);
    std::vector<alival::Finding> findings;
    findings.reserve(rows.size());
    for (const auto& r : rows) findings.push_back(alival::classify_finding(r));
    alival::formats::write_workbook_csv(out_path, rows, &findings);
    std::cout << "classified " << rows.size() << " rows -> " << out_path << '\n';
}

std::map<std::string, alival::Sex> sex_map_from_components(
    const std::string& components_path) {
    std::map<std::string, alival::Sex> out;
    for (const auto& w : alival::formats::read_components_csv(components_path)) {
        out[w.patient_id] = w.sex;
    }
    return out;
}

void run_audit_quality(const std::string& findings_path,
                       const std::string& components_path,
                       const std::string& thresholds_path,
                       const std::string& out_path,
                       const std::string& heatmap_path) {
    const auto thresholds = thresholds_or_default(thresholds_path);
    const auto rows = alival::formats::read_workbook_csv(findings_path);
    const auto sex_of = sex_map_from_components(components_path);
    const auto [pre, post] =
        alival::stressor_profiles_from_workbook(rows, sex_of, thresholds);
    const auto report = alival::quality_report(rows, pre, post);
    write_json_file(out_path, alival::formats::quality_report_to_json(report));
    if (!heatmap_path.empty()) {
        alival::formats::write_quality_heatmap_csv(heatmap_path, report);
    }
    std::cout << "quality report -> " << out_path << '\n';
}

void run_audit_kappa(const std::string& ratings_path) {
    const auto ratings = alival::formats::read_ratings_csv(ratings_path);
    const double kappa = alival::fleiss_kappa(ratings);
    std::printf("fleiss_kappa %.6f (%zu items, %zu raters)\n", kappa,
                ratings.size(), ratings.front().size());
}

// --- sim run -------------------------------------------------------------------

void run_sim(const std::string& config_path, const std::string& out_path,
             const std::string& long_path, std::uint64_t seed, bool seed_given) {
    json j = read_json_file(config_path);
    if (seed_given) j["master_seed"] = seed;
    const auto spec = alival::formats::sim_run_spec_from_json(j);
    std::vector<alival::DesignComparisonTable> tables;
    for (const auto& scenario : spec.scenarios) {
        std::cerr << "scenario '" << scenario.label << "': R="
                  << scenario.config.replicates << "\n";
        auto table = alival::run_replicates(scenario.config, spec.designs,
                                            scenario.label);
        const auto summary = alival::summarize_designs(table);
        std::cout << "scenario '" << scenario.label << "' ranking:";
        for (const auto& r : summary.ranking) {
            std::printf(" %s(se=%.4f,rank=%d)", alival::design_name(r.design),
                        r.empirical_se, r.rank);
        }
        std::cout << '\n';
        tables.push_back(std::move(table));
    }
    alival::formats::write_comparison_csv(out_path, tables);
    if (!long_path.empty()) {
        alival::formats::write_comparison_long_csv(long_path, tables);
    }
    std::cout << "comparison table -> " << out_path << '\n';
}

// --- wave advance / status -------------------------------------------------------

void run_wave_advance(const std::string& state_path,
                      const std::string& selection_path,
                      const std::string& findings_path,
                      const std::string& components_path,
                      const std::string& thresholds_path,
                      const std::string& design_label, int budget) {
    alival::StateLock lock(state_path);
    alival::WaveState state;
    if (std::ifstream(state_path).good()) {
        state = alival::load_wave_state(state_path);
    }
    if (budget > 0) state.budget = budget;

    alival::ValidationSelection sel;
    const auto ids = alival::formats::read_selection_ids(selection_path);
    sel.selected_ids.assign(ids.begin(), ids.end());
    if (!design_label.empty()) {
        // Provenance echo; the label is stored verbatim.
        sel.spec.kind = alival::DesignKind::SRS;
    }
    sel.spec.n = static_cast<int>(sel.selected_ids.size());

    alival::QualityReport report;
    if (!findings_path.empty()) {
        const auto rows = alival::formats::read_workbook_csv(findings_path);
        const auto thresholds = thresholds_or_default(thresholds_path);
        const auto sex_of = sex_map_from_components(components_path);
        const auto [pre, post] =
            alival::stressor_profiles_from_workbook(rows, sex_of, thresholds);
        report = alival::quality_report(rows, pre, post);
    }
    auto next = alival::advance_wave(state, sel, report);
    if (!design_label.empty()) {
        next.waves.back().design = design_label;
    }
    alival::save_wave_state(next, state_path);
    std::cout << "wave " << next.wave_index << " recorded; cumulative validated "
              << next.validated_ids().size() << '\n';
}

void run_wave_status(const std::string& state_path) {
    const auto state = alival::load_wave_state(state_path);
    std::printf("wave_index %d\n", state.wave_index);
    std::printf("cumulative_validated %zu\n", state.validated_ids().size());
    if (state.budget) std::printf("budget %d\n", *state.budget);
    for (const auto& w : state.waves) {
        std::printf("wave %d: %zu patients via %s\n", w.index, w.ids.size(),
                    w.design.c_str());
    }
    auto show = [](const char* name, const alival::Rate& r) {
        if (r.value.has_value()) {
            std::printf("%s %.4f (%ld/%ld)\n", name, *r.value, r.numerator,
                        r.denominator);
        } else {
            std::printf("%s unavailable\n", name);
        }
    };
    show("tpr", state.tpr());
    show("fpr", state.fpr());
    show("recovery_rate", state.recovery_rate());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-phase validation-study toolkit for the allostatic load index"};
    app.set_version_flag("--version", alival::kVersion);
    app.require_subcommand(1);

    GlobalOpts global;
    bool seed_given = false;
    app.add_flag("--json-errors", global.json_errors,
                 "emit errors as machine-readable JSON");
    app.add_option("--seed", global.seed, "master seed for all randomness")
        ->each([&seed_given](const std::string&) { seed_given = true; });

    // ali
    auto* ali = app.add_subcommand("ali", "ALI computation");
    auto* ali_compute = ali->add_subcommand("compute", "compute per-patient ALI");
    std::string ac_components, ac_diagnoses, ac_thresholds, ac_out;
    bool ac_roadmap = false;
    ali_compute->add_option("--components", ac_components, "components CSV")
        ->required();
    ali_compute->add_option("--diagnoses", ac_diagnoses, "diagnoses CSV");
    ali_compute->add_flag("--apply-roadmap", ac_roadmap,
                          "recover missing components from diagnoses");
    ali_compute->add_option("--thresholds", ac_thresholds, "threshold config JSON");
    ali_compute->add_option("--out", ac_out, "output ALI CSV")->required();

    // fit
    auto* fit = app.add_subcommand("fit", "model fitting");
    auto* fit_naive = fit->add_subcommand("naive", "naive logistic fit");
    std::string fn_phase, fn_out, fn_resid;
    fit_naive->add_option("--phase-one", fn_phase, "phase-one CSV")->required();
    fit_naive->add_option("--out", fn_out, "fit summary JSON")->required();
    fit_naive->add_option("--residuals", fn_resid, "residuals CSV");

    auto* fit_smle = fit->add_subcommand("smle", "sieve MLE fit");
    std::string fs_phase, fs_validation, fs_out;
    int fs_basis = 0, fs_order = 4, fs_boot = 200;
    bool fs_nose = false;
    fit_smle->add_option("--phase-one", fs_phase, "phase-one CSV")->required();
    fit_smle->add_option("--validation", fs_validation, "validation CSV")
        ->required();
    fit_smle->add_option("--out", fs_out, "fit summary JSON")->required();
    fit_smle->add_option("--basis-dim", fs_basis, "sieve basis dimension");
    fit_smle->add_option("--order", fs_order, "spline order (4 = cubic)");
    fit_smle->add_flag("--no-se", fs_nose, "skip standard errors");
    fit_smle->add_option("--bootstrap-reps", fs_boot,
                         "bootstrap replicates for the SE fallback");

    // design
    auto* design = app.add_subcommand("design", "validation designs");
    auto* design_select =
        design->add_subcommand("select", "select patients for validation");
    std::string ds_design, ds_phase, ds_resid, ds_exclude, ds_pilot, ds_out;
    std::string ds_ets_score = "x_star";
    int ds_n = 0, ds_wave = 0;
    double ds_cut = 0.33;
    design_select
        ->add_option("--design", ds_design, "srs|cc|bcc|opt|ets|rs")
        ->required();
    design_select->add_option("--n", ds_n, "validation budget")->required();
    design_select->add_option("--phase-one", ds_phase, "phase-one CSV")
        ->required();
    design_select->add_option("--residuals", ds_resid, "residuals CSV (rs/ets)");
    design_select->add_option("--exclude", ds_exclude,
                              "selection CSV of already-validated ids");
    design_select->add_option("--cut", ds_cut, "x* cut point (bcc/opt)");
    design_select->add_option("--pilot", ds_pilot, "pilot fit JSON (opt)");
    design_select->add_option("--ets-score", ds_ets_score,
                              "ets ranking score: x_star|residual");
    design_select->add_option("--wave", ds_wave, "wave index for the output");
    design_select->add_option("--out", ds_out, "selection CSV")->required();

    // audit
    auto* audit = app.add_subcommand("audit", "audit workbooks and metrics");
    auto* audit_prepare = audit->add_subcommand("prepare", "build audit workbook");
    std::string ap_components, ap_thresholds, ap_selection, ap_out;
    audit_prepare->add_option("--components", ap_components, "components CSV")
        ->required();
    audit_prepare->add_option("--thresholds", ap_thresholds, "threshold config");
    audit_prepare->add_option("--selection", ap_selection,
                              "limit workbook to selected patients");
    audit_prepare->add_option("--out", ap_out, "workbook CSV")->required();

    auto* audit_ingest = audit->add_subcommand("ingest", "classify findings");
    std::string ai_workbook, ai_out;
    audit_ingest->add_option("--workbook", ai_workbook, "completed workbook CSV")
        ->required();
    audit_ingest->add_option("--out", ai_out, "findings CSV")->required();

    auto* audit_quality = audit->add_subcommand("quality", "data-quality report");
    std::string aq_findings, aq_components, aq_thresholds, aq_out, aq_heatmap;
    audit_quality->add_option("--findings", aq_findings, "findings CSV")
        ->required();
    audit_quality
        ->add_option("--components", aq_components,
                     "components CSV (sex lookup)")
        ->required();
    audit_quality->add_option("--thresholds", aq_thresholds, "threshold config");
    audit_quality->add_option("--out", aq_out, "report JSON")->required();
    audit_quality->add_option("--heatmap", aq_heatmap, "per-component CSV");

    auto* audit_kappa =
        audit->add_subcommand("kappa", "Fleiss' kappa from double-rated items");
    std::string ak_ratings;
    audit_kappa->add_option("--ratings", ak_ratings, "ratings CSV")->required();

    // sim
    auto* sim = app.add_subcommand("sim", "design-comparison simulations");
    auto* sim_run = sim->add_subcommand("run", "run replicated comparisons");
    std::string sr_config, sr_out, sr_long;
    sim_run->add_option("--config", sr_config, "simulation config JSON")
        ->required();
    sim_run->add_option("--out", sr_out, "comparison table CSV")->required();
    sim_run->add_option("--long", sr_long, "plot-ready long CSV");

    // wave
    auto* wave = app.add_subcommand("wave", "multi-wave state");
    auto* wave_advance = wave->add_subcommand("advance", "record a new wave");
    std::string wa_state, wa_selection, wa_findings, wa_components,
        wa_thresholds, wa_label;
    int wa_budget = 0;
    wave_advance->add_option("--state", wa_state, "state JSON")->required();
    wave_advance->add_option("--selection", wa_selection, "selection CSV")
        ->required();
    wave_advance->add_option("--findings", wa_findings, "findings CSV");
    wave_advance->add_option("--components", wa_components,
                             "components CSV (sex lookup)");
    wave_advance->add_option("--thresholds", wa_thresholds, "threshold config");
    wave_advance->add_option("--design-label", wa_label, "provenance label");
    wave_advance->add_option("--budget", wa_budget, "total validation budget");

    auto* wave_status = wave->add_subcommand("status", "print state summary");
    std::string ws_state;
    wave_status->add_option("--state", ws_state, "state JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    auto fail = [&global](const std::string& type, const std::string& message,
                          int code) {
        if (global.json_errors) {
            json j;
            j["error"] = {{"type", type}, {"message", message}};
            std::cout << j.dump() << '\n';
        } else {
            std::cerr << "error: " << message << '\n';
        }
        return code;
    };

    try {
        if (ali_compute->parsed()) {
            run_ali_compute(ac_components, ac_diagnoses, ac_roadmap,
                            ac_thresholds, ac_out);
        } else if (fit_naive->parsed()) {
            run_fit_naive(fn_phase, fn_out, fn_resid);
        } else if (fit_smle->parsed()) {
            run_fit_smle(fs_phase, fs_validation, fs_out, fs_basis, fs_order,
                         fs_nose, fs_boot, global.seed);
        } else if (design_select->parsed()) {
            run_design_select(ds_design, ds_n,
                              alival::derive_seed(global.seed, "design-select"),
                              ds_phase, ds_resid, ds_exclude, ds_cut, ds_pilot,
                              ds_ets_score, ds_wave, ds_out);
        } else if (audit_prepare->parsed()) {
            run_audit_prepare(ap_components, ap_thresholds, ap_selection, ap_out);
        } else if (audit_ingest->parsed()) {
            run_audit_ingest(ai_workbook, ai_out);
        } else if (audit_quality->parsed()) {
            run_audit_quality(aq_findings, aq_components, aq_thresholds, aq_out,
                              aq_heatmap);
        } else if (audit_kappa->parsed()) {
            run_audit_kappa(ak_ratings);
        } else if (sim_run->parsed()) {
            run_sim(sr_config, sr_out, sr_long, global.seed, seed_given);
        } else if (wave_advance->parsed()) {
            run_wave_advance(wa_state, wa_selection, wa_findings, wa_components,
                             wa_thresholds, wa_label, wa_budget);
        } else if (wave_status->parsed()) {
            run_wave_status(ws_state);
        } else {
            std::cerr << app.help() << '\n';
            return 2;
        }
    } catch (const alival::config_error& e) {
        return fail("config_error", e.what(), 2);
    } catch (const alival::separation_error& e) {
        return fail("separation_error", e.what(), 1);
    } catch (const alival::degenerate_input_error& e) {
        return fail("degenerate_input_error", e.what(), 1);
    } catch (const alival::data_error& e) {
        return fail("data_error", e.what(), 1);
    } catch (const std::exception& e) {
        return fail("internal_error", e.what(), 1);
    }
    return 0;
}
