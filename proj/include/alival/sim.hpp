#pragma once

// Synthetic-cohort generator and replicated design-comparison experiments.
//
// Cohorts mimic the error/missingness structure of an extracted EHR ALI:
// per-component true stressors, missingness, misclassification of observed
// stressors (TPR/FPR), and roadmap-style recovery of a fraction of missing
// components during validation. The outcome is driven by the full-
// information ALI; the validator resolves errors on observed components and
// only the recovered subset of missing ones, so post-validation exposure
// still falls short of the truth when recovery is partial.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "alival/common.hpp"
#include "alival/design.hpp"
#include "alival/logistic.hpp"
#include "alival/rng.hpp"
#include "alival/smle.hpp"

namespace alival {

struct SimConfig {
    int cohort_size = 1000;  // N
    int budget = 100;        // n validated
    std::array<double, 3> beta = {-1.383, 0.945, 0.103};
    double age_lo = 18.0;
    double age_hi = 65.0;
    // Decreasing component prevalences, fitted so the error-prone ALI median
    // sits at 0.33 under the default missingness and error rates at
    // N = 10000 (tools/calibrate_prevalence reproduces the fit).
    std::array<double, 10> prevalence = {0.5097, 0.4587, 0.4078, 0.3568, 0.3058,
                                         0.2548, 0.2039, 0.1529, 0.1019, 0.0510};
    // Cardiovascular components nearly always measured, metabolic labs
    // missing for about a fifth of patients, rare inflammation labs mostly
    // missing.
    std::array<double, 10> missingness = {0.01, 0.01, 0.21, 0.21, 0.21,
                                          0.96, 0.40, 0.35, 0.30, 0.96};
    std::array<double, 10> tpr = {0.995, 0.995, 0.995, 0.995, 0.995,
                                  0.995, 0.995, 0.995, 0.995, 0.995};
    std::array<double, 10> fpr = {0.02, 0.02, 0.02, 0.02, 0.02,
                                  0.02, 0.02, 0.02, 0.02, 0.02};
    std::array<double, 10> recovery = {0.21, 0.21, 0.21, 0.21, 0.21,
                                       0.21, 0.21, 0.21, 0.21, 0.21};
    int replicates = 500;
    std::uint64_t master_seed = 20240211;
    bool compute_model_se = false;  // profile SEs per replicate are costly
    int threads = 0;                // 0 = hardware concurrency
    SieveConfig sieve;

    void set_tpr(double v) { tpr.fill(v); }
    void set_fpr(double v) { fpr.fill(v); }
    void set_recovery(double v) { recovery.fill(v); }

    void validate() const {
        auto check01 = [](const std::array<double, 10>& a, const char* what) {
            for (double v : a) {
                if (!(v >= 0.0 && v <= 1.0)) {
                    throw config_error(std::string(what) + " must lie in [0,1]");
                }
            }
        };
        check01(prevalence, "prevalence");
        check01(missingness, "missingness");
        check01(tpr, "tpr");
        check01(fpr, "fpr");
        check01(recovery, "recovery");
        if (cohort_size < budget) {
            throw config_error("cohort size must be at least the budget");
        }
        if (budget <= 0) throw config_error("budget must be positive");
        if (age_hi <= age_lo) throw config_error("age range is empty");
    }
};

struct SimPatient {
    std::string id;
    std::array<int, 10> truth{};      // true stressor per component
    std::array<int, 10> observed{};   // EHR stressor, -1 when missing
    std::array<bool, 10> recovered{}; // missing component the audit resolves
    double z = 0.0;
    int y = 0;
    std::optional<double> x_star;  // EHR ALI
    double x_full = 0.0;           // full-information ALI (drives Y)
    std::optional<double> x_val;   // post-validation ALI
};

struct SimPopulation {
    std::vector<SimPatient> patients;

    std::vector<PhaseOneRow> phase_one() const {
        std::vector<PhaseOneRow> rows;
        rows.reserve(patients.size());
        for (const auto& p : patients) {
            rows.push_back({p.id, p.y, p.x_star, p.z});
        }
        return rows;
    }
};

inline SimPopulation generate_population(const SimConfig& config,
                                         std::uint64_t replicate_seed) {
    config.validate();
    Rng g = make_rng(replicate_seed);
    SimPopulation pop;
    pop.patients.resize(static_cast<std::size_t>(config.cohort_size));
    int with_x_star = 0;
    for (int i = 0; i < config.cohort_size; ++i) {
        SimPatient& pt = pop.patients[static_cast<std::size_t>(i)];
        char buf[16];
        std::snprintf(buf, sizeof(buf), "p%06d", i + 1);
        pt.id = buf;
        const double age = uniform_real(g, config.age_lo, config.age_hi);
        pt.z = age_to_z(age);

        int full_num = 0, obs_num = 0, obs_den = 0, val_num = 0, val_den = 0;
        for (int c = 0; c < 10; ++c) {
            const std::size_t cc = static_cast<std::size_t>(c);
            pt.truth[cc] = bernoulli(g, config.prevalence[cc]) ? 1 : 0;
            full_num += pt.truth[cc];
            const bool missing = bernoulli(g, config.missingness[cc]);
            if (missing) {
                pt.observed[cc] = -1;
                pt.recovered[cc] = bernoulli(g, config.recovery[cc]);
                if (pt.recovered[cc]) {
                    val_num += pt.truth[cc];
                    ++val_den;
                }
            } else {
                const double p_one =
                    pt.truth[cc] ? config.tpr[cc] : config.fpr[cc];
                pt.observed[cc] = bernoulli(g, p_one) ? 1 : 0;
                obs_num += pt.observed[cc];
                ++obs_den;
                val_num += pt.truth[cc];  // validation corrects observed values
                ++val_den;
            }
        }
        pt.x_full = full_num / 10.0;
        if (obs_den > 0) {
            pt.x_star = static_cast<double>(obs_num) / obs_den;
            ++with_x_star;
        }
        if (val_den > 0) {
            pt.x_val = static_cast<double>(val_num) / val_den;
        }
        pt.y = bernoulli(g, expit(config.beta[0] + config.beta[1] * pt.x_full +
                                  config.beta[2] * pt.z))
                   ? 1
                   : 0;
    }
    if (with_x_star == 0) {
        throw data_error(
            "every simulated patient has an all-missing extract; no error-prone "
            "ALI can be formed (raise per-component availability)");
    }
    return pop;
}

struct DesignCell {
    DesignKind design;
    int replicates_ok = 0;
    int failures = 0;
    bool flagged = false;  // more than 10% of replicates failed
    double bias = std::numeric_limits<double>::quiet_NaN();
    double empirical_se = std::numeric_limits<double>::quiet_NaN();
    double mean_model_se = std::numeric_limits<double>::quiet_NaN();
    double rel_efficiency_vs_srs = std::numeric_limits<double>::quiet_NaN();
};

struct DesignComparisonTable {
    std::string scenario;
    double true_beta1 = 0.0;
    std::vector<DesignCell> cells;
    // The uncorrected estimator on the same replicates, for reference.
    double naive_bias = std::numeric_limits<double>::quiet_NaN();
    double naive_empirical_se = std::numeric_limits<double>::quiet_NaN();
    int naive_failures = 0;
};

namespace detail {

struct ReplicateResult {
    std::vector<double> beta1;     // per design, NaN = failure
    std::vector<double> model_se;  // per design, NaN = unavailable
    double naive_beta1 = std::numeric_limits<double>::quiet_NaN();
};

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline ReplicateResult run_one_replicate(const SimConfig& config,
                                         const std::vector<DesignKind>& designs,
                                         std::uint64_t replicate_index) {
    ReplicateResult res;
    res.beta1.assign(designs.size(), std::numeric_limits<double>::quiet_NaN());
    res.model_se.assign(designs.size(), std::numeric_limits<double>::quiet_NaN());

    const auto pop = generate_population(
        config, derive_seed(config.master_seed, "replicate", replicate_index));
    std::vector<PhaseOneRow> rows;
    std::map<std::string, const SimPatient*> by_id;
    for (const auto& p : pop.patients) {
        if (!p.x_star.has_value()) continue;  // no phase-one exposure
        rows.push_back({p.id, p.y, p.x_star, p.z});
        by_id[p.id] = &p;
    }

    LogitFit naive;
    std::map<std::string, double> residual_map;
    try {
        naive = fit_logistic(rows);
        res.naive_beta1 = naive.beta(1);
        for (const auto& [id, r] : compute_residuals(naive, rows).values) {
            residual_map[id] = r;
        }
    } catch (const data_error&) {
        return res;  // replicate unusable for every design
    }

    std::vector<double> xs;
    for (const auto& r : rows) xs.push_back(*r.x_star);
    const double cut = median_of(xs);
    const SupportGrid grid = SupportGrid::default_grid();

    for (std::size_t d = 0; d < designs.size(); ++d) {
        DesignSpec spec;
        spec.kind = designs[d];
        spec.n = config.budget;
        spec.seed = derive_seed(config.master_seed,
                                std::string("design-") + design_name(spec.kind),
                                replicate_index);
        spec.x_star_cut = cut;
        if (spec.kind == DesignKind::OPT) spec.pilot_beta = naive.beta;
        try {
            const auto sel = select_validation(spec, rows, &residual_map);
            TwoPhaseDataset ds;
            ds.rows = rows;
            ds.validated.assign(rows.size(), 0);
            ds.x_validated.assign(rows.size(),
                                  std::numeric_limits<double>::quiet_NaN());
            std::set<std::string> chosen(sel.selected_ids.begin(),
                                         sel.selected_ids.end());
            std::vector<double> knot_src;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (chosen.count(rows[i].patient_id)) {
                    const SimPatient* p = by_id[rows[i].patient_id];
                    ds.validated[i] = 1;
                    ds.x_validated[i] = *p->x_val;
                    knot_src.push_back(*rows[i].x_star);
                }
            }
            std::vector<double> all_x;
            for (const auto& r : rows) all_x.push_back(*r.x_star);
            const SieveBasis basis = build_sieve(all_x, config.sieve, knot_src);
            const Eigen::VectorXd start = naive.beta;
            const SmleFit fit = em_fit(ds, grid, basis, &start);
            if (!fit.converged) continue;
            res.beta1[d] = fit.beta(1);
            if (config.compute_model_se) {
                ProfileSeConfig pc;
                pc.sieve = config.sieve;
                pc.seed = spec.seed;
                res.model_se[d] = profile_se(fit, ds, grid, basis, pc).se(1);
            }
        } catch (const data_error&) {
            // failure recorded as NaN for this cell
        }
    }
    return res;
}

}  // namespace detail

// Replicated design comparison. Per-replicate seeds derive from the master
// seed and replicate index, and results aggregate in replicate order, so the
// table is identical for any thread count.
inline DesignComparisonTable run_replicates(const SimConfig& config,
                                            const std::vector<DesignKind>& designs,
                                            const std::string& scenario_label = "") {
    config.validate();
    if (config.replicates < 2) {
        throw config_error("design comparison needs at least 2 replicates");
    }
    if (designs.empty()) throw config_error("no designs given");

    const int R = config.replicates;
    std::vector<detail::ReplicateResult> results(static_cast<std::size_t>(R));
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    const int n_threads = config.threads > 0 ? config.threads : hw;

    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= R) break;
            results[static_cast<std::size_t>(r)] = detail::run_one_replicate(
                config, designs, static_cast<std::uint64_t>(r));
        }
    };
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    DesignComparisonTable table;
    table.scenario = scenario_label;
    table.true_beta1 = config.beta[1];

    std::vector<double> naive_draws;
    for (const auto& res : results) {
        if (std::isfinite(res.naive_beta1)) naive_draws.push_back(res.naive_beta1);
    }
    table.naive_failures = R - static_cast<int>(naive_draws.size());
    if (naive_draws.size() >= 2) {
        double mean = 0.0;
        for (double v : naive_draws) mean += v;
        mean /= static_cast<double>(naive_draws.size());
        double var = 0.0;
        for (double v : naive_draws) var += (v - mean) * (v - mean);
        var /= static_cast<double>(naive_draws.size() - 1);
        table.naive_bias = mean - config.beta[1];
        table.naive_empirical_se = std::sqrt(var);
    }

    double srs_var = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t d = 0; d < designs.size(); ++d) {
        DesignCell cell;
        cell.design = designs[d];
        std::vector<double> draws, ses;
        for (const auto& res : results) {
            const double b = res.beta1[d];
            if (std::isfinite(b)) {
                draws.push_back(b);
                if (std::isfinite(res.model_se[d])) ses.push_back(res.model_se[d]);
            } else {
                ++cell.failures;
            }
        }
        cell.replicates_ok = static_cast<int>(draws.size());
        cell.flagged = cell.failures * 10 > R;
        if (draws.size() >= 2) {
            double mean = 0.0;
            for (double v : draws) mean += v;
            mean /= static_cast<double>(draws.size());
            double var = 0.0;
            for (double v : draws) var += (v - mean) * (v - mean);
            var /= static_cast<double>(draws.size() - 1);
            cell.bias = mean - config.beta[1];
            cell.empirical_se = std::sqrt(var);
            if (designs[d] == DesignKind::SRS) srs_var = var;
        }
        if (!ses.empty()) {
            double m = 0.0;
            for (double v : ses) m += v;
            cell.mean_model_se = m / static_cast<double>(ses.size());
        }
        table.cells.push_back(cell);
    }
    if (std::isfinite(srs_var)) {
        for (auto& cell : table.cells) {
            if (std::isfinite(cell.empirical_se)) {
                cell.rel_efficiency_vs_srs =
                    (cell.empirical_se * cell.empirical_se) / srs_var;
            }
        }
    }
    return table;
}

struct DesignRank {
    DesignKind design;
    int rank = 0;  // 1 = best; ties share a rank
    double empirical_se = 0.0;
    double rel_efficiency_vs_srs = std::numeric_limits<double>::quiet_NaN();
};

struct DesignSummary {
    std::string scenario;
    std::vector<DesignRank> ranking;  // ascending empirical SE
    std::vector<DesignKind> winners;  // all designs sharing rank 1
};

inline DesignSummary summarize_designs(const DesignComparisonTable& table) {
    if (table.cells.empty()) throw data_error("empty design comparison table");
    DesignSummary out;
    out.scenario = table.scenario;
    std::vector<const DesignCell*> cells;
    for (const auto& c : table.cells) cells.push_back(&c);
    std::stable_sort(cells.begin(), cells.end(),
                     [](const DesignCell* a, const DesignCell* b) {
                         return a->empirical_se < b->empirical_se;
                     });
    int rank = 0;
    double prev_se = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i == 0 || cells[i]->empirical_se != prev_se) {
            rank = static_cast<int>(i) + 1;
        }
        prev_se = cells[i]->empirical_se;
        out.ranking.push_back({cells[i]->design, rank, cells[i]->empirical_se,
                               cells[i]->rel_efficiency_vs_srs});
    }
    for (const auto& r : out.ranking) {
        if (r.rank == 1) out.winners.push_back(r.design);
    }
    return out;
}

// Scale a decreasing base profile so the simulated error-prone ALI median
// lands on `target_median`; used to fit the default prevalences. The ALI is
// a discrete mixture of proportions, so the fit centers the probability
// mass of the atoms nearest the target on the 0.5 quantile; that keeps the
// sample median on the target across seeds instead of flipping to a
// neighbouring atom.
inline std::array<double, 10> calibrate_prevalence(SimConfig config,
                                                   double target_median = 0.33,
                                                   int sample_size = 10000) {
    const std::array<double, 10> base = {1.0, 0.9, 0.8, 0.7, 0.6,
                                         0.5, 0.4, 0.3, 0.2, 0.1};
    config.cohort_size = sample_size;
    config.budget = 1;
    double lo = 0.05, hi = 1.0;
    std::array<double, 10> best{};
    for (int iter = 0; iter < 40; ++iter) {
        const double scale = 0.5 * (lo + hi);
        for (int c = 0; c < 10; ++c) {
            config.prevalence[static_cast<std::size_t>(c)] =
                std::min(1.0, base[static_cast<std::size_t>(c)] * scale);
        }
        const auto pop = generate_population(
            config, derive_seed(config.master_seed, "prevalence-calibration"));
        double below = 0.0, at = 0.0, n = 0.0;
        for (const auto& p : pop.patients) {
            if (!p.x_star.has_value()) continue;
            n += 1.0;
            if (*p.x_star < target_median - 0.015) {
                below += 1.0;
            } else if (*p.x_star <= target_median + 0.015) {
                at += 1.0;
            }
        }
        const double straddle = (below + 0.5 * at) / n;
        best = config.prevalence;
        if (std::abs(straddle - 0.5) < 5e-4) break;
        if (straddle > 0.5) {
            lo = scale;  // too much mass below: raise prevalences
        } else {
            hi = scale;
        }
    }
    return best;
}

}  // namespace alival
