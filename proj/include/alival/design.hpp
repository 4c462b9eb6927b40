#pragma once

// Validation-sampling designs: simple random, case-control, balanced
// case-control, optimal stratified allocation, extreme-tail, and residual
// sampling. Selection is a seeded deterministic function of phase-one data
// only, so the validated exposure stays missing at random by construction.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "alival/common.hpp"
#include "alival/logistic.hpp"
#include "alival/rng.hpp"

namespace alival {

enum class DesignKind { SRS, CC, BCC, OPT, ETS, RS };

inline const char* design_name(DesignKind k) {
    switch (k) {
        case DesignKind::SRS: return "srs";
        case DesignKind::CC: return "cc";
        case DesignKind::BCC: return "bcc";
        case DesignKind::OPT: return "opt";
        case DesignKind::ETS: return "ets";
        case DesignKind::RS: return "rs";
    }
    return "?";
}

inline DesignKind parse_design(const std::string& s) {
    for (DesignKind k : {DesignKind::SRS, DesignKind::CC, DesignKind::BCC,
                         DesignKind::OPT, DesignKind::ETS, DesignKind::RS}) {
        if (s == design_name(k)) return k;
    }
    throw config_error("unknown design kind: '" + s + "'");
}

enum class EtsScore { x_star, residual };

struct DesignSpec {
    DesignKind kind = DesignKind::SRS;
    int n = 0;                   // validation budget
    std::uint64_t seed = 0;
    double x_star_cut = 0.33;    // BCC/OPT exposure discretization point
    EtsScore ets_score = EtsScore::x_star;
    // OPT: pilot coefficient estimates for the influence computation.
    std::optional<Eigen::VectorXd> pilot_beta;
};

struct ValidationSelection {
    std::vector<std::string> selected_ids;
    std::map<std::string, std::string> stratum_of;  // id -> stratum label
    std::map<std::string, int> stratum_counts;      // label -> count
    DesignSpec spec;
};

struct StratumStat {
    std::string label;
    std::size_t size = 0;              // unvalidated patients available
    double influence_variance = 0.0;   // pilot-based information contribution
};

namespace detail {

struct Candidate {
    std::size_t index;       // into rows
    const PhaseOneRow* row;
};

// Unvalidated rows with x* present, ordered by ascending patient id so that
// every downstream tie-break is reproducible.
inline std::vector<Candidate> candidate_pool(
    const std::vector<PhaseOneRow>& rows,
    const std::set<std::string>& exclude) {
    std::vector<Candidate> pool;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (exclude.count(rows[i].patient_id)) continue;
        if (!rows[i].x_star.has_value()) continue;
        pool.push_back({i, &rows[i]});
    }
    std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
        return a.row->patient_id < b.row->patient_id;
    });
    return pool;
}

inline std::vector<std::size_t> draw(Rng& g, std::size_t pool_size, std::size_t k) {
    return sample_without_replacement(g, pool_size, k);
}

}  // namespace detail

// Continuous Neyman-type allocation refined by an exhaustive search over
// integer neighbours. Minimizes sum_h w_h^2 V_h / n_h with w_h the stratum
// share of the cohort; strata with zero influence variance get nothing.
inline std::vector<int> allocate_optimal(const std::vector<StratumStat>& strata,
                                         int n) {
    if (strata.empty()) throw config_error("allocate_optimal: no strata");
    const int H = static_cast<int>(strata.size());
    double total_size = 0.0;
    double total_info = 0.0;
    for (const auto& s : strata) {
        total_size += static_cast<double>(s.size);
        total_info += s.influence_variance;
    }
    if (total_info <= 0.0) {
        throw data_error(
            "degenerate pilot: no stratum carries information; consider the "
            "balanced case-control design instead");
    }
    std::vector<double> weight(static_cast<std::size_t>(H));
    std::vector<double> score(static_cast<std::size_t>(H));
    double score_sum = 0.0;
    for (int h = 0; h < H; ++h) {
        const auto& s = strata[static_cast<std::size_t>(h)];
        weight[static_cast<std::size_t>(h)] =
            static_cast<double>(s.size) / total_size;
        score[static_cast<std::size_t>(h)] =
            weight[static_cast<std::size_t>(h)] * std::sqrt(s.influence_variance);
        score_sum += score[static_cast<std::size_t>(h)];
    }

    auto objective = [&](const std::vector<int>& alloc) {
        double v = 0.0;
        for (int h = 0; h < H; ++h) {
            const double Vh = strata[static_cast<std::size_t>(h)].influence_variance;
            if (Vh <= 0.0) continue;
            const int nh = alloc[static_cast<std::size_t>(h)];
            if (nh <= 0) return std::numeric_limits<double>::infinity();
            const double wh = weight[static_cast<std::size_t>(h)];
            v += wh * wh * Vh / nh;
        }
        return v;
    };

    // Largest-remainder rounding of the continuous allocation.
    std::vector<int> base(static_cast<std::size_t>(H), 0);
    std::vector<std::pair<double, int>> rema;
    int assigned = 0;
    for (int h = 0; h < H; ++h) {
        const double exact = n * score[static_cast<std::size_t>(h)] / score_sum;
        base[static_cast<std::size_t>(h)] = static_cast<int>(std::floor(exact));
        rema.push_back({exact - std::floor(exact), h});
        assigned += base[static_cast<std::size_t>(h)];
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; i < n - assigned; ++i) {
        ++base[static_cast<std::size_t>(rema[static_cast<std::size_t>(i % H)].second)];
    }
    for (int h = 0; h < H; ++h) {
        base[static_cast<std::size_t>(h)] = std::min(
            base[static_cast<std::size_t>(h)],
            static_cast<int>(strata[static_cast<std::size_t>(h)].size));
    }

    // Exhaustive search over +-2 neighbours of the rounded allocation.
    std::vector<int> best = base;
    double best_obj = std::numeric_limits<double>::infinity();
    std::vector<int> probe(static_cast<std::size_t>(H));
    std::vector<int> offsets = {-2, -1, 0, 1, 2};
    const std::size_t combos = static_cast<std::size_t>(
        std::pow(static_cast<double>(offsets.size()), H));
    for (std::size_t c = 0; c < combos; ++c) {
        std::size_t rem = c;
        int total = 0;
        bool ok = true;
        for (int h = 0; h < H; ++h) {
            const int off = offsets[rem % offsets.size()];
            rem /= offsets.size();
            const int nh = base[static_cast<std::size_t>(h)] + off;
            if (nh < 0 ||
                nh > static_cast<int>(strata[static_cast<std::size_t>(h)].size)) {
                ok = false;
                break;
            }
            probe[static_cast<std::size_t>(h)] = nh;
            total += nh;
        }
        if (!ok || total != n) continue;
        const double obj = objective(probe);
        if (obj < best_obj) {
            best_obj = obj;
            best = probe;
        }
    }
    if (!std::isfinite(best_obj)) {
        // Neighbourhood search found nothing feasible; spill the remainder
        // onto the next-best strata in score order.
        std::vector<int> order(static_cast<std::size_t>(H));
        for (int h = 0; h < H; ++h) order[static_cast<std::size_t>(h)] = h;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return score[static_cast<std::size_t>(a)] >
                   score[static_cast<std::size_t>(b)];
        });
        std::vector<int> alloc(static_cast<std::size_t>(H), 0);
        int left = n;
        for (int h : order) {
            const int cap =
                static_cast<int>(strata[static_cast<std::size_t>(h)].size);
            const int take = std::min(left, cap);
            alloc[static_cast<std::size_t>(h)] = take;
            left -= take;
        }
        if (left > 0) throw data_error("validation budget exceeds cohort size");
        return alloc;
    }
    return best;
}

// Per-stratum variance of the pilot-model influence on the exposure
// coefficient; feeds allocate_optimal.
inline std::vector<StratumStat> influence_stats(
    const std::vector<PhaseOneRow>& rows, const std::set<std::string>& exclude,
    const Eigen::VectorXd& pilot_beta, double x_cut) {
    const auto pool = detail::candidate_pool(rows, exclude);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(3, 3);
    std::vector<Eigen::Vector3d> scores(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& r = *pool[i].row;
        Eigen::Vector3d x(1.0, *r.x_star, r.z);
        const double mu = expit(pilot_beta.dot(x));
        scores[i] = (r.y - mu) * x;
        info += mu * (1.0 - mu) * x * x.transpose();
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    std::map<std::string, std::vector<double>> by_stratum;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& r = *pool[i].row;
        const Eigen::VectorXd psi = ldlt.solve(scores[i]);
        const std::string label = std::string("y") + (r.y ? "1" : "0") +
                                  (*r.x_star <= x_cut ? "_xlo" : "_xhi");
        by_stratum[label].push_back(psi(1));
    }
    std::vector<StratumStat> out;
    for (const auto& [label, vals] : by_stratum) {
        StratumStat s;
        s.label = label;
        s.size = vals.size();
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        s.influence_variance =
            vals.size() > 1 ? var / static_cast<double>(vals.size() - 1) : 0.0;
        out.push_back(std::move(s));
    }
    return out;
}

// Select the validation subsample under `spec`. Residuals (aligned by
// patient id) are required for the RS design and for ETS when scored on
// residuals; `exclude` carries ids validated in earlier waves.
inline ValidationSelection select_validation(
    const DesignSpec& spec, const std::vector<PhaseOneRow>& rows,
    const std::map<std::string, double>* residuals = nullptr,
    const std::set<std::string>& exclude = {}) {
    auto pool = detail::candidate_pool(rows, exclude);
    const int n = spec.n;
    if (n <= 0) throw config_error("validation budget must be positive");
    if (static_cast<std::size_t>(n) > pool.size()) {
        throw data_error("validation budget " + std::to_string(n) +
                         " exceeds the " + std::to_string(pool.size()) +
                         " unvalidated patients");
    }
    ValidationSelection out;
    out.spec = spec;
    Rng g = make_rng(derive_seed(spec.seed, design_name(spec.kind)));

    auto take = [&](const std::vector<detail::Candidate>& subset,
                    std::size_t count, const std::string& label) {
        if (subset.size() < count) {
            throw data_error("stratum '" + label + "' has " +
                             std::to_string(subset.size()) +
                             " patients, fewer than its quota of " +
                             std::to_string(count));
        }
        for (std::size_t pos : detail::draw(g, subset.size(), count)) {
            out.selected_ids.push_back(subset[pos].row->patient_id);
            out.stratum_of[subset[pos].row->patient_id] = label;
        }
        out.stratum_counts[label] += static_cast<int>(count);
    };

    auto score_of = [&](const detail::Candidate& c) {
        if (spec.kind == DesignKind::RS ||
            (spec.kind == DesignKind::ETS && spec.ets_score == EtsScore::residual)) {
            if (!residuals) {
                throw data_error("residuals are required for this design");
            }
            auto it = residuals->find(c.row->patient_id);
            if (it == residuals->end()) {
                throw data_error("no residual for patient " + c.row->patient_id);
            }
            return it->second;
        }
        return *c.row->x_star;
    };

    switch (spec.kind) {
        case DesignKind::SRS: {
            take(pool, static_cast<std::size_t>(n), "all");
            break;
        }
        case DesignKind::CC: {
            if (n % 2 != 0) {
                throw config_error("case-control budget must be even");
            }
            std::vector<detail::Candidate> cases, controls;
            for (const auto& c : pool) {
                (c.row->y ? cases : controls).push_back(c);
            }
            take(cases, static_cast<std::size_t>(n / 2), "y1");
            take(controls, static_cast<std::size_t>(n / 2), "y0");
            break;
        }
        case DesignKind::BCC: {
            if (n % 4 != 0) {
                throw config_error(
                    "balanced case-control budget must be divisible by 4");
            }
            std::map<std::string, std::vector<detail::Candidate>> strata;
            for (const auto& c : pool) {
                const std::string label =
                    std::string("y") + (c.row->y ? "1" : "0") +
                    (*c.row->x_star <= spec.x_star_cut ? "_xlo" : "_xhi");
                strata[label].push_back(c);
            }
            for (const char* label : {"y1_xlo", "y1_xhi", "y0_xlo", "y0_xhi"}) {
                take(strata[label], static_cast<std::size_t>(n / 4), label);
            }
            break;
        }
        case DesignKind::OPT: {
            if (!spec.pilot_beta.has_value()) {
                throw config_error(
                    "optimal design requires pilot coefficient estimates");
            }
            const auto stats =
                influence_stats(rows, exclude, *spec.pilot_beta, spec.x_star_cut);
            const auto alloc = allocate_optimal(stats, n);
            std::map<std::string, std::vector<detail::Candidate>> strata;
            for (const auto& c : pool) {
                const std::string label =
                    std::string("y") + (c.row->y ? "1" : "0") +
                    (*c.row->x_star <= spec.x_star_cut ? "_xlo" : "_xhi");
                strata[label].push_back(c);
            }
            for (std::size_t h = 0; h < stats.size(); ++h) {
                if (alloc[h] > 0) {
                    take(strata[stats[h].label],
                         static_cast<std::size_t>(alloc[h]), stats[h].label);
                }
            }
            break;
        }
        case DesignKind::ETS:
        case DesignKind::RS: {
            if (n % 2 != 0) {
                throw config_error("tail-based budgets must be even");
            }
            std::vector<std::pair<double, const detail::Candidate*>> ranked;
            for (const auto& c : pool) ranked.push_back({score_of(c), &c});
            // Ties broken by ascending patient id (the pool is id-sorted and
            // the sort is stable).
            std::stable_sort(ranked.begin(), ranked.end(),
                             [](const auto& a, const auto& b) {
                                 return a.first < b.first;
                             });
            const std::size_t half = static_cast<std::size_t>(n / 2);
            for (std::size_t i = 0; i < half; ++i) {
                out.selected_ids.push_back(ranked[i].second->row->patient_id);
                out.stratum_of[ranked[i].second->row->patient_id] = "low_tail";
            }
            for (std::size_t i = ranked.size() - half; i < ranked.size(); ++i) {
                out.selected_ids.push_back(ranked[i].second->row->patient_id);
                out.stratum_of[ranked[i].second->row->patient_id] = "high_tail";
            }
            out.stratum_counts["low_tail"] = static_cast<int>(half);
            out.stratum_counts["high_tail"] = static_cast<int>(half);
            break;
        }
    }

    std::sort(out.selected_ids.begin(), out.selected_ids.end());
    if (out.selected_ids.size() != static_cast<std::size_t>(n)) {
        throw data_error("internal: selection size mismatch");
    }
    return out;
}

}  // namespace alival
