#pragma once

// B-spline sieve basis over the error-prone exposure. The basis rows form a
// partition of unity, which the error-model EM relies on. Knots sit at
// empirical quantiles of a configurable source sample (the validated
// patients' x* by default). Optional stratification on z quantiles gives the
// error model z-dependence via a block-diagonal basis.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "alival/common.hpp"

namespace alival {

struct SieveConfig {
    std::optional<int> basis_dim;  // s_n; unset = ceil(n_knot_source^(1/4)) + 3
    int order = 4;                 // cubic by default
    int z_strata = 1;              // >1 stratifies the basis on z quantiles
};

struct SieveBasis {
    Eigen::MatrixXd B;            // N x s_n evaluation matrix
    std::vector<double> knots;    // clamped knot vector (single stratum)
    int basis_dim = 0;            // columns of B
    int order = 0;                // effective spline order
    int z_strata = 1;
    std::vector<double> z_cuts;   // stratum boundaries when z_strata > 1
    std::vector<std::string> warnings;
};

namespace detail {

// Type-7 quantile (linear interpolation) of a sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
    if (sorted.empty()) throw data_error("quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double h = prob * (static_cast<double>(sorted.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Single-stratum basis over values, knots from knot_source quantiles.
// Returns the (possibly reduced) basis dimension actually used.
inline void build_single(const std::vector<double>& values,
                         const std::vector<double>& knot_source, int requested_dim,
                         int order, Eigen::MatrixXd& B, std::vector<double>& knots,
                         int& dim_out, int& order_out,
                         std::vector<std::string>& warnings) {
    std::vector<double> sorted = knot_source;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> uniq = sorted;
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    int s = requested_dim;
    if (s > static_cast<int>(uniq.size())) {
        s = static_cast<int>(uniq.size());
        warnings.push_back("basis dimension reduced to " + std::to_string(s) +
                           " (only " + std::to_string(uniq.size()) +
                           " distinct support values)");
    }
    int m = std::min(order, s);

    const double lo = sorted.front();
    const double hi = sorted.back();
    const Eigen::Index n = static_cast<Eigen::Index>(values.size());

    if (s == 1 || lo == hi) {
        B = Eigen::MatrixXd::Ones(n, 1);
        knots = {lo, hi};
        dim_out = 1;
        order_out = 1;
        return;
    }

    // Clamped knot vector: m copies of each boundary, s - m interior knots
    // at quantiles. Collapse duplicate interior knots, shrinking s.
    std::vector<double> interior;
    for (int i = 1; i <= s - m; ++i) {
        const double q =
            quantile_sorted(sorted, static_cast<double>(i) / (s - m + 1));
        if (q > lo && q < hi &&
            (interior.empty() || q > interior.back())) {
            interior.push_back(q);
        }
    }
    if (static_cast<int>(interior.size()) != s - m) {
        const int new_s = m + static_cast<int>(interior.size());
        warnings.push_back("duplicate interior knots collapsed; basis dimension " +
                           std::to_string(s) + " -> " + std::to_string(new_s));
        s = new_s;
    }

    knots.clear();
    for (int i = 0; i < m; ++i) knots.push_back(lo);
    for (double q : interior) knots.push_back(q);
    for (int i = 0; i < m; ++i) knots.push_back(hi);

    // Cox-de Boor. Evaluation points are clamped into [lo, hi] so rows for
    // x* outside the knot-source range still sum to one.
    B = Eigen::MatrixXd::Zero(n, s);
    const int nk = static_cast<int>(knots.size());
    for (Eigen::Index r = 0; r < n; ++r) {
        double x = std::clamp(values[static_cast<std::size_t>(r)], lo, hi);
        // span: largest i with knots[i] <= x < knots[i+1]; right end closes.
        int span = m - 1;
        while (span < nk - m - 1 && x >= knots[static_cast<std::size_t>(span + 1)]) {
            ++span;
        }
        std::vector<double> N(static_cast<std::size_t>(m), 0.0);
        N[0] = 1.0;
        std::vector<double> left(static_cast<std::size_t>(m)),
            right(static_cast<std::size_t>(m));
        for (int j = 1; j < m; ++j) {
            left[static_cast<std::size_t>(j)] =
                x - knots[static_cast<std::size_t>(span + 1 - j)];
            right[static_cast<std::size_t>(j)] =
                knots[static_cast<std::size_t>(span + j)] - x;
            double saved = 0.0;
            for (int k = 0; k < j; ++k) {
                const double denom = right[static_cast<std::size_t>(k + 1)] +
                                     left[static_cast<std::size_t>(j - k)];
                const double temp =
                    denom == 0.0 ? 0.0 : N[static_cast<std::size_t>(k)] / denom;
                N[static_cast<std::size_t>(k)] =
                    saved + right[static_cast<std::size_t>(k + 1)] * temp;
                saved = left[static_cast<std::size_t>(j - k)] * temp;
            }
            N[static_cast<std::size_t>(j)] = saved;
        }
        for (int j = 0; j < m; ++j) {
            const int col = span - m + 1 + j;
            if (col >= 0 && col < s) B(r, col) += N[static_cast<std::size_t>(j)];
        }
    }
    dim_out = s;
    order_out = m;
}

}  // namespace detail

// Basis over all patients' x*, with knots at quantiles of knot_source
// (pass the validated subsample's x* there; defaults to x_star itself).
inline SieveBasis build_sieve(const std::vector<double>& x_star,
                              const SieveConfig& config,
                              const std::vector<double>& knot_source = {},
                              const std::vector<double>& z = {}) {
    if (x_star.empty()) throw data_error("build_sieve: empty x* vector");
    for (double v : x_star) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw data_error("build_sieve: x* outside [0,1]: " + std::to_string(v));
        }
    }
    const std::vector<double>& source = knot_source.empty() ? x_star : knot_source;

    if (config.order < 1) throw config_error("spline order must be >= 1");
    if (config.z_strata < 1) throw config_error("z_strata must be >= 1");
    int s;
    if (config.basis_dim.has_value()) {
        s = *config.basis_dim;
        if (s <= 0) throw config_error("basis dimension must be positive");
        if (s < config.order) {
            throw config_error("basis dimension must be at least the spline order");
        }
    } else {
        s = static_cast<int>(
                std::ceil(std::pow(static_cast<double>(source.size()), 0.25))) +
            3;
    }

    SieveBasis out;
    out.z_strata = config.z_strata;

    if (config.z_strata == 1) {
        detail::build_single(x_star, source, s, config.order, out.B, out.knots,
                             out.basis_dim, out.order, out.warnings);
        return out;
    }

    // Stratified: per-stratum blocks on z-quantile bins, block-diagonal.
    if (z.size() != x_star.size()) {
        throw config_error("z values required for a z-stratified basis");
    }
    std::vector<double> zs = z;
    std::sort(zs.begin(), zs.end());
    for (int b = 1; b < config.z_strata; ++b) {
        out.z_cuts.push_back(detail::quantile_sorted(
            zs, static_cast<double>(b) / config.z_strata));
    }
    std::vector<int> stratum(x_star.size(), 0);
    for (std::size_t i = 0; i < x_star.size(); ++i) {
        int b = 0;
        while (b < static_cast<int>(out.z_cuts.size()) &&
               z[i] > out.z_cuts[static_cast<std::size_t>(b)]) {
            ++b;
        }
        stratum[i] = b;
    }

    std::vector<Eigen::MatrixXd> blocks;
    int total_cols = 0;
    for (int b = 0; b < config.z_strata; ++b) {
        std::vector<double> vals, src;
        for (std::size_t i = 0; i < x_star.size(); ++i) {
            if (stratum[i] == b) vals.push_back(x_star[i]);
        }
        src = vals;  // knots from within-stratum values
        if (vals.empty()) {
            throw data_error("empty z stratum " + std::to_string(b) +
                             " in stratified basis");
        }
        Eigen::MatrixXd Bb;
        std::vector<double> kb;
        int dim = 0, ord = 0;
        detail::build_single(vals, src, s, config.order, Bb, kb, dim, ord,
                             out.warnings);
        blocks.push_back(Bb);
        total_cols += dim;
    }
    out.B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x_star.size()),
                                  total_cols);
    std::vector<Eigen::Index> cursor(static_cast<std::size_t>(config.z_strata), 0);
    std::vector<int> col_offset(static_cast<std::size_t>(config.z_strata), 0);
    for (int b = 1; b < config.z_strata; ++b) {
        col_offset[static_cast<std::size_t>(b)] =
            col_offset[static_cast<std::size_t>(b - 1)] +
            static_cast<int>(blocks[static_cast<std::size_t>(b - 1)].cols());
    }
    for (std::size_t i = 0; i < x_star.size(); ++i) {
        const int b = stratum[i];
        const Eigen::MatrixXd& Bb = blocks[static_cast<std::size_t>(b)];
        out.B.block(static_cast<Eigen::Index>(i),
                    col_offset[static_cast<std::size_t>(b)], 1, Bb.cols()) =
            Bb.row(cursor[static_cast<std::size_t>(b)]++);
    }
    out.basis_dim = total_cols;
    out.order = config.order;
    return out;
}

}  // namespace alival
