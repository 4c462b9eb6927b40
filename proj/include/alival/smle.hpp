#pragma once

// Sieve maximum likelihood for the two-phase validation model.
//
// Validated patients contribute the complete-data likelihood of
// (Y | X, Z) times the sieve error model; unvalidated patients contribute
// the same likelihood with the validated exposure summed out over a finite
// support grid. The error mechanism Pr(X = x_k | X*) is parameterized by a
// K x s_n column-stochastic matrix against a B-spline basis in X*. The
// validation-sampling probability and Pr(X*, Z) drop out of the maximized
// likelihood and are never modelled.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "alival/common.hpp"
#include "alival/logistic.hpp"
#include "alival/rng.hpp"
#include "alival/sieve.hpp"

namespace alival {

struct SupportGrid {
    std::vector<double> values;  // ordered, distinct, in [0,1]

    // The eleven-point grid {0, 0.1, ..., 1}.
    static SupportGrid default_grid() {
        SupportGrid g;
        for (int k = 0; k <= 10; ++k) g.values.push_back(k / 10.0);
        return g;
    }
};

struct TwoPhaseDataset {
    std::vector<PhaseOneRow> rows;
    std::vector<std::uint8_t> validated;  // V_i
    std::vector<double> x_validated;      // aligned with rows; NaN when V_i = 0
};

struct SmleFit {
    Eigen::VectorXd beta;      // (intercept, exposure, adjustment)
    Eigen::VectorXd se;        // filled by profile_se
    Eigen::MatrixXd p_matrix;  // K x s_n, columns on the probability simplex
    std::vector<double> grid;  // working support grid (may extend the input)
    int em_iterations = 0;
    bool converged = false;
    double final_loglik = 0.0;
    std::vector<double> loglik_trace;
    std::vector<std::string> warnings;
};

namespace detail {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kGridSnapTol = 1e-9;

struct EmWorkspace {
    // Row partition and exposure support resolved against the grid.
    std::vector<std::size_t> val_rows, unval_rows;
    std::vector<int> k_of_val;    // grid index per validated row
    std::vector<double> grid;     // working grid
    Eigen::MatrixXd B_val;        // V x s
    Eigen::MatrixXd B_unval;      // U x s
    Eigen::MatrixXd p_static;     // K x s: validated basis mass per grid row
    // Pseudo-complete design for the beta update: validated rows first,
    // then one row per (unvalidated patient, grid point).
    Eigen::MatrixXd pseudo_X;
    Eigen::VectorXd pseudo_y;
};

inline EmWorkspace prepare_workspace(const TwoPhaseDataset& data,
                                     const SupportGrid& grid,
                                     const SieveBasis& basis,
                                     std::vector<std::string>& warnings) {
    const std::size_t n = data.rows.size();
    if (data.validated.size() != n || data.x_validated.size() != n) {
        throw data_error("two-phase dataset arrays have inconsistent lengths");
    }
    if (static_cast<std::size_t>(basis.B.rows()) != n) {
        throw data_error("sieve basis rows do not match the dataset");
    }
    EmWorkspace w;
    for (std::size_t i = 0; i < n; ++i) {
        if (!data.rows[i].x_star.has_value()) {
            throw data_error("row " + data.rows[i].patient_id +
                             " has no x*; filter such rows before fitting");
        }
        if (data.validated[i]) {
            if (!std::isfinite(data.x_validated[i])) {
                throw data_error("validated row " + data.rows[i].patient_id +
                                 " lacks a validated exposure value");
            }
            w.val_rows.push_back(i);
        } else {
            w.unval_rows.push_back(i);
        }
    }
    if (w.val_rows.empty()) {
        throw data_error("no validated patients: the error model is unidentifiable");
    }
    bool seen[2] = {false, false};
    for (std::size_t i : w.val_rows) seen[data.rows[i].y ? 1 : 0] = true;
    if (!seen[0] || !seen[1]) {
        warnings.push_back(
            "validated subsample contains a single outcome class; estimates may "
            "be unstable");
    }

    // Snap validated exposures onto the grid, extending it for genuinely
    // off-grid values (proportions over partial denominators).
    w.grid = grid.values;
    std::sort(w.grid.begin(), w.grid.end());
    w.grid.erase(std::unique(w.grid.begin(), w.grid.end()), w.grid.end());
    std::vector<double> extensions;
    for (std::size_t i : w.val_rows) {
        const double v = data.x_validated[i];
        auto near = std::min_element(
            w.grid.begin(), w.grid.end(), [v](double a, double b) {
                return std::abs(a - v) < std::abs(b - v);
            });
        if (std::abs(*near - v) > kGridSnapTol) extensions.push_back(v);
    }
    if (!extensions.empty()) {
        std::sort(extensions.begin(), extensions.end());
        extensions.erase(std::unique(extensions.begin(), extensions.end()),
                         extensions.end());
        w.grid.insert(w.grid.end(), extensions.begin(), extensions.end());
        std::sort(w.grid.begin(), w.grid.end());
        warnings.push_back("support grid extended by " +
                           std::to_string(extensions.size()) +
                           " off-grid validated values");
    }
    for (std::size_t i : w.val_rows) {
        const double v = data.x_validated[i];
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < w.grid.size(); ++k) {
            const double d = std::abs(w.grid[k] - v);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        w.k_of_val.push_back(best);
    }

    const Eigen::Index s = basis.B.cols();
    const Eigen::Index V = static_cast<Eigen::Index>(w.val_rows.size());
    const Eigen::Index U = static_cast<Eigen::Index>(w.unval_rows.size());
    const Eigen::Index K = static_cast<Eigen::Index>(w.grid.size());
    w.B_val.resize(V, s);
    w.B_unval.resize(U, s);
    for (Eigen::Index r = 0; r < V; ++r) {
        w.B_val.row(r) = basis.B.row(static_cast<Eigen::Index>(w.val_rows[r]));
    }
    for (Eigen::Index r = 0; r < U; ++r) {
        w.B_unval.row(r) = basis.B.row(static_cast<Eigen::Index>(w.unval_rows[r]));
    }
    w.p_static = Eigen::MatrixXd::Zero(K, s);
    for (Eigen::Index r = 0; r < V; ++r) {
        w.p_static.row(w.k_of_val[static_cast<std::size_t>(r)]) += w.B_val.row(r);
    }

    w.pseudo_X.resize(V + U * K, 3);
    w.pseudo_y.resize(V + U * K);
    for (Eigen::Index r = 0; r < V; ++r) {
        const auto& row = data.rows[w.val_rows[static_cast<std::size_t>(r)]];
        w.pseudo_X(r, 0) = 1.0;
        w.pseudo_X(r, 1) = data.x_validated[w.val_rows[static_cast<std::size_t>(r)]];
        w.pseudo_X(r, 2) = row.z;
        w.pseudo_y(r) = row.y;
    }
    for (Eigen::Index r = 0; r < U; ++r) {
        const auto& row = data.rows[w.unval_rows[static_cast<std::size_t>(r)]];
        for (Eigen::Index k = 0; k < K; ++k) {
            const Eigen::Index idx = V + r * K + k;
            w.pseudo_X(idx, 0) = 1.0;
            w.pseudo_X(idx, 1) = w.grid[static_cast<std::size_t>(k)];
            w.pseudo_X(idx, 2) = row.z;
            w.pseudo_y(idx) = row.y;
        }
    }
    return w;
}

// Pr_beta(Y_i | x_k, Z_i) for every unvalidated row i and grid point k.
inline Eigen::MatrixXd outcome_probs(const TwoPhaseDataset& data,
                                     const EmWorkspace& w,
                                     const Eigen::VectorXd& beta) {
    const Eigen::Index U = static_cast<Eigen::Index>(w.unval_rows.size());
    const Eigen::Index K = static_cast<Eigen::Index>(w.grid.size());
    Eigen::MatrixXd P(U, K);
    for (Eigen::Index r = 0; r < U; ++r) {
        const auto& row = data.rows[w.unval_rows[static_cast<std::size_t>(r)]];
        const double a = beta(0) + beta(2) * row.z;
        for (Eigen::Index k = 0; k < K; ++k) {
            const double mu = expit(a + beta(1) * w.grid[static_cast<std::size_t>(k)]);
            P(r, k) = row.y ? mu : 1.0 - mu;
        }
    }
    return P;
}

// Observed-data log-likelihood at (beta, p); pB = B_unval * p^T may be
// passed in when already computed.
inline double observed_loglik(const TwoPhaseDataset& data, const EmWorkspace& w,
                              const Eigen::VectorXd& beta, const Eigen::MatrixXd& p,
                              const Eigen::MatrixXd& P_y,
                              const Eigen::MatrixXd& pB) {
    double ll = 0.0;
    const Eigen::Index V = static_cast<Eigen::Index>(w.val_rows.size());
    for (Eigen::Index r = 0; r < V; ++r) {
        const auto& row = data.rows[w.val_rows[static_cast<std::size_t>(r)]];
        const double x = data.x_validated[w.val_rows[static_cast<std::size_t>(r)]];
        const double mu = expit(beta(0) + beta(1) * x + beta(2) * row.z);
        ll += std::log(std::max(row.y ? mu : 1.0 - mu, kProbFloor));
        const int k = w.k_of_val[static_cast<std::size_t>(r)];
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const double b = w.B_val(r, j);
            if (b > 0.0) ll += b * std::log(std::max(p(k, j), kProbFloor));
        }
    }
    const Eigen::Index U = static_cast<Eigen::Index>(w.unval_rows.size());
    for (Eigen::Index r = 0; r < U; ++r) {
        ll += std::log(std::max((P_y.row(r).array() * pB.row(r).array()).sum(),
                                kProbFloor));
    }
    return ll;
}

inline Eigen::MatrixXd normalize_columns(Eigen::MatrixXd c) {
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
        const double sum = c.col(j).sum();
        if (sum <= 0.0) {
            c.col(j).setConstant(1.0 / static_cast<double>(c.rows()));
        } else {
            c.col(j) /= sum;
        }
    }
    return c;
}

}  // namespace detail

// Posterior weights over (grid point k, basis column j) for one unvalidated
// patient. Y enters only through Pr_beta(Y | x_k, z); the surrogate enters
// only through its basis row.
inline Eigen::MatrixXd unvalidated_posterior(const Eigen::VectorXd& beta,
                                             const Eigen::MatrixXd& p,
                                             const Eigen::RowVectorXd& basis_row,
                                             const std::vector<double>& grid,
                                             int y, double z) {
    const Eigen::Index K = p.rows();
    const Eigen::Index s = p.cols();
    Eigen::MatrixXd w(K, s);
    for (Eigen::Index k = 0; k < K; ++k) {
        const double mu =
            expit(beta(0) + beta(1) * grid[static_cast<std::size_t>(k)] + beta(2) * z);
        const double py = y ? mu : 1.0 - mu;
        for (Eigen::Index j = 0; j < s; ++j) {
            w(k, j) = py * p(k, j) * basis_row(j);
        }
    }
    const double total = w.sum();
    if (total > 0.0) w /= total;
    return w;
}

struct EmConfig {
    double tol = 1e-8;       // absolute change in observed log-likelihood
    int max_iter = 1000;
    int mstep_max_iter = 30;
};

// EM maximization of the observed-data log-likelihood. The E-step computes
// posterior weights over (grid point, basis column) for unvalidated rows;
// the M-step is a closed-form column-normalized update of p and a weighted
// Newton maximization of beta over the pseudo-complete data.
inline SmleFit em_fit(const TwoPhaseDataset& data, const SupportGrid& grid,
                      const SieveBasis& basis,
                      const Eigen::VectorXd* init = nullptr,
                      const EmConfig& config = {}) {
    SmleFit fit;
    fit.warnings = basis.warnings;
    auto w = detail::prepare_workspace(data, grid, basis, fit.warnings);

    const Eigen::Index K = static_cast<Eigen::Index>(w.grid.size());
    const Eigen::Index s = basis.B.cols();
    const Eigen::Index V = static_cast<Eigen::Index>(w.val_rows.size());
    const Eigen::Index U = static_cast<Eigen::Index>(w.unval_rows.size());

    Eigen::VectorXd beta;
    if (init) {
        beta = *init;
    } else {
        try {
            beta = fit_logistic(data.rows).beta;
        } catch (const data_error&) {
            beta = Eigen::VectorXd::Zero(3);
        }
    }

    // Add-one smoothing keeps every cell positive at the start.
    Eigen::MatrixXd p = detail::normalize_columns(
        (w.p_static.array() + 1.0).matrix());

    Eigen::VectorXd weights = Eigen::VectorXd::Ones(V + U * K);

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < config.max_iter; ++iter) {
        // E-step quantities at the current parameters.
        const Eigen::MatrixXd P_y = detail::outcome_probs(data, w, beta);
        const Eigen::MatrixXd pB = w.B_unval * p.transpose();  // U x K
        const double ll = detail::observed_loglik(data, w, beta, p, P_y, pB);
        fit.loglik_trace.push_back(ll);
        if (iter > 0 && std::abs(ll - prev_ll) < config.tol) {
            fit.converged = true;
            break;
        }
        prev_ll = ll;
        fit.em_iterations = iter + 1;

        Eigen::MatrixXd q = P_y.cwiseProduct(pB);  // U x K, joint numerator
        Eigen::VectorXd denom = q.rowwise().sum();
        Eigen::MatrixXd M = P_y;                   // P_y / denom per row
        for (Eigen::Index r = 0; r < U; ++r) {
            M.row(r) /= denom(r);
            q.row(r) /= denom(r);
        }

        // M-step: p as normalized expected basis mass per grid row.
        Eigen::MatrixXd c =
            w.p_static + p.cwiseProduct((w.B_unval.transpose() * M).transpose());
        p = detail::normalize_columns(std::move(c));

        // M-step: beta by weighted Newton over the pseudo-complete data.
        for (Eigen::Index r = 0; r < U; ++r) {
            for (Eigen::Index k = 0; k < K; ++k) {
                weights(V + r * K + k) = q(r, k);
            }
        }
        const auto newton = detail::logit_newton(w.pseudo_X, w.pseudo_y, &weights,
                                                 &beta, 1e-10, config.mstep_max_iter);
        beta = newton.beta;
    }
    if (!fit.converged) {
        fit.warnings.push_back("EM reached the iteration cap without meeting the "
                               "log-likelihood tolerance");
    }

    fit.beta = beta;
    fit.p_matrix = p;
    fit.grid = w.grid;
    fit.final_loglik = fit.loglik_trace.back();
    return fit;
}

struct ProfileSeConfig {
    double step_scale = 1.0;  // c in h = c / sqrt(N)
    int bootstrap_reps = 200;
    std::uint64_t seed = 0;
    SieveConfig sieve;        // used to rebuild the basis for bootstrap draws
    EmConfig em;
};

struct ProfileSeResult {
    Eigen::VectorXd se;
    Eigen::MatrixXd covariance;
    std::string method;  // "profile" or "bootstrap"
};

namespace detail {

// Profile log-likelihood: nuisance p re-maximized by restricted EM with
// beta held fixed.
inline double profile_loglik(const TwoPhaseDataset& data, const EmWorkspace& w,
                             const Eigen::VectorXd& beta, Eigen::MatrixXd p,
                             double tol = 1e-9, int max_iter = 2000) {
    const Eigen::MatrixXd P_y = outcome_probs(data, w, beta);
    double prev = -std::numeric_limits<double>::infinity();
    double ll = prev;
    for (int iter = 0; iter < max_iter; ++iter) {
        const Eigen::MatrixXd pB = w.B_unval * p.transpose();
        ll = observed_loglik(data, w, beta, p, P_y, pB);
        if (iter > 0 && std::abs(ll - prev) < tol) break;
        prev = ll;
        Eigen::MatrixXd M = P_y;
        const Eigen::Index U = static_cast<Eigen::Index>(w.unval_rows.size());
        for (Eigen::Index r = 0; r < U; ++r) {
            const double denom = (P_y.row(r).array() * pB.row(r).array()).sum();
            M.row(r) /= std::max(denom, kProbFloor);
        }
        Eigen::MatrixXd c =
            w.p_static + p.cwiseProduct((w.B_unval.transpose() * M).transpose());
        p = normalize_columns(std::move(c));
    }
    return ll;
}

}  // namespace detail

// Standard errors for beta from the curvature of the profile log-likelihood,
// with a nonparametric bootstrap fallback when the curvature is not positive
// definite.
inline ProfileSeResult profile_se(const SmleFit& fit, const TwoPhaseDataset& data,
                                  const SupportGrid& grid, const SieveBasis& basis,
                                  const ProfileSeConfig& config = {}) {
    if (config.step_scale <= 0.0) {
        throw config_error("profile step scale must be positive");
    }
    std::vector<std::string> scratch_warnings;
    const auto w = detail::prepare_workspace(data, grid, basis, scratch_warnings);
    const double h =
        config.step_scale / std::sqrt(static_cast<double>(data.rows.size()));
    const Eigen::Index p_dim = fit.beta.size();

    auto pl = [&](const Eigen::VectorXd& beta) {
        return detail::profile_loglik(data, w, beta, fit.p_matrix);
    };

    Eigen::MatrixXd hess(p_dim, p_dim);
    const double center = pl(fit.beta);
    for (Eigen::Index i = 0; i < p_dim; ++i) {
        Eigen::VectorXd up = fit.beta, dn = fit.beta;
        up(i) += h;
        dn(i) -= h;
        hess(i, i) = (pl(up) - 2.0 * center + pl(dn)) / (h * h);
    }
    for (Eigen::Index i = 0; i < p_dim; ++i) {
        for (Eigen::Index j = i + 1; j < p_dim; ++j) {
            Eigen::VectorXd pp = fit.beta, pm = fit.beta, mp = fit.beta,
                            mm = fit.beta;
            pp(i) += h; pp(j) += h;
            pm(i) += h; pm(j) -= h;
            mp(i) -= h; mp(j) += h;
            mm(i) -= h; mm(j) -= h;
            hess(i, j) = hess(j, i) =
                (pl(pp) - pl(pm) - pl(mp) + pl(mm)) / (4.0 * h * h);
        }
    }

    const Eigen::MatrixXd info = -hess;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
    if (eig.eigenvalues().minCoeff() > 0.0) {
        ProfileSeResult out;
        out.covariance =
            info.ldlt().solve(Eigen::MatrixXd::Identity(p_dim, p_dim));
        out.se = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
        out.method = "profile";
        return out;
    }

    // Bootstrap fallback: resample patients, refit, take the spread.
    const std::size_t n = data.rows.size();
    std::vector<Eigen::VectorXd> draws;
    int failures = 0;
    for (int b = 0; b < config.bootstrap_reps; ++b) {
        auto g = make_rng(derive_seed(config.seed, "profile-bootstrap",
                                      static_cast<std::uint64_t>(b)));
        TwoPhaseDataset resample;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = uniform_index(g, n);
            resample.rows.push_back(data.rows[j]);
            resample.validated.push_back(data.validated[j]);
            resample.x_validated.push_back(data.x_validated[j]);
        }
        try {
            std::vector<double> xs, knots;
            for (std::size_t i = 0; i < n; ++i) {
                xs.push_back(*resample.rows[i].x_star);
                if (resample.validated[i]) knots.push_back(*resample.rows[i].x_star);
            }
            const SieveBasis rb = build_sieve(xs, config.sieve, knots);
            const Eigen::VectorXd start = fit.beta;
            const SmleFit refit = em_fit(resample, grid, rb, &start, config.em);
            if (refit.converged) {
                draws.push_back(refit.beta);
            } else {
                ++failures;
            }
        } catch (const data_error&) {
            ++failures;
        }
    }
    if (draws.size() < 2 ||
        failures * 2 > config.bootstrap_reps) {
        throw data_error(
            "standard errors unavailable: profile curvature non-positive and "
            "bootstrap refits mostly failed (near-flat likelihood)");
    }
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p_dim);
    for (const auto& d : draws) mean += d;
    mean /= static_cast<double>(draws.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p_dim, p_dim);
    for (const auto& d : draws) {
        cov += (d - mean) * (d - mean).transpose();
    }
    cov /= static_cast<double>(draws.size() - 1);
    ProfileSeResult out;
    out.covariance = cov;
    out.se = cov.diagonal().cwiseSqrt();
    out.method = "bootstrap";
    return out;
}

}  // namespace alival
