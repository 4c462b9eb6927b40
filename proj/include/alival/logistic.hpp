#pragma once

// Maximum-likelihood logistic regression by Newton-Raphson with
// step-halving, plus odds-ratio intervals and naive-model residuals.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "alival/common.hpp"

namespace alival {

// Fully observed phase-one record: outcome, error-prone ALI, and age
// encoded as z = (age_years - 18) / 10 so the intercept refers to an
// 18-year-old with ALI zero and the z coefficient to a 10-year step.
struct PhaseOneRow {
    std::string patient_id;
    int y = 0;
    std::optional<double> x_star;
    double z = 0.0;
};

inline double age_to_z(double age_years) { return (age_years - 18.0) / 10.0; }

struct LogitFit {
    Eigen::VectorXd beta;        // (intercept, exposure, adjustment, ...)
    Eigen::MatrixXd covariance;  // inverse observed information
    bool converged = false;
    int iterations = 0;
    double log_likelihood = 0.0;
    std::vector<double> loglik_trace;
};

namespace detail {

inline double logit_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& beta,
                           const Eigen::VectorXd* w = nullptr) {
    double ll = 0.0;
    const Eigen::VectorXd eta = X * beta;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double term = y(i) * eta(i) - log1pexp(eta(i));
        ll += w ? (*w)(i) * term : term;
    }
    return ll;
}

struct NewtonResult {
    Eigen::VectorXd beta;
    Eigen::MatrixXd hessian;  // negative Hessian (observed information)
    bool converged = false;
    bool separation = false;
    int iterations = 0;
    double loglik = 0.0;
    std::vector<double> trace;
};

// Weighted Newton-Raphson for the logistic log-likelihood. Step-halving
// keeps every accepted step non-decreasing in log-likelihood. Separation is
// declared when a coefficient passes +-15 while the likelihood still climbs.
inline NewtonResult logit_newton(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd* w = nullptr,
                                 const Eigen::VectorXd* start = nullptr,
                                 double grad_tol = 1e-8, int max_iter = 100) {
    const Eigen::Index p = X.cols();
    NewtonResult r;
    r.beta = start ? *start : Eigen::VectorXd::Zero(p);
    r.loglik = logit_loglik(X, y, r.beta, w);
    r.trace.push_back(r.loglik);

    for (int iter = 0; iter < max_iter; ++iter) {
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
        Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
        const Eigen::VectorXd eta = X * r.beta;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double wi = w ? (*w)(i) : 1.0;
            const double mu = expit(eta(i));
            grad.noalias() += wi * (y(i) - mu) * X.row(i).transpose();
            info.noalias() += wi * mu * (1.0 - mu) * X.row(i).transpose() * X.row(i);
        }
        r.iterations = iter;
        if (grad.lpNorm<Eigen::Infinity>() < grad_tol) {
            r.converged = true;
            r.hessian = info;
            return r;
        }

        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        Eigen::VectorXd step = ldlt.solve(grad);
        if (!step.allFinite()) {
            r.hessian = info;
            return r;
        }

        double scale = 1.0;
        Eigen::VectorXd candidate;
        double cand_ll = -std::numeric_limits<double>::infinity();
        for (int halving = 0; halving <= 50; ++halving) {
            candidate = r.beta + scale * step;
            cand_ll = logit_loglik(X, y, candidate, w);
            if (cand_ll >= r.loglik) break;
            scale *= 0.5;
        }
        if (cand_ll < r.loglik) {
            r.hessian = info;
            return r;  // no uphill step found
        }
        r.beta = candidate;
        r.loglik = cand_ll;
        r.trace.push_back(cand_ll);

        if (r.beta.lpNorm<Eigen::Infinity>() > 15.0 &&
            r.trace.size() >= 2 && r.trace.back() >= r.trace[r.trace.size() - 2]) {
            r.separation = true;
            r.hessian = info;
            return r;
        }
    }
    r.iterations = max_iter;
    return r;
}

}  // namespace detail

// MLE for y on an arbitrary design matrix (first column typically ones).
// Throws degenerate_input_error for a single outcome class or a
// rank-deficient design, separation_error for separable data.
inline LogitFit fit_logistic_matrix(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (n < p) {
        throw degenerate_input_error("logistic fit needs at least " +
                                     std::to_string(p) + " rows");
    }
    int ones = 0;
    for (Eigen::Index i = 0; i < n; ++i) ones += y(i) > 0.5 ? 1 : 0;
    if (ones == 0 || ones == n) {
        throw degenerate_input_error(
            "logistic fit needs both outcome classes present");
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    const Eigen::Index rank = qr.rank();
    if (rank < p) {
        // Identify an independent subset of columns and probe it: if the
        // reduced model separates, report separation; otherwise the extra
        // coefficients are unidentifiable.
        std::vector<Eigen::Index> keep;
        for (Eigen::Index i = 0; i < rank; ++i) {
            keep.push_back(qr.colsPermutation().indices()(i));
        }
        std::sort(keep.begin(), keep.end());
        Eigen::MatrixXd Xr(n, static_cast<Eigen::Index>(keep.size()));
        for (std::size_t j = 0; j < keep.size(); ++j) Xr.col(j) = X.col(keep[j]);
        const auto sub = detail::logit_newton(Xr, y);
        if (sub.separation) {
            throw separation_error(
                "complete separation detected in logistic fit");
        }
        throw degenerate_input_error(
            "design matrix is rank-deficient (rank " + std::to_string(rank) +
            " of " + std::to_string(p) + "); coefficients unidentifiable");
    }

    const auto res = detail::logit_newton(X, y);
    if (res.separation) {
        throw separation_error(
            "complete separation detected: coefficient magnitude exceeded 15 "
            "with increasing likelihood");
    }
    if (!res.converged) {
        throw data_error("logistic fit did not converge in 100 iterations "
                         "(final gradient above tolerance)");
    }

    LogitFit fit;
    fit.beta = res.beta;
    fit.converged = true;
    fit.iterations = res.iterations;
    fit.log_likelihood = res.loglik;
    fit.loglik_trace = res.trace;
    fit.covariance =
        res.hessian.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    return fit;
}

// Naive analysis model: y on (1, x_star, z). Rows with absent x_star are
// excluded; their ids are reported through `excluded` when provided.
inline LogitFit fit_logistic(const std::vector<PhaseOneRow>& rows,
                             std::vector<std::string>* excluded = nullptr) {
    std::vector<const PhaseOneRow*> usable;
    for (const auto& r : rows) {
        if (r.x_star.has_value()) {
            usable.push_back(&r);
        } else if (excluded) {
            excluded->push_back(r.patient_id);
        }
    }
    if (usable.size() < 3) {
        throw degenerate_input_error(
            "logistic fit needs at least 3 rows with non-missing exposure, got " +
            std::to_string(usable.size()));
    }
    Eigen::MatrixXd X(static_cast<Eigen::Index>(usable.size()), 3);
    Eigen::VectorXd y(static_cast<Eigen::Index>(usable.size()));
    for (std::size_t i = 0; i < usable.size(); ++i) {
        X(static_cast<Eigen::Index>(i), 0) = 1.0;
        X(static_cast<Eigen::Index>(i), 1) = *usable[i]->x_star;
        X(static_cast<Eigen::Index>(i), 2) = usable[i]->z;
        y(static_cast<Eigen::Index>(i)) = usable[i]->y;
    }
    return fit_logistic_matrix(X, y);
}

struct OddsRatioCi {
    double odds_ratio;
    double lower;
    double upper;
};

// OR = exp(scale * beta[index]) with a 95% Wald interval on the log scale.
inline OddsRatioCi odds_ratio_ci(const LogitFit& fit, int index, double scale) {
    if (!fit.converged) throw data_error("odds_ratio_ci requires a converged fit");
    if (index < 0 || index >= fit.beta.size()) {
        throw config_error("coefficient index out of range");
    }
    const double b = fit.beta(index);
    const double se = std::sqrt(std::max(0.0, fit.covariance(index, index)));
    OddsRatioCi out;
    out.odds_ratio = std::exp(scale * b);
    const double half = 1.96 * std::abs(scale) * se;
    out.lower = std::exp(scale * b - half);
    out.upper = std::exp(scale * b + half);
    return out;
}

struct Residuals {
    std::vector<std::pair<std::string, double>> values;  // (patient_id, r)
    std::vector<std::string> excluded_ids;               // rows without x_star
};

// r_i = y_i - expit(b0 + b1 x*_i + b2 z_i), the naive-model residual.
inline Residuals compute_residuals(const LogitFit& fit,
                                   const std::vector<PhaseOneRow>& rows) {
    if (!fit.converged) throw data_error("compute_residuals requires a converged fit");
    Residuals out;
    for (const auto& r : rows) {
        if (!r.x_star.has_value()) {
            out.excluded_ids.push_back(r.patient_id);
            continue;
        }
        const double eta =
            fit.beta(0) + fit.beta(1) * (*r.x_star) + fit.beta(2) * r.z;
        out.values.emplace_back(r.patient_id, r.y - expit(eta));
    }
    return out;
}

}  // namespace alival
