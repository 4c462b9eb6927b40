#pragma once

// Shared error types and small numeric helpers used across the toolkit.

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace alival {

inline constexpr const char* kVersion = "0.1.0";

// Bad configuration (unknown component, invalid basis dimension, ...).
// The CLI maps these to exit code 2.
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or degenerate input data. The CLI maps these to exit code 1.
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Complete (or quasi-complete) separation in a logistic fit.
class separation_error : public data_error {
public:
    using data_error::data_error;
};

// Structurally unidentifiable input (single outcome class, collinear columns).
class degenerate_input_error : public data_error {
public:
    using data_error::data_error;
};

// expit(x) = 1 / (1 + exp(-x)), computed without overflow for large |x|.
inline double expit(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Render with 12 significant digits; output files carry this precision.
inline std::string format_sig12(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", x);
    return buf;
}

// Round to 12 significant digits, for numbers embedded in JSON documents.
inline double round12(double x) {
    if (!std::isfinite(x) || x == 0.0) return x;
    return std::stod(format_sig12(x));
}

}  // namespace alival
