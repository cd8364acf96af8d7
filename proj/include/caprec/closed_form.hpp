#pragma once

// Plug-in estimators of the capture probability psi = P*(B* != 0) under the
// linear no-K-way-interaction constraint, pairwise independence and
// conditional independence, with their efficient influence curves and Wald
// intervals.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "caprec/capture_core.hpp"

namespace caprec {

enum class Assumption { LinearKWay, Independence, CondIndependence, LogLinearKWay };

std::string_view assumption_name(Assumption a) noexcept;

// Samples are 1-based, as in the column headers s1..sK.
struct SamplePair {
    int first = 1;
    int second = 2;
};

inline constexpr double kDefaultLevel = 0.95;

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct Estimate {
    Assumption assumption = Assumption::LinearKWay;
    std::string estimator;   // "linear", "independence", "npmle", "tmle", ...
    SamplePair samples{0, 0};  // selector for independence / conditional independence
    double psi = 0.0;
    double sigma = 0.0;  // sqrt of the uncentered second moment of the EIC
    double se = 0.0;     // sigma / sqrt(n)
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double level = kDefaultLevel;
    std::int64_t n = 0;
    std::vector<double> eic;  // EIC value per nonzero pattern, index i holds pattern i + 1
    std::vector<std::string> warnings;

    // EIC evaluated at each observation of the table, in index order.
    std::vector<double> per_observation(const CellTable& table) const;
    bool has_warning(std::string_view w) const;
};

struct SizeEstimate {
    double n_hat = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

// Standard normal quantile for a two-sided interval at `level`.
double normal_critical_value(double level);

// psi -/+ z * sigma / sqrt(n), sigma^2 = (1/n) Σ D*(B_i)^2; endpoints are not clipped.
Interval wald_ci(double psi, std::span<const double> eic_per_observation,
                 double level = kDefaultLevel);

// Assembles an Estimate from per-cell EIC values. `weights` is the empirical
// cell distribution of the observed data used for the variance.
Estimate make_estimate(Assumption assumption, std::string estimator, double psi,
                       std::vector<double> eic, std::span<const double> weights,
                       std::int64_t n, double level);

// Raw estimand / EIC evaluations on a probability vector over nonzero
// patterns (length 2^K - 1). They accept any vector, which keeps them usable
// for directional-derivative checks.
double psi_linear(int K, std::span<const double> p, std::span<const double> f);
std::vector<double> eic_linear(int K, std::span<const double> p, std::span<const double> f);
// f_I over all 2^K patterns, index 0 included.
std::vector<double> parity_constraint(int K);

double psi_independence(int K, std::span<const double> p, SamplePair pair);
std::vector<double> eic_independence(int K, std::span<const double> p, SamplePair pair);

double psi_cond_independence(int K, std::span<const double> p, SamplePair jm);
std::vector<double> eic_cond_independence(int K, std::span<const double> p, SamplePair jm);

Estimate estimate_linear(const CellDist& dist, std::int64_t n, double level = kDefaultLevel);
// General linear constraint Σ_b f(b) P*(b) = 0; f covers all 2^K patterns and f(0) != 0.
Estimate estimate_linear(const CellDist& dist, std::int64_t n, std::span<const double> f,
                         double level = kDefaultLevel);

Estimate estimate_independence(const CellDist& dist, std::int64_t n, SamplePair pair = {1, 2},
                               double level = kDefaultLevel);

// Sample j is independent of sample m given all other samples are zero.
Estimate estimate_cond_independence(const CellDist& dist, std::int64_t n,
                                    SamplePair jm = {3, 2}, double level = kDefaultLevel);

SizeEstimate population_size(const Estimate& est, std::int64_t n);

}  // namespace caprec
