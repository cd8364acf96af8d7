#pragma once

// No-K-way-interaction log-linear estimand, its plug-in NPMLE and the
// classical closed-population baselines M0 and Mt.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "caprec/capture_core.hpp"
#include "caprec/closed_form.hpp"

namespace caprec {

// psi_I(P) = 1 / (1 + exp((-1)^(K+1) Σ_{b!=0} f_I(b) log P(b))). Needs every P(b) > 0.
double psi_loglinear(int K, std::span<const double> p);

// D*(b) = (-1)^K psi (1 - psi) (f_I(b) / P(b) + f_I(0)) for every nonzero pattern.
std::vector<double> eic_loglinear(int K, std::span<const double> p, double psi);
inline std::vector<double> eic_loglinear(int K, std::span<const double> p) {
    return eic_loglinear(K, p, psi_loglinear(K, p));
}
double eic_loglinear(const CapturePattern& pattern, const CellDist& dist, double psi);

// Plug-in at `dist`; inference uses `weights` (the empirical distribution)
// for the variance, which equals `dist` for the NPMLE itself.
Estimate estimate_loglinear_at(const CellDist& dist, std::span<const double> weights,
                               std::int64_t n, std::string estimator,
                               double level = kDefaultLevel);

Estimate estimate_npmle(const CellDist& dist, std::int64_t n, double level = kDefaultLevel);

// Rows: nonzero patterns in index order. Columns: intercept followed by one
// product term per nonzero interaction mask, ordered by interaction order and
// then by mask. With exclude_top the K-way term is dropped.
struct DesignMatrix {
    Eigen::MatrixXd x;
    std::vector<PatternIndex> column_masks;  // 0 for the intercept
};

DesignMatrix design_matrix(int K, bool exclude_top);

struct LogLinearFit {
    std::vector<double> coefficients;
    std::vector<double> fitted_counts;  // per nonzero cell
    double loglik = 0.0;                // full Poisson log-likelihood incl. log y!
    int parameters = 0;
    int df = 0;                         // cells - parameters
    double aic = 0.0;
    double bic = 0.0;
    int iterations = 0;
};

// Unpenalized Poisson regression by IRLS with step halving. Throws FitFailure
// on divergence, when a fitted count drops below 1e-8, or when 100 iterations
// do not reach relative deviance change below 1e-10.
LogLinearFit fit_poisson_glm(const Eigen::MatrixXd& x, std::span<const std::int64_t> counts,
                             std::int64_t n);

// psi = n / (n + exp(a_0)). The `eic` of the returned estimate holds the
// model-based influence function, so se is the usual GLM delta-method value.

// Intercept plus K main effects.
std::pair<Estimate, LogLinearFit> fit_glm_mt(const CellTable& table,
                                             double level = kDefaultLevel);
// Intercept plus one capture effect shared by all samples.
std::pair<Estimate, LogLinearFit> fit_glm_m0(const CellTable& table,
                                             double level = kDefaultLevel);

}  // namespace caprec
