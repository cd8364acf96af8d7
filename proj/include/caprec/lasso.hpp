#pragma once

// L1-penalized Poisson regression of cell counts on the interaction design
// without the K-way term, cross-validated penalty selection and the
// undersmoothing loop that drives the empirical mean of the Psi_I influence
// curve below sigma_n / sqrt(n).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "caprec/capture_core.hpp"

namespace caprec {

// Dense designs grow as 4^K; the penalized fits are restricted accordingly.
inline constexpr int kMaxLassoSamples = 12;

struct LassoOptions {
    double tolerance = 1e-10;   // max coefficient change of an accepted Newton step
    int max_outer = 500;
    int max_sweeps = 10000;     // coordinate sweeps summed over all outer steps
};

struct LassoFit {
    double lambda = 0.0;
    std::vector<double> coefficients;  // intercept first, then design_matrix(K, true) columns
    std::vector<double> fitted_counts;
    CellDist cell_probs{2, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
    std::vector<double> objective_trace;  // penalized objective after each accepted step
    int sweeps = 0;
    bool converged = false;
};

// (1/W) Σ_c [mu_c - y_c log mu_c] + lambda Σ_{j>=1} |beta_j|, W = Σ y_c.
double lasso_objective(const CellTable& table, std::span<const double> beta, double lambda);

double lambda_max(const CellTable& table);

// `start` (optional) warm-starts the solver with a coefficient vector.
LassoFit fit_poisson_lasso(const CellTable& table, double lambda,
                           std::span<const double> start = {},
                           const LassoOptions& options = {});

// Records: individuals are split into folds and held-out cell counts are
// scored against training rates rescaled to the fold size.
// Cells: whole cells are held out and their counts predicted from a fit on
// the remaining cells.
enum class CvScheme { Records, Cells };

// Min: lambda with the smallest mean held-out deviance. OneSe: the largest
// lambda whose mean deviance is within one standard error of that minimum.
enum class CvRule { Min, OneSe };

struct CvOptions {
    CvScheme scheme = CvScheme::Records;
    CvRule rule = CvRule::OneSe;
    int folds = 10;
    int path_len = 100;
    double path_ratio = 1e-4;
    std::uint64_t seed = 20240101;
};

struct CvResult {
    double lambda = 0.0;
    double lambda_max = 0.0;
    std::vector<double> path;
    std::vector<double> mean_deviance;
    std::vector<double> deviance_se;
    double lambda_min = 0.0;
    int folds_used = 0;
    std::vector<std::string> warnings;
};

// Geometric grid from lambda_max down to ratio * lambda_max.
std::vector<double> lambda_path(double lambda_max, int length, double ratio);

CvResult cv_select_lambda(const CellTable& table, const CvOptions& options = {});

struct UndersmoothOptions {
    double shrink = 0.9;
    double lambda_floor_ratio = 1e-6;
};

struct UndersmoothResult {
    LassoFit fit;
    std::vector<double> lambda_path_visited;
    std::vector<double> criterion_values;  // P_n D*(P_lambda) per visited lambda
    double sigma = 0.0;                    // sigma_n at the starting fit
    double threshold = 0.0;                // sigma_n / sqrt(n)
    bool met = false;
    std::vector<std::string> warnings;
};

// Starts from `start` (the cross-validated fit) and shrinks lambda until
// |P_n D*| <= threshold or lambda drops below lambda_floor_ratio * lambda_max.
UndersmoothResult undersmooth(const CellTable& table, const LassoFit& start, double lambda_max,
                              const UndersmoothOptions& options = {});

// P_n D*_I(P) with the empirical distribution of `table` as weights.
double empirical_eic_mean(const CellTable& table, const CellDist& p);

}  // namespace caprec
