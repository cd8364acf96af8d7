#pragma once

// Data-generating processes, multinomial sampling of observed tables and the
// Monte Carlo harness behind the simulation and sensitivity studies.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "caprec/capture_core.hpp"
#include "caprec/closed_form.hpp"
#include "caprec/lasso.hpp"
#include "caprec/random.hpp"
#include "caprec/tmle.hpp"

namespace caprec {

enum class DgpFamily { AdditiveLinear, LogLinear, SequentialConditional };

std::string_view family_name(DgpFamily f) noexcept;
DgpFamily parse_family(std::string_view name);

struct Dgp {
    DgpFamily family = DgpFamily::LogLinear;
    int K = 3;
    // AdditiveLinear / LogLinear: coefficient per interaction mask 0..2^K-1,
    // where mask m multiplies Π_{j: bit j-1 of m set} b_j.
    std::vector<double> alphas;
    // SequentialConditional: conditionals[k-1][h] = P(B_k = 1 | history h of
    // samples 1..k-1, encoded with the same bit order).
    std::vector<std::vector<double>> conditionals;
};

// Scenario tables list K = 3 coefficients as α0..α7; this reorders them into
// mask order. There α4 is the (2,3) term and α6 the (1,2) term.
std::vector<double> alphas_from_display_order(std::span<const double> shown);

// Observed-cell probabilities printed as P(0,0,1), P(0,1,0), ..., P(1,1,1)
// with b_1 written first, converted to index order.
std::vector<double> cells_from_display_order(std::span<const double> shown);

FullDist full_dist(const Dgp& dgp);
double true_psi(const FullDist& fd);

CellTable sample_observed(const FullDist& fd, std::int64_t n, Engine& engine);
CellTable sample_observed(const FullDist& fd, std::int64_t n, std::uint64_t seed);

enum class EstimatorKind { Linear, Independence, CondIndependence, Npmle, Lasso, LassoCv, Tmle,
                           TmleCv, M0, Mt };

std::string_view estimator_name(EstimatorKind e) noexcept;
EstimatorKind parse_estimator(std::string_view name);

struct EstimatorSettings {
    SamplePair pair{1, 2};
    SamplePair cond{3, 2};
    CvOptions cv{};
    UndersmoothOptions undersmooth{};
    TmleOptions tmle{};
};

struct Scenario {
    std::string key;
    std::string title;
    Dgp dgp;
    std::optional<double> stated_psi;
    std::vector<double> printed_cells;  // index order; empty when none printed
    std::vector<EstimatorKind> estimators;
    EstimatorSettings settings;
    std::vector<std::int64_t> sizes{1000};
    int reps = 1000;
    std::uint64_t seed = 1;
};

struct McMetrics {
    std::string estimator;
    std::int64_t n = 0;
    int reps = 0;
    int failures = 0;
    double failure_rate = 0.0;
    double mean_psi = 0.0;
    double empirical_var = 0.0;
    double mean_est_var = 0.0;  // mean of se^2
    double var_ratio = 0.0;     // mean_est_var / empirical_var
    double coverage = 0.0;
    double ci_lo_mean = 0.0;
    double ci_hi_mean = 0.0;
};

// Per-replicate psi and se for one estimator at one sample size; NaN marks a failure.
struct ReplicateSeries {
    std::string estimator;
    std::int64_t n = 0;
    std::vector<double> psi;
    std::vector<double> se;
};

struct McResult {
    std::string scenario;
    double truth = 0.0;
    std::vector<McMetrics> metrics;
    std::vector<ReplicateSeries> replicates;
    const McMetrics& at(std::string_view estimator, std::int64_t n) const;
    const ReplicateSeries& series(std::string_view estimator, std::int64_t n) const;
};

struct EstimatorRun {
    std::map<EstimatorKind, Estimate> estimates;
    std::map<EstimatorKind, CaptureError> errors;
};

// Every requested estimator lands in exactly one of the two maps.
EstimatorRun run_estimators(const CellTable& table, std::span<const EstimatorKind> which,
                            const EstimatorSettings& settings);

// Worker count: CAPREC_THREADS when set, else the hardware concurrency.
unsigned worker_count();

// Metrics are bitwise identical for a fixed seed whatever the worker count.
McResult run_monte_carlo(const Scenario& scenario, unsigned threads = 0);

std::vector<Scenario> scenario_catalog();
const Scenario& catalog_scenario(std::string_view key);

nlohmann::json to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const McResult& r);
std::string metrics_csv(const McResult& r);

}  // namespace caprec
