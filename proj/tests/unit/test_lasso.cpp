#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>

#include "caprec/lasso.hpp"
#include "caprec/loglinear.hpp"
#include "helpers.hpp"

using namespace caprec;
using testutil::scenario_cells;

namespace {

CellTable draw(const char* key, std::int64_t n, std::uint64_t seed) {
    return sample_observed(full_dist(catalog_scenario(key).dgp), n, seed);
}

// Gradient of (1/W) Σ (mu - y log mu) in the coefficients.
Eigen::VectorXd smooth_gradient(const CellTable& t, std::span<const double> mu) {
    const auto d = design_matrix(t.samples(), true);
    Eigen::VectorXd r(d.x.rows());
    for (Eigen::Index c = 0; c < r.size(); ++c) r[c] = mu[static_cast<std::size_t>(c)] - static_cast<double>(t.counts()[static_cast<std::size_t>(c)]);
    return d.x.transpose() * r / static_cast<double>(t.total());
}

double oracle_lambda_max(const CellTable& t) {
    const double mean = static_cast<double>(t.total()) / static_cast<double>(t.cells());
    const std::vector<double> mu(t.cells(), mean);
    const auto g = smooth_gradient(t, mu);
    return g.tail(g.size() - 1).cwiseAbs().maxCoeff();
}

void check_kkt(const CellTable& t, const LassoFit& fit) {
    const auto g = smooth_gradient(t, fit.fitted_counts);
    const double tol = 1e-7 * (1.0 + fit.lambda);
    CHECK(std::abs(g[0]) < tol);
    for (Eigen::Index j = 1; j < g.size(); ++j) {
        const double b = fit.coefficients[static_cast<std::size_t>(j)];
        if (b == 0.0) {
            CHECK(std::abs(g[j]) <= fit.lambda + tol);
        } else {
            CHECK(g[j] + fit.lambda * (b > 0.0 ? 1.0 : -1.0) == doctest::Approx(0.0).scale(1.0).epsilon(tol));
        }
    }
}

}  // namespace

TEST_CASE("lambda_max is the intercept-only gradient bound") {
    for (auto [key, seed] : {std::pair{"5.2.1", 1u}, std::pair{"5.2.3", 2u}, std::pair{"6.5", 3u}}) {
        CAPTURE(key);
        const auto t = draw(key, 1000, seed);
        CHECK(lambda_max(t) == doctest::Approx(oracle_lambda_max(t)).epsilon(1e-12));
        CHECK(lambda_max(t) > 0.0);
        const auto fit = fit_poisson_lasso(t, lambda_max(t) * 1.0001);
        for (std::size_t j = 1; j < fit.coefficients.size(); ++j) CHECK(fit.coefficients[j] == 0.0);
    }
    CHECK(lambda_max(CellTable(3, {10, 10, 10, 10, 10, 10, 10})) < 1e-12);
    CHECK(std::isfinite(lambda_max(CellTable(3, {0, 0, 0, 1, 0, 0, 0}))));
}

TEST_CASE("heavy penalty gives the intercept-only fit") {
    const auto t = draw("5.2.1", 500, 9);
    const auto fit = fit_poisson_lasso(t, 10.0 * lambda_max(t));
    for (double p : fit.cell_probs.probs()) CHECK(p == doctest::Approx(1.0 / 7).epsilon(1e-10));
    CHECK(psi_loglinear(3, fit.cell_probs.probs()) == doctest::Approx(0.875).epsilon(1e-10));
}

TEST_CASE("vanishing penalty reproduces the NPMLE") {
    for (auto [key, seed] : {std::pair{"5.2.1", 11u}, std::pair{"6.4", 12u}, std::pair{"6.5", 13u}}) {
        CAPTURE(key);
        const auto t = draw(key, 1000, seed);
        const auto emp = empirical_dist(t);
        REQUIRE(emp.strictly_positive());
        const auto fit0 = fit_poisson_lasso(t, 0.0);
        for (std::size_t i = 0; i < 7; ++i) CHECK(fit0.cell_probs.probs()[i] == doctest::Approx(emp.probs()[i]).epsilon(1e-8));
        const auto fit = fit_poisson_lasso(t, 1e-10 * lambda_max(t));
        CHECK(psi_loglinear(3, fit.cell_probs.probs()) == doctest::Approx(psi_loglinear(3, emp.probs())).epsilon(1e-6));
    }
}

TEST_CASE("coordinate descent satisfies the KKT conditions") {
    for (auto [key, seed] : {std::pair{"5.2.1", 21u}, std::pair{"5.2.3", 22u}, std::pair{"6.5", 23u}}) {
        const auto t = draw(key, 1000, seed);
        const double lmax = lambda_max(t);
        for (double frac : {0.5, 0.1, 0.01, 0.001}) {
            CAPTURE(key);
            CAPTURE(frac);
            const auto fit = fit_poisson_lasso(t, frac * lmax);
            CHECK(fit.converged);
            check_kkt(t, fit);
        }
    }
}

TEST_CASE("objective decreases along the solver trace") {
    const auto t = draw("5.2.3", 1000, 31);
    const double lambda = 0.05 * lambda_max(t);
    const auto fit = fit_poisson_lasso(t, lambda);
    REQUIRE(!fit.objective_trace.empty());
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
        CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-12);
    }
    CHECK(lasso_objective(t, fit.coefficients, lambda) == doctest::Approx(fit.objective_trace.back()).epsilon(1e-12));
    // Warm starts land on the same optimum.
    const auto warm = fit_poisson_lasso(t, lambda, fit.coefficients);
    CHECK(lasso_objective(t, warm.coefficients, lambda) == doctest::Approx(fit.objective_trace.back()).epsilon(1e-10));
}

TEST_CASE("penalized fit keeps empty cells positive") {
    std::uint64_t seed = 40;
    CellTable t = draw("5.2.3", 1000, seed);
    while (t.count(7) != 0) t = draw("5.2.3", 1000, ++seed);
    const auto fit = fit_poisson_lasso(t, 0.01 * lambda_max(t));
    CHECK(fit.cell_probs.prob(7) > 0.0);
    CHECK(fit.cell_probs.strictly_positive());
    CHECK(std::isfinite(psi_loglinear(3, fit.cell_probs.probs())));
}

TEST_CASE("lambda path") {
    const auto path = lambda_path(2.0, 5, 1e-4);
    CHECK(path.size() == 5);
    CHECK(path.front() == 2.0);
    CHECK(path.back() == doctest::Approx(2e-4));
    for (std::size_t i = 1; i < path.size(); ++i) CHECK(path[i] / path[i - 1] == doctest::Approx(0.1));
    CHECK_THROWS_AS(lambda_path(1.0, 0, 0.1), CaptureError);
    CHECK_THROWS_AS(lambda_path(1.0, 3, 0.0), CaptureError);
}

TEST_CASE("cross-validation on intercept-only data keeps heavy penalties") {
    const FullDist fd(3, {0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1});
    const auto t = sample_observed(fd, 10000, 55);
    for (auto scheme : {CvScheme::Records, CvScheme::Cells}) {
        CvOptions o;
        o.scheme = scheme;
        const auto cv = cv_select_lambda(t, o);
        const auto it = std::find(cv.path.begin(), cv.path.end(), cv.lambda);
        REQUIRE(it != cv.path.end());
        CHECK(it - cv.path.begin() < static_cast<long>(cv.path.size() / 2));
        CHECK(cv.lambda >= cv.lambda_min);
    }
}

TEST_CASE("cross-validation bookkeeping") {
    const auto t = draw("5.2.1", 1000, 61);
    CvOptions o;
    o.path_len = 30;
    const auto cv = cv_select_lambda(t, o);
    CHECK(cv.path.size() == 30);
    CHECK(cv.mean_deviance.size() == 30);
    CHECK(cv.deviance_se.size() == 30);
    CHECK(cv.folds_used == 10);
    CHECK(cv.lambda_max == doctest::Approx(lambda_max(t)));
    const auto again = cv_select_lambda(t, o);
    CHECK(again.lambda == cv.lambda);

    o.rule = CvRule::Min;
    const auto m = cv_select_lambda(t, o);
    CHECK(m.lambda == m.lambda_min);
    const auto best = std::min_element(m.mean_deviance.begin(), m.mean_deviance.end()) - m.mean_deviance.begin();
    CHECK(m.lambda == m.path[static_cast<std::size_t>(best)]);

    o.scheme = CvScheme::Cells;
    const auto c = cv_select_lambda(t, o);
    CHECK(c.folds_used == 7);
}

TEST_CASE("fewer records than folds") {
    const CellTable t(3, {1, 1, 0, 1, 0, 1, 1});
    const auto cv = cv_select_lambda(t, {});
    CHECK(cv.folds_used == 5);
    CHECK(std::find(cv.warnings.begin(), cv.warnings.end(), warning::kFoldsReduced) != cv.warnings.end());
    CHECK_THROWS_AS(cv_select_lambda(CellTable(3, {1, 0, 0, 0, 0, 0, 0}), {}), CaptureError);
    CvOptions one;
    one.folds = 1;
    CHECK_THROWS_AS(cv_select_lambda(t, one), CaptureError);
}

TEST_CASE("undersmoothing stops at once when the plug-in already solves the EIC equation") {
    const CellTable t(3, {100, 100, 100, 100, 100, 100, 100});
    const auto start = fit_poisson_lasso(t, 0.5);
    const auto us = undersmooth(t, start, 1.0);
    CHECK(us.met);
    CHECK(us.lambda_path_visited.size() == 1);
    CHECK(us.warnings.empty());
}

TEST_CASE("undersmoothing trace") {
    const auto t = draw("5.2.1", 1000, 71);
    const auto cv = cv_select_lambda(t, {});
    const auto start = fit_poisson_lasso(t, cv.lambda);
    const auto us = undersmooth(t, start, cv.lambda_max);
    REQUIRE(us.lambda_path_visited.size() == us.criterion_values.size());
    CHECK(us.lambda_path_visited.front() == cv.lambda);
    for (std::size_t i = 1; i < us.lambda_path_visited.size(); ++i) {
        CHECK(us.lambda_path_visited[i] == doctest::Approx(0.9 * us.lambda_path_visited[i - 1]));
        CHECK(std::abs(us.criterion_values[i - 1]) > us.threshold);
    }
    CHECK(us.criterion_values.front() == doctest::Approx(empirical_eic_mean(t, start.cell_probs)));
    CHECK(us.met);
    CHECK(std::abs(us.criterion_values.back()) <= us.threshold);
    CHECK(us.fit.lambda == us.lambda_path_visited.back());
    CHECK(us.threshold == doctest::Approx(us.sigma / std::sqrt(1000.0)));

    UndersmoothOptions bad;
    bad.shrink = 1.0;
    CHECK_THROWS_AS(undersmooth(t, start, cv.lambda_max, bad), CaptureError);
}

TEST_CASE("undersmoothing reports when the floor is hit") {
    const auto t = draw("5.2.1", 1000, 72);
    const auto start = fit_poisson_lasso(t, 0.5 * lambda_max(t));
    UndersmoothOptions o;
    o.lambda_floor_ratio = 0.45;
    const auto us = undersmooth(t, start, lambda_max(t), o);
    if (!us.met) {
        CHECK(std::find(us.warnings.begin(), us.warnings.end(), warning::kUndersmoothingIncomplete) != us.warnings.end());
    }
    CHECK(us.lambda_path_visited.size() == 1);
}

TEST_CASE("penalized fits are limited in K") {
    std::vector<std::int64_t> counts(observed_cells(kMaxLassoSamples + 1), 1);
    const CellTable t(kMaxLassoSamples + 1, counts);
    CHECK_THROWS_AS(fit_poisson_lasso(t, 0.1), CaptureError);
}
