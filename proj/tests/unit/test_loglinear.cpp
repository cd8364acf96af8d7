#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>

#include "caprec/loglinear.hpp"
#include "helpers.hpp"

using namespace caprec;
using testutil::gateaux;
using testutil::printed;
using testutil::scenario_cells;
using testutil::weighted_mean;

namespace {

CellTable expected_table(const CellDist& p, double n) {
    std::vector<std::int64_t> c;
    for (double v : p.probs()) c.push_back(static_cast<std::int64_t>(std::llround(v * n)));
    return CellTable(p.samples(), std::move(c));
}

}  // namespace

TEST_CASE("log-linear estimand on printed tables") {
    CHECK(psi_loglinear(3, printed({0.2359, 0.2359, 0.0868, 0.2359, 0.0868, 0.0868, 0.0319})) ==
          doctest::Approx(0.6093).epsilon(5e-4));
    CHECK(psi_loglinear(3, printed({0.2440, 0.2440, 0.0812, 0.2440, 0.0812, 0.0812, 0.0245})) ==
          doctest::Approx(0.6013).epsilon(5e-4));
}

TEST_CASE("log-linear estimand recovers psi when there is no three-way term") {
    for (const char* key : {"5.2.1", "5.2.2", "5.2.3"}) {
        CAPTURE(key);
        const auto fd = full_dist(catalog_scenario(key).dgp);
        CHECK(psi_loglinear(3, fd.observed().probs()) == doctest::Approx(true_psi(fd)).epsilon(1e-12));
    }
    const auto fd = full_dist(catalog_scenario("6.4").dgp);
    CHECK(std::abs(psi_loglinear(3, fd.observed().probs()) - true_psi(fd)) > 0.05);
}

TEST_CASE("log-linear estimand for K = 2 is the Lincoln-Petersen form") {
    // With no (1,2) interaction: P*(00) P*(11) = P*(10) P*(01).
    const std::vector<double> p{0.3, 0.5, 0.2};
    CHECK(psi_loglinear(2, p) == doctest::Approx(1.0 / (1.0 + p[0] * p[1] / p[2])).epsilon(1e-12));
}

TEST_CASE("log-linear estimand needs every cell") {
    std::vector<double> p(7, 1.0 / 6);
    p[6] = 0.0;
    try {
        psi_loglinear(3, p);
        FAIL("expected UndefinedEstimand");
    } catch (const CaptureError& e) {
        CHECK(e.code() == ErrorCode::UndefinedEstimand);
    }
    CHECK_THROWS_AS(eic_loglinear(3, p), CaptureError);
    CHECK_THROWS_AS(estimate_npmle(CellDist(3, p), 100), CaptureError);
}

TEST_CASE("log-linear influence curve") {
    const std::vector<double> uniform(7, 1.0 / 7);
    CHECK(psi_loglinear(3, uniform) == doctest::Approx(0.875));
    CHECK(std::abs(weighted_mean(uniform, eic_loglinear(3, uniform))) < 1e-14);

    const auto p = scenario_cells("5.2.1");
    const double psi = psi_loglinear(3, p.probs());
    const double p111 = p.probs()[6];
    const double oracle = -psi * (1.0 - psi) * (1.0 / p111 - 1.0);
    CHECK(eic_loglinear(3, p.probs())[6] == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(oracle == doctest::Approx(-7.22).epsilon(2e-3));
    CHECK(eic_loglinear(CapturePattern(3, 7), p, psi) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK_THROWS_AS(eic_loglinear(CapturePattern(3, 0), p, psi), CaptureError);

    for (double edge : {0.0, 1.0}) {
        for (double d : eic_loglinear(3, p.probs(), edge)) CHECK(d == 0.0);
    }
}

TEST_CASE("log-linear influence curve is the Gateaux derivative") {
    for (const char* key : {"5.2.1", "5.2.3", "6.4", "6.5"}) {
        CAPTURE(key);
        const auto p = scenario_cells(key);
        const std::vector<double> pv(p.probs().begin(), p.probs().end());
        const auto d = eic_loglinear(3, pv);
        for (std::size_t b = 0; b < pv.size(); ++b) {
            const double fd = gateaux([](auto q) { return psi_loglinear(3, q); }, pv, b, 1e-7);
            CHECK(fd == doctest::Approx(d[b]).epsilon(1e-3).scale(1e-3));
        }
    }
    // K = 4 exercises the even sign.
    std::vector<double> p4(15);
    double s = 0.0;
    for (std::size_t i = 0; i < p4.size(); ++i) s += (p4[i] = 1.0 + 0.1 * static_cast<double>(i));
    for (auto& v : p4) v /= s;
    const auto d4 = eic_loglinear(4, p4);
    for (std::size_t b = 0; b < p4.size(); ++b) {
        const double fd = gateaux([](auto q) { return psi_loglinear(4, q); }, p4, b, 1e-7);
        CHECK(fd == doctest::Approx(d4[b]).epsilon(1e-3).scale(1e-3));
    }
}

TEST_CASE("NPMLE influence curve has empirical mean zero") {
    const auto t = sample_observed(full_dist(catalog_scenario("5.2.1").dgp), 1000, 4);
    const auto emp = empirical_dist(t);
    const auto e = estimate_npmle(emp, t.total());
    CHECK(std::abs(weighted_mean(emp.probs(), e.eic)) < 1e-10);
    CHECK(e.estimator == "npmle");
    CHECK(e.se == doctest::Approx(e.sigma / std::sqrt(1000.0)));
}

TEST_CASE("design matrices") {
    const auto d2 = design_matrix(2, true);
    CHECK(d2.x.rows() == 3);
    CHECK(d2.x.cols() == 3);
    CHECK(d2.column_masks == std::vector<PatternIndex>{0, 1, 2});

    const auto d3 = design_matrix(3, true);
    CHECK(d3.x.rows() == 7);
    CHECK(d3.x.cols() == 7);
    CHECK(d3.column_masks == std::vector<PatternIndex>{0, 1, 2, 4, 3, 5, 6});

    const auto full = design_matrix(3, false);
    CHECK(full.x.cols() == 8);
    for (Eigen::Index r = 0; r < 7; ++r) CHECK(full.x(r, 7) == (r == 6 ? 1.0 : 0.0));
    // Row for pattern 011 has intercept, b1, b2 and b1 b2.
    CHECK(full.x(2, 0) == 1.0);
    CHECK(full.x(2, 1) == 1.0);
    CHECK(full.x(2, 2) == 1.0);
    CHECK(full.x(2, 3) == 0.0);
    CHECK(full.x(2, 4) == 1.0);
}

TEST_CASE("Mt recovers psi on noise-free main-effects data") {
    // 5.2.1 is a main-effects log-linear model, which is Mt.
    const auto t = expected_table(scenario_cells("5.2.1"), 1e7);
    const auto [est, fit] = fit_glm_mt(t);
    CHECK(est.psi == doctest::Approx(0.6093).epsilon(5e-4));
    CHECK(fit.df == 3);
    CHECK(fit.parameters == 4);
    // Equal main effects make M0 correct as well.
    const auto [e0, f0] = fit_glm_m0(t);
    CHECK(e0.psi == doctest::Approx(est.psi).epsilon(1e-6));
    CHECK(f0.df == 5);
}

TEST_CASE("GLM fits solve the score equations") {
    const auto t = sample_observed(full_dist(catalog_scenario("6.5").dgp), 2000, 8);
    const auto [est, fit] = fit_glm_mt(t);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(7, 4);
    for (int r = 0; r < 7; ++r) {
        x(r, 0) = 1.0;
        for (int k = 0; k < 3; ++k) x(r, k + 1) = ((r + 1) >> k) & 1;
    }
    Eigen::VectorXd resid(7);
    for (int r = 0; r < 7; ++r) resid[r] = static_cast<double>(t.counts()[r]) - fit.fitted_counts[r];
    CHECK((x.transpose() * resid).cwiseAbs().maxCoeff() < 1e-6);

    double ll = 0.0;
    for (int r = 0; r < 7; ++r) {
        const double y = static_cast<double>(t.counts()[r]);
        ll += y * std::log(fit.fitted_counts[r]) - fit.fitted_counts[r] - std::lgamma(y + 1.0);
    }
    CHECK(fit.loglik == doctest::Approx(ll).epsilon(1e-10));
    CHECK(fit.aic == doctest::Approx(-2.0 * ll + 8.0).epsilon(1e-10));
    CHECK(fit.bic == doctest::Approx(-2.0 * ll + 4.0 * std::log(2000.0)).epsilon(1e-10));
}

TEST_CASE("GLM standard error is the conditional delta-method value") {
    // With counts equal to fitted values: var(psi) = psi^2 (1-psi)^2 ([I^-1]_00 - 1/n).
    const auto t = expected_table(scenario_cells("5.2.1"), 1e6);
    const auto [est, fit] = fit_glm_mt(t);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(7, 4);
    for (int r = 0; r < 7; ++r) {
        x(r, 0) = 1.0;
        for (int k = 0; k < 3; ++k) x(r, k + 1) = ((r + 1) >> k) & 1;
    }
    Eigen::VectorXd mu(7);
    for (int r = 0; r < 7; ++r) mu[r] = fit.fitted_counts[r];
    const Eigen::MatrixXd inv = (x.transpose() * mu.asDiagonal() * x).inverse();
    const double n = static_cast<double>(t.total());
    const double oracle = est.psi * (1.0 - est.psi) * std::sqrt(inv(0, 0) - 1.0 / n);
    CHECK(est.se == doctest::Approx(oracle).epsilon(1e-4));
    CHECK(std::abs(weighted_mean(empirical_dist(t).probs(), est.eic)) < 1e-10);
}

TEST_CASE("single 5.2.1 draw gives model criteria of the usual size") {
    const auto t = sample_observed(full_dist(catalog_scenario("5.2.1").dgp), 1000, 17);
    const auto [est, fit] = fit_glm_mt(t);
    CHECK(fit.df == 3);
    CHECK(fit.aic > 58.034 / 2.0);
    CHECK(fit.aic < 58.034 * 2.0);
    CHECK(fit.bic > fit.aic);
    CHECK(est.psi == doctest::Approx(0.6093).epsilon(0.1));
}

TEST_CASE("GLM fit on a single occupied cell fails") {
    const CellTable t(3, {50, 0, 0, 0, 0, 0, 0});
    try {
        fit_glm_mt(t);
        FAIL("expected FitFailure");
    } catch (const CaptureError& e) {
        CHECK(e.code() == ErrorCode::FitFailure);
    }
    CHECK_THROWS_AS(fit_glm_m0(CellTable(3, {0, 0, 0, 0, 0, 0, 40})), CaptureError);
}
