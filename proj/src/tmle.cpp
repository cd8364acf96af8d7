#include "caprec/tmle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "caprec/lasso.hpp"
#include "caprec/loglinear.hpp"

namespace caprec {

namespace {

constexpr double kGoldenTolerance = 1e-10;

}  // namespace

EpsilonBounds epsilon_bounds(const CellDist& p, std::span<const double> d_star) {
    EpsilonBounds b;
    for (std::size_t i = 0; i < d_star.size(); ++i) {
        const double d = d_star[i];
        if (d == 0.0) continue;
        const double pi = p.probs()[i];
        const double c1 = -1.0 / d;
        const double c2 = (1.0 - pi) / (pi * d);
        const double lo = std::min(c1, c2);
        const double hi = std::max(c1, c2);
        if (!b.bounded_below || lo > b.lo) b.lo = lo;
        if (!b.bounded_above || hi < b.hi) b.hi = hi;
        b.bounded_below = b.bounded_above = true;
    }
    b.lo = std::max(b.lo, -kEpsilonCap);
    b.hi = std::min(b.hi, kEpsilonCap);
    return b;
}

CellDist fluctuate(const CellDist& p, double eps, std::span<const double> d_star) {
    const auto probs = p.probs();
    std::vector<double> q(probs.size());
    double total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        q[i] = std::max(0.0, (1.0 + eps * d_star[i]) * probs[i]);
        total += q[i];
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw CaptureError(ErrorCode::InvalidEpsilon, "submodel normalizer is not positive");
    }
    for (double& v : q) v /= total;
    return CellDist(p.samples(), std::move(q));
}

double submodel_loglik(const CellDist& p, const CellTable& table, double eps,
                       std::span<const double> d_star) {
    const auto probs = p.probs();
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) total += (1.0 + eps * d_star[i]) * probs[i];
    if (!(total > 0.0)) return -std::numeric_limits<double>::infinity();
    double ll = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto y = static_cast<double>(table.counts()[i]);
        if (y == 0.0) continue;
        const double q = (1.0 + eps * d_star[i]) * probs[i] / total;
        if (!(q > 0.0)) return -std::numeric_limits<double>::infinity();
        ll += y * std::log(q);
    }
    return ll;
}

double fit_epsilon(const CellDist& p, const CellTable& table, std::span<const double> d_star) {
    const auto bounds = epsilon_bounds(p, d_star);
    const auto ll = [&](double e) { return submodel_loglik(p, table, e, d_star); };
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    // Stay strictly inside the bounds so every cell keeps positive mass.
    const double lo = bounds.lo * (1.0 - 1e-9);
    const double hi = bounds.hi * (1.0 - 1e-9);
    double a = lo;
    double b = hi;
    double c = b - g * (b - a);
    double d = a + g * (b - a);
    double fc = ll(c);
    double fd = ll(d);
    while (b - a > kGoldenTolerance * std::max(1.0, std::abs(a) + std::abs(b))) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = ll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = ll(d);
        }
    }
    double best = 0.5 * (a + b);
    double fbest = ll(best);
    for (double e : {lo, hi, 0.0}) {
        const double fe = ll(e);
        if (fe > fbest) {
            best = e;
            fbest = fe;
        }
    }
    if (!std::isfinite(fbest)) {
        throw CaptureError(ErrorCode::FitFailure, "submodel log-likelihood is not finite on the bracket");
    }
    return best;
}

TmleResult tmle(const CellDist& initial, const CellTable& table, const TmleOptions& options) {
    if (!initial.strictly_positive()) {
        throw CaptureError(ErrorCode::UndefinedEstimand, "TMLE needs a strictly positive initial fit");
    }
    const int K = table.samples();
    const auto n = static_cast<double>(table.total());
    const auto empirical = empirical_dist(table);

    TmleResult res;
    res.p_star = initial;
    auto d = eic_loglinear(K, initial.probs());
    double ss = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) ss += empirical.probs()[i] * d[i] * d[i];
    res.stopping_s = std::sqrt(ss) / (std::max(std::log(n), options.c_const) * std::sqrt(n));
    res.loglik_trace.push_back(submodel_loglik(initial, table, 0.0, d));

    res.final_eic_mean = empirical_eic_mean(table, res.p_star);
    // Set when a step lands on the edge of the submodel, emptying a cell.
    bool boundary = false;
    while (true) {
        if (std::abs(res.final_eic_mean) <= res.stopping_s) {
            res.exit = TmleExit::EicCriterion;
            break;
        }
        if (res.iterations >= options.max_iter) {
            res.exit = TmleExit::MaxIterations;
            break;
        }
        const double eps = fit_epsilon(res.p_star, table, d);
        const auto bounds = epsilon_bounds(res.p_star, d);
        if ((bounds.bounded_above && eps >= bounds.hi * (1.0 - 1e-6) && bounds.hi > 0.0) ||
            (bounds.bounded_below && eps <= bounds.lo * (1.0 - 1e-6) && bounds.lo < 0.0)) {
            boundary = true;
        }
        res.p_star = fluctuate(res.p_star, eps, d);
        ++res.iterations;
        res.epsilon_trace.push_back(eps);
        d = eic_loglinear(K, res.p_star.probs());
        res.loglik_trace.push_back(submodel_loglik(res.p_star, table, 0.0, d));
        res.final_eic_mean = empirical_eic_mean(table, res.p_star);
        if (std::abs(eps) <= options.delta) {
            res.exit = std::abs(res.final_eic_mean) <= res.stopping_s ? TmleExit::EicCriterion
                                                                       : TmleExit::SmallEpsilon;
            break;
        }
    }

    res.estimate = estimate_loglinear_at(res.p_star, empirical.probs(), table.total(), "tmle",
                                         options.level);
    if (res.exit == TmleExit::MaxIterations) res.estimate.warnings.emplace_back(warning::kNonConvergence);
    if (boundary) res.estimate.warnings.emplace_back(warning::kBoundaryFit);
    return res;
}

}  // namespace caprec
