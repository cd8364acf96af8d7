#include "caprec/closed_form.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/distributions/normal.hpp>

namespace caprec {

namespace {

void check_length(int K, std::span<const double> p) {
    if (p.size() != observed_cells(K)) {
        throw CaptureError(ErrorCode::InvalidArgument, "probability vector has wrong length");
    }
}

void check_selector(int K, SamplePair pair, const char* what) {
    const auto in_range = [K](int s) { return s >= 1 && s <= K; };
    if (!in_range(pair.first) || !in_range(pair.second) || pair.first == pair.second) {
        throw CaptureError(ErrorCode::InvalidArgument,
                           std::string(what) + ": samples must be distinct and within 1..K");
    }
}

PatternIndex bit(int sample) { return PatternIndex{1} << (sample - 1); }

struct PairMarginals {
    double zero_first = 0.0;   // P(B(j1) = 0)
    double zero_second = 0.0;  // P(B(j2) = 0)
    double zero_both = 0.0;    // P(B(j1) = B(j2) = 0)
};

PairMarginals pair_marginals(std::span<const double> p, SamplePair pair) {
    PairMarginals m;
    const PatternIndex b1 = bit(pair.first);
    const PatternIndex b2 = bit(pair.second);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto idx = static_cast<PatternIndex>(i + 1);
        const bool z1 = (idx & b1) == 0;
        const bool z2 = (idx & b2) == 0;
        if (z1) m.zero_first += p[i];
        if (z2) m.zero_second += p[i];
        if (z1 && z2) m.zero_both += p[i];
    }
    return m;
}

struct CondCells {
    std::size_t both = 0;   // b_j = b_m = 1, others 0
    std::size_t j_only = 0; // b_j = 1, b_m = 0, others 0
    std::size_t m_only = 0; // b_j = 0, b_m = 1, others 0
};

CondCells cond_cells(SamplePair jm) {
    const PatternIndex j = bit(jm.first);
    const PatternIndex m = bit(jm.second);
    return {(j | m) - 1, j - 1, m - 1};
}

void add_range_warning(Estimate& e) {
    if (!(e.psi > 0.0 && e.psi < 1.0)) e.warnings.emplace_back(warning::kOutOfRange);
}

}  // namespace

std::string_view assumption_name(Assumption a) noexcept {
    switch (a) {
        case Assumption::LinearKWay: return "linear";
        case Assumption::Independence: return "indep";
        case Assumption::CondIndependence: return "condindep";
        case Assumption::LogLinearKWay: return "loglinear";
    }
    return "unknown";
}

std::vector<double> Estimate::per_observation(const CellTable& table) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(table.total()));
    for (std::size_t i = 0; i < table.cells(); ++i) {
        out.insert(out.end(), static_cast<std::size_t>(table.counts()[i]), eic.at(i));
    }
    return out;
}

bool Estimate::has_warning(std::string_view w) const {
    return std::find(warnings.begin(), warnings.end(), w) != warnings.end();
}

double normal_critical_value(double level) {
    if (!(level > 0.0 && level < 1.0)) {
        throw CaptureError(ErrorCode::InvalidArgument, "confidence level must lie in (0,1)");
    }
    return boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + level));
}

Interval wald_ci(double psi, std::span<const double> eic_per_observation, double level) {
    if (eic_per_observation.empty()) {
        throw CaptureError(ErrorCode::EmptyInput, "no influence-curve values");
    }
    double ss = 0.0;
    for (double d : eic_per_observation) ss += d * d;
    const auto n = static_cast<double>(eic_per_observation.size());
    const double half = normal_critical_value(level) * std::sqrt(ss / n) / std::sqrt(n);
    return {psi - half, psi + half};
}

Estimate make_estimate(Assumption assumption, std::string estimator, double psi,
                       std::vector<double> eic, std::span<const double> weights,
                       std::int64_t n, double level) {
    Estimate e;
    e.assumption = assumption;
    e.estimator = std::move(estimator);
    e.psi = psi;
    e.n = n;
    e.level = level;
    double second_moment = 0.0;
    for (std::size_t i = 0; i < eic.size(); ++i) second_moment += weights[i] * eic[i] * eic[i];
    e.sigma = std::sqrt(second_moment);
    e.se = e.sigma / std::sqrt(static_cast<double>(n));
    const double half = normal_critical_value(level) * e.se;
    e.ci_lo = psi - half;
    e.ci_hi = psi + half;
    e.eic = std::move(eic);
    add_range_warning(e);
    return e;
}

std::vector<double> parity_constraint(int K) {
    std::vector<double> f(std::size_t{1} << K);
    for (std::size_t b = 0; b < f.size(); ++b) f[b] = parity_f(static_cast<PatternIndex>(b), K);
    return f;
}

double psi_linear(int K, std::span<const double> p, std::span<const double> f) {
    check_length(K, p);
    double pf = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) pf += f[i + 1] * p[i];
    const double denom = f[0] - pf;
    if (denom == 0.0) {
        throw CaptureError(ErrorCode::DegenerateDenominator, "f(0) - Pf vanishes");
    }
    return f[0] / denom;
}

std::vector<double> eic_linear(int K, std::span<const double> p, std::span<const double> f) {
    check_length(K, p);
    double pf = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) pf += f[i + 1] * p[i];
    const double denom = f[0] - pf;
    if (denom == 0.0) {
        throw CaptureError(ErrorCode::DegenerateDenominator, "f(0) - Pf vanishes");
    }
    const double scale = f[0] / (denom * denom);
    std::vector<double> d(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) d[i] = scale * (f[i + 1] - pf);
    return d;
}

double psi_independence(int K, std::span<const double> p, SamplePair pair) {
    check_length(K, p);
    check_selector(K, pair, "independence");
    const auto m = pair_marginals(p, pair);
    const double q1 = m.zero_first;
    const double q2 = m.zero_second;
    if (!(q1 > 0.0 && q1 < 1.0 && q2 > 0.0 && q2 < 1.0)) {
        throw CaptureError(ErrorCode::IdentificationFailure,
                           "independence estimand needs both non-capture marginals in (0,1)");
    }
    const double denom = 1.0 - q1 - q2 + q1 * q2;
    if (denom <= 0.0) {
        throw CaptureError(ErrorCode::IdentificationFailure, "independence denominator <= 0");
    }
    return (1.0 - q1 - q2 + m.zero_both) / denom;
}

std::vector<double> eic_independence(int K, std::span<const double> p, SamplePair pair) {
    // Delta method on (q1, q2, q12) with psi = (1 - q1 - q2 + q12) / ((1 - q1)(1 - q2)).
    psi_independence(K, p, pair);
    const auto m = pair_marginals(p, pair);
    const double q1 = m.zero_first;
    const double q2 = m.zero_second;
    const double q12 = m.zero_both;
    const double denom = 1.0 - q1 - q2 + q1 * q2;
    const double d_q1 = (1.0 - q2) * (q12 - q2) / (denom * denom);
    const double d_q2 = (1.0 - q1) * (q12 - q1) / (denom * denom);
    const double d_q12 = 1.0 / denom;

    const PatternIndex b1 = bit(pair.first);
    const PatternIndex b2 = bit(pair.second);
    std::vector<double> d(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto idx = static_cast<PatternIndex>(i + 1);
        const double z1 = (idx & b1) == 0 ? 1.0 : 0.0;
        const double z2 = (idx & b2) == 0 ? 1.0 : 0.0;
        d[i] = d_q1 * (z1 - q1) + d_q2 * (z2 - q2) + d_q12 * (z1 * z2 - q12);
    }
    return d;
}

double psi_cond_independence(int K, std::span<const double> p, SamplePair jm) {
    check_length(K, p);
    check_selector(K, jm, "conditional independence");
    const auto c = cond_cells(jm);
    const double x = p[c.both];
    const double y = p[c.j_only];
    const double z = p[c.m_only];
    if (x == 0.0) {
        throw CaptureError(ErrorCode::UndefinedEstimand,
                           "conditional independence needs the joint capture cell to be nonempty");
    }
    const double denom = x + y * z;
    if (denom == 0.0) {
        throw CaptureError(ErrorCode::DegenerateDenominator, "x + yz vanishes");
    }
    return x / denom;
}

std::vector<double> eic_cond_independence(int K, std::span<const double> p, SamplePair jm) {
    psi_cond_independence(K, p, jm);
    const auto c = cond_cells(jm);
    const double x = p[c.both];
    const double y = p[c.j_only];
    const double z = p[c.m_only];
    const double denom2 = (x + y * z) * (x + y * z);
    std::vector<double> d(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double ix = i == c.both ? 1.0 : 0.0;
        const double iy = i == c.j_only ? 1.0 : 0.0;
        const double iz = i == c.m_only ? 1.0 : 0.0;
        d[i] = (y * z * (ix - x) - x * z * (iy - y) - x * y * (iz - z)) / denom2;
    }
    return d;
}

Estimate estimate_linear(const CellDist& dist, std::int64_t n, double level) {
    const auto f = parity_constraint(dist.samples());
    return estimate_linear(dist, n, f, level);
}

Estimate estimate_linear(const CellDist& dist, std::int64_t n, std::span<const double> f,
                         double level) {
    const int K = dist.samples();
    if (f.size() != (std::size_t{1} << K) || f[0] == 0.0) {
        throw CaptureError(ErrorCode::InvalidArgument,
                           "linear constraint needs 2^K values with f(0) != 0");
    }
    const double psi = psi_linear(K, dist.probs(), f);
    return make_estimate(Assumption::LinearKWay, "linear", psi,
                         eic_linear(K, dist.probs(), f), dist.probs(), n, level);
}

Estimate estimate_independence(const CellDist& dist, std::int64_t n, SamplePair pair,
                               double level) {
    const int K = dist.samples();
    const double psi = psi_independence(K, dist.probs(), pair);
    auto e = make_estimate(Assumption::Independence, "independence", psi,
                           eic_independence(K, dist.probs(), pair), dist.probs(), n, level);
    e.samples = pair;
    return e;
}

Estimate estimate_cond_independence(const CellDist& dist, std::int64_t n, SamplePair jm,
                                    double level) {
    const int K = dist.samples();
    const double psi = psi_cond_independence(K, dist.probs(), jm);
    auto e = make_estimate(Assumption::CondIndependence, "cond_independence", psi,
                           eic_cond_independence(K, dist.probs(), jm), dist.probs(), n, level);
    e.samples = jm;
    return e;
}

SizeEstimate population_size(const Estimate& est, std::int64_t n) {
    if (!(est.psi > 0.0)) {
        throw CaptureError(ErrorCode::OutOfRange, "population size needs psi > 0");
    }
    const auto nn = static_cast<double>(n);
    constexpr double inf = std::numeric_limits<double>::infinity();
    SizeEstimate s;
    s.n_hat = nn / est.psi;
    s.ci_lo = est.ci_hi > 0.0 ? nn / est.ci_hi : inf;
    s.ci_hi = est.ci_lo > 0.0 ? nn / est.ci_lo : inf;
    return s;
}

}  // namespace caprec
