#include "caprec/loglinear.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace caprec {

namespace {

constexpr int kMaxIrlsIterations = 100;
constexpr double kDevianceTolerance = 1e-10;
constexpr double kDivergenceBound = 50.0;
constexpr double kBoundaryCount = 1e-8;

double logistic(double t) {
    if (t >= 0.0) {
        const double e = std::exp(-t);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(t));
}

double poisson_deviance(std::span<const std::int64_t> y, const Eigen::VectorXd& mu) {
    double dev = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto yi = static_cast<double>(y[i]);
        const double m = mu[static_cast<Eigen::Index>(i)];
        dev += (yi > 0.0 ? yi * std::log(yi / m) : 0.0) - (yi - m);
    }
    return 2.0 * dev;
}

std::pair<Estimate, LogLinearFit> baseline(const CellTable& table, const Eigen::MatrixXd& x,
                                           const char* name, double level) {
    LogLinearFit fit = fit_poisson_glm(x, table.counts(), table.total());

    // The never-captured pattern has linear predictor a_0.
    const auto n = static_cast<double>(table.total());
    const double unseen = std::exp(fit.coefficients.front());
    const double psi = n / (n + unseen);

    // Model-based influence of one individual in cell b on psi(n, a_0):
    // psi (1 - psi) (1 - n [I^-1 x_b]_0), I the Poisson information.
    Eigen::VectorXd mu(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) mu[i] = fit.fitted_counts[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd info = x.transpose() * mu.asDiagonal() * x;
    Eigen::VectorXd e0 = Eigen::VectorXd::Zero(x.cols());
    e0[0] = 1.0;
    const Eigen::VectorXd row0 = info.ldlt().solve(e0);
    std::vector<double> ic(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        ic[static_cast<std::size_t>(i)] = psi * (1.0 - psi) * (1.0 - n * x.row(i).dot(row0));
    }

    const auto empirical = empirical_dist(table);
    auto est = make_estimate(Assumption::LogLinearKWay, name, psi, std::move(ic),
                             empirical.probs(), table.total(), level);
    return {std::move(est), std::move(fit)};
}

}  // namespace

double psi_loglinear(int K, std::span<const double> p) {
    if (p.size() != observed_cells(K)) {
        throw CaptureError(ErrorCode::InvalidArgument, "probability vector has wrong length");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] > 0.0)) {
            throw CaptureError(ErrorCode::UndefinedEstimand,
                               "log-linear estimand needs every observable cell to be positive");
        }
        s += parity_f(static_cast<PatternIndex>(i + 1), K) * std::log(p[i]);
    }
    const double t = (K % 2 == 0) ? -s : s;
    return logistic(t);
}

std::vector<double> eic_loglinear(int K, std::span<const double> p, double psi) {
    const double sign = (K % 2 == 0) ? 1.0 : -1.0;
    const double scale = sign * psi * (1.0 - psi);
    const double f0 = parity_f(0, K);
    std::vector<double> d(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] > 0.0)) {
            throw CaptureError(ErrorCode::UndefinedEstimand,
                               "log-linear influence curve needs every cell to be positive");
        }
        d[i] = scale * (parity_f(static_cast<PatternIndex>(i + 1), K) / p[i] + f0);
    }
    return d;
}

double eic_loglinear(const CapturePattern& pattern, const CellDist& dist, double psi) {
    if (pattern.index() == 0) {
        throw CaptureError(ErrorCode::InvalidPattern, "influence curve is defined on observed patterns");
    }
    const int K = dist.samples();
    const double p = dist.prob(pattern.index());
    if (!(p > 0.0)) {
        throw CaptureError(ErrorCode::UndefinedEstimand, "cell probability is zero");
    }
    const double sign = (K % 2 == 0) ? 1.0 : -1.0;
    return sign * psi * (1.0 - psi) * (parity_f(pattern) / p + parity_f(0, K));
}

Estimate estimate_loglinear_at(const CellDist& dist, std::span<const double> weights,
                               std::int64_t n, std::string estimator, double level) {
    const int K = dist.samples();
    const double psi = psi_loglinear(K, dist.probs());
    return make_estimate(Assumption::LogLinearKWay, std::move(estimator), psi,
                         eic_loglinear(K, dist.probs(), psi), weights, n, level);
}

Estimate estimate_npmle(const CellDist& dist, std::int64_t n, double level) {
    return estimate_loglinear_at(dist, dist.probs(), n, "npmle", level);
}

DesignMatrix design_matrix(int K, bool exclude_top) {
    check_sample_count(K);
    const auto cells = observed_cells(K);
    std::vector<PatternIndex> masks;
    for (PatternIndex m = 1; m <= cells; ++m) {
        if (exclude_top && std::popcount(m) == K) continue;
        masks.push_back(m);
    }
    std::stable_sort(masks.begin(), masks.end(), [](PatternIndex a, PatternIndex b) {
        return std::popcount(a) < std::popcount(b);
    });
    masks.insert(masks.begin(), 0);

    DesignMatrix d;
    d.x.setZero(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(masks.size()));
    for (std::size_t r = 0; r < cells; ++r) {
        const auto b = static_cast<PatternIndex>(r + 1);
        for (std::size_t c = 0; c < masks.size(); ++c) {
            if ((b & masks[c]) == masks[c]) {
                d.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = 1.0;
            }
        }
    }
    d.column_masks = std::move(masks);
    return d;
}

LogLinearFit fit_poisson_glm(const Eigen::MatrixXd& x, std::span<const std::int64_t> counts,
                             std::int64_t n) {
    const Eigen::Index rows = x.rows();
    const Eigen::Index cols = x.cols();
    Eigen::VectorXd y(rows);
    for (Eigen::Index i = 0; i < rows; ++i) y[i] = static_cast<double>(counts[static_cast<std::size_t>(i)]);

    // Start from the intercept-only fit.
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(cols);
    beta[0] = std::log(std::max(y.mean(), 0.5));
    Eigen::VectorXd mu = (x * beta).array().exp();
    double dev = poisson_deviance(counts, mu);

    bool converged = false;
    int iter = 0;
    for (; iter < kMaxIrlsIterations && !converged; ++iter) {
        const Eigen::VectorXd eta = x * beta;
        const Eigen::VectorXd z = eta.array() + (y - mu).array() / mu.array();
        const Eigen::MatrixXd xtw = x.transpose() * mu.asDiagonal();
        const Eigen::VectorXd proposal = (xtw * x).ldlt().solve(xtw * z);

        Eigen::VectorXd step = proposal - beta;
        double new_dev = 0.0;
        Eigen::VectorXd candidate;
        for (int halving = 0; halving < 30; ++halving) {
            candidate = beta + step;
            mu = (x * candidate).array().exp();
            new_dev = poisson_deviance(counts, mu);
            if (std::isfinite(new_dev) && new_dev <= dev * (1.0 + 1e-12) + 1e-12) break;
            step *= 0.5;
        }
        if (!std::isfinite(new_dev) || !candidate.allFinite()) {
            throw CaptureError(ErrorCode::FitFailure, "IRLS produced non-finite deviance");
        }
        converged = std::abs(new_dev - dev) / (std::abs(new_dev) + 0.1) < kDevianceTolerance;
        beta = candidate;
        dev = new_dev;
        if (beta.cwiseAbs().maxCoeff() > kDivergenceBound) {
            throw CaptureError(ErrorCode::FitFailure,
                               "IRLS coefficients diverge (data on the boundary of the model)");
        }
    }
    if (!converged) {
        throw CaptureError(ErrorCode::FitFailure, "IRLS did not converge in 100 iterations");
    }
    // A fitted count collapsing to zero means the MLE only exists at infinity.
    if (mu.minCoeff() < kBoundaryCount) {
        throw CaptureError(ErrorCode::FitFailure, "fitted count vanishes (data on the boundary of the model)");
    }

    LogLinearFit fit;
    fit.coefficients.assign(beta.data(), beta.data() + cols);
    fit.fitted_counts.assign(mu.data(), mu.data() + rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        fit.loglik += y[i] * std::log(mu[i]) - mu[i] - std::lgamma(y[i] + 1.0);
    }
    fit.parameters = static_cast<int>(cols);
    fit.df = static_cast<int>(rows - cols);
    fit.aic = -2.0 * fit.loglik + 2.0 * fit.parameters;
    fit.bic = -2.0 * fit.loglik + std::log(static_cast<double>(n)) * fit.parameters;
    fit.iterations = iter;
    return fit;
}

std::pair<Estimate, LogLinearFit> fit_glm_mt(const CellTable& table, double level) {
    const int K = table.samples();
    const auto rows = static_cast<Eigen::Index>(table.cells());
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(rows, K + 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto b = static_cast<PatternIndex>(r + 1);
        x(r, 0) = 1.0;
        for (int k = 0; k < K; ++k) x(r, k + 1) = (b >> k) & 1u;
    }
    return baseline(table, x, "mt", level);
}

std::pair<Estimate, LogLinearFit> fit_glm_m0(const CellTable& table, double level) {
    const auto rows = static_cast<Eigen::Index>(table.cells());
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(rows, 2);
    for (Eigen::Index r = 0; r < rows; ++r) {
        x(r, 0) = 1.0;
        x(r, 1) = std::popcount(static_cast<PatternIndex>(r + 1));
    }
    return baseline(table, x, "m0", level);
}

}  // namespace caprec
