#include "caprec/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "caprec/loglinear.hpp"
#include "caprec/random.hpp"

namespace caprec {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Solution {
    VectorXd beta;
    VectorXd mu;
    std::vector<double> trace;
    int sweeps = 0;
    bool converged = false;
};

double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

double penalty(const VectorXd& beta) { return beta.tail(beta.size() - 1).cwiseAbs().sum(); }

double objective(const MatrixXd& x, const VectorXd& y, double w, const VectorXd& beta,
                 double lambda) {
    const VectorXd eta = x * beta;
    double s = 0.0;
    for (Index c = 0; c < eta.size(); ++c) s += std::exp(eta[c]) - y[c] * eta[c];
    return s / w + lambda * penalty(beta);
}

// Quadratic model around beta: g.(b - beta) + (b - beta)' H (b - beta) / 2 + lambda |b|_1.
double model_value(const MatrixXd& h, const VectorXd& g, const VectorXd& beta, double lambda,
                   const VectorXd& b) {
    const VectorXd d = b - beta;
    return g.dot(d) + 0.5 * d.dot(h * d) + lambda * penalty(b);
}

// Feature-sign search (Lee et al., 2007): exact minimizer of the quadratic
// model, started from b. Returns false if it fails to settle.
bool feature_sign(const MatrixXd& h, const VectorXd& g, const VectorXd& beta, double lambda,
                  VectorXd& b) {
    const Index p = b.size();
    const VectorXd c = h * beta - g;  // model gradient is H b - c (+ penalty)
    for (int iter = 0; iter < 50 * static_cast<int>(p) + 100; ++iter) {
        VectorXd grad = h * b - c;
        Index add = -1;
        double worst = lambda;
        for (Index j = 1; j < p; ++j) {
            if (b[j] == 0.0 && std::abs(grad[j]) > worst * (1.0 + 1e-10) + 1e-15) {
                worst = std::abs(grad[j]);
                add = j;
            }
        }
        std::vector<Index> active{0};
        for (Index j = 1; j < p; ++j)
            if (b[j] != 0.0 || j == add) active.push_back(j);
        const auto a = static_cast<Index>(active.size());
        MatrixXd haa(a, a);
        VectorXd rhs(a);
        for (Index r = 0; r < a; ++r) {
            const Index i = active[static_cast<std::size_t>(r)];
            for (Index q = 0; q < a; ++q) haa(r, q) = h(i, active[static_cast<std::size_t>(q)]);
            double sign = 0.0;
            if (i != 0) sign = i == add ? (grad[i] > 0.0 ? -1.0 : 1.0) : (b[i] > 0.0 ? 1.0 : -1.0);
            rhs[r] = c[i] - lambda * sign;
        }
        const Eigen::LDLT<MatrixXd> ldlt(haa);
        if (ldlt.info() != Eigen::Success) return false;
        VectorXd sol = ldlt.solve(rhs);
        sol += ldlt.solve(rhs - haa * sol);
        if (!sol.allFinite()) return false;

        VectorXd target = VectorXd::Zero(p);
        for (Index r = 0; r < a; ++r) target[active[static_cast<std::size_t>(r)]] = sol[r];
        // Best point on the segment b -> target among the sign changes and the end.
        const double current = model_value(h, g, beta, lambda, b);
        VectorXd best = target;
        double best_val = model_value(h, g, beta, lambda, target);
        bool full_step = true;
        for (Index j = 1; j < p; ++j) {
            if (b[j] == 0.0 || b[j] * target[j] > 0.0) continue;
            const double t = b[j] / (b[j] - target[j]);
            VectorXd cand = b + t * (target - b);
            cand[j] = 0.0;
            const double v = model_value(h, g, beta, lambda, cand);
            if (v < best_val) {
                best_val = v;
                best = cand;
                full_step = false;
            }
        }
        if (!(best_val < current)) {
            // No model decrease left: accept b if it is optimal to rounding.
            const VectorXd gb = h * b - c;
            const double tol = 1e-9 * (1.0 + lambda + gb.cwiseAbs().maxCoeff());
            if (std::abs(gb[0]) > tol) return false;
            for (Index j = 1; j < p; ++j) {
                const double viol = b[j] == 0.0 ? std::abs(gb[j]) - lambda
                                                : std::abs(gb[j] + lambda * (b[j] > 0.0 ? 1.0 : -1.0));
                if (viol > tol) return false;
            }
            return true;
        }
        b = best;
        if (!full_step) continue;
        grad = h * b - c;
        bool optimal = true;
        for (Index j = 1; j < p && optimal; ++j)
            if (b[j] == 0.0 && std::abs(grad[j]) > lambda * (1.0 + 1e-10) + 1e-15) optimal = false;
        if (optimal) return true;
    }
    return false;
}

Solution solve(const MatrixXd& x, const VectorXd& y, double lambda, VectorXd beta,
               const LassoOptions& opt) {
    const double w = y.sum();
    if (!(w > 0.0)) throw CaptureError(ErrorCode::EmptyInput, "lasso fit needs a positive total count");
    const Index p = x.cols();

    Solution s;
    double f = objective(x, y, w, beta, lambda);
    s.trace.push_back(f);
    for (int outer = 0; outer < opt.max_outer; ++outer) {
        const VectorXd mu = (x * beta).array().exp();
        const VectorXd g = x.transpose() * (mu - y) / w;
        const MatrixXd h = x.transpose() * mu.asDiagonal() * x / w;

        // Coordinate descent on the quadratic model around beta.
        VectorXd b = beta;
        VectorXd hd = VectorXd::Zero(p);
        bool solved = false;
        for (int sweep = 0; sweep < 10 && !solved; ++sweep) {
            if (++s.sweeps > opt.max_sweeps) {
                throw CaptureError(ErrorCode::FitFailure, "lasso coordinate descent did not converge");
            }
            double change = 0.0;
            for (Index j = 0; j < p; ++j) {
                const double hjj = h(j, j);
                if (!(hjj > 0.0)) continue;
                const double z = b[j] - (g[j] + hd[j]) / hjj;
                const double nb = j == 0 ? z : soft_threshold(z, lambda / hjj);
                const double delta = nb - b[j];
                if (delta != 0.0) {
                    hd += delta * h.col(j);
                    b[j] = nb;
                    change = std::max(change, std::abs(delta));
                }
            }
            if (change < 1e-13) solved = true;
        }
        // Coordinate descent stalls when an empty cell makes H nearly
        // singular; finish the subproblem exactly.
        VectorXd polished = b;
        if (feature_sign(h, g, beta, lambda, polished) &&
            model_value(h, g, beta, lambda, polished) <= model_value(h, g, beta, lambda, b)) {
            b = polished;
        } else if (!solved) {
            for (int sweep = 0; sweep < 10000 && !solved; ++sweep) {
                if (++s.sweeps > opt.max_sweeps) {
                    throw CaptureError(ErrorCode::FitFailure, "lasso coordinate descent did not converge");
                }
                double change = 0.0;
                for (Index j = 0; j < p; ++j) {
                    const double hjj = h(j, j);
                    if (!(hjj > 0.0)) continue;
                    const double z = b[j] - (g[j] + hd[j]) / hjj;
                    const double nb = j == 0 ? z : soft_threshold(z, lambda / hjj);
                    const double delta = nb - b[j];
                    if (delta != 0.0) {
                        hd += delta * h.col(j);
                        b[j] = nb;
                        change = std::max(change, std::abs(delta));
                    }
                }
                if (change < 1e-13) solved = true;
            }
        }

        const VectorXd d = b - beta;
        const double step_size = d.cwiseAbs().maxCoeff();
        if (step_size < opt.tolerance) {
            s.converged = true;
            break;
        }
        const double decrease = g.dot(d) + lambda * (penalty(b) - penalty(beta));
        double t = 1.0;
        double nf = f;
        bool accepted = false;
        for (int k = 0; k < 60; ++k) {
            nf = objective(x, y, w, beta + t * d, lambda);
            if (std::isfinite(nf) && nf <= f + 1e-4 * t * decrease) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            // No further decrease is representable; the model step is at noise level.
            s.converged = decrease > -1e-13 * (1.0 + std::abs(f));
            break;
        }
        beta += t * d;
        f = nf;
        s.trace.push_back(f);
        if (t * step_size < opt.tolerance) {
            s.converged = true;
            break;
        }
    }
    s.beta = beta;
    s.mu = (x * beta).array().exp();
    return s;
}

void check_lasso_samples(int K) {
    if (K > kMaxLassoSamples) {
        throw CaptureError(ErrorCode::InvalidArgument,
                           "penalized log-linear fits support at most 12 samples");
    }
}

VectorXd counts_vector(std::span<const std::int64_t> counts) {
    VectorXd y(static_cast<Index>(counts.size()));
    for (std::size_t i = 0; i < counts.size(); ++i) y[static_cast<Index>(i)] = static_cast<double>(counts[i]);
    return y;
}

VectorXd intercept_start(const VectorXd& y, Index p) {
    VectorXd beta = VectorXd::Zero(p);
    beta[0] = std::log(std::max(y.mean(), 1e-8));
    return beta;
}

double poisson_deviance(double y, double mu) {
    return 2.0 * ((y > 0.0 ? y * std::log(y / mu) : 0.0) - (y - mu));
}

LassoFit make_fit(int K, double lambda, Solution&& s) {
    LassoFit fit;
    fit.lambda = lambda;
    fit.coefficients.assign(s.beta.data(), s.beta.data() + s.beta.size());
    fit.fitted_counts.assign(s.mu.data(), s.mu.data() + s.mu.size());
    const double total = s.mu.sum();
    std::vector<double> probs(fit.fitted_counts.size());
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = fit.fitted_counts[i] / total;
    fit.cell_probs = CellDist(K, std::move(probs));
    fit.objective_trace = std::move(s.trace);
    fit.sweeps = s.sweeps;
    fit.converged = s.converged;
    return fit;
}

}  // namespace

double lasso_objective(const CellTable& table, std::span<const double> beta, double lambda) {
    const auto d = design_matrix(table.samples(), true);
    const VectorXd y = counts_vector(table.counts());
    const VectorXd b = Eigen::Map<const VectorXd>(beta.data(), static_cast<Index>(beta.size()));
    return objective(d.x, y, y.sum(), b, lambda);
}

double lambda_max(const CellTable& table) {
    check_lasso_samples(table.samples());
    const auto d = design_matrix(table.samples(), true);
    const VectorXd y = counts_vector(table.counts());
    const double w = y.sum();
    const VectorXd mu0 = VectorXd::Constant(y.size(), w / static_cast<double>(y.size()));
    const VectorXd grad = d.x.rightCols(d.x.cols() - 1).transpose() * (mu0 - y) / w;
    return grad.cwiseAbs().maxCoeff();
}

LassoFit fit_poisson_lasso(const CellTable& table, double lambda, std::span<const double> start,
                           const LassoOptions& options) {
    if (!(lambda >= 0.0)) throw CaptureError(ErrorCode::InvalidArgument, "lambda must be >= 0");
    const int K = table.samples();
    check_lasso_samples(K);
    const auto d = design_matrix(K, true);
    const VectorXd y = counts_vector(table.counts());
    VectorXd beta;
    if (start.empty()) {
        // Cold starts far from the solution take many Newton steps; walk a
        // short geometric path down from lambda_max instead.
        beta = intercept_start(y, d.x.cols());
        const double lmax = lambda_max(table);
        if (lambda > 0.0 && lambda < lmax) {
            const int steps = static_cast<int>(std::ceil(std::log(lmax / lambda) / std::log(2.0)));
            for (int k = 1; k < steps; ++k) {
                const double lk = lmax * std::pow(lambda / lmax, static_cast<double>(k) / steps);
                beta = solve(d.x, y, lk, std::move(beta), options).beta;
            }
        }
    } else {
        if (static_cast<Index>(start.size()) != d.x.cols()) {
            throw CaptureError(ErrorCode::InvalidArgument, "warm start has wrong length");
        }
        beta = Eigen::Map<const VectorXd>(start.data(), d.x.cols());
    }
    return make_fit(K, lambda, solve(d.x, y, lambda, std::move(beta), options));
}

std::vector<double> lambda_path(double lmax, int length, double ratio) {
    if (length < 1 || !(ratio > 0.0 && ratio <= 1.0)) {
        throw CaptureError(ErrorCode::InvalidArgument, "lambda path needs length >= 1 and ratio in (0,1]");
    }
    std::vector<double> path(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        const double frac = length == 1 ? 0.0 : static_cast<double>(i) / (length - 1);
        path[static_cast<std::size_t>(i)] = lmax * std::pow(ratio, frac);
    }
    return path;
}

CvResult cv_select_lambda(const CellTable& table, const CvOptions& options) {
    if (options.folds < 2) throw CaptureError(ErrorCode::InvalidArgument, "cross-validation needs >= 2 folds");
    const int K = table.samples();
    check_lasso_samples(K);
    const auto design = design_matrix(K, true);
    const MatrixXd& x = design.x;
    const VectorXd y = counts_vector(table.counts());
    const auto cells = static_cast<Index>(table.cells());

    CvResult res;
    res.lambda_max = lambda_max(table);
    res.path = lambda_path(res.lambda_max, options.path_len, options.path_ratio);
    res.mean_deviance.assign(res.path.size(), 0.0);
    std::vector<std::vector<double>> fold_dev;  // [fold][lambda]
    auto engine = make_engine(options.seed);

    if (options.scheme == CvScheme::Records) {
        const auto n = table.total();
        if (n < 2) throw CaptureError(ErrorCode::InvalidArgument, "cross-validation needs >= 2 records");
        int folds = options.folds;
        if (n < folds) {
            folds = static_cast<int>(n);
            res.warnings.emplace_back(warning::kFoldsReduced);
        }
        auto records = table.expand();
        std::shuffle(records.begin(), records.end(), engine);
        std::vector<VectorXd> train(static_cast<std::size_t>(folds), VectorXd::Zero(cells));
        std::vector<VectorXd> test(static_cast<std::size_t>(folds), VectorXd::Zero(cells));
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto fold = i % static_cast<std::size_t>(folds);
            const Index c = records[i] - 1;
            test[fold][c] += 1.0;
            for (std::size_t k = 0; k < train.size(); ++k)
                if (k != fold) train[k][c] += 1.0;
        }
        for (int k = 0; k < folds; ++k) {
            const auto& tr = train[static_cast<std::size_t>(k)];
            const auto& te = test[static_cast<std::size_t>(k)];
            const double scale = te.sum() / tr.sum();
            VectorXd beta = intercept_start(tr, x.cols());
            auto& devs = fold_dev.emplace_back(res.path.size(), 0.0);
            for (std::size_t l = 0; l < res.path.size(); ++l) {
                auto s = solve(x, tr, res.path[l], beta, {});
                beta = s.beta;
                for (Index c = 0; c < cells; ++c) devs[l] += poisson_deviance(te[c], s.mu[c] * scale);
            }
        }
    } else {
        int folds = options.folds;
        if (cells < folds) folds = static_cast<int>(cells);
        std::vector<Index> order(static_cast<std::size_t>(cells));
        std::iota(order.begin(), order.end(), Index{0});
        std::shuffle(order.begin(), order.end(), engine);
        for (int k = 0; k < folds; ++k) {
            std::vector<Index> held;
            std::vector<Index> kept;
            for (std::size_t i = 0; i < order.size(); ++i) {
                (static_cast<int>(i % static_cast<std::size_t>(folds)) == k ? held : kept).push_back(order[i]);
            }
            std::sort(kept.begin(), kept.end());
            MatrixXd xk(static_cast<Index>(kept.size()), x.cols());
            VectorXd yk(static_cast<Index>(kept.size()));
            for (std::size_t r = 0; r < kept.size(); ++r) {
                xk.row(static_cast<Index>(r)) = x.row(kept[r]);
                yk[static_cast<Index>(r)] = y[kept[r]];
            }
            if (!(yk.sum() > 0.0)) continue;
            VectorXd beta = intercept_start(yk, x.cols());
            auto& devs = fold_dev.emplace_back(res.path.size(), 0.0);
            for (std::size_t l = 0; l < res.path.size(); ++l) {
                auto s = solve(xk, yk, res.path[l], beta, {});
                beta = s.beta;
                for (Index c : held) devs[l] += poisson_deviance(y[c], std::exp(x.row(c).dot(beta)));
            }
        }
    }

    const auto used = static_cast<double>(fold_dev.size());
    if (fold_dev.size() < 2) throw CaptureError(ErrorCode::FitFailure, "fewer than two usable folds");
    res.folds_used = static_cast<int>(fold_dev.size());
    res.deviance_se.assign(res.path.size(), 0.0);
    for (std::size_t l = 0; l < res.path.size(); ++l) {
        for (const auto& f : fold_dev) res.mean_deviance[l] += f[l] / used;
        double ss = 0.0;
        for (const auto& f : fold_dev) ss += (f[l] - res.mean_deviance[l]) * (f[l] - res.mean_deviance[l]);
        res.deviance_se[l] = std::sqrt(ss / used / (used - 1.0));
    }
    const auto best = static_cast<std::size_t>(
        std::min_element(res.mean_deviance.begin(), res.mean_deviance.end()) - res.mean_deviance.begin());
    res.lambda_min = res.path[best];
    res.lambda = res.lambda_min;
    if (options.rule == CvRule::OneSe) {
        const double bound = res.mean_deviance[best] + res.deviance_se[best];
        for (std::size_t l = 0; l < best; ++l) {
            if (res.mean_deviance[l] <= bound) {
                res.lambda = res.path[l];
                break;
            }
        }
    }
    return res;
}

double empirical_eic_mean(const CellTable& table, const CellDist& p) {
    const auto d = eic_loglinear(table.samples(), p.probs());
    const auto n = static_cast<double>(table.total());
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) s += static_cast<double>(table.counts()[i]) * d[i];
    return s / n;
}

UndersmoothResult undersmooth(const CellTable& table, const LassoFit& start, double lmax,
                              const UndersmoothOptions& options) {
    if (!(options.shrink > 0.0 && options.shrink < 1.0)) {
        throw CaptureError(ErrorCode::InvalidArgument, "shrink factor must lie in (0,1)");
    }
    const auto n = static_cast<double>(table.total());
    UndersmoothResult res;
    const auto d = eic_loglinear(table.samples(), start.cell_probs.probs());
    double ss = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) ss += static_cast<double>(table.counts()[i]) * d[i] * d[i];
    res.sigma = std::sqrt(ss / n);
    res.threshold = res.sigma / std::sqrt(n);

    res.fit = start;
    double lambda = start.lambda;
    double crit = empirical_eic_mean(table, res.fit.cell_probs);
    res.lambda_path_visited.push_back(lambda);
    res.criterion_values.push_back(crit);
    const double floor = options.lambda_floor_ratio * lmax;
    while (std::abs(crit) > res.threshold) {
        lambda *= options.shrink;
        if (lambda <= floor) break;
        res.fit = fit_poisson_lasso(table, lambda, res.fit.coefficients);
        crit = empirical_eic_mean(table, res.fit.cell_probs);
        res.lambda_path_visited.push_back(lambda);
        res.criterion_values.push_back(crit);
    }
    res.met = std::abs(crit) <= res.threshold;
    if (!res.met) res.warnings.emplace_back(warning::kUndersmoothingIncomplete);
    return res;
}

}  // namespace caprec
