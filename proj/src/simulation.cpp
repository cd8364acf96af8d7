#include "caprec/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <thread>

#include "caprec/loglinear.hpp"

namespace caprec {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Displayed coefficient α_i multiplies the interaction with this mask.
constexpr PatternIndex kDisplayAlphaMask[8] = {0, 1, 2, 4, 6, 5, 3, 7};
// Cell P(b1,b2,b3) in display order maps to this pattern index.
constexpr PatternIndex kDisplayCellIndex[7] = {4, 2, 6, 1, 5, 3, 7};

void check_dgp(const Dgp& dgp) {
    check_sample_count(dgp.K);
    const std::size_t full = std::size_t{1} << dgp.K;
    if (dgp.family == DgpFamily::SequentialConditional) {
        if (dgp.conditionals.size() != static_cast<std::size_t>(dgp.K)) {
            throw CaptureError(ErrorCode::InvalidDgp, "need one conditional table per sample");
        }
        for (int k = 0; k < dgp.K; ++k) {
            const auto& t = dgp.conditionals[static_cast<std::size_t>(k)];
            if (t.size() != (std::size_t{1} << k)) {
                throw CaptureError(ErrorCode::InvalidDgp, "conditional table for sample " +
                                                              std::to_string(k + 1) + " has wrong size");
            }
            for (double v : t) {
                if (!(v >= 0.0 && v <= 1.0)) {
                    throw CaptureError(ErrorCode::InvalidDgp, "conditional probability outside [0,1]");
                }
            }
        }
    } else if (dgp.alphas.size() != full) {
        throw CaptureError(ErrorCode::InvalidDgp, "need 2^K interaction coefficients");
    }
}

Scenario make(std::string key, std::string title, Dgp dgp, double stated,
              std::vector<double> printed_display_order, std::vector<EstimatorKind> estimators) {
    Scenario s;
    s.key = std::move(key);
    s.title = std::move(title);
    s.dgp = std::move(dgp);
    s.stated_psi = stated;
    if (!printed_display_order.empty()) s.printed_cells = cells_from_display_order(printed_display_order);
    s.estimators = std::move(estimators);
    return s;
}

Dgp additive(std::vector<double> shown) {
    return {DgpFamily::AdditiveLinear, 3, alphas_from_display_order(shown), {}};
}

Dgp loglinear(std::vector<double> shown) {
    return {DgpFamily::LogLinear, 3, alphas_from_display_order(shown), {}};
}

Dgp sequential(double p1, std::vector<double> p2, std::vector<double> p3) {
    return {DgpFamily::SequentialConditional, 3, {}, {{p1}, std::move(p2), std::move(p3)}};
}

struct Accumulator {
    std::vector<double> psi;
    std::vector<double> se;
    std::vector<double> lo;
    std::vector<double> hi;
};

McMetrics summarize(const std::string& name, std::int64_t n, const Accumulator& acc, double truth) {
    McMetrics m;
    m.estimator = name;
    m.n = n;
    m.reps = static_cast<int>(acc.psi.size());
    double sum = 0.0, var_sum = 0.0, lo_sum = 0.0, hi_sum = 0.0;
    int ok = 0, covered = 0;
    for (std::size_t r = 0; r < acc.psi.size(); ++r) {
        if (std::isnan(acc.psi[r])) continue;
        ++ok;
        sum += acc.psi[r];
        var_sum += acc.se[r] * acc.se[r];
        lo_sum += acc.lo[r];
        hi_sum += acc.hi[r];
        if (acc.lo[r] <= truth && truth <= acc.hi[r]) ++covered;
    }
    m.failures = m.reps - ok;
    m.failure_rate = m.reps > 0 ? static_cast<double>(m.failures) / m.reps : 0.0;
    if (ok == 0) {
        m.mean_psi = m.empirical_var = m.mean_est_var = m.var_ratio = m.coverage = kNaN;
        m.ci_lo_mean = m.ci_hi_mean = kNaN;
        return m;
    }
    m.mean_psi = sum / ok;
    double ss = 0.0;
    for (double v : acc.psi)
        if (!std::isnan(v)) ss += (v - m.mean_psi) * (v - m.mean_psi);
    m.empirical_var = ok > 1 ? ss / (ok - 1) : kNaN;
    m.mean_est_var = var_sum / ok;
    m.var_ratio = m.mean_est_var / m.empirical_var;
    m.coverage = static_cast<double>(covered) / ok;
    m.ci_lo_mean = lo_sum / ok;
    m.ci_hi_mean = hi_sum / ok;
    return m;
}

nlohmann::json pair_json(SamplePair p) { return nlohmann::json::array({p.first, p.second}); }

SamplePair pair_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) {
        throw CaptureError(ErrorCode::ParseError, "sample selector must be a two-element array");
    }
    return {j[0].get<int>(), j[1].get<int>()};
}

nlohmann::json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

std::string_view family_name(DgpFamily f) noexcept {
    switch (f) {
        case DgpFamily::AdditiveLinear: return "additive_linear";
        case DgpFamily::LogLinear: return "log_linear";
        case DgpFamily::SequentialConditional: return "sequential_conditional";
    }
    return "unknown";
}

DgpFamily parse_family(std::string_view name) {
    for (auto f : {DgpFamily::AdditiveLinear, DgpFamily::LogLinear, DgpFamily::SequentialConditional}) {
        if (family_name(f) == name) return f;
    }
    throw CaptureError(ErrorCode::ParseError, "unknown DGP family '" + std::string(name) + "'");
}

std::vector<double> alphas_from_display_order(std::span<const double> shown) {
    if (shown.size() != 8) throw CaptureError(ErrorCode::InvalidDgp, "display order needs 8 coefficients");
    std::vector<double> a(8);
    for (std::size_t i = 0; i < 8; ++i) a[kDisplayAlphaMask[i]] = shown[i];
    return a;
}

std::vector<double> cells_from_display_order(std::span<const double> shown) {
    if (shown.size() != 7) throw CaptureError(ErrorCode::InvalidArgument, "display order needs 7 cells");
    std::vector<double> c(7);
    for (std::size_t i = 0; i < 7; ++i) c[kDisplayCellIndex[i] - 1] = shown[i];
    return c;
}

FullDist full_dist(const Dgp& dgp) {
    check_dgp(dgp);
    const std::size_t full = std::size_t{1} << dgp.K;
    std::vector<double> p(full);
    if (dgp.family == DgpFamily::SequentialConditional) {
        for (std::size_t b = 0; b < full; ++b) {
            double v = 1.0;
            for (int k = 0; k < dgp.K; ++k) {
                const std::size_t history = b & ((std::size_t{1} << k) - 1);
                const double q = dgp.conditionals[static_cast<std::size_t>(k)][history];
                v *= ((b >> k) & 1u) ? q : 1.0 - q;
            }
            p[b] = v;
        }
    } else {
        for (std::size_t b = 0; b < full; ++b) {
            double s = 0.0;
            for (std::size_t m = 0; m < full; ++m)
                if ((b & m) == m) s += dgp.alphas[m];
            p[b] = s;
        }
        if (dgp.family == DgpFamily::LogLinear) {
            double total = 0.0;
            for (double& v : p) total += (v = std::exp(v));
            for (double& v : p) v /= total;
        } else {
            double total = 0.0;
            for (double v : p) {
                if (v < -1e-12 || v > 1.0 + 1e-12) {
                    throw CaptureError(ErrorCode::InvalidDgp, "additive model gives a probability outside [0,1]");
                }
                total += v;
            }
            if (std::abs(total - 1.0) > 1e-9) {
                throw CaptureError(ErrorCode::InvalidDgp, "additive model probabilities do not sum to 1");
            }
            for (double& v : p) v = std::clamp(v, 0.0, 1.0) / total;
        }
    }
    return FullDist(dgp.K, std::move(p));
}

double true_psi(const FullDist& fd) { return 1.0 - fd.prob(0); }

CellTable sample_observed(const FullDist& fd, std::int64_t n, Engine& engine) {
    if (n <= 0) throw CaptureError(ErrorCode::InvalidArgument, "sample size must be positive");
    const auto observed = fd.observed();
    const auto probs = observed.probs();
    std::vector<std::int64_t> counts(probs.size(), 0);
    std::int64_t remaining = n;
    double mass = 1.0;
    for (std::size_t i = 0; i < probs.size() && remaining > 0; ++i) {
        if (i + 1 == probs.size() || mass <= 0.0) {
            counts[i] = remaining;
            break;
        }
        const double q = std::clamp(probs[i] / mass, 0.0, 1.0);
        std::binomial_distribution<std::int64_t> draw(remaining, q);
        counts[i] = draw(engine);
        remaining -= counts[i];
        mass -= probs[i];
    }
    return CellTable(fd.samples(), std::move(counts));
}

CellTable sample_observed(const FullDist& fd, std::int64_t n, std::uint64_t seed) {
    auto engine = make_engine(seed);
    return sample_observed(fd, n, engine);
}

std::string_view estimator_name(EstimatorKind e) noexcept {
    switch (e) {
        case EstimatorKind::Linear: return "linear";
        case EstimatorKind::Independence: return "independence";
        case EstimatorKind::CondIndependence: return "cond_independence";
        case EstimatorKind::Npmle: return "npmle";
        case EstimatorKind::Lasso: return "lasso";
        case EstimatorKind::LassoCv: return "lasso_cv";
        case EstimatorKind::Tmle: return "tmle";
        case EstimatorKind::TmleCv: return "tmle_cv";
        case EstimatorKind::M0: return "m0";
        case EstimatorKind::Mt: return "mt";
    }
    return "unknown";
}

EstimatorKind parse_estimator(std::string_view name) {
    for (int i = 0; i <= static_cast<int>(EstimatorKind::Mt); ++i) {
        const auto e = static_cast<EstimatorKind>(i);
        if (estimator_name(e) == name) return e;
    }
    throw CaptureError(ErrorCode::ParseError, "unknown estimator '" + std::string(name) + "'");
}

EstimatorRun run_estimators(const CellTable& table, std::span<const EstimatorKind> which,
                            const EstimatorSettings& settings) {
    EstimatorRun out;
    const auto empirical = empirical_dist(table);
    const auto n = table.total();
    const double level = settings.tmle.level;
    const auto wants = [&](EstimatorKind e) { return std::find(which.begin(), which.end(), e) != which.end(); };
    const auto attempt = [&](EstimatorKind e, auto&& body) {
        if (!wants(e)) return;
        try {
            auto est = body();
            est.estimator = std::string(estimator_name(e));
            out.estimates.emplace(e, std::move(est));
        } catch (const CaptureError& err) {
            out.errors.emplace(e, err);
        }
    };

    attempt(EstimatorKind::Linear, [&] { return estimate_linear(empirical, n, level); });
    attempt(EstimatorKind::Independence,
            [&] { return estimate_independence(empirical, n, settings.pair, level); });
    attempt(EstimatorKind::CondIndependence,
            [&] { return estimate_cond_independence(empirical, n, settings.cond, level); });
    attempt(EstimatorKind::Npmle, [&] { return estimate_npmle(empirical, n, level); });
    attempt(EstimatorKind::M0, [&] { return fit_glm_m0(table, level).first; });
    attempt(EstimatorKind::Mt, [&] { return fit_glm_mt(table, level).first; });

    const bool any_lasso = wants(EstimatorKind::Lasso) || wants(EstimatorKind::LassoCv) ||
                           wants(EstimatorKind::Tmle) || wants(EstimatorKind::TmleCv);
    if (!any_lasso) return out;
    std::optional<LassoFit> cv_fit;
    double lmax = 0.0;
    try {
        const auto cv = cv_select_lambda(table, settings.cv);
        lmax = cv.lambda_max;
        cv_fit = fit_poisson_lasso(table, cv.lambda);
    } catch (const CaptureError& err) {
        for (auto e : {EstimatorKind::Lasso, EstimatorKind::LassoCv, EstimatorKind::Tmle, EstimatorKind::TmleCv})
            if (wants(e)) out.errors.emplace(e, err);
        return out;
    }
    attempt(EstimatorKind::LassoCv, [&] {
        return estimate_loglinear_at(cv_fit->cell_probs, empirical.probs(), n, "lasso_cv", level);
    });
    attempt(EstimatorKind::TmleCv, [&] { return tmle(cv_fit->cell_probs, table, settings.tmle).estimate; });
    if (!wants(EstimatorKind::Lasso) && !wants(EstimatorKind::Tmle)) return out;
    std::optional<UndersmoothResult> us;
    try {
        us = undersmooth(table, *cv_fit, lmax, settings.undersmooth);
    } catch (const CaptureError& err) {
        for (auto e : {EstimatorKind::Lasso, EstimatorKind::Tmle})
            if (wants(e)) out.errors.emplace(e, err);
        return out;
    }
    attempt(EstimatorKind::Lasso, [&] {
        auto est = estimate_loglinear_at(us->fit.cell_probs, empirical.probs(), n, "lasso", level);
        est.warnings.insert(est.warnings.end(), us->warnings.begin(), us->warnings.end());
        return est;
    });
    attempt(EstimatorKind::Tmle, [&] { return tmle(us->fit.cell_probs, table, settings.tmle).estimate; });
    return out;
}

unsigned worker_count() {
    if (const char* env = std::getenv("CAPREC_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

const McMetrics& McResult::at(std::string_view estimator, std::int64_t n) const {
    for (const auto& m : metrics)
        if (m.estimator == estimator && m.n == n) return m;
    throw CaptureError(ErrorCode::InvalidArgument, "no metrics for estimator '" + std::string(estimator) + "'");
}

const ReplicateSeries& McResult::series(std::string_view estimator, std::int64_t n) const {
    for (const auto& s : replicates)
        if (s.estimator == estimator && s.n == n) return s;
    throw CaptureError(ErrorCode::InvalidArgument, "no replicates for estimator '" + std::string(estimator) + "'");
}

McResult run_monte_carlo(const Scenario& scenario, unsigned threads) {
    if (scenario.reps < 1) throw CaptureError(ErrorCode::InvalidArgument, "need at least one replicate");
    const auto fd = full_dist(scenario.dgp);
    McResult result;
    result.scenario = scenario.key;
    result.truth = true_psi(fd);

    const auto& kinds = scenario.estimators;
    const std::size_t reps = static_cast<std::size_t>(scenario.reps);
    const std::size_t tasks = scenario.sizes.size() * reps;
    // slots[(size, estimator)][rep]
    std::vector<Accumulator> slots(scenario.sizes.size() * kinds.size());
    for (auto& a : slots) {
        a.psi.assign(reps, kNaN);
        a.se.assign(reps, kNaN);
        a.lo.assign(reps, kNaN);
        a.hi.assign(reps, kNaN);
    }

    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t t = next++; t < tasks; t = next++) {
            const std::size_t si = t / reps;
            const std::size_t r = t % reps;
            const auto n = scenario.sizes[si];
            const auto rep_seed = derive_seed(derive_seed(scenario.seed, static_cast<std::uint64_t>(n)), r);
            auto engine = make_engine(rep_seed);
            const auto table = sample_observed(fd, n, engine);
            auto settings = scenario.settings;
            settings.cv.seed = derive_seed(rep_seed, 1);
            const auto run = run_estimators(table, kinds, settings);
            for (std::size_t e = 0; e < kinds.size(); ++e) {
                const auto it = run.estimates.find(kinds[e]);
                if (it == run.estimates.end()) continue;
                auto& slot = slots[si * kinds.size() + e];
                slot.psi[r] = it->second.psi;
                slot.se[r] = it->second.se;
                slot.lo[r] = it->second.ci_lo;
                slot.hi[r] = it->second.ci_hi;
            }
        }
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(threads == 0 ? worker_count() : threads,
                                                             static_cast<unsigned>(tasks)));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }

    for (std::size_t si = 0; si < scenario.sizes.size(); ++si) {
        for (std::size_t e = 0; e < kinds.size(); ++e) {
            const auto& slot = slots[si * kinds.size() + e];
            const std::string name(estimator_name(kinds[e]));
            result.metrics.push_back(summarize(name, scenario.sizes[si], slot, result.truth));
            result.replicates.push_back({name, scenario.sizes[si], slot.psi, slot.se});
        }
    }
    return result;
}

std::vector<Scenario> scenario_catalog() {
    using E = EstimatorKind;
    const std::vector<E> loglinear_set{E::Npmle, E::Lasso, E::LassoCv, E::Tmle, E::TmleCv, E::M0, E::Mt};
    const std::vector<E> sensitivity_set{E::Npmle, E::Lasso, E::Tmle, E::M0, E::Mt};

    std::vector<Scenario> c;
    c.push_back(make("5.1", "linear no-3-way interaction holds", additive({0.0725, 0.03, 0.01, 0.04, 0.01, 0.02, 0.02, 0}),
                     0.9275, {0.1213, 0.0889, 0.1429, 0.1105, 0.1752, 0.1428, 0.2183}, {E::Linear}));
    c.push_back(make("5.2.1", "log-linear no-3-way interaction, main terms only",
                     loglinear({-0.9398, -1, -1, -1, 0, 0, 0, 0}), 0.6093,
                     {0.2359, 0.2359, 0.0868, 0.2359, 0.0868, 0.0868, 0.0319}, loglinear_set));
    c.push_back(make("5.2.2", "log-linear no-3-way interaction, weak pairwise terms",
                     loglinear({-0.9194, -1, -1, -1, -0.1, -0.1, -0.1, 0}), 0.6013,
                     {0.2440, 0.2440, 0.0812, 0.2440, 0.0812, 0.0812, 0.0245}, loglinear_set));
    c.push_back(make("5.2.3", "log-linear no-3-way interaction, near-empty cells",
                     loglinear({-0.4578, -1, -2, -3, -1, -1, -1, 0}), 0.3674,
                     {0.0857, 0.2331, 0.0043, 0.6336, 0.0116, 0.0315, 0.0002},
                     {E::Npmle, E::Lasso, E::Tmle, E::M0, E::Mt}));
    c.push_back(make("5.5", "samples 1 and 2 independent", sequential(0.1, {0.2, 0.2}, {0.3, 0.25, 0.3, 0.25}),
                     0.4960, {0.4355, 0.2540, 0.1089, 0.1210, 0.0403, 0.0302, 0.0101}, {E::Independence}));
    c.push_back(make("5.6", "samples 2 and 3 independent given sample 1 absent",
                     sequential(0.1, {0.15, 0.2}, {0.2, 0.25, 0.2, 0.25}), 0.388,
                     {0.3943, 0.2784, 0.0696, 0.1546, 0.0515, 0.0387, 0.0129}, {E::CondIndependence}));
    c.push_back(make("6.1", "linear no-3-way interaction violated",
                     additive({0.11, 0.1, 0.05, 0.08, -0.2, -0.2, -0.1, 0.2}), 0.8900,
                     {0.2135, 0.1798, 0.0449, 0.2360, 0.1011, 0.1978, 0.0449}, {E::Linear}));
    c.push_back(make("6.2", "independence of samples 1 and 2 violated",
                     sequential(0.5, {0.5, 0.6}, {0.5, 0.5, 0.5, 0.5}), 0.875,
                     {0.1429, 0.1429, 0.1429, 0.1143, 0.1143, 0.1714, 0.1714}, {E::Independence}));
    c.push_back(make("6.3", "conditional independence of samples 2 and 3 violated",
                     sequential(0.1, {0.15, 0.2}, {0.5, 0.5, 0.2, 0.1}), 0.6175,
                     {0.6194, 0.1749, 0.0437, 0.0648, 0.0648, 0.0291, 0.0032}, {E::CondIndependence}));
    c.push_back(make("6.4", "log-linear no-3-way interaction violated",
                     loglinear({-1.6333, 0, 0, 0, -1, -2, -0.5, 1}), 0.8074,
                     {0.2386, 0.2386, 0.0878, 0.2386, 0.0323, 0.1447, 0.0196}, sensitivity_set));
    c.push_back(make("6.5", "every identification assumption violated",
                     loglinear({-1.1835, -1, -1, -1, -1.5, -1, 2, 1}), 0.6938,
                     {0.1624, 0.1624, 0.0133, 0.1624, 0.0220, 0.4414, 0.0362},
                     {E::CondIndependence, E::Independence, E::Linear, E::Npmle, E::Lasso, E::Tmle, E::M0, E::Mt}));
    c.back().settings.cond = {1, 2};
    c.back().settings.pair = {2, 3};
    return c;
}

const Scenario& catalog_scenario(std::string_view key) {
    static const std::vector<Scenario> catalog = scenario_catalog();
    for (const auto& s : catalog)
        if (s.key == key) return s;
    throw CaptureError(ErrorCode::InvalidArgument, "unknown scenario '" + std::string(key) + "'");
}

nlohmann::json to_json(const Scenario& s) {
    nlohmann::json j;
    j["key"] = s.key;
    j["title"] = s.title;
    j["family"] = family_name(s.dgp.family);
    j["K"] = s.dgp.K;
    if (s.dgp.family == DgpFamily::SequentialConditional) j["conditionals"] = s.dgp.conditionals;
    else j["alphas"] = s.dgp.alphas;
    if (s.stated_psi) j["stated_psi"] = *s.stated_psi;
    j["true_psi"] = true_psi(full_dist(s.dgp));
    if (!s.printed_cells.empty()) j["printed_cells"] = s.printed_cells;
    auto& est = j["estimators"] = nlohmann::json::array();
    for (auto e : s.estimators) est.push_back(estimator_name(e));
    j["pair"] = pair_json(s.settings.pair);
    j["cond"] = pair_json(s.settings.cond);
    j["sizes"] = s.sizes;
    j["reps"] = s.reps;
    j["seed"] = s.seed;
    j["cv"] = {{"scheme", s.settings.cv.scheme == CvScheme::Cells ? "cells" : "records"},
               {"rule", s.settings.cv.rule == CvRule::Min ? "min" : "one_se"},
               {"folds", s.settings.cv.folds},
               {"path_len", s.settings.cv.path_len},
               {"path_ratio", s.settings.cv.path_ratio}};
    j["undersmooth"] = {{"shrink", s.settings.undersmooth.shrink},
                        {"lambda_floor_ratio", s.settings.undersmooth.lambda_floor_ratio}};
    j["tmle"] = {{"c", s.settings.tmle.c_const},
                 {"delta", s.settings.tmle.delta},
                 {"max_iter", s.settings.tmle.max_iter}};
    return j;
}

Scenario scenario_from_json(const nlohmann::json& j) {
    try {
        Scenario s;
        s.key = j.value("key", std::string("custom"));
        s.title = j.value("title", std::string());
        s.dgp.family = parse_family(j.at("family").get<std::string>());
        s.dgp.K = j.at("K").get<int>();
        if (s.dgp.family == DgpFamily::SequentialConditional) {
            s.dgp.conditionals = j.at("conditionals").get<std::vector<std::vector<double>>>();
        } else if (j.contains("alphas_display")) {
            s.dgp.alphas = alphas_from_display_order(j["alphas_display"].get<std::vector<double>>());
        } else {
            s.dgp.alphas = j.at("alphas").get<std::vector<double>>();
        }
        check_dgp(s.dgp);
        if (j.contains("stated_psi")) s.stated_psi = j["stated_psi"].get<double>();
        if (j.contains("printed_cells")) s.printed_cells = j["printed_cells"].get<std::vector<double>>();
        if (j.contains("estimators")) {
            for (const auto& e : j["estimators"]) s.estimators.push_back(parse_estimator(e.get<std::string>()));
        } else {
            s.estimators = {EstimatorKind::Linear, EstimatorKind::Independence,
                            EstimatorKind::CondIndependence, EstimatorKind::Npmle};
        }
        if (j.contains("pair")) s.settings.pair = pair_from(j["pair"]);
        if (j.contains("cond")) s.settings.cond = pair_from(j["cond"]);
        if (j.contains("sizes")) s.sizes = j["sizes"].get<std::vector<std::int64_t>>();
        s.reps = j.value("reps", s.reps);
        s.seed = j.value("seed", s.seed);
        if (j.contains("cv")) {
            const auto& cv = j["cv"];
            const auto scheme = cv.value("scheme", std::string("records"));
            if (scheme != "cells" && scheme != "records") {
                throw CaptureError(ErrorCode::ParseError, "cv.scheme must be 'cells' or 'records'");
            }
            s.settings.cv.scheme = scheme == "cells" ? CvScheme::Cells : CvScheme::Records;
            const auto rule = cv.value("rule", std::string("one_se"));
            if (rule != "min" && rule != "one_se") {
                throw CaptureError(ErrorCode::ParseError, "cv.rule must be 'min' or 'one_se'");
            }
            s.settings.cv.rule = rule == "min" ? CvRule::Min : CvRule::OneSe;
            s.settings.cv.folds = cv.value("folds", s.settings.cv.folds);
            s.settings.cv.path_len = cv.value("path_len", s.settings.cv.path_len);
            s.settings.cv.path_ratio = cv.value("path_ratio", s.settings.cv.path_ratio);
        }
        if (j.contains("undersmooth")) {
            const auto& u = j["undersmooth"];
            s.settings.undersmooth.shrink = u.value("shrink", s.settings.undersmooth.shrink);
            s.settings.undersmooth.lambda_floor_ratio =
                u.value("lambda_floor_ratio", s.settings.undersmooth.lambda_floor_ratio);
        }
        if (j.contains("tmle")) {
            const auto& t = j["tmle"];
            s.settings.tmle.c_const = t.value("c", s.settings.tmle.c_const);
            s.settings.tmle.delta = t.value("delta", s.settings.tmle.delta);
            s.settings.tmle.max_iter = t.value("max_iter", s.settings.tmle.max_iter);
        }
        if (s.sizes.empty() || s.reps < 1) {
            throw CaptureError(ErrorCode::ParseError, "scenario needs sizes and reps >= 1");
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw CaptureError(ErrorCode::ParseError, std::string("scenario file: ") + e.what());
    }
}

nlohmann::json to_json(const McResult& r) {
    nlohmann::json j;
    j["scenario"] = r.scenario;
    j["true_psi"] = r.truth;
    auto& rows = j["metrics"] = nlohmann::json::array();
    for (const auto& m : r.metrics) {
        rows.push_back({{"estimator", m.estimator},
                        {"n", m.n},
                        {"reps", m.reps},
                        {"failures", m.failures},
                        {"failure_rate", m.failure_rate},
                        {"mean_psi", number_or_null(m.mean_psi)},
                        {"empirical_var", number_or_null(m.empirical_var)},
                        {"mean_est_var", number_or_null(m.mean_est_var)},
                        {"var_ratio", number_or_null(m.var_ratio)},
                        {"coverage", number_or_null(m.coverage)},
                        {"ci_lo_mean", number_or_null(m.ci_lo_mean)},
                        {"ci_hi_mean", number_or_null(m.ci_hi_mean)}});
    }
    return j;
}

std::string metrics_csv(const McResult& r) {
    std::string out =
        "scenario,estimator,n,reps,failures,failure_rate,mean_psi,empirical_var,mean_est_var,var_ratio,"
        "coverage,ci_lo_mean,ci_hi_mean\n";
    const auto num = [](double v) {
        if (!std::isfinite(v)) return std::string();
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };
    for (const auto& m : r.metrics) {
        out += r.scenario + "," + m.estimator + "," + std::to_string(m.n) + "," + std::to_string(m.reps) + "," +
               std::to_string(m.failures) + "," + num(m.failure_rate) + "," + num(m.mean_psi) + "," +
               num(m.empirical_var) + "," + num(m.mean_est_var) + "," + num(m.var_ratio) + "," +
               num(m.coverage) + "," + num(m.ci_lo_mean) + "," + num(m.ci_hi_mean) + "\n";
    }
    return out;
}

}  // namespace caprec
