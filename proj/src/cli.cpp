#include "caprec/cli.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "caprec/lasso.hpp"
#include "caprec/loglinear.hpp"
#include "caprec/tmle.hpp"

namespace caprec::cli {

namespace {

using nlohmann::json;

std::string trim(std::string s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, sep)) out.push_back(trim(field));
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

[[noreturn]] void parse_fail(int line, const std::string& msg, ErrorCode code = ErrorCode::ParseError) {
    throw CaptureError(code, "line " + std::to_string(line) + ": " + msg);
}

// Yields (line number, trimmed content) for every line that carries data.
template <class F>
void for_data_lines(std::istream& in, F&& f) {
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        f(lineno, line);
    }
}

json num(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

json pair_json(SamplePair p) { return json::array({p.first, p.second}); }

std::string exit_name(TmleExit e) {
    switch (e) {
        case TmleExit::EicCriterion: return "eic_criterion";
        case TmleExit::SmallEpsilon: return "small_epsilon";
        case TmleExit::MaxIterations: return "max_iterations";
    }
    return "unknown";
}

json estimate_row(const Estimate& e, std::int64_t n) {
    json row;
    row["status"] = "ok";
    row["psi"] = num(e.psi);
    row["se"] = num(e.se);
    row["ci_lo"] = num(e.ci_lo);
    row["ci_hi"] = num(e.ci_hi);
    try {
        const auto s = population_size(e, n);
        row["n_hat"] = num(s.n_hat);
        row["n_hat_lo"] = num(s.ci_lo);
        row["n_hat_hi"] = num(s.ci_hi);
    } catch (const CaptureError&) {
        row["n_hat"] = nullptr;
        row["n_hat_lo"] = nullptr;
        row["n_hat_hi"] = nullptr;
    }
    row["warnings"] = e.warnings;
    return row;
}

json error_row(const CaptureError& err) {
    json row;
    row["status"] = "error";
    row["error"] = {{"code", std::string(error_name(err.code()))}, {"message", err.what()}};
    row["warnings"] = json::array();
    return row;
}

json base_row(std::string_view assumption, std::string_view estimator) {
    return {{"assumption", std::string(assumption)}, {"estimator", std::string(estimator)}};
}

json glm_diagnostics(const LogLinearFit& f) {
    return {{"loglik", num(f.loglik)}, {"aic", num(f.aic)}, {"bic", num(f.bic)},
            {"parameters", f.parameters}, {"df", f.df}, {"iterations", f.iterations},
            {"coefficients", f.coefficients}};
}

json tmle_diagnostics(const TmleResult& t, std::string_view initial) {
    return {{"initial", std::string(initial)}, {"iterations", t.iterations}, {"exit", exit_name(t.exit)},
            {"stopping_s", num(t.stopping_s)}, {"final_eic_mean", num(t.final_eic_mean)},
            {"epsilon_trace", t.epsilon_trace}};
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (auto& f : split(s, ',')) if (!f.empty()) out.push_back(f);
    return out;
}

SamplePair parse_pair(const std::string& s, const char* flag) {
    const auto parts = split_list(s);
    if (parts.size() != 2) throw CLI::ValidationError(flag, "expected two comma-separated sample numbers");
    try {
        return {std::stoi(parts[0]), std::stoi(parts[1])};
    } catch (const std::exception&) {
        throw CLI::ValidationError(flag, "sample numbers must be integers");
    }
}

Assumption parse_assumption(const std::string& s) {
    for (auto a : {Assumption::LinearKWay, Assumption::Independence, Assumption::CondIndependence,
                   Assumption::LogLinearKWay}) {
        if (assumption_name(a) == s) return a;
    }
    throw CLI::ValidationError("--assume", "unknown assumption '" + s + "' (linear, indep, condindep, loglinear)");
}

bool is_loglinear_variant(EstimatorKind e) {
    switch (e) {
        case EstimatorKind::Npmle:
        case EstimatorKind::Lasso:
        case EstimatorKind::LassoCv:
        case EstimatorKind::Tmle:
        case EstimatorKind::TmleCv:
        case EstimatorKind::M0:
        case EstimatorKind::Mt:
            return true;
        default:
            return false;
    }
}

void check_selector(SamplePair p, int K, const char* flag) {
    for (int j : {p.first, p.second}) {
        if (j < 1 || j > K) {
            throw CaptureError(ErrorCode::InvalidArgument,
                               std::string(flag) + " sample " + std::to_string(j) + " is outside 1.." +
                                   std::to_string(K));
        }
    }
}

std::string fixed(const json& v, int width, int prec) {
    if (v.is_null()) return fmt::format("{:>{}}", "-", width);
    const double d = v.get<double>();
    const auto text = fmt::format("{:.{}f}", d, prec);
    if (static_cast<int>(text.size()) > width) return fmt::format("{:>{}.2e}", d, width);
    return fmt::format("{:>{}}", text, width);
}

}  // namespace

std::string pattern_string(PatternIndex index, int K) {
    std::string s(static_cast<std::size_t>(K), '0');
    for (int k = 0; k < K; ++k) if ((index >> k) & 1u) s[static_cast<std::size_t>(k)] = '1';
    return s;
}

CellTable read_records_csv(std::istream& in) {
    int K = 0;
    std::vector<std::int64_t> counts;
    bool header = false;
    for_data_lines(in, [&](int lineno, const std::string& line) {
        const auto fields = split(line, ',');
        if (!header) {
            K = static_cast<int>(fields.size());
            for (int k = 0; k < K; ++k) {
                if (fields[static_cast<std::size_t>(k)] != "s" + std::to_string(k + 1)) {
                    parse_fail(lineno, "record header must be s1,...,sK");
                }
            }
            try {
                check_sample_count(K);
            } catch (const CaptureError& e) {
                parse_fail(lineno, e.what());
            }
            counts.assign(observed_cells(K), 0);
            header = true;
            return;
        }
        if (static_cast<int>(fields.size()) != K) {
            parse_fail(lineno, "expected " + std::to_string(K) + " fields, got " + std::to_string(fields.size()));
        }
        PatternIndex idx = 0;
        for (int k = 0; k < K; ++k) {
            const auto& f = fields[static_cast<std::size_t>(k)];
            if (f != "0" && f != "1") parse_fail(lineno, "capture indicator must be 0 or 1, got '" + f + "'");
            if (f == "1") idx |= PatternIndex{1} << k;
        }
        if (idx == 0) parse_fail(lineno, "all-zero capture history cannot be observed", ErrorCode::ZeroPatternObserved);
        ++counts[idx - 1];
    });
    if (!header) throw CaptureError(ErrorCode::EmptyInput, "record file has no header");
    return CellTable(K, std::move(counts));
}

CellTable read_cells_csv(std::istream& in) {
    int K = 0;
    std::vector<std::int64_t> counts;
    std::set<PatternIndex> seen;
    bool header = false;
    for_data_lines(in, [&](int lineno, const std::string& line) {
        const auto fields = split(line, ',');
        if (!header) {
            if (fields.size() != 2 || fields[0] != "pattern" || fields[1] != "count") {
                parse_fail(lineno, "cell header must be pattern,count");
            }
            header = true;
            return;
        }
        if (fields.size() != 2) parse_fail(lineno, "expected pattern,count");
        const auto& pat = fields[0];
        if (K == 0) {
            K = static_cast<int>(pat.size());
            try {
                check_sample_count(K);
            } catch (const CaptureError& e) {
                parse_fail(lineno, e.what());
            }
            counts.assign(observed_cells(K), 0);
        } else if (static_cast<int>(pat.size()) != K) {
            parse_fail(lineno, "pattern '" + pat + "' does not have " + std::to_string(K) + " bits");
        }
        PatternIndex idx = 0;
        for (int k = 0; k < K; ++k) {
            const char c = pat[static_cast<std::size_t>(k)];
            if (c != '0' && c != '1') parse_fail(lineno, "pattern must be a string of 0/1, got '" + pat + "'");
            if (c == '1') idx |= PatternIndex{1} << k;
        }
        std::int64_t count = 0;
        try {
            std::size_t used = 0;
            count = std::stoll(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            parse_fail(lineno, "count must be an integer, got '" + fields[1] + "'");
        }
        if (count < 0) parse_fail(lineno, "count must be non-negative");
        if (idx == 0) {
            if (count > 0) parse_fail(lineno, "all-zero pattern cannot be observed", ErrorCode::ZeroPatternObserved);
            return;
        }
        if (!seen.insert(idx).second) parse_fail(lineno, "duplicate pattern '" + pat + "'");
        counts[idx - 1] = count;
    });
    if (!header || K == 0) throw CaptureError(ErrorCode::EmptyInput, "cell file has no data rows");
    return CellTable(K, std::move(counts));
}

CellTable read_table(const std::string& path, InputFormat format) {
    std::ifstream in(path);
    if (!in) throw CaptureError(ErrorCode::ParseError, "cannot open '" + path + "'");
    return format == InputFormat::Records ? read_records_csv(in) : read_cells_csv(in);
}

void write_cells_csv(std::ostream& out, const CellTable& table) {
    out << "pattern,count\n";
    for (std::size_t i = 0; i < table.cells(); ++i) {
        out << pattern_string(static_cast<PatternIndex>(i + 1), table.samples()) << ',' << table.counts()[i]
            << '\n';
    }
}

json estimate_report(const CellTable& table, const RunConfig& config) {
    const int K = table.samples();
    const auto n = table.total();
    const auto empirical = empirical_dist(table);
    const double level = config.level;
    auto settings = config.settings;
    settings.tmle.level = level;

    json report;
    report["report_version"] = kReportVersion;
    report["samples"] = K;
    report["n"] = n;
    report["level"] = level;
    json cells = json::array();
    for (std::size_t i = 0; i < table.cells(); ++i) {
        cells.push_back({{"pattern", pattern_string(static_cast<PatternIndex>(i + 1), K)},
                         {"count", table.counts()[i]}});
    }
    report["cells"] = cells;
    json rows = json::array();

    const auto add = [&](json head, auto&& body) {
        try {
            auto [est, diag] = body();
            head.update(estimate_row(est, n));
            if (!diag.is_null()) head["diagnostics"] = diag;
        } catch (const CaptureError& err) {
            head.update(error_row(err));
        }
        rows.push_back(std::move(head));
    };
    const auto wants = [&](Assumption a) {
        return std::find(config.assumptions.begin(), config.assumptions.end(), a) != config.assumptions.end();
    };

    if (wants(Assumption::LinearKWay)) {
        add(base_row("linear", "linear"), [&] { return std::pair{estimate_linear(empirical, n, level), json()}; });
    }
    if (wants(Assumption::Independence)) {
        auto head = base_row("indep", "independence");
        head["samples"] = pair_json(settings.pair);
        add(head, [&] {
            check_selector(settings.pair, K, "--pair");
            return std::pair{estimate_independence(empirical, n, settings.pair, level), json()};
        });
    }
    if (wants(Assumption::CondIndependence)) {
        auto head = base_row("condindep", "cond_independence");
        head["samples"] = pair_json(settings.cond);
        add(head, [&] {
            check_selector(settings.cond, K, "--cond");
            return std::pair{estimate_cond_independence(empirical, n, settings.cond, level), json()};
        });
    }
    if (!wants(Assumption::LogLinearKWay)) {
        report["rows"] = rows;
        return report;
    }

    // The lasso chain is shared by the lasso and tmle variants and computed lazily.
    std::optional<CvResult> cv;
    std::optional<LassoFit> cv_fit;
    std::optional<UndersmoothResult> us;
    std::optional<CaptureError> chain_error;
    const auto need_cv = [&] {
        if (cv_fit || chain_error) return;
        try {
            cv = cv_select_lambda(table, settings.cv);
            cv_fit = fit_poisson_lasso(table, cv->lambda);
        } catch (const CaptureError& err) {
            chain_error = err;
        }
    };
    const auto need_us = [&] {
        need_cv();
        if (us || chain_error) return;
        try {
            us = undersmooth(table, *cv_fit, cv->lambda_max, settings.undersmooth);
        } catch (const CaptureError& err) {
            chain_error = err;
        }
    };
    const auto cv_json = [&] {
        return json{{"scheme", settings.cv.scheme == CvScheme::Cells ? "cells" : "records"},
                    {"rule", settings.cv.rule == CvRule::Min ? "min" : "one_se"},
                    {"folds", cv->folds_used}, {"lambda_max", num(cv->lambda_max)},
                    {"lambda_cv", num(cv->lambda)}, {"lambda_min", num(cv->lambda_min)}};
    };
    const auto lasso_json = [&] {
        auto d = cv_json();
        d["lambda_final"] = num(us->fit.lambda);
        d["lambda_trace"] = us->lambda_path_visited;
        d["criterion_trace"] = us->criterion_values;
        d["threshold"] = num(us->threshold);
        d["undersmoothing_met"] = us->met;
        d["coefficients"] = us->fit.coefficients;
        return d;
    };

    for (auto v : config.loglinear) {
        const auto name = estimator_name(v);
        auto head = base_row("loglinear", name);
        switch (v) {
            case EstimatorKind::Npmle:
                add(head, [&] { return std::pair{estimate_npmle(empirical, n, level), json()}; });
                break;
            case EstimatorKind::M0:
            case EstimatorKind::Mt:
                add(head, [&] {
                    auto [est, fit] = v == EstimatorKind::M0 ? fit_glm_m0(table, level) : fit_glm_mt(table, level);
                    return std::pair{std::move(est), glm_diagnostics(fit)};
                });
                break;
            case EstimatorKind::LassoCv:
                add(head, [&] {
                    need_cv();
                    if (chain_error) throw *chain_error;
                    auto est = estimate_loglinear_at(cv_fit->cell_probs, empirical.probs(), n, "lasso_cv", level);
                    auto d = cv_json();
                    d["coefficients"] = cv_fit->coefficients;
                    return std::pair{std::move(est), d};
                });
                break;
            case EstimatorKind::TmleCv:
                add(head, [&] {
                    need_cv();
                    if (chain_error) throw *chain_error;
                    auto t = tmle(cv_fit->cell_probs, table, settings.tmle);
                    return std::pair{std::move(t.estimate), tmle_diagnostics(t, "lasso_cv")};
                });
                break;
            case EstimatorKind::Lasso:
                add(head, [&] {
                    need_us();
                    if (chain_error) throw *chain_error;
                    auto est = estimate_loglinear_at(us->fit.cell_probs, empirical.probs(), n, "lasso", level);
                    est.warnings.insert(est.warnings.end(), us->warnings.begin(), us->warnings.end());
                    return std::pair{std::move(est), lasso_json()};
                });
                break;
            case EstimatorKind::Tmle:
                add(head, [&] {
                    need_us();
                    if (chain_error) throw *chain_error;
                    auto t = tmle(us->fit.cell_probs, table, settings.tmle);
                    return std::pair{std::move(t.estimate), tmle_diagnostics(t, "lasso")};
                });
                break;
            default:
                break;
        }
    }
    report["rows"] = rows;
    return report;
}

std::string render_report(const json& report) {
    std::string out;
    out += fmt::format("K = {}   n = {}   level = {}\n\n", report["samples"].get<int>(),
                       report["n"].get<std::int64_t>(), report["level"].get<double>());
    out += fmt::format("{:<10} {:<22} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9}  {}\n", "assume", "estimator",
                       "psi", "se", "lower", "upper", "N_hat", "N_lower", "N_upper", "notes");
    for (const auto& row : report["rows"]) {
        std::string label = row["estimator"].get<std::string>();
        if (row.contains("samples")) {
            label += fmt::format("({},{})", row["samples"][0].get<int>(), row["samples"][1].get<int>());
        }
        const auto head = fmt::format("{:<10} {:<22}", row["assumption"].get<std::string>(), label);
        if (row["status"] == "error") {
            out += fmt::format("{} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9}  {}\n", head, "-", "-", "-", "-", "-",
                               "-", "-", row["error"]["code"].get<std::string>());
            continue;
        }
        std::string notes;
        for (const auto& w : row["warnings"]) notes += (notes.empty() ? "" : " ") + w.get<std::string>();
        if (row.contains("diagnostics")) {
            const auto& d = row["diagnostics"];
            if (d.contains("iterations") && d.contains("exit")) {
                notes += fmt::format("{}iter={} exit={}", notes.empty() ? "" : " ", d["iterations"].get<int>(),
                                     d["exit"].get<std::string>());
            } else if (d.contains("aic")) {
                notes += fmt::format("{}AIC={:.2f} BIC={:.2f}", notes.empty() ? "" : " ", d["aic"].get<double>(),
                                     d["bic"].get<double>());
            } else if (d.contains("lambda_final")) {
                notes += fmt::format("{}lambda={:.3g} steps={}", notes.empty() ? "" : " ",
                                     d["lambda_final"].get<double>(), d["lambda_trace"].size());
            } else if (d.contains("lambda_cv")) {
                notes += fmt::format("{}lambda={:.3g}", notes.empty() ? "" : " ", d["lambda_cv"].get<double>());
            }
        }
        out += fmt::format("{} {} {} {} {} {} {} {}  {}\n", head, fixed(row["psi"], 8, 4), fixed(row["se"], 8, 4),
                           fixed(row["ci_lo"], 8, 4), fixed(row["ci_hi"], 8, 4), fixed(row["n_hat"], 9, 1),
                           fixed(row["n_hat_lo"], 9, 1), fixed(row["n_hat_hi"], 9, 1), notes);
    }
    return out;
}

std::string render_metrics(const McResult& r) {
    std::string out = fmt::format("scenario {}   true psi = {:.4f}\n\n", r.scenario, r.truth);
    out += fmt::format("{:<18} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "estimator", "n", "mean", "cover",
                       "var_rat", "ci_lo", "ci_hi", "failed");
    for (const auto& m : r.metrics) {
        out += fmt::format("{:<18} {:>7} {:>8.4f} {:>8.3f} {:>8.3f} {:>8.4f} {:>8.4f} {:>8.3f}\n", m.estimator, m.n,
                           m.mean_psi, m.coverage, m.var_ratio, m.ci_lo_mean, m.ci_hi_mean, m.failure_rate);
    }
    return out;
}

json catalog_json(const std::vector<Scenario>& scenarios) {
    json arr = json::array();
    for (const auto& s : scenarios) {
        arr.push_back({{"key", s.key}, {"title", s.title}, {"family", std::string(family_name(s.dgp.family))},
                       {"samples", s.dgp.K}, {"true_psi", true_psi(full_dist(s.dgp))}});
    }
    return arr;
}

std::string render_catalog(const std::vector<Scenario>& scenarios) {
    std::string out = fmt::format("{:<7} {:<24} {:>8}  {}\n", "key", "family", "psi_0", "title");
    for (const auto& s : scenarios) {
        out += fmt::format("{:<7} {:<24} {:>8.4f}  {}\n", s.key, family_name(s.dgp.family),
                           true_psi(full_dist(s.dgp)), s.title);
    }
    return out;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"capture-recapture estimation of population size"};
    app.name("caprec");
    app.require_subcommand(1);

    // estimate
    std::string input;
    std::string format = "cells";
    std::string assume = "linear,indep,condindep,loglinear";
    std::string variants = "npmle,lasso,tmle,m0,mt";
    std::string pair_s = "1,2";
    std::string cond_s = "3,2";
    double level = kDefaultLevel;
    std::uint64_t seed = CvOptions{}.seed;
    std::string out_path;
    bool as_json = false;
    std::string export_path;
    std::string cv_scheme = "records";
    std::string cv_rule = "one_se";
    int folds = CvOptions{}.folds;
    double shrink = UndersmoothOptions{}.shrink;
    double tmle_c = TmleOptions{}.c_const;
    double tmle_delta = TmleOptions{}.delta;
    int tmle_iter = TmleOptions{}.max_iter;

    auto* est = app.add_subcommand("estimate", "estimate psi and the population size from capture data");
    est->add_option("--input,-i", input, "capture data CSV")->required();
    est->add_option("--format", format, "records or cells")->check(CLI::IsMember({"records", "cells"}));
    est->add_option("--assume", assume, "comma list of linear, indep, condindep, loglinear");
    est->add_option("--loglinear-variant", variants, "comma list of npmle, lasso, lasso_cv, tmle, tmle_cv, m0, mt");
    est->add_option("--pair", pair_s, "samples j1,j2 assumed independent");
    est->add_option("--cond", cond_s, "samples j,m independent given the others are zero");
    est->add_option("--level", level, "confidence level")->check(CLI::Range(0.5, 0.9999));
    est->add_option("--seed", seed, "cross-validation seed");
    est->add_option("--cv-scheme", cv_scheme, "records or cells")->check(CLI::IsMember({"records", "cells"}));
    est->add_option("--cv-rule", cv_rule, "min or one_se")->check(CLI::IsMember({"min", "one_se"}));
    est->add_option("--folds", folds, "cross-validation folds")->check(CLI::Range(2, 1000));
    est->add_option("--shrink", shrink, "undersmoothing lambda multiplier")->check(CLI::Range(0.01, 0.999));
    est->add_option("--tmle-c", tmle_c, "constant C in max(log n, C)")->check(CLI::PositiveNumber);
    est->add_option("--tmle-delta", tmle_delta, "epsilon stopping tolerance")->check(CLI::PositiveNumber);
    est->add_option("--tmle-max-iter", tmle_iter, "maximum targeting steps")->check(CLI::Range(1, 100000));
    est->add_option("--out,-o", out_path, "write the JSON report to this file");
    est->add_flag("--json", as_json, "print the JSON report instead of the table");
    est->add_option("--export-cells", export_path, "write the parsed cell counts as a cells CSV");

    // simulate
    std::string scenario_arg;
    std::optional<int> reps;
    std::vector<std::int64_t> sizes;
    std::optional<std::uint64_t> sim_seed;
    std::string sim_estimators;
    std::string sim_out;
    bool sim_json = false;
    auto* sim = app.add_subcommand("simulate", "Monte Carlo study of a catalog scenario or scenario file");
    sim->add_option("scenario", scenario_arg, "catalog key or path to a JSON scenario file")->required();
    sim->add_option("--reps", reps, "replicates")->check(CLI::Range(1, 10000000));
    sim->add_option("--n", sizes, "sample size(s)")->check(CLI::Range(std::int64_t{1}, std::int64_t{1} << 40));
    sim->add_option("--seed", sim_seed, "scenario seed");
    sim->add_option("--estimators", sim_estimators, "comma list overriding the scenario's estimators");
    sim->add_option("--out,-o", sim_out, "write <out>.json and <out>.csv");
    sim->add_flag("--json", sim_json, "print metrics JSON instead of the table");

    // catalog
    bool cat_json = false;
    std::string family;
    auto* cat = app.add_subcommand("catalog", "list the built-in scenarios");
    cat->add_flag("--json", cat_json, "machine-readable listing");
    cat->add_option("--family", family, "only scenarios of this DGP family")
        ->check(CLI::IsMember({"additive_linear", "log_linear", "sequential_conditional"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "caprec: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (*cat) {
            auto scenarios = scenario_catalog();
            if (!family.empty()) {
                std::erase_if(scenarios, [&](const Scenario& s) { return family_name(s.dgp.family) != family; });
            }
            if (cat_json) {
                out << catalog_json(scenarios).dump(2) << '\n';
            } else {
                out << render_catalog(scenarios);
            }
            return kExitOk;
        }

        if (*sim) {
            Scenario s;
            if (std::ifstream f(scenario_arg); f && scenario_arg.find(".json") != std::string::npos) {
                try {
                    s = scenario_from_json(json::parse(f));
                } catch (const json::exception& e) {
                    throw CaptureError(ErrorCode::ParseError, std::string("scenario file: ") + e.what());
                }
            } else {
                try {
                    s = catalog_scenario(scenario_arg);
                } catch (const CaptureError&) {
                    err << "caprec: unknown scenario '" << scenario_arg << "'; catalog keys:";
                    for (const auto& c : scenario_catalog()) err << ' ' << c.key;
                    err << '\n';
                    return kExitUsage;
                }
            }
            if (reps) s.reps = *reps;
            if (!sizes.empty()) s.sizes = sizes;
            if (sim_seed) s.seed = *sim_seed;
            if (!sim_estimators.empty()) {
                s.estimators.clear();
                for (const auto& e : split_list(sim_estimators)) s.estimators.push_back(parse_estimator(e));
            }
            const auto result = run_monte_carlo(s);
            if (!sim_out.empty()) {
                std::ofstream js(sim_out + ".json");
                std::ofstream cs(sim_out + ".csv");
                if (!js || !cs) throw CaptureError(ErrorCode::InvalidArgument, "cannot write '" + sim_out + ".*'");
                js << to_json(result).dump(2) << '\n';
                cs << metrics_csv(result);
            }
            if (sim_json) {
                auto j = to_json(result);
                j.erase("replicates");
                out << j.dump(2) << '\n';
            } else {
                out << render_metrics(result);
            }
            return kExitOk;
        }

        RunConfig config;
        config.level = level;
        config.assumptions.clear();
        for (const auto& a : split_list(assume)) config.assumptions.push_back(parse_assumption(a));
        if (config.assumptions.empty()) throw CLI::ValidationError("--assume", "select at least one assumption");
        config.loglinear.clear();
        for (const auto& v : split_list(variants)) {
            EstimatorKind e;
            try {
                e = parse_estimator(v);
            } catch (const CaptureError&) {
                throw CLI::ValidationError("--loglinear-variant", "unknown variant '" + v + "'");
            }
            if (!is_loglinear_variant(e)) {
                throw CLI::ValidationError("--loglinear-variant", "'" + v + "' is not a log-linear variant");
            }
            config.loglinear.push_back(e);
        }
        config.settings.pair = parse_pair(pair_s, "--pair");
        config.settings.cond = parse_pair(cond_s, "--cond");
        config.settings.cv.seed = seed;
        config.settings.cv.folds = folds;
        config.settings.cv.scheme = cv_scheme == "cells" ? CvScheme::Cells : CvScheme::Records;
        config.settings.cv.rule = cv_rule == "min" ? CvRule::Min : CvRule::OneSe;
        config.settings.undersmooth.shrink = shrink;
        config.settings.tmle.c_const = tmle_c;
        config.settings.tmle.delta = tmle_delta;
        config.settings.tmle.max_iter = tmle_iter;

        std::optional<CellTable> parsed;
        try {
            parsed = read_table(input, format == "records" ? InputFormat::Records : InputFormat::Cells);
        } catch (const CaptureError& e) {
            err << "caprec: " << input << ": " << error_name(e.code()) << ": " << e.what() << '\n';
            return kExitUsage;
        }
        const CellTable& table = *parsed;
        if (table.total() == 0) {
            err << "caprec: " << input << ": EmptyInput: no captured individuals\n";
            return kExitUsage;
        }
        // Explicit selectors must fit the data; the defaults only fail their own row.
        if (est->count("--pair") > 0) check_selector(config.settings.pair, table.samples(), "--pair");
        if (est->count("--cond") > 0) check_selector(config.settings.cond, table.samples(), "--cond");
        if (!export_path.empty()) {
            std::ofstream f(export_path);
            if (!f) throw CaptureError(ErrorCode::InvalidArgument, "cannot write '" + export_path + "'");
            write_cells_csv(f, table);
        }
        auto report = estimate_report(table, config);
        report["input"] = {{"path", input}, {"format", format}};
        if (!out_path.empty()) {
            std::ofstream f(out_path);
            if (!f) throw CaptureError(ErrorCode::InvalidArgument, "cannot write '" + out_path + "'");
            f << report.dump(2) << '\n';
        }
        if (as_json) {
            out << report.dump(2) << '\n';
        } else {
            out << render_report(report);
        }
        const bool any_ok = std::any_of(report["rows"].begin(), report["rows"].end(),
                                        [](const json& r) { return r["status"] == "ok"; });
        if (!any_ok) {
            err << "caprec: no estimator succeeded\n";
            return kExitInternal;
        }
        return kExitOk;
    } catch (const CLI::ValidationError& e) {
        err << "caprec: " << e.what() << '\n';
        return kExitUsage;
    } catch (const CaptureError& e) {
        const bool usage = e.code() == ErrorCode::ParseError || e.code() == ErrorCode::InvalidArgument ||
                           e.code() == ErrorCode::InvalidDgp;
        err << "caprec: " << error_name(e.code()) << ": " << e.what() << '\n';
        return usage ? kExitUsage : kExitInternal;
    } catch (const std::exception& e) {
        err << "caprec: internal error: " << e.what() << '\n';
        return kExitInternal;
    }
}

}  // namespace caprec::cli
