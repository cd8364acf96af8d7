#pragma once

// Targeted update of an initial cell distribution along the least favorable
// submodel P_eps = C(P, eps) (1 + eps D*) P of the Psi_I influence curve.

#include <span>
#include <string>
#include <vector>

#include "caprec/capture_core.hpp"
#include "caprec/closed_form.hpp"

namespace caprec {

inline constexpr double kEpsilonCap = 1e6;

struct EpsilonBounds {
    double lo = -kEpsilonCap;
    double hi = kEpsilonCap;
    bool bounded_below = false;
    bool bounded_above = false;
};

// l = max_i min(-1/D_i, (1-P_i)/(P_i D_i)), u = min_i max(...); cells with
// D_i = 0 contribute nothing, and missing sides are capped at -/+kEpsilonCap.
EpsilonBounds epsilon_bounds(const CellDist& p, std::span<const double> d_star);

CellDist fluctuate(const CellDist& p, double eps, std::span<const double> d_star);

// Log-likelihood Σ count(b) log P_eps(b); -inf when some observed cell gets
// probability zero.
double submodel_loglik(const CellDist& p, const CellTable& table, double eps,
                       std::span<const double> d_star);

// Golden-section maximizer of the submodel log-likelihood over the bounds.
double fit_epsilon(const CellDist& p, const CellTable& table, std::span<const double> d_star);

struct TmleOptions {
    double c_const = 1.0;
    double delta = 1e-8;
    int max_iter = 100;
    double level = kDefaultLevel;
};

enum class TmleExit { EicCriterion, SmallEpsilon, MaxIterations };

struct TmleResult {
    Estimate estimate;  // inference from D* at the targeted distribution
    CellDist p_star{2, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
    int iterations = 0;
    double final_eic_mean = 0.0;
    double stopping_s = 0.0;
    std::vector<double> epsilon_trace;
    std::vector<double> loglik_trace;  // after each update, starting with the initial fit
    TmleExit exit = TmleExit::MaxIterations;
};

TmleResult tmle(const CellDist& initial, const CellTable& table, const TmleOptions& options = {});

}  // namespace caprec
