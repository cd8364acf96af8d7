#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "caprec/capture_core.hpp"
#include "caprec/simulation.hpp"

namespace testutil {

// Probabilities printed in the (b1,b2,b3) display order 001, 010, ..., 111.
inline std::vector<double> printed(std::initializer_list<double> v) {
    const std::vector<double> tmp(v);
    return caprec::cells_from_display_order(tmp);
}

inline caprec::CellDist scenario_cells(const char* key) {
    return caprec::full_dist(caprec::catalog_scenario(key).dgp).observed();
}

// Directional derivative of f along the path P + t (delta_b - P), which is
// the canonical gradient evaluated at b.
template <class F>
double gateaux(F&& f, std::span<const double> p, std::size_t cell, double h = 1e-6) {
    auto shifted = [&](double t) {
        std::vector<double> q(p.begin(), p.end());
        for (auto& v : q) v *= (1.0 - t);
        q[cell] += t;
        return f(q);
    };
    return (shifted(h) - shifted(-h)) / (2.0 * h);
}

inline double weighted_mean(std::span<const double> w, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * v[i];
    return s;
}

}  // namespace testutil
