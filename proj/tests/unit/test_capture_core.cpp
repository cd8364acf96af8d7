#include "doctest.h"

#include <numeric>

#include "caprec/capture_core.hpp"
#include "caprec/random.hpp"
#include "caprec/simulation.hpp"

using namespace caprec;

TEST_CASE("pattern index puts sample 1 in the lowest bit") {
    CHECK(pattern_index(std::vector<int>{0, 0, 0}) == 0);
    CHECK(pattern_index(std::vector<int>{1, 0, 0}) == 1);
    CHECK(pattern_index(std::vector<int>{1, 1, 1}) == 7);
    CHECK(pattern_index(std::vector<int>{0, 1, 1}) == 6);
    CHECK(pattern_bits(6, 3) == std::vector<int>{0, 1, 1});
    CHECK_THROWS_AS(pattern_index(std::vector<int>{2, 0}), CaptureError);

    const auto p = CapturePattern::from_bits(std::vector<int>{1, 0, 1});
    CHECK(p.index() == 5);
    CHECK(p.captured_by(1));
    CHECK_FALSE(p.captured_by(2));
    CHECK(p.capture_count() == 2);
}

TEST_CASE("sample count limits") {
    CHECK_THROWS_AS(check_sample_count(1), CaptureError);
    CHECK_NOTHROW(check_sample_count(2));
    CHECK_THROWS_AS(check_sample_count(kMaxSamples + 1), CaptureError);
}

TEST_CASE("parity function") {
    CHECK(parity_f(0, 3) == -1);
    CHECK(parity_f(pattern_index(std::vector<int>{1, 1, 0}), 3) == -1);
    CHECK(parity_f(pattern_index(std::vector<int>{1, 1}), 2) == 1);
    CHECK(parity_f(7, 3) == 1);
    // Sums to zero over all patterns for every K.
    for (int K = 2; K <= 6; ++K) {
        int s = 0;
        for (PatternIndex b = 0; b < (1u << K); ++b) s += parity_f(b, K);
        CHECK(s == 0);
    }
}

TEST_CASE("tabulate records") {
    const std::vector<CapturePattern> recs{CapturePattern(2, 1), CapturePattern(2, 1), CapturePattern(2, 2)};
    const auto t = tabulate(recs);
    CHECK(t.total() == 3);
    CHECK(t.count(1) == 2);
    CHECK(t.count(2) == 1);
    CHECK(t.count(3) == 0);

    try {
        tabulate(std::vector<CapturePattern>{});
        FAIL("expected EmptyInput");
    } catch (const CaptureError& e) {
        CHECK(e.code() == ErrorCode::EmptyInput);
    }
    try {
        tabulate(std::vector<CapturePattern>{CapturePattern(2, 0)});
        FAIL("expected ZeroPatternObserved");
    } catch (const CaptureError& e) {
        CHECK(e.code() == ErrorCode::ZeroPatternObserved);
    }
    CHECK_THROWS_AS(tabulate(std::vector<CapturePattern>{CapturePattern(2, 1), CapturePattern(3, 1)}), CaptureError);
}

TEST_CASE("cell table validation and expansion") {
    CHECK_THROWS_AS(CellTable(2, {1, 2}), CaptureError);
    CHECK_THROWS_AS(CellTable(2, {1, -1, 2}), CaptureError);
    CHECK_THROWS_AS(CellTable(2, {0, 0, 0}), CaptureError);
    const CellTable t(2, {2, 0, 1});
    CHECK(t.expand() == std::vector<PatternIndex>{1, 1, 3});
}

TEST_CASE("empirical distribution") {
    const auto p = empirical_dist(CellTable(2, {2, 1, 1}));
    CHECK(p.prob(1) == doctest::Approx(0.5));
    CHECK(p.prob(2) == doctest::Approx(0.25));
    CHECK(p.prob(3) == doctest::Approx(0.25));

    const auto q = empirical_dist(CellTable(3, {0, 0, 0, 0, 0, 0, 5}));
    CHECK(q.prob(7) == 1.0);
    CHECK_FALSE(q.strictly_positive());
    for (PatternIndex b = 1; b < 7; ++b) CHECK(q.prob(b) == 0.0);
}

TEST_CASE("distribution validation") {
    CHECK_THROWS_AS(CellDist(2, {0.5, 0.5}), CaptureError);
    CHECK_THROWS_AS(CellDist(2, {0.5, 0.6, -0.1}), CaptureError);
    CHECK_THROWS_AS(CellDist(2, {0.5, 0.5, 0.5}), CaptureError);
    CHECK_THROWS_AS(FullDist(2, {1.0, 0.0, 0.0, 0.0}), CaptureError);
    CHECK(true_psi(FullDist(2, {0.0, 0.5, 0.25, 0.25})) == 1.0);

    const FullDist fd(2, {0.2, 0.4, 0.2, 0.2});
    const auto obs = fd.observed();
    CHECK(obs.prob(1) == doctest::Approx(0.5));
    CHECK(obs.prob(3) == doctest::Approx(0.25));
}

TEST_CASE("multinomial counts converge to the cell distribution") {
    const FullDist fd(3, {0.3, 0.05, 0.1, 0.15, 0.1, 0.1, 0.15, 0.05});
    const auto t = sample_observed(fd, 1'000'000, 12345);
    const auto emp = empirical_dist(t);
    const auto truth = fd.observed();
    for (PatternIndex b = 1; b < 8; ++b) CHECK(std::abs(emp.prob(b) - truth.prob(b)) < 0.005);
}

TEST_CASE("seed derivation") {
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(2, 1));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    auto a = make_engine(7, 3);
    auto b = make_engine(7, 3);
    CHECK(a() == b());
}
