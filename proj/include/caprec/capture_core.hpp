#pragma once

// Capture patterns, observed cell tables and the distributions over them.
//
// A capture history over K samples is encoded as an integer whose bit k-1
// holds b_k, so sample 1 is the least-significant bit and index 0 is the
// never-captured pattern. Observed-data containers are indexed by this
// integer and only hold the 2^K - 1 nonzero patterns.

#include <cstdint>
#include <span>
#include <vector>

#include "caprec/error.hpp"

namespace caprec {

inline constexpr int kMinSamples = 2;
inline constexpr int kMaxSamples = 20;

using PatternIndex = std::uint32_t;

// Number of observable (nonzero) patterns for K samples.
inline std::size_t observed_cells(int K) { return (std::size_t{1} << K) - 1; }

void check_sample_count(int K);

class CapturePattern {
public:
    CapturePattern(int K, PatternIndex index);

    static CapturePattern from_bits(std::span<const int> bits);

    int samples() const noexcept { return K_; }
    PatternIndex index() const noexcept { return index_; }
    bool captured_by(int sample) const noexcept { return (index_ >> (sample - 1)) & 1u; }
    int capture_count() const noexcept;
    std::vector<int> bits() const;

    friend bool operator==(const CapturePattern&, const CapturePattern&) = default;

private:
    int K_;
    PatternIndex index_;
};

// Σ b_k 2^(k-1). Entries must be 0 or 1.
PatternIndex pattern_index(std::span<const int> bits);
std::vector<int> pattern_bits(PatternIndex index, int K);

// f_I(b) = (-1)^(K + Σ b_k).
int parity_f(PatternIndex index, int K);
inline int parity_f(const CapturePattern& p) { return parity_f(p.index(), p.samples()); }

class CellTable {
public:
    // counts[i] is the count for pattern index i + 1.
    CellTable(int K, std::vector<std::int64_t> counts);

    int samples() const noexcept { return K_; }
    std::int64_t total() const noexcept { return n_; }
    std::size_t cells() const noexcept { return counts_.size(); }
    std::int64_t count(PatternIndex index) const { return counts_.at(index - 1); }
    std::span<const std::int64_t> counts() const noexcept { return counts_; }

    // One pattern index per observed individual, in index order.
    std::vector<PatternIndex> expand() const;

private:
    int K_;
    std::vector<std::int64_t> counts_;
    std::int64_t n_ = 0;
};

// Probability vector over the nonzero patterns.
class CellDist {
public:
    CellDist(int K, std::vector<double> probs);

    int samples() const noexcept { return K_; }
    std::size_t cells() const noexcept { return probs_.size(); }
    double prob(PatternIndex index) const { return probs_.at(index - 1); }
    std::span<const double> probs() const noexcept { return probs_; }
    bool strictly_positive() const noexcept;

private:
    int K_;
    std::vector<double> probs_;
};

// Probability vector over all 2^K patterns including the unobservable one.
class FullDist {
public:
    FullDist(int K, std::vector<double> probs);

    int samples() const noexcept { return K_; }
    double prob(PatternIndex index) const { return probs_.at(index); }
    std::span<const double> probs() const noexcept { return probs_; }

    // Distribution of the observed data: conditional on at least one capture.
    CellDist observed() const;

private:
    int K_;
    std::vector<double> probs_;
};

CellTable tabulate(std::span<const CapturePattern> records);
CellDist empirical_dist(const CellTable& table);

}  // namespace caprec
