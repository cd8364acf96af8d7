#include "caprec/capture_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <string>

namespace caprec {

namespace {

constexpr double kSumTolerance = 1e-12;

void check_probability_vector(std::span<const double> probs, const char* what) {
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw CaptureError(ErrorCode::InvalidArgument,
                               std::string(what) + ": probability outside [0,1]");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance * static_cast<double>(probs.size())) {
        throw CaptureError(ErrorCode::InvalidArgument,
                           std::string(what) + ": probabilities do not sum to 1");
    }
}

}  // namespace

std::string_view error_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidPattern: return "InvalidPattern";
        case ErrorCode::ZeroPatternObserved: return "ZeroPatternObserved";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
        case ErrorCode::IdentificationFailure: return "IdentificationFailure";
        case ErrorCode::UndefinedEstimand: return "UndefinedEstimand";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::FitFailure: return "FitFailure";
        case ErrorCode::InvalidEpsilon: return "InvalidEpsilon";
        case ErrorCode::InvalidDgp: return "InvalidDgp";
        case ErrorCode::ParseError: return "ParseError";
    }
    return "Unknown";
}

void check_sample_count(int K) {
    if (K < kMinSamples || K > kMaxSamples) {
        throw CaptureError(ErrorCode::InvalidArgument,
                           "sample count K=" + std::to_string(K) + " outside [2, 20]");
    }
}

CapturePattern::CapturePattern(int K, PatternIndex index) : K_(K), index_(index) {
    check_sample_count(K);
    if (index >= (PatternIndex{1} << K)) {
        throw CaptureError(ErrorCode::InvalidPattern,
                           "pattern index " + std::to_string(index) + " too large for K=" +
                               std::to_string(K));
    }
}

CapturePattern CapturePattern::from_bits(std::span<const int> bits) {
    return CapturePattern(static_cast<int>(bits.size()), pattern_index(bits));
}

int CapturePattern::capture_count() const noexcept { return std::popcount(index_); }

std::vector<int> CapturePattern::bits() const { return pattern_bits(index_, K_); }

PatternIndex pattern_index(std::span<const int> bits) {
    check_sample_count(static_cast<int>(bits.size()));
    PatternIndex index = 0;
    for (std::size_t k = 0; k < bits.size(); ++k) {
        if (bits[k] != 0 && bits[k] != 1) {
            throw CaptureError(ErrorCode::InvalidPattern,
                               "capture indicator must be 0 or 1, got " +
                                   std::to_string(bits[k]));
        }
        index |= static_cast<PatternIndex>(bits[k]) << k;
    }
    return index;
}

std::vector<int> pattern_bits(PatternIndex index, int K) {
    check_sample_count(K);
    std::vector<int> bits(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) bits[static_cast<std::size_t>(k)] = (index >> k) & 1u;
    return bits;
}

int parity_f(PatternIndex index, int K) {
    return ((K + std::popcount(index)) % 2 == 0) ? 1 : -1;
}

CellTable::CellTable(int K, std::vector<std::int64_t> counts) : K_(K), counts_(std::move(counts)) {
    check_sample_count(K);
    if (counts_.size() != observed_cells(K)) {
        throw CaptureError(ErrorCode::InvalidArgument,
                           "cell table for K=" + std::to_string(K) + " needs " +
                               std::to_string(observed_cells(K)) + " counts");
    }
    for (auto c : counts_) {
        if (c < 0) throw CaptureError(ErrorCode::InvalidArgument, "negative cell count");
        n_ += c;
    }
    if (n_ <= 0) throw CaptureError(ErrorCode::EmptyInput, "cell table has no observations");
}

std::vector<PatternIndex> CellTable::expand() const {
    std::vector<PatternIndex> out;
    out.reserve(static_cast<std::size_t>(n_));
    for (std::size_t i = 0; i < counts_.size(); ++i) {
        out.insert(out.end(), static_cast<std::size_t>(counts_[i]),
                   static_cast<PatternIndex>(i + 1));
    }
    return out;
}

CellDist::CellDist(int K, std::vector<double> probs) : K_(K), probs_(std::move(probs)) {
    check_sample_count(K);
    if (probs_.size() != observed_cells(K)) {
        throw CaptureError(ErrorCode::InvalidArgument, "cell distribution has wrong length");
    }
    check_probability_vector(probs_, "cell distribution");
}

bool CellDist::strictly_positive() const noexcept {
    return std::all_of(probs_.begin(), probs_.end(), [](double p) { return p > 0.0; });
}

FullDist::FullDist(int K, std::vector<double> probs) : K_(K), probs_(std::move(probs)) {
    check_sample_count(K);
    if (probs_.size() != (std::size_t{1} << K)) {
        throw CaptureError(ErrorCode::InvalidArgument, "full distribution has wrong length");
    }
    check_probability_vector(probs_, "full distribution");
    if (!(probs_[0] < 1.0)) {
        throw CaptureError(ErrorCode::InvalidArgument,
                           "full distribution needs P*(0) < 1");
    }
}

CellDist FullDist::observed() const {
    const double captured = 1.0 - probs_[0];
    std::vector<double> p(probs_.begin() + 1, probs_.end());
    for (double& v : p) v /= captured;
    // Renormalize to absorb rounding in 1 - P*(0).
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& v : p) v /= sum;
    return CellDist(K_, std::move(p));
}

CellTable tabulate(std::span<const CapturePattern> records) {
    if (records.empty()) throw CaptureError(ErrorCode::EmptyInput, "no capture records");
    const int K = records.front().samples();
    std::vector<std::int64_t> counts(observed_cells(K), 0);
    for (const auto& r : records) {
        if (r.samples() != K) {
            throw CaptureError(ErrorCode::InvalidPattern, "records disagree on sample count");
        }
        if (r.index() == 0) {
            throw CaptureError(ErrorCode::ZeroPatternObserved,
                               "never-captured pattern cannot appear in observed data");
        }
        ++counts[r.index() - 1];
    }
    return CellTable(K, std::move(counts));
}

CellDist empirical_dist(const CellTable& table) {
    const auto n = static_cast<double>(table.total());
    std::vector<double> p(table.cells());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(table.counts()[i]) / n;
    return CellDist(table.samples(), std::move(p));
}

}  // namespace caprec
