#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "fedpoison/nn.hpp"

namespace fedpoison {

/// Min and max L2 distance from one agent's update to the others'.
struct DistanceRange {
    std::size_t agent = 0;
    double lower = 0.0;
    double upper = 0.0;
};

struct WeightedDelta {
    double alpha = 0.0;
    std::span<const double> delta;
};

struct AccuracyCheck {
    double gap = 0.0;  ///< percentage points; positive = lone update is worse
    bool flagged = false;
};

struct RangeCheck {
    double deviation = 0.0;
    bool flagged = false;
};

/// Distance statistics of one round, seen from the malicious agent m.
struct DistanceSummary {
    double benign_min = 0.0;  ///< min lower bound over benign-vs-benign ranges
    double benign_max = 0.0;  ///< max upper bound over benign-vs-benign ranges
    DistanceRange malicious;  ///< m against every benign update
    double deviation = 0.0;
};

struct StealthVerdict {
    std::size_t agent = 0;
    bool accuracy_flagged = false;
    bool distance_flagged = false;
    double accuracy_gap = 0.0;
    double range_deviation = 0.0;
};

/// Compares the lone-update model w_prev + delta_i against the model built
/// from every other update, w_prev + sum_{j != i} alpha_j delta_j. The gap is
/// acc(others) - acc(lone) in percentage points; flagged when gap >= gamma.
AccuracyCheck accuracy_gap_check(const ModelSpec& spec, std::span<const double> w_prev,
                                 std::span<const double> update_i,
                                 std::span<const WeightedDelta> others, Batch validation,
                                 double gamma);

/// Range for every update against all the others. Needs at least 3 updates.
/// `agents` labels the ranges; defaults to positions 0..n-1.
std::vector<DistanceRange> distance_ranges(std::span<const std::vector<double>> updates,
                                           std::span<const std::size_t> agents = {});

/// Deviation max{|R^u_m - R^l_min|, |R^l_m - R^u_max|} of the malicious range
/// against the benign-vs-benign ranges; flagged when deviation >= kappa.
RangeCheck range_check(std::span<const DistanceRange> benign_ranges,
                       const DistanceRange& malicious, double kappa);

/// Computes the benign-vs-benign and malicious-vs-benign ranges of one round
/// and the deviation between them. `m` is a position in `updates`.
DistanceSummary summarize_distances(std::span<const std::vector<double>> updates, std::size_t m);

/// range_check straight from the round's updates.
RangeCheck range_check(std::span<const std::vector<double>> updates, std::size_t m, double kappa);

/// bin_count equal-width bins over [lo, hi] plus an underflow bin (front) and
/// an overflow bin (back). hi itself lands in the last regular bin.
std::vector<std::size_t> update_histogram(std::span<const double> delta, std::size_t bin_count,
                                          double lo, double hi);

inline constexpr double kNeverFlag = std::numeric_limits<double>::infinity();

}  // namespace fedpoison
