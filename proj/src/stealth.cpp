#include "fedpoison/stealth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedpoison/errors.hpp"

namespace fedpoison {

AccuracyCheck accuracy_gap_check(const ModelSpec& spec, std::span<const double> w_prev,
                                 std::span<const double> update_i,
                                 std::span<const WeightedDelta> others, Batch validation,
                                 double gamma) {
    if (validation.empty()) throw InvalidArgument("accuracy_gap_check: empty validation set");
    const auto lone = vec::add(w_prev, update_i);
    ParameterVector rest(w_prev.begin(), w_prev.end());
    for (const auto& o : others) vec::axpy(o.alpha, o.delta, rest);

    AccuracyCheck out;
    out.gap = 100.0 * (accuracy(spec, rest, validation) - accuracy(spec, lone, validation));
    out.flagged = out.gap >= gamma;
    return out;
}

std::vector<DistanceRange> distance_ranges(std::span<const std::vector<double>> updates,
                                           std::span<const std::size_t> agents) {
    const std::size_t n = updates.size();
    if (n < 3)
        throw InvalidArgument("distance_ranges: need at least 3 updates, got " + std::to_string(n));
    if (!agents.empty() && agents.size() != n)
        throw InvalidArgument("distance_ranges: agent labels do not match update count");

    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dist[i * n + j] = dist[j * n + i] = vec::distance2(updates[i], updates[j]);

    std::vector<DistanceRange> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].agent = agents.empty() ? i : agents[i];
        bool first = true;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d = dist[i * n + j];
            out[i].lower = first ? d : std::min(out[i].lower, d);
            out[i].upper = first ? d : std::max(out[i].upper, d);
            first = false;
        }
    }
    return out;
}

RangeCheck range_check(std::span<const DistanceRange> benign_ranges,
                       const DistanceRange& malicious, double kappa) {
    if (benign_ranges.empty()) throw InvalidArgument("range_check: no benign ranges");
    double lower_min = benign_ranges.front().lower;
    double upper_max = benign_ranges.front().upper;
    for (const auto& r : benign_ranges) {
        lower_min = std::min(lower_min, r.lower);
        upper_max = std::max(upper_max, r.upper);
    }
    RangeCheck out;
    out.deviation = std::max(std::abs(malicious.upper - lower_min),
                             std::abs(malicious.lower - upper_max));
    out.flagged = out.deviation >= kappa;
    return out;
}

DistanceSummary summarize_distances(std::span<const std::vector<double>> updates, std::size_t m) {
    const std::size_t n = updates.size();
    if (n < 3)
        throw InvalidArgument("summarize_distances: need at least 3 updates, got " +
                              std::to_string(n));
    if (m >= n) throw InvalidArgument("summarize_distances: malicious position out of range");

    std::vector<std::size_t> benign;
    for (std::size_t i = 0; i < n; ++i)
        if (i != m) benign.push_back(i);

    // Benign agents among themselves.
    std::vector<DistanceRange> benign_ranges(benign.size());
    for (std::size_t a = 0; a < benign.size(); ++a) {
        benign_ranges[a].agent = benign[a];
        bool first = true;
        for (std::size_t b = 0; b < benign.size(); ++b) {
            if (a == b) continue;
            const double d = vec::distance2(updates[benign[a]], updates[benign[b]]);
            benign_ranges[a].lower = first ? d : std::min(benign_ranges[a].lower, d);
            benign_ranges[a].upper = first ? d : std::max(benign_ranges[a].upper, d);
            first = false;
        }
    }

    DistanceSummary out;
    out.malicious.agent = m;
    for (std::size_t a = 0; a < benign.size(); ++a) {
        const double d = vec::distance2(updates[m], updates[benign[a]]);
        out.malicious.lower = a == 0 ? d : std::min(out.malicious.lower, d);
        out.malicious.upper = a == 0 ? d : std::max(out.malicious.upper, d);
    }
    out.benign_min = benign_ranges.front().lower;
    out.benign_max = benign_ranges.front().upper;
    for (const auto& r : benign_ranges) {
        out.benign_min = std::min(out.benign_min, r.lower);
        out.benign_max = std::max(out.benign_max, r.upper);
    }
    out.deviation = range_check(benign_ranges, out.malicious, kNeverFlag).deviation;
    return out;
}

RangeCheck range_check(std::span<const std::vector<double>> updates, std::size_t m, double kappa) {
    const auto summary = summarize_distances(updates, m);
    return {summary.deviation, summary.deviation >= kappa};
}

std::vector<std::size_t> update_histogram(std::span<const double> delta, std::size_t bin_count,
                                          double lo, double hi) {
    if (bin_count == 0) throw InvalidArgument("update_histogram: bin_count must be >= 1");
    if (!(hi > lo)) throw InvalidArgument("update_histogram: empty range");
    std::vector<std::size_t> counts(bin_count + 2, 0);
    const double width = (hi - lo) / static_cast<double>(bin_count);
    for (double v : delta) {
        if (v < lo) {
            ++counts.front();
        } else if (v > hi || std::isnan(v)) {
            ++counts.back();
        } else {
            auto bin = static_cast<std::size_t>((v - lo) / width);
            bin = std::min(bin, bin_count - 1);
            ++counts[bin + 1];
        }
    }
    return counts;
}

}  // namespace fedpoison
