#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedpoison/vector_ops.hpp"

namespace fedpoison {

/// Krum parameters. Requires n >= 2f + 3 received updates.
struct KrumConfig {
    std::size_t f = 1;
    /// Sum squared L2 distances (original Krum) instead of plain L2.
    bool squared = false;
};

/// Score of each update: sum of its distances to the n - f - 2 closest other updates.
std::vector<double> krum_scores(std::span<const std::vector<double>> updates,
                                const KrumConfig& config = {});

/// Position of the lowest-scoring update; ties go to the lowest position.
std::size_t krum_select(std::span<const std::vector<double>> updates,
                        const KrumConfig& config = {});

/// Per-coordinate median; even counts take the midpoint of the two middle values.
std::vector<double> coomed(std::span<const std::vector<double>> updates);

}  // namespace fedpoison
