#include "fedpoison/byzantine.hpp"

#include <algorithm>
#include <string>

#include "fedpoison/errors.hpp"

namespace fedpoison {

namespace {

void check_lengths(std::span<const std::vector<double>> updates, const char* who) {
    if (updates.empty()) throw InvalidArgument(std::string(who) + ": no updates");
    for (const auto& u : updates)
        if (u.size() != updates.front().size())
            throw InvalidArgument(std::string(who) + ": updates differ in length");
}

}  // namespace

std::vector<double> krum_scores(std::span<const std::vector<double>> updates,
                                const KrumConfig& config) {
    const std::size_t n = updates.size();
    if (n < 2 * config.f + 3)
        throw InvalidArgument("krum: n=" + std::to_string(n) + " updates but f=" +
                              std::to_string(config.f) + " requires n >= 2f+3");
    check_lengths(updates, "krum");

    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = vec::distance2(updates[i], updates[j]);
            if (config.squared) d *= d;
            dist[i * n + j] = dist[j * n + i] = d;
        }

    const std::size_t neighbours = n - config.f - 2;
    std::vector<double> scores(n, 0.0);
    std::vector<double> row;
    for (std::size_t i = 0; i < n; ++i) {
        row.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) row.push_back(dist[i * n + j]);
        std::partial_sort(row.begin(), row.begin() + static_cast<long>(neighbours), row.end());
        double s = 0.0;
        for (std::size_t k = 0; k < neighbours; ++k) s += row[k];
        scores[i] = s;
    }
    return scores;
}

std::size_t krum_select(std::span<const std::vector<double>> updates, const KrumConfig& config) {
    const auto scores = krum_scores(updates, config);
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] < scores[best]) best = i;
    return best;
}

std::vector<double> coomed(std::span<const std::vector<double>> updates) {
    check_lengths(updates, "coomed");
    const std::size_t n = updates.size();
    const std::size_t dim = updates.front().size();
    std::vector<double> out(dim);
    std::vector<double> column(n);
    for (std::size_t j = 0; j < dim; ++j) {
        for (std::size_t i = 0; i < n; ++i) column[i] = updates[i][j];
        const auto mid = column.begin() + static_cast<long>(n / 2);
        std::nth_element(column.begin(), mid, column.end());
        if (n % 2 == 1) {
            out[j] = *mid;
        } else {
            const double upper = *mid;
            const double lower = *std::max_element(column.begin(), mid);
            out[j] = 0.5 * (lower + upper);
        }
    }
    return out;
}

}  // namespace fedpoison
