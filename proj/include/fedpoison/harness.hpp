#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedpoison/config.hpp"
#include "fedpoison/datasets.hpp"
#include "fedpoison/nn.hpp"

namespace fedpoison {

/// Per-round metrics. Fields that do not apply this round (malicious agent not
/// selected, no Krum) hold NaN / -1.
struct RoundRecord {
    std::size_t t = 0;  ///< 1-based round number
    double val_acc_global = 0.0;     ///< percent
    double mal_conf_mean = 0.0;      ///< mean softmax probability of tau_i on w_G
    double mal_targets_hit_frac = 0.0;
    double val_acc_mal_local = 0.0;  ///< percent, w_G^{t-1} + delta_m
    int acc_flag = -1;
    double acc_gap = 0.0;
    int dist_flag = -1;
    double dist_deviation = 0.0;
    double l2_ben_min = 0.0;
    double l2_ben_max = 0.0;
    double l2_mal_min = 0.0;
    double l2_mal_max = 0.0;
    long krum_chosen_agent = -1;
    int mal_chosen = 0;

    /// Not persisted: confidence on each aux target.
    std::vector<double> mal_confidences;

    bool operator==(const RoundRecord&) const;
};

struct HistogramRow {
    std::size_t t = 0;
    std::size_t agent = 0;
    bool malicious = false;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::size_t> counts;  ///< underflow, bins..., overflow
};

/// Everything the harness prepares before round one.
struct PreparedData {
    Dataset train;
    Dataset validation;
    AuxSet aux;
    std::vector<Shard> shards;
    ModelSpec spec;
};

PreparedData prepare_data(const ExperimentConfig& config);

struct RunResult {
    std::vector<RoundRecord> records;
    ParameterVector final_params;
    ParameterVector initial_params;
    double kappa = 0.0;
    std::vector<HistogramRow> histograms;
    /// Ground truth sum_{i != m} alpha_i delta_i per round (empty when m not selected).
    /// In-memory only; the malicious agent never sees it.
    std::vector<std::vector<double>> benign_aggregates;
    /// The malicious agent's previous-step estimate per round (empty when not selected).
    std::vector<std::vector<double>> estimates;
};

struct RunOptions {
    bool retain_ground_truth = false;
    bool histograms = true;
};

/// Runs rounds until early stopping. Deterministic in the config.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Same as run_experiment with prepared data supplied by the caller.
RunResult run_experiment(const ExperimentConfig& config, const PreparedData& data,
                         const RunOptions& options = {});

/// Writes metrics.csv, histograms.csv, final_weights.bin and config.json into
/// `dir` (created if needed). Each file is written to a temporary and renamed.
void emit_metrics(const RunResult& result, const ExperimentConfig& resolved,
                  const std::filesystem::path& dir);

/// metrics.csv alone.
void write_metrics_csv(const std::vector<RoundRecord>& records, const std::filesystem::path& path);
std::vector<RoundRecord> read_metrics_csv(const std::filesystem::path& path);

std::vector<HistogramRow> read_histograms_csv(const std::filesystem::path& path);
void write_histograms_csv(const std::vector<HistogramRow>& rows, const std::filesystem::path& path);

ParameterVector read_weights(const std::filesystem::path& path);

extern const char* const kMetricsColumns[15];

/// Shortest round-trip decimal form; "nan" for NaN.
std::string format_double(double v);

}  // namespace fedpoison
