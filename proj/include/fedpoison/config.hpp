#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedpoison/attacks.hpp"
#include "fedpoison/datasets.hpp"
#include "fedpoison/protocol.hpp"

namespace fedpoison {

enum class DataSource { synthetic, idx, tabular };

struct DatasetConfig {
    DataSource source = DataSource::synthetic;
    std::size_t train_size = 600;       ///< 0 = whole training file
    std::size_t validation_size = 500;  ///< 0 = all held-out rows not used for aux

    // synthetic
    std::size_t classes = 10;
    std::size_t dim = 16;
    double spread = 1.3;
    double separation = 3.0;

    // idx
    std::string train_images, train_labels, test_images, test_labels;

    // tabular
    std::string train_path, test_path;
    TabularSchema schema;
};

struct FederationConfig {
    std::size_t agents = 10;      ///< K
    std::size_t per_round = 10;   ///< k
    std::size_t rounds = 40;      ///< hard cap
    double target_accuracy = 101.0;  ///< percent; above 100 disables early stopping
    std::size_t threads = 1;
};

struct AuxConfig {
    std::size_t r = 1;
    std::size_t source_class = 5;
    std::size_t target_class = 7;
    AuxMode mode = AuxMode::single_source;
};

struct MaliciousConfig {
    std::size_t agent = 0;  ///< index m; also the candidate examined in benign runs
    AuxConfig aux;
    AttackConfig attack;

    bool enabled() const { return attack.strategy != AttackStrategy::none; }
};

struct StealthConfig {
    double gamma = 10.0;               ///< percentage points
    std::optional<double> kappa;       ///< unset = calibrate from a benign warmup
    std::size_t kappa_warmup_rounds = 5;
    double kappa_factor = 2.0;
    std::size_t histogram_bins = 50;
    double histogram_range = 0.0;      ///< 0 = symmetric range from the round's max |delta|
};

/// Complete, declarative description of one run.
struct ExperimentConfig {
    DatasetConfig dataset;
    std::vector<std::size_t> hidden = {64, 32};
    FederationConfig federation;
    TrainingPlan training{5, 10, {OptimizerKind::sgd, 0.1}};
    MaliciousConfig malicious;
    AggregationConfig aggregation;
    StealthConfig stealth;
    std::uint64_t seed = 1;
    std::string output_dir;

    /// Cross-field checks (k <= K, m < K, ...). Throws ConfigError.
    void validate() const;
};

/// Strict parse: unknown keys, wrong types and out-of-range values are ConfigErrors.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json load_config_json(const std::filesystem::path& path);

/// Sets a dotted path ("attack.lambda") inside a config document.
void set_config_value(nlohmann::json& doc, const std::string& dotted, const nlohmann::json& value);

std::string to_string(AttackStrategy s);
std::string to_string(AggregationRule r);

}  // namespace fedpoison
