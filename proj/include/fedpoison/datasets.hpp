#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedpoison/nn.hpp"

namespace fedpoison {

/// Labeled samples stored as a dense row-major feature matrix.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::size_t dim, std::size_t class_count);

    void add(std::span<const double> x, std::size_t label);

    std::size_t size() const { return labels_.size(); }
    std::size_t dim() const { return dim_; }
    std::size_t class_count() const { return class_count_; }
    bool empty() const { return labels_.empty(); }

    std::span<const double> features(std::size_t i) const {
        return {features_.data() + i * dim_, dim_};
    }
    std::size_t label(std::size_t i) const { return labels_[i]; }
    const std::vector<std::size_t>& labels() const { return labels_; }

    LabeledSample sample(std::size_t i) const { return {features(i), labels_[i]}; }
    std::vector<LabeledSample> samples() const;
    std::vector<LabeledSample> samples(std::span<const std::size_t> indices) const;

    /// New dataset holding only the given rows, in the given order.
    Dataset subset(std::span<const std::size_t> indices) const;

    bool operator==(const Dataset&) const = default;

private:
    std::size_t dim_ = 0;
    std::size_t class_count_ = 0;
    std::vector<double> features_;
    std::vector<std::size_t> labels_;
};

/// One agent's partition of the training set (indices into it).
struct Shard {
    std::size_t owner = 0;
    std::vector<std::size_t> indices;

    std::size_t size() const { return indices.size(); }
};

struct AuxEntry {
    std::size_t pool_index = 0;  ///< row in the pool dataset
    std::vector<double> x;
    std::size_t true_label = 0;
    std::size_t target_label = 0;
};

/// The adversary's auxiliary samples with their target labels.
struct AuxSet {
    std::vector<AuxEntry> entries;

    std::size_t size() const { return entries.size(); }
    /// Samples labeled with their *target* classes (the malicious objective).
    std::vector<LabeledSample> target_batch() const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255. Throws FormatError with the failing offset.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t class_count = 10);

/// Gaussian blobs. Class c has mean separation * e_(c mod dim) and isotropic
/// standard deviation `spread`. Samples are emitted class by class.
Dataset make_synthetic(std::size_t class_count, std::size_t dim, std::size_t per_class,
                       double spread, std::uint64_t seed, double separation = 1.0);

enum class ColumnKind { numeric, categorical, label, ignore };

struct ColumnSchema {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
};

/// Declared layout of a delimited text file with a header row.
struct TabularSchema {
    char delimiter = ',';
    std::vector<ColumnSchema> columns;
    /// Raw label strings in class order (index = class id).
    std::vector<std::string> label_values;
};

/// Column encoders fitted on one file and reusable on another so train and
/// test share a feature layout.
struct TabularEncoding {
    std::vector<std::vector<std::string>> categories;  ///< per categorical column, sorted
    std::vector<std::pair<double, double>> numeric_range;  ///< per numeric column (min, max)

    std::size_t feature_dim() const;
};

struct TabularData {
    Dataset dataset;
    TabularEncoding encoding;
};

/// Loads delimited text. Numeric columns are min-max scaled, categorical
/// columns one-hot encoded. When `encoding` is given it is reused instead of
/// fitted (unseen categories encode as all-zero).
TabularData load_tabular(const std::filesystem::path& path, const TabularSchema& schema,
                         const std::optional<TabularEncoding>& encoding = std::nullopt);

/// Indices of a class-stratified subsample of `total` rows (proportional
/// allocation, remainder to the largest classes first).
std::vector<std::size_t> stratified_indices(const Dataset& data, std::size_t total,
                                            std::uint64_t seed);

/// Seeded shuffle cut into K contiguous blocks whose sizes differ by at most one.
std::vector<Shard> shard_iid(std::size_t dataset_size, std::size_t K, std::uint64_t seed);

enum class AuxMode { single_source, mixed };

/// Chooses the adversary's auxiliary samples from `pool`.
/// single_source: r samples of source_class, all targeted at target_class.
/// mixed: r samples of any class, each with a random target != its label.
AuxSet pick_aux(const Dataset& pool, std::size_t r, std::size_t source_class,
                std::size_t target_class, std::uint64_t seed,
                AuxMode mode = AuxMode::single_source,
                std::span<const std::size_t> excluded = {});

}  // namespace fedpoison
