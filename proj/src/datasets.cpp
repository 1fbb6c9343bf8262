#include "fedpoison/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>

#include "fedpoison/errors.hpp"
#include "fedpoison/random.hpp"

namespace fedpoison {

Dataset::Dataset(std::size_t dim, std::size_t class_count) : dim_(dim), class_count_(class_count) {
    if (dim == 0) throw InvalidArgument("Dataset: feature dimension must be positive");
    if (class_count == 0) throw InvalidArgument("Dataset: class count must be positive");
}

void Dataset::add(std::span<const double> x, std::size_t label) {
    if (x.size() != dim_)
        throw InvalidArgument("Dataset::add: feature length " + std::to_string(x.size()) +
                              " != " + std::to_string(dim_));
    if (label >= class_count_)
        throw InvalidArgument("Dataset::add: label " + std::to_string(label) + " >= class count " +
                              std::to_string(class_count_));
    features_.insert(features_.end(), x.begin(), x.end());
    labels_.push_back(label);
}

std::vector<LabeledSample> Dataset::samples() const {
    std::vector<LabeledSample> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(sample(i));
    return out;
}

std::vector<LabeledSample> Dataset::samples(std::span<const std::size_t> indices) const {
    std::vector<LabeledSample> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(sample(i));
    return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out(dim_, class_count_);
    out.features_.reserve(indices.size() * dim_);
    out.labels_.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= size()) throw InvalidArgument("Dataset::subset: index out of range");
        out.add(features(i), labels_[i]);
    }
    return out;
}

std::vector<LabeledSample> AuxSet::target_batch() const {
    std::vector<LabeledSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back({e.x, e.target_label});
    return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& file) {
    if (offset + 4 > bytes.size())
        throw FormatError(file + ": truncated header", bytes.size());
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t class_count) {
    const auto img = read_file(images);
    const auto lab = read_file(labels);
    const std::string img_name = images.string();
    const std::string lab_name = labels.string();

    if (read_be32(img, 0, img_name) != kIdxImagesMagic)
        throw FormatError(img_name + ": bad IDX image magic", 0);
    if (read_be32(lab, 0, lab_name) != kIdxLabelsMagic)
        throw FormatError(lab_name + ": bad IDX label magic", 0);

    const std::size_t count = read_be32(img, 4, img_name);
    const std::size_t rows = read_be32(img, 8, img_name);
    const std::size_t cols = read_be32(img, 12, img_name);
    const std::size_t label_count = read_be32(lab, 4, lab_name);
    if (label_count != count)
        throw FormatError("IDX count mismatch: " + std::to_string(count) + " images vs " +
                              std::to_string(label_count) + " labels",
                          4);
    if (rows == 0 || cols == 0) throw FormatError(img_name + ": zero image dimension", 8);

    constexpr std::size_t img_header = 16;
    constexpr std::size_t lab_header = 8;
    const std::size_t dim = rows * cols;
    if (img.size() < img_header + count * dim)
        throw FormatError(img_name + ": truncated pixel data", img.size());
    if (lab.size() < lab_header + count)
        throw FormatError(lab_name + ": truncated label data", lab.size());

    Dataset out(dim, class_count);
    std::vector<double> x(dim);
    for (std::size_t s = 0; s < count; ++s) {
        const std::size_t base = img_header + s * dim;
        for (std::size_t p = 0; p < dim; ++p) x[p] = static_cast<double>(img[base + p]) / 255.0;
        const std::size_t label = lab[lab_header + s];
        if (label >= class_count)
            throw FormatError(lab_name + ": label " + std::to_string(label) + " out of range",
                              lab_header + s);
        out.add(x, label);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic

Dataset make_synthetic(std::size_t class_count, std::size_t dim, std::size_t per_class,
                       double spread, std::uint64_t seed, double separation) {
    if (class_count == 0 || dim == 0 || per_class == 0)
        throw InvalidArgument("make_synthetic: counts must be positive");
    if (!(spread >= 0.0)) throw InvalidArgument("make_synthetic: spread must be non-negative");
    Dataset out(dim, class_count);
    Rng rng(seed);
    std::vector<double> x(dim);
    for (std::size_t c = 0; c < class_count; ++c) {
        for (std::size_t s = 0; s < per_class; ++s) {
            for (std::size_t d = 0; d < dim; ++d) x[d] = spread * rng.normal();
            x[c % dim] += separation;
            out.add(x, c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tabular

std::size_t TabularEncoding::feature_dim() const {
    std::size_t d = numeric_range.size();
    for (const auto& c : categories) d += c.size();
    return d;
}

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

struct Row {
    std::vector<std::string> cells;
    std::size_t offset = 0;
};

}  // namespace

TabularData load_tabular(const std::filesystem::path& path, const TabularSchema& schema,
                         const std::optional<TabularEncoding>& encoding) {
    if (schema.columns.empty()) throw InvalidArgument("tabular schema declares no columns");
    if (schema.label_values.empty()) throw InvalidArgument("tabular schema declares no labels");
    const auto label_cols = std::count_if(schema.columns.begin(), schema.columns.end(),
                                          [](const auto& c) { return c.kind == ColumnKind::label; });
    if (label_cols != 1) throw InvalidArgument("tabular schema needs exactly one label column");

    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

    std::vector<Row> rows;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string_view line(text.data() + pos, end - pos);
        const std::size_t line_offset = pos;
        pos = end + 1;
        if (trim(line).empty()) continue;
        auto cells = split(line, schema.delimiter);
        if (cells.size() != schema.columns.size())
            throw FormatError(path.string() + ": expected " + std::to_string(schema.columns.size()) +
                                  " columns, found " + std::to_string(cells.size()),
                              line_offset);
        if (!header_seen) {
            for (std::size_t c = 0; c < cells.size(); ++c)
                if (cells[c] != schema.columns[c].name)
                    throw FormatError(path.string() + ": header column '" + cells[c] +
                                          "' does not match schema column '" +
                                          schema.columns[c].name + "'",
                                      line_offset);
            header_seen = true;
            continue;
        }
        rows.push_back({std::move(cells), line_offset});
    }
    if (!header_seen) throw FormatError(path.string() + ": missing header row", 0);

    // Parse numerics once, fit encoders if needed.
    std::vector<std::size_t> numeric_cols, categorical_cols;
    std::size_t label_col = 0;
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
        switch (schema.columns[c].kind) {
            case ColumnKind::numeric: numeric_cols.push_back(c); break;
            case ColumnKind::categorical: categorical_cols.push_back(c); break;
            case ColumnKind::label: label_col = c; break;
            case ColumnKind::ignore: break;
        }
    }
    std::vector<std::vector<double>> numeric(rows.size(), std::vector<double>(numeric_cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t j = 0; j < numeric_cols.size(); ++j) {
            const auto& cell = rows[r].cells[numeric_cols[j]];
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                throw FormatError(path.string() + ": column '" +
                                      schema.columns[numeric_cols[j]].name +
                                      "' is not numeric: '" + cell + "'",
                                  rows[r].offset);
            numeric[r][j] = v;
        }
    }

    TabularEncoding enc;
    if (encoding) {
        enc = *encoding;
        if (enc.numeric_range.size() != numeric_cols.size() ||
            enc.categories.size() != categorical_cols.size())
            throw InvalidArgument("tabular encoding does not match schema");
    } else {
        enc.numeric_range.assign(numeric_cols.size(), {0.0, 0.0});
        for (std::size_t j = 0; j < numeric_cols.size(); ++j) {
            double lo = 0.0, hi = 0.0;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (r == 0 || numeric[r][j] < lo) lo = numeric[r][j];
                if (r == 0 || numeric[r][j] > hi) hi = numeric[r][j];
            }
            enc.numeric_range[j] = {lo, hi};
        }
        for (std::size_t c : categorical_cols) {
            std::set<std::string> seen;
            for (const auto& row : rows) seen.insert(row.cells[c]);
            enc.categories.emplace_back(seen.begin(), seen.end());
        }
    }

    TabularData out{Dataset(std::max<std::size_t>(enc.feature_dim(), 1), schema.label_values.size()),
                    enc};
    std::vector<double> x(std::max<std::size_t>(enc.feature_dim(), 1));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::fill(x.begin(), x.end(), 0.0);
        std::size_t f = 0;
        for (std::size_t j = 0; j < numeric_cols.size(); ++j, ++f) {
            const auto [lo, hi] = enc.numeric_range[j];
            x[f] = hi > lo ? std::clamp((numeric[r][j] - lo) / (hi - lo), 0.0, 1.0) : 0.0;
        }
        for (std::size_t j = 0; j < categorical_cols.size(); ++j) {
            const auto& cats = enc.categories[j];
            const auto& cell = rows[r].cells[categorical_cols[j]];
            const auto it = std::lower_bound(cats.begin(), cats.end(), cell);
            if (it != cats.end() && *it == cell) x[f + static_cast<std::size_t>(it - cats.begin())] = 1.0;
            f += cats.size();
        }
        std::string label = rows[r].cells[label_col];
        auto lit = std::find(schema.label_values.begin(), schema.label_values.end(), label);
        if (lit == schema.label_values.end() && !label.empty() && label.back() == '.') {
            label.pop_back();
            lit = std::find(schema.label_values.begin(), schema.label_values.end(), label);
        }
        if (lit == schema.label_values.end())
            throw FormatError(path.string() + ": undeclared label value '" + label + "'",
                              rows[r].offset);
        out.dataset.add(x, static_cast<std::size_t>(lit - schema.label_values.begin()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting

std::vector<std::size_t> stratified_indices(const Dataset& data, std::size_t total,
                                            std::uint64_t seed) {
    if (total > data.size())
        throw InvalidArgument("stratified subsample of " + std::to_string(total) +
                              " exceeds dataset size " + std::to_string(data.size()));
    std::vector<std::vector<std::size_t>> by_class(data.class_count());
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.label(i)].push_back(i);

    Rng rng(seed);
    for (auto& members : by_class) rng.shuffle(std::span<std::size_t>(members));

    // Largest-remainder proportional allocation.
    std::vector<std::size_t> take(by_class.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const double exact = static_cast<double>(total) * static_cast<double>(by_class[c].size()) /
                             static_cast<double>(data.size());
        take[c] = static_cast<std::size_t>(exact);
        assigned += take[c];
        remainders.emplace_back(exact - static_cast<double>(take[c]), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total; i = (i + 1) % remainders.size()) {
        const std::size_t c = remainders[i].second;
        if (take[c] < by_class[c].size()) {
            ++take[c];
            ++assigned;
        }
    }

    std::vector<std::size_t> out;
    out.reserve(total);
    for (std::size_t c = 0; c < by_class.size(); ++c)
        out.insert(out.end(), by_class[c].begin(), by_class[c].begin() + static_cast<long>(take[c]));
    rng.shuffle(std::span<std::size_t>(out));
    return out;
}

std::vector<Shard> shard_iid(std::size_t dataset_size, std::size_t K, std::uint64_t seed) {
    if (K == 0) throw InvalidArgument("shard_iid: K must be positive");
    if (K > dataset_size)
        throw InvalidArgument("shard_iid: K=" + std::to_string(K) + " exceeds dataset size " +
                              std::to_string(dataset_size));
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));

    std::vector<Shard> shards(K);
    const std::size_t base = dataset_size / K;
    const std::size_t extra = dataset_size % K;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < K; ++i) {
        // The last `extra` shards take one more sample.
        const std::size_t len = base + (i >= K - extra ? 1 : 0);
        shards[i].owner = i;
        shards[i].indices.assign(order.begin() + static_cast<long>(cursor),
                                 order.begin() + static_cast<long>(cursor + len));
        cursor += len;
    }
    return shards;
}

AuxSet pick_aux(const Dataset& pool, std::size_t r, std::size_t source_class,
                std::size_t target_class, std::uint64_t seed, AuxMode mode,
                std::span<const std::size_t> excluded) {
    if (r == 0) throw InvalidArgument("pick_aux: r must be at least 1");
    const std::set<std::size_t> skip(excluded.begin(), excluded.end());
    Rng rng(seed);
    AuxSet aux;

    if (mode == AuxMode::single_source) {
        if (source_class >= pool.class_count() || target_class >= pool.class_count())
            throw InvalidArgument("pick_aux: class index out of range");
        if (source_class == target_class)
            throw InvalidArgument("pick_aux: target class must differ from source class");
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (pool.label(i) == source_class && !skip.contains(i)) candidates.push_back(i);
        if (candidates.size() < r)
            throw InvalidArgument("pick_aux: pool has " + std::to_string(candidates.size()) +
                                  " samples of class " + std::to_string(source_class) +
                                  ", need " + std::to_string(r));
        rng.shuffle(std::span<std::size_t>(candidates));
        for (std::size_t j = 0; j < r; ++j) {
            const std::size_t i = candidates[j];
            aux.entries.push_back({i, {pool.features(i).begin(), pool.features(i).end()},
                                   source_class, target_class});
        }
        return aux;
    }

    if (pool.class_count() < 2) throw InvalidArgument("pick_aux: mixed mode needs >= 2 classes");
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (!skip.contains(i)) candidates.push_back(i);
    if (candidates.size() < r)
        throw InvalidArgument("pick_aux: pool too small for r=" + std::to_string(r));
    rng.shuffle(std::span<std::size_t>(candidates));
    for (std::size_t j = 0; j < r; ++j) {
        const std::size_t i = candidates[j];
        const std::size_t y = pool.label(i);
        const std::size_t shift = 1 + static_cast<std::size_t>(rng.below(pool.class_count() - 1));
        aux.entries.push_back({i, {pool.features(i).begin(), pool.features(i).end()}, y,
                               (y + shift) % pool.class_count()});
    }
    return aux;
}

}  // namespace fedpoison
