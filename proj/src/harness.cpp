#include "fedpoison/harness.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <set>
#include <sstream>

#include "fedpoison/attacks.hpp"
#include "fedpoison/errors.hpp"
#include "fedpoison/protocol.hpp"
#include "fedpoison/random.hpp"
#include "fedpoison/stealth.hpp"

namespace fedpoison {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

bool RoundRecord::operator==(const RoundRecord& o) const {
    return t == o.t && same(val_acc_global, o.val_acc_global) &&
           same(mal_conf_mean, o.mal_conf_mean) &&
           same(mal_targets_hit_frac, o.mal_targets_hit_frac) &&
           same(val_acc_mal_local, o.val_acc_mal_local) && acc_flag == o.acc_flag &&
           same(acc_gap, o.acc_gap) && dist_flag == o.dist_flag &&
           same(dist_deviation, o.dist_deviation) && same(l2_ben_min, o.l2_ben_min) &&
           same(l2_ben_max, o.l2_ben_max) && same(l2_mal_min, o.l2_mal_min) &&
           same(l2_mal_max, o.l2_mal_max) && krum_chosen_agent == o.krum_chosen_agent &&
           mal_chosen == o.mal_chosen;
}

// ---------------------------------------------------------------------------
// Data preparation

namespace {

struct RawData {
    Dataset train;
    Dataset heldout;
};

RawData load_raw(const ExperimentConfig& c) {
    const auto& d = c.dataset;
    switch (d.source) {
        case DataSource::synthetic: {
            const std::size_t train_per_class = (d.train_size + d.classes - 1) / d.classes;
            // Held-out side must cover the validation split plus the aux samples.
            const std::size_t heldout_per_class =
                (d.validation_size + d.classes - 1) / d.classes + c.malicious.aux.r + 1;
            return {make_synthetic(d.classes, d.dim, train_per_class, d.spread,
                                   derive_seed(c.seed, 0, 0, StreamPurpose::dataset_train),
                                   d.separation),
                    make_synthetic(d.classes, d.dim, heldout_per_class, d.spread,
                                   derive_seed(c.seed, 0, 0, StreamPurpose::dataset_heldout),
                                   d.separation)};
        }
        case DataSource::idx:
            return {load_idx(d.train_images, d.train_labels, d.classes),
                    load_idx(d.test_images, d.test_labels, d.classes)};
        case DataSource::tabular: {
            auto train = load_tabular(d.train_path, d.schema);
            auto test = load_tabular(d.test_path, d.schema, train.encoding);
            return {std::move(train.dataset), std::move(test.dataset)};
        }
    }
    throw ConfigError("unknown data source");
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& c) {
    c.validate();
    auto raw = load_raw(c);
    PreparedData out;

    const std::size_t train_size = c.dataset.train_size == 0 ? raw.train.size() : c.dataset.train_size;
    out.train = raw.train.subset(
        stratified_indices(raw.train, train_size, derive_seed(c.seed, 0, 0, StreamPurpose::subsample)));

    const auto& aux_cfg = c.malicious.aux;
    out.aux = pick_aux(raw.heldout, aux_cfg.r, aux_cfg.source_class, aux_cfg.target_class,
                       derive_seed(c.seed, 0, 0, StreamPurpose::aux_pick), aux_cfg.mode);

    // Validation comes from the held-out rows the adversary did not take.
    std::set<std::size_t> taken;
    for (const auto& e : out.aux.entries) taken.insert(e.pool_index);
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < raw.heldout.size(); ++i)
        if (!taken.contains(i)) rest.push_back(i);
    const Dataset remaining = raw.heldout.subset(rest);
    const std::size_t val_size =
        c.dataset.validation_size == 0 ? remaining.size() : c.dataset.validation_size;
    out.validation = remaining.subset(stratified_indices(
        remaining, val_size, derive_seed(c.seed, 0, 0, StreamPurpose::validation_split)));

    out.shards = shard_iid(out.train.size(), c.federation.agents,
                           derive_seed(c.seed, 0, 0, StreamPurpose::sharding));

    out.spec.layer_sizes.push_back(out.train.dim());
    for (std::size_t h : c.hidden) out.spec.layer_sizes.push_back(h);
    out.spec.layer_sizes.push_back(out.train.class_count());
    return out;
}

// ---------------------------------------------------------------------------
// Runner

namespace {

double calibrate_kappa(const ExperimentConfig& c, const PreparedData& data) {
    ExperimentConfig warm = c;
    warm.malicious.attack.strategy = AttackStrategy::none;
    warm.federation.rounds = c.stealth.kappa_warmup_rounds;
    warm.federation.target_accuracy = 101.0;
    warm.stealth.kappa = kNeverFlag;
    const auto result = run_experiment(warm, data, RunOptions{false, false});
    double worst = 0.0;
    for (const auto& r : result.records)
        if (!std::isnan(r.dist_deviation)) worst = std::max(worst, r.dist_deviation);
    return c.stealth.kappa_factor * worst;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    const auto data = prepare_data(config);
    return run_experiment(config, data, options);
}

RunResult run_experiment(const ExperimentConfig& config, const PreparedData& data,
                         const RunOptions& options) {
    config.validate();
    const auto& spec = data.spec;
    const std::size_t K = config.federation.agents;
    const std::size_t m = config.malicious.agent;

    RunResult result;
    result.kappa = config.stealth.kappa ? *config.stealth.kappa : calibrate_kappa(config, data);
    result.initial_params = init_params(spec, derive_seed(config.seed, 0, 0, StreamPurpose::init_weights));

    std::vector<std::unique_ptr<AgentBehavior>> agents;
    MaliciousAgent* adversary = nullptr;
    std::vector<std::size_t> shard_sizes;
    for (std::size_t i = 0; i < K; ++i) {
        const auto& shard = data.shards[i];
        shard_sizes.push_back(shard.size());
        if (i == m && config.malicious.enabled()) {
            auto agent = std::make_unique<MaliciousAgent>(data.train.subset(shard.indices), data.aux,
                                                          config.malicious.attack, config.training);
            adversary = agent.get();
            agents.push_back(std::move(agent));
        } else {
            agents.push_back(
                std::make_unique<BenignAgent>(data.train.samples(shard.indices), config.training));
        }
    }

    auto state = ServerState::create(result.initial_params, shard_sizes);
    const RoundOptions round_options{config.federation.per_round, config.aggregation, config.seed,
                                     config.federation.threads};
    const auto validation = data.validation.samples();

    for (std::size_t r = 0; r < config.federation.rounds; ++r) {
        const ParameterVector w_prev = state.global_params;
        auto [next, outcome] = run_round(std::move(state), spec, agents, round_options);
        state = std::move(next);
        const auto& w = state.global_params;

        RoundRecord rec;
        rec.t = r + 1;
        rec.val_acc_global = 100.0 * accuracy(spec, w, validation);
        double hits = 0.0, conf = 0.0;
        for (const auto& e : data.aux.entries) {
            const auto probs = forward(spec, w, e.x);
            rec.mal_confidences.push_back(probs[e.target_label]);
            conf += probs[e.target_label];
            if (std::max_element(probs.begin(), probs.end()) - probs.begin() ==
                static_cast<long>(e.target_label))
                hits += 1.0;
        }
        rec.mal_conf_mean = conf / static_cast<double>(data.aux.size());
        rec.mal_targets_hit_frac = hits / static_cast<double>(data.aux.size());
        rec.krum_chosen_agent = outcome.krum_chosen ? static_cast<long>(*outcome.krum_chosen) : -1;

        rec.val_acc_mal_local = rec.acc_gap = rec.dist_deviation = kNaN;
        rec.l2_ben_min = rec.l2_ben_max = rec.l2_mal_min = rec.l2_mal_max = kNaN;

        const auto found = std::find(outcome.selected.begin(), outcome.selected.end(), m);
        std::vector<double> benign_aggregate;
        if (found != outcome.selected.end()) {
            const auto pos = static_cast<std::size_t>(found - outcome.selected.begin());
            const auto& delta_m = outcome.updates[pos].delta;
            rec.val_acc_mal_local = 100.0 * accuracy(spec, vec::add(w_prev, delta_m), validation);

            std::vector<WeightedDelta> others;
            for (std::size_t j = 0; j < outcome.updates.size(); ++j)
                if (j != pos) others.push_back({outcome.alphas[j], outcome.updates[j].delta});
            const auto acc = accuracy_gap_check(spec, w_prev, delta_m, others, validation,
                                                config.stealth.gamma);
            rec.acc_gap = acc.gap;
            rec.acc_flag = acc.flagged ? 1 : 0;

            if (outcome.updates.size() >= 3) {
                std::vector<std::vector<double>> deltas;
                for (const auto& u : outcome.updates) deltas.push_back(u.delta);
                const auto dist = summarize_distances(deltas, pos);
                rec.dist_deviation = dist.deviation;
                rec.dist_flag = dist.deviation >= result.kappa ? 1 : 0;
                rec.l2_ben_min = dist.benign_min;
                rec.l2_ben_max = dist.benign_max;
                rec.l2_mal_min = dist.malicious.lower;
                rec.l2_mal_max = dist.malicious.upper;
            }
            rec.mal_chosen = config.aggregation.rule == AggregationRule::krum
                                 ? (outcome.krum_chosen == m ? 1 : 0)
                                 : 1;
            if (options.retain_ground_truth) {
                benign_aggregate.assign(w.size(), 0.0);
                for (const auto& o : others) vec::axpy(o.alpha, o.delta, benign_aggregate);
            }
        }
        if (options.retain_ground_truth) {
            result.benign_aggregates.push_back(std::move(benign_aggregate));
            result.estimates.push_back(adversary && found != outcome.selected.end()
                                           ? adversary->last_estimate()
                                           : std::vector<double>{});
        }

        if (options.histograms) {
            double range = config.stealth.histogram_range;
            if (range <= 0.0) {
                for (const auto& u : outcome.updates)
                    for (double v : u.delta) range = std::max(range, std::abs(v));
                if (range == 0.0) range = 1.0;
            }
            for (const auto& u : outcome.updates)
                result.histograms.push_back(
                    {rec.t, u.agent, config.malicious.enabled() && u.agent == m, -range, range,
                     update_histogram(u.delta, config.stealth.histogram_bins, -range, range)});
        }

        result.records.push_back(std::move(rec));
        if (early_stop(result.records.back().val_acc_global, r + 1,
                       config.federation.target_accuracy, config.federation.rounds))
            break;
    }
    result.final_params = state.global_params;
    return result;
}

// ---------------------------------------------------------------------------
// Persistence

const char* const kMetricsColumns[15] = {
    "t",          "val_acc_global", "mal_conf_mean", "mal_targets_hit_frac", "val_acc_mal_local",
    "acc_flag",   "acc_gap",        "dist_flag",     "dist_deviation",       "l2_ben_min",
    "l2_ben_max", "l2_mal_min",     "l2_mal_max",    "krum_chosen_agent",    "mal_chosen"};

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& s, const std::string& where) {
    if (s == "nan") return kNaN;
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw FormatError(where + ": not a number: '" + s + "'", 0);
    return v;
}

long parse_long(const std::string& s, const std::string& where) {
    long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw FormatError(where + ": not an integer: '" + s + "'", 0);
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string metrics_csv_text(const std::vector<RoundRecord>& records) {
    std::string out;
    for (std::size_t i = 0; i < std::size(kMetricsColumns); ++i) {
        if (i) out += ',';
        out += kMetricsColumns[i];
    }
    out += '\n';
    for (const auto& r : records) {
        out += std::to_string(r.t) + ',' + format_double(r.val_acc_global) + ',' +
               format_double(r.mal_conf_mean) + ',' + format_double(r.mal_targets_hit_frac) + ',' +
               format_double(r.val_acc_mal_local) + ',' + std::to_string(r.acc_flag) + ',' +
               format_double(r.acc_gap) + ',' + std::to_string(r.dist_flag) + ',' +
               format_double(r.dist_deviation) + ',' + format_double(r.l2_ben_min) + ',' +
               format_double(r.l2_ben_max) + ',' + format_double(r.l2_mal_min) + ',' +
               format_double(r.l2_mal_max) + ',' + std::to_string(r.krum_chosen_agent) + ',' +
               std::to_string(r.mal_chosen) + '\n';
    }
    return out;
}

std::string histograms_csv_text(const std::vector<HistogramRow>& rows) {
    std::string out = "t,agent,malicious,bin,lower,upper,count\n";
    for (const auto& h : rows) {
        const std::size_t bins = h.counts.size() - 2;
        const double width = (h.hi - h.lo) / static_cast<double>(bins);
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            double lower, upper;
            if (b == 0) {
                lower = -std::numeric_limits<double>::infinity();
                upper = h.lo;
            } else if (b == h.counts.size() - 1) {
                lower = h.hi;
                upper = std::numeric_limits<double>::infinity();
            } else {
                lower = h.lo + static_cast<double>(b - 1) * width;
                upper = b == bins ? h.hi : h.lo + static_cast<double>(b) * width;
            }
            out += std::to_string(h.t) + ',' + std::to_string(h.agent) + ',' +
                   (h.malicious ? "1" : "0") + ',' + std::to_string(static_cast<long>(b) - 1) + ',' +
                   format_double(lower) + ',' + format_double(upper) + ',' +
                   std::to_string(h.counts[b]) + '\n';
        }
    }
    return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace

void write_metrics_csv(const std::vector<RoundRecord>& records, const std::filesystem::path& path) {
    write_atomically(path, metrics_csv_text(records));
}

std::vector<RoundRecord> read_metrics_csv(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw FormatError(path.string() + ": empty metrics file", 0);
    const auto header = split_csv(lines.front());
    if (header.size() != std::size(kMetricsColumns))
        throw FormatError(path.string() + ": unexpected header", 0);
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] != kMetricsColumns[i])
            throw FormatError(path.string() + ": column " + std::to_string(i) + " is '" + header[i] +
                                  "', expected '" + kMetricsColumns[i] + "'",
                              0);
    std::vector<RoundRecord> out;
    for (std::size_t l = 1; l < lines.size(); ++l) {
        const auto cells = split_csv(lines[l]);
        const std::string where = path.string() + " line " + std::to_string(l + 1);
        if (cells.size() != header.size()) throw FormatError(where + ": wrong number of fields", 0);
        RoundRecord r;
        r.t = static_cast<std::size_t>(parse_long(cells[0], where));
        r.val_acc_global = parse_double(cells[1], where);
        r.mal_conf_mean = parse_double(cells[2], where);
        r.mal_targets_hit_frac = parse_double(cells[3], where);
        r.val_acc_mal_local = parse_double(cells[4], where);
        r.acc_flag = static_cast<int>(parse_long(cells[5], where));
        r.acc_gap = parse_double(cells[6], where);
        r.dist_flag = static_cast<int>(parse_long(cells[7], where));
        r.dist_deviation = parse_double(cells[8], where);
        r.l2_ben_min = parse_double(cells[9], where);
        r.l2_ben_max = parse_double(cells[10], where);
        r.l2_mal_min = parse_double(cells[11], where);
        r.l2_mal_max = parse_double(cells[12], where);
        r.krum_chosen_agent = parse_long(cells[13], where);
        r.mal_chosen = static_cast<int>(parse_long(cells[14], where));
        out.push_back(std::move(r));
    }
    return out;
}

void write_histograms_csv(const std::vector<HistogramRow>& rows, const std::filesystem::path& path) {
    write_atomically(path, histograms_csv_text(rows));
}

std::vector<HistogramRow> read_histograms_csv(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty() || lines.front() != "t,agent,malicious,bin,lower,upper,count")
        throw FormatError(path.string() + ": not a histogram file", 0);
    std::vector<HistogramRow> out;
    for (std::size_t l = 1; l < lines.size(); ++l) {
        const auto cells = split_csv(lines[l]);
        const std::string where = path.string() + " line " + std::to_string(l + 1);
        if (cells.size() != 7) throw FormatError(where + ": wrong number of fields", 0);
        const auto t = static_cast<std::size_t>(parse_long(cells[0], where));
        const auto agent = static_cast<std::size_t>(parse_long(cells[1], where));
        const long bin = parse_long(cells[3], where);
        if (bin == -1) {
            HistogramRow row;
            row.t = t;
            row.agent = agent;
            row.malicious = cells[2] == "1";
            row.lo = parse_double(cells[5], where);
            out.push_back(std::move(row));
        } else if (out.empty() || out.back().t != t || out.back().agent != agent) {
            throw FormatError(where + ": histogram row without its underflow bin", 0);
        }
        auto& row = out.back();
        row.counts.push_back(static_cast<std::size_t>(parse_long(cells[6], where)));
        const double lower = parse_double(cells[4], where);
        if (std::isinf(parse_double(cells[5], where))) row.hi = lower;
    }
    return out;
}

void emit_metrics(const RunResult& result, const ExperimentConfig& resolved,
                  const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

    write_metrics_csv(result.records, dir / "metrics.csv");
    write_histograms_csv(result.histograms, dir / "histograms.csv");

    std::string weights = "FPWT";
    auto put_u64 = [&](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) weights.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
    };
    put_u64(result.final_params.size());
    for (double v : result.final_params) put_u64(std::bit_cast<std::uint64_t>(v));
    write_atomically(dir / "final_weights.bin", weights);

    auto doc = config_to_json(resolved);
    doc["stealth"]["kappa"] = result.kappa;
    write_atomically(dir / "config.json", doc.dump(2) + "\n");
}

ParameterVector read_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() < 12 || bytes.compare(0, 4, "FPWT") != 0)
        throw FormatError(path.string() + ": bad weights header", 0);
    auto get_u64 = [&](std::size_t off) {
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b)
            v |= std::uint64_t{static_cast<unsigned char>(bytes[off + static_cast<std::size_t>(b)])} << (8 * b);
        return v;
    };
    const std::uint64_t n = get_u64(4);
    if (bytes.size() != 12 + 8 * n) throw FormatError(path.string() + ": truncated weights", bytes.size());
    ParameterVector out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<double>(get_u64(12 + 8 * i));
    return out;
}

}  // namespace fedpoison
