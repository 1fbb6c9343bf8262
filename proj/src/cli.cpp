#include "fedpoison/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <limits>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fedpoison/config.hpp"
#include "fedpoison/errors.hpp"
#include "fedpoison/harness.hpp"

namespace fedpoison {

std::filesystem::path resolve_output_dir(const std::string& flag, const std::string& config_dir,
                                         const std::filesystem::path& config_path) {
    if (!flag.empty()) return flag;
    if (!config_dir.empty()) return config_dir;
    const char* root = std::getenv("FEDPOISON_OUTPUT_ROOT");
    return std::filesystem::path(root && *root ? root : "runs") / config_path.stem();
}

namespace {

void print_summary(std::ostream& out, const RunResult& r, const std::filesystem::path& dir) {
    out << "rounds " << r.records.size();
    if (!r.records.empty()) {
        const auto& last = r.records.back();
        out << "  val_acc " << format_double(last.val_acc_global) << "  mal_conf "
            << format_double(last.mal_conf_mean) << "  targets_hit "
            << format_double(last.mal_targets_hit_frac);
    }
    out << "  kappa " << format_double(r.kappa) << "\nwrote " << dir.string() << "\n";
}

nlohmann::json parse_value(const std::string& text) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        return text;
    }
}

std::vector<std::string> split_values(const std::string& list) {
    std::vector<std::string> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

int cmd_run(const std::string& config_path, const std::string& out_flag, std::size_t threads) {
    auto config = load_config(config_path);
    if (threads) config.federation.threads = threads;
    const auto dir = resolve_output_dir(out_flag, config.output_dir, config_path);
    const auto result = run_experiment(config);
    emit_metrics(result, config, dir);
    print_summary(std::cout, result, dir);
    return 0;
}

int cmd_validate(const std::string& config_path) {
    const auto config = load_config(config_path);
    const auto data = prepare_data(config);
    for (const auto& shard : data.shards) config.training.validate(shard.size());
    std::cout << "ok: " << data.train.size() << " training rows, " << data.validation.size()
              << " validation rows, " << data.spec.parameter_count() << " parameters\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::string& values,
              const std::string& out_flag) {
    const auto base = load_config_json(config_path);
    const auto items = split_values(values);
    if (items.empty()) throw ConfigError("--values: empty list");

    std::vector<std::pair<std::string, ExperimentConfig>> configs;
    for (const auto& v : items) {
        auto doc = base;
        set_config_value(doc, param, parse_value(v));
        configs.emplace_back(v, config_from_json(doc));
    }

    const auto root = resolve_output_dir(out_flag, configs.front().second.output_dir, config_path);
    std::string summary = "value,rounds,val_acc_global,mal_conf_mean,mal_targets_hit_frac,kappa\n";
    for (auto& [value, config] : configs) {
        const auto dir = root / (param + "=" + value);
        const auto result = run_experiment(config);
        emit_metrics(result, config, dir);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const RoundRecord* last = result.records.empty() ? nullptr : &result.records.back();
        summary += value + ',' + std::to_string(result.records.size()) + ',' +
                   format_double(last ? last->val_acc_global : nan) + ',' +
                   format_double(last ? last->mal_conf_mean : nan) + ',' +
                   format_double(last ? last->mal_targets_hit_frac : nan) + ',' +
                   format_double(result.kappa) + '\n';
        std::cout << param << "=" << value << ": ";
        print_summary(std::cout, result, dir);
    }
    std::ofstream(root / "sweep.csv") << summary;
    return 0;
}

int cmd_export_hist(const std::string& run_dir, std::size_t round, long agent,
                    const std::string& out_path) {
    const auto rows = read_histograms_csv(std::filesystem::path(run_dir) / "histograms.csv");
    std::ostringstream out;
    out << "agent,malicious,bin,lower,upper,count\n";
    bool any = false;
    for (const auto& h : rows) {
        if (h.t != round || (agent >= 0 && h.agent != static_cast<std::size_t>(agent))) continue;
        any = true;
        const std::size_t bins = h.counts.size() - 2;
        const double width = (h.hi - h.lo) / static_cast<double>(bins);
        for (std::size_t b = 1; b + 1 < h.counts.size(); ++b) {
            const double lower = h.lo + static_cast<double>(b - 1) * width;
            const double upper = b == bins ? h.hi : h.lo + static_cast<double>(b) * width;
            out << h.agent << ',' << (h.malicious ? 1 : 0) << ',' << b - 1 << ','
                << format_double(lower) << ',' << format_double(upper) << ',' << h.counts[b] << '\n';
        }
        out << h.agent << ',' << (h.malicious ? 1 : 0) << ",underflow,-inf," << format_double(h.lo)
            << ',' << h.counts.front() << '\n';
        out << h.agent << ',' << (h.malicious ? 1 : 0) << ",overflow," << format_double(h.hi)
            << ",inf," << h.counts.back() << '\n';
    }
    if (!any) throw InvalidArgument("no histograms for round " + std::to_string(round));
    if (out_path.empty()) {
        std::cout << out.str();
    } else {
        std::ofstream f(out_path);
        if (!f) throw IoError("cannot write " + out_path);
        f << out.str();
    }
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Federated learning model-poisoning simulator"};
    app.require_subcommand(1);

    std::string config_path, out_flag, param, values, run_dir;
    std::size_t threads = 0, round = 0;
    long agent = -1;

    auto* run = app.add_subcommand("run", "Run one experiment");
    run->add_option("config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_flag, "Output directory");
    run->add_option("--threads", threads, "Worker threads for local training");

    auto* validate = app.add_subcommand("validate", "Check a config and its data without training");
    validate->add_option("config", config_path, "JSON config")->required()->check(CLI::ExistingFile);

    auto* sweep = app.add_subcommand("sweep", "Run a config once per value of one parameter");
    sweep->add_option("config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
    sweep->add_option("--param", param, "Dotted config path, e.g. attack.lambda")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required();
    sweep->add_option("--out", out_flag, "Root output directory");

    auto* hist = app.add_subcommand("export-hist", "Print one round's update histograms as CSV");
    hist->add_option("run_dir", run_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);
    hist->add_option("--round", round, "1-based round")->required();
    hist->add_option("--agent", agent, "Only this agent");
    hist->add_option("--out", out_flag, "Write to a file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*run) return cmd_run(config_path, out_flag, threads);
        if (*validate) return cmd_validate(config_path);
        if (*sweep) return cmd_sweep(config_path, param, values, out_flag);
        if (*hist) return cmd_export_hist(run_dir, round, agent, out_flag);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace fedpoison
