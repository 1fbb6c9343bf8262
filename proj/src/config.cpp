#include "fedpoison/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "fedpoison/errors.hpp"

namespace fedpoison {

using nlohmann::json;

namespace {

/// Reads fields out of one JSON object and rejects whatever it did not read.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "expected an object");
    }
    /// Rejects every key that was never asked for.
    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!seen_.contains(key)) throw ConfigError("unknown key '" + qualified(key) + "'");
    }
    Section(const Section&) = delete;
    Section& operator=(const Section&) = delete;

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            const auto& v = j_.at(key);
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(qualified(key) + ": expected a boolean");
            } else if constexpr (std::is_unsigned_v<T>) {
                if (!v.is_number_integer() || v.get<long long>() < 0)
                    throw ConfigError(qualified(key) + ": expected a non-negative integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError(qualified(key) + ": expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(qualified(key) + ": expected a string");
            }
            out = v.get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(qualified(key) + ": " + e.what());
        }
    }

    const json& child(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string qualified(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

private:
    std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class E>
E parse_enum(const std::string& field, const std::string& value,
             std::initializer_list<std::pair<const char*, E>> options) {
    std::string known;
    for (const auto& [name, e] : options) {
        if (value == name) return e;
        known += known.empty() ? name : std::string(", ") + name;
    }
    throw ConfigError(field + ": unknown value '" + value + "' (expected one of: " + known + ")");
}

const std::initializer_list<std::pair<const char*, AttackStrategy>> kStrategies = {
    {"none", AttackStrategy::none},
    {"targeted_explicit", AttackStrategy::targeted_explicit},
    {"targeted_implicit", AttackStrategy::targeted_implicit},
    {"stealthy", AttackStrategy::stealthy},
    {"alternating_min", AttackStrategy::alternating_min},
    {"data_poison", AttackStrategy::data_poison},
};
const std::initializer_list<std::pair<const char*, AggregationRule>> kRules = {
    {"avg", AggregationRule::avg}, {"krum", AggregationRule::krum}, {"coomed", AggregationRule::coomed}};
const std::initializer_list<std::pair<const char*, OptimizerKind>> kOptimizers = {
    {"sgd", OptimizerKind::sgd}, {"adam", OptimizerKind::adam}};
const std::initializer_list<std::pair<const char*, DataSource>> kSources = {
    {"synthetic", DataSource::synthetic}, {"idx", DataSource::idx}, {"tabular", DataSource::tabular}};
const std::initializer_list<std::pair<const char*, ColumnKind>> kColumnKinds = {
    {"numeric", ColumnKind::numeric}, {"categorical", ColumnKind::categorical},
    {"label", ColumnKind::label}, {"ignore", ColumnKind::ignore}};

template <class E>
std::string enum_name(E e, std::initializer_list<std::pair<const char*, E>> options) {
    for (const auto& [name, v] : options)
        if (v == e) return name;
    return "?";
}

OptimizerSettings parse_optimizer(const json& j, const std::string& path, OptimizerSettings out) {
    Section s(j, path);
    std::string kind = enum_name(out.kind, kOptimizers);
    s.get("kind", kind);
    out.kind = parse_enum(s.qualified("kind"), kind, kOptimizers);
    s.get("learning_rate", out.learning_rate);
    s.get("beta1", out.beta1);
    s.get("beta2", out.beta2);
    s.get("epsilon", out.epsilon);
    s.finish();
    try {
        out.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return out;
}

json optimizer_json(const OptimizerSettings& o) {
    return {{"kind", enum_name(o.kind, kOptimizers)},
            {"learning_rate", o.learning_rate},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"epsilon", o.epsilon}};
}

void parse_dataset(const json& j, DatasetConfig& d) {
    Section s(j, "dataset");
    std::string source = enum_name(d.source, kSources);
    s.get("source", source);
    d.source = parse_enum("dataset.source", source, kSources);
    s.get("train_size", d.train_size);
    s.get("validation_size", d.validation_size);
    if (s.has("synthetic")) {
        Section syn(s.child("synthetic"), "dataset.synthetic");
        syn.get("classes", d.classes);
        syn.get("dim", d.dim);
        syn.get("spread", d.spread);
        syn.get("separation", d.separation);
        syn.finish();
    }
    if (s.has("idx")) {
        Section idx(s.child("idx"), "dataset.idx");
        idx.get("train_images", d.train_images);
        idx.get("train_labels", d.train_labels);
        idx.get("test_images", d.test_images);
        idx.get("test_labels", d.test_labels);
        idx.get("classes", d.classes);
        idx.finish();
    }
    if (s.has("tabular")) {
        Section tab(s.child("tabular"), "dataset.tabular");
        tab.get("train_path", d.train_path);
        tab.get("test_path", d.test_path);
        std::string delim = std::string(1, d.schema.delimiter);
        tab.get("delimiter", delim);
        if (delim.size() != 1) throw ConfigError("dataset.tabular.delimiter: expected one character");
        d.schema.delimiter = delim[0];
        if (tab.has("columns")) {
            const auto& cols = tab.child("columns");
            if (!cols.is_array()) throw ConfigError("dataset.tabular.columns: expected an array");
            d.schema.columns.clear();
            for (std::size_t i = 0; i < cols.size(); ++i) {
                Section col(cols[i], "dataset.tabular.columns[" + std::to_string(i) + "]");
                ColumnSchema c;
                std::string kind = "numeric";
                col.get("name", c.name);
                col.get("kind", kind);
                c.kind = parse_enum(col.qualified("kind"), kind, kColumnKinds);
                col.finish();
                d.schema.columns.push_back(std::move(c));
            }
        }
        if (tab.has("label_values")) {
            const auto& labels = tab.child("label_values");
            if (!labels.is_array()) throw ConfigError("dataset.tabular.label_values: expected an array");
            d.schema.label_values.clear();
            for (const auto& l : labels) {
                if (!l.is_string()) throw ConfigError("dataset.tabular.label_values: expected strings");
                d.schema.label_values.push_back(l.get<std::string>());
            }
        }
        tab.finish();
    }
    s.finish();
}

}  // namespace

std::string to_string(AttackStrategy s) { return enum_name(s, kStrategies); }
std::string to_string(AggregationRule r) { return enum_name(r, kRules); }

void ExperimentConfig::validate() const {
    const auto& fed = federation;
    if (fed.agents == 0) throw ConfigError("federation.agents must be positive");
    if (fed.per_round == 0 || fed.per_round > fed.agents)
        throw ConfigError("federation.per_round must lie in [1, agents]");
    if (fed.threads == 0) throw ConfigError("federation.threads must be positive");
    if (training.batch_size == 0) throw ConfigError("training.batch_size must be positive");
    if (malicious.agent >= fed.agents) throw ConfigError("attack.agent must be < federation.agents");
    for (std::size_t h : hidden)
        if (h == 0) throw ConfigError("model.hidden: layer widths must be positive");
    if (dataset.source == DataSource::synthetic) {
        if (dataset.classes < 2) throw ConfigError("dataset.synthetic.classes must be >= 2");
        if (dataset.dim == 0) throw ConfigError("dataset.synthetic.dim must be positive");
        if (dataset.train_size == 0 || dataset.validation_size == 0)
            throw ConfigError("synthetic data needs explicit train_size and validation_size");
        if (!(dataset.spread >= 0.0)) throw ConfigError("dataset.synthetic.spread must be >= 0");
    }
    if (dataset.source == DataSource::idx &&
        (dataset.train_images.empty() || dataset.train_labels.empty() ||
         dataset.test_images.empty() || dataset.test_labels.empty()))
        throw ConfigError("dataset.idx needs train_images, train_labels, test_images, test_labels");
    if (dataset.source == DataSource::tabular &&
        (dataset.train_path.empty() || dataset.test_path.empty() || dataset.schema.columns.empty()))
        throw ConfigError("dataset.tabular needs train_path, test_path and columns");
    if (dataset.train_size != 0 && dataset.train_size < fed.agents)
        throw ConfigError("dataset.train_size must be >= federation.agents");
    if (malicious.aux.r == 0) throw ConfigError("attack.aux.r must be >= 1");
    if (malicious.aux.mode == AuxMode::single_source &&
        malicious.aux.source_class == malicious.aux.target_class)
        throw ConfigError("attack.aux: target_class must differ from source_class");
    if (aggregation.rule == AggregationRule::krum &&
        fed.per_round < 2 * aggregation.krum.f + 3)
        throw ConfigError("aggregation: krum needs per_round >= 2*krum_f + 3");
    if (!(stealth.gamma >= 0.0)) throw ConfigError("stealth.gamma must be >= 0");
    if (stealth.kappa && !(*stealth.kappa >= 0.0)) throw ConfigError("stealth.kappa must be >= 0");
    if (stealth.histogram_bins == 0) throw ConfigError("stealth.histogram_bins must be >= 1");
    try {
        malicious.attack.validate();
        training.optimizer.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    {
        Section root(j, "");
        if (root.has("dataset")) parse_dataset(root.child("dataset"), c.dataset);
        if (root.has("model")) {
            Section model(root.child("model"), "model");
            model.get("hidden", c.hidden);
            model.finish();
        }
        if (root.has("federation")) {
            Section fed(root.child("federation"), "federation");
            fed.get("agents", c.federation.agents);
            fed.get("per_round", c.federation.per_round);
            fed.get("rounds", c.federation.rounds);
            fed.get("target_accuracy", c.federation.target_accuracy);
            fed.get("threads", c.federation.threads);
            fed.finish();
        }
        if (root.has("training")) {
            Section tr(root.child("training"), "training");
            tr.get("epochs", c.training.epochs);
            tr.get("batch_size", c.training.batch_size);
            if (tr.has("optimizer"))
                c.training.optimizer =
                    parse_optimizer(tr.child("optimizer"), "training.optimizer", c.training.optimizer);
            tr.finish();
        }
        c.malicious.attack.clip_poison = c.dataset.source != DataSource::synthetic;
        if (root.has("attack")) {
            Section at(root.child("attack"), "attack");
            auto& a = c.malicious.attack;
            std::string strategy = to_string(a.strategy);
            at.get("strategy", strategy);
            a.strategy = parse_enum("attack.strategy", strategy, kStrategies);
            at.get("agent", c.malicious.agent);
            at.get("lambda", a.lambda);
            at.get("rho", a.rho);
            at.get("malicious_epochs", a.malicious_epochs);
            at.get("stealth_steps", a.stealth_steps);
            at.get("malicious_steps", a.malicious_steps);
            at.get("implicit_steps", a.implicit_steps);
            std::string estimation = a.estimation == Estimation::none ? "none" : "previous_step";
            at.get("estimation", estimation);
            a.estimation = parse_enum<Estimation>(
                "attack.estimation", estimation,
                {{"none", Estimation::none}, {"previous_step", Estimation::previous_step}});
            std::string correction = a.correction == Correction::pre ? "pre" : "post";
            at.get("correction", correction);
            a.correction = parse_enum<Correction>("attack.correction", correction,
                                                  {{"pre", Correction::pre}, {"post", Correction::post}});
            at.get("literal_estimate", a.literal_estimate);
            at.get("copies", a.copies);
            at.get("noise_amplitude", a.noise_amplitude);
            at.get("clip_poison", a.clip_poison);
            if (at.has("optimizer"))
                a.optimizer = parse_optimizer(at.child("optimizer"), "attack.optimizer", a.optimizer);
            if (at.has("stealth_optimizer"))
                a.stealth_optimizer = parse_optimizer(at.child("stealth_optimizer"),
                                                      "attack.stealth_optimizer", a.optimizer);
            if (at.has("aux")) {
                Section aux(at.child("aux"), "attack.aux");
                auto& x = c.malicious.aux;
                aux.get("r", x.r);
                aux.get("source_class", x.source_class);
                aux.get("target_class", x.target_class);
                std::string mode = x.mode == AuxMode::single_source ? "single" : "mixed";
                aux.get("mode", mode);
                x.mode = parse_enum<AuxMode>("attack.aux.mode", mode,
                                             {{"single", AuxMode::single_source}, {"mixed", AuxMode::mixed}});
                aux.finish();
            }
            at.finish();
        }
        if (root.has("aggregation")) {
            Section ag(root.child("aggregation"), "aggregation");
            std::string rule = to_string(c.aggregation.rule);
            ag.get("rule", rule);
            c.aggregation.rule = parse_enum("aggregation.rule", rule, kRules);
            ag.get("krum_f", c.aggregation.krum.f);
            ag.get("krum_squared", c.aggregation.krum.squared);
            ag.finish();
        }
        if (root.has("stealth")) {
            Section st(root.child("stealth"), "stealth");
            st.get("gamma", c.stealth.gamma);
            if (st.has("kappa")) {
                double kappa = 0.0;
                st.get("kappa", kappa);
                c.stealth.kappa = kappa;
            }
            st.get("kappa_warmup_rounds", c.stealth.kappa_warmup_rounds);
            st.get("kappa_factor", c.stealth.kappa_factor);
            st.get("histogram_bins", c.stealth.histogram_bins);
            st.get("histogram_range", c.stealth.histogram_range);
            st.finish();
        }
        root.get("seed", c.seed);
        root.get("output_dir", c.output_dir);
        root.finish();
    }
    c.validate();
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json dataset = {{"source", enum_name(c.dataset.source, kSources)},
                    {"train_size", c.dataset.train_size},
                    {"validation_size", c.dataset.validation_size}};
    switch (c.dataset.source) {
        case DataSource::synthetic:
            dataset["synthetic"] = {{"classes", c.dataset.classes},
                                    {"dim", c.dataset.dim},
                                    {"spread", c.dataset.spread},
                                    {"separation", c.dataset.separation}};
            break;
        case DataSource::idx:
            dataset["idx"] = {{"train_images", c.dataset.train_images},
                              {"train_labels", c.dataset.train_labels},
                              {"test_images", c.dataset.test_images},
                              {"test_labels", c.dataset.test_labels},
                              {"classes", c.dataset.classes}};
            break;
        case DataSource::tabular: {
            json cols = json::array();
            for (const auto& col : c.dataset.schema.columns)
                cols.push_back({{"name", col.name}, {"kind", enum_name(col.kind, kColumnKinds)}});
            dataset["tabular"] = {{"train_path", c.dataset.train_path},
                                  {"test_path", c.dataset.test_path},
                                  {"delimiter", std::string(1, c.dataset.schema.delimiter)},
                                  {"columns", cols},
                                  {"label_values", c.dataset.schema.label_values}};
            break;
        }
    }
    const auto& a = c.malicious.attack;
    json attack = {
        {"strategy", to_string(a.strategy)},
        {"agent", c.malicious.agent},
        {"lambda", a.lambda},
        {"rho", a.rho},
        {"malicious_epochs", a.malicious_epochs},
        {"stealth_steps", a.stealth_steps},
        {"malicious_steps", a.malicious_steps},
        {"implicit_steps", a.implicit_steps},
        {"estimation", a.estimation == Estimation::none ? "none" : "previous_step"},
        {"correction", a.correction == Correction::pre ? "pre" : "post"},
        {"literal_estimate", a.literal_estimate},
        {"copies", a.copies},
        {"noise_amplitude", a.noise_amplitude},
        {"clip_poison", a.clip_poison},
        {"optimizer", optimizer_json(a.optimizer)},
        {"aux",
         {{"r", c.malicious.aux.r},
          {"source_class", c.malicious.aux.source_class},
          {"target_class", c.malicious.aux.target_class},
          {"mode", c.malicious.aux.mode == AuxMode::single_source ? "single" : "mixed"}}},
    };
    if (a.stealth_optimizer) attack["stealth_optimizer"] = optimizer_json(*a.stealth_optimizer);

    json stealth = {{"gamma", c.stealth.gamma},
                    {"kappa_warmup_rounds", c.stealth.kappa_warmup_rounds},
                    {"kappa_factor", c.stealth.kappa_factor},
                    {"histogram_bins", c.stealth.histogram_bins},
                    {"histogram_range", c.stealth.histogram_range}};
    stealth["kappa"] = c.stealth.kappa ? json(*c.stealth.kappa) : json(nullptr);

    return {
        {"dataset", dataset},
        {"model", {{"hidden", c.hidden}}},
        {"federation",
         {{"agents", c.federation.agents},
          {"per_round", c.federation.per_round},
          {"rounds", c.federation.rounds},
          {"target_accuracy", c.federation.target_accuracy},
          {"threads", c.federation.threads}}},
        {"training",
         {{"epochs", c.training.epochs},
          {"batch_size", c.training.batch_size},
          {"optimizer", optimizer_json(c.training.optimizer)}}},
        {"attack", attack},
        {"aggregation",
         {{"rule", to_string(c.aggregation.rule)},
          {"krum_f", c.aggregation.krum.f},
          {"krum_squared", c.aggregation.krum.squared}}},
        {"stealth", stealth},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
    };
}

json load_config_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return config_from_json(load_config_json(path));
}

void set_config_value(json& doc, const std::string& dotted, const json& value) {
    if (dotted.empty()) throw ConfigError("empty parameter path");
    json* node = &doc;
    std::stringstream ss(dotted);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("malformed parameter path '" + dotted + "'");
        parts.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object()) throw ConfigError("'" + dotted + "' does not name an object field");
        node = &(*node)[parts[i]];
        if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError("'" + dotted + "' does not name an object field");
    (*node)[parts.back()] = value;
}

}  // namespace fedpoison
