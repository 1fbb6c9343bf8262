#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedpoison/config.hpp"
#include "fedpoison/errors.hpp"
#include "fedpoison/harness.hpp"
#include "test_util.hpp"

using namespace fedpoison;

namespace {

ExperimentConfig small(std::size_t rounds) {
    ExperimentConfig c;
    c.dataset.train_size = 200;
    c.dataset.validation_size = 100;
    c.dataset.dim = 8;
    c.dataset.classes = 10;
    c.hidden = {16};
    c.federation.rounds = rounds;
    c.training.epochs = 1;
    c.training.batch_size = 5;
    c.stealth.histogram_bins = 8;
    c.validate();
    return c;
}

std::size_t count_lines(const std::string& s) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("prepare_data: sizes, shards and aux") {
    const auto c = small(1);
    const auto d = prepare_data(c);
    CHECK(d.train.size() == 200);
    CHECK(d.validation.size() == 100);
    CHECK(d.shards.size() == 10);
    for (const auto& s : d.shards) CHECK(s.size() == 20);
    REQUIRE(d.aux.size() == 1);
    CHECK(d.aux.entries[0].true_label == 5);
    CHECK(d.aux.entries[0].target_label == 7);
    CHECK(d.spec.layer_sizes == std::vector<std::size_t>{8, 16, 10});
    // The aux sample is not a validation row.
    for (std::size_t i = 0; i < d.validation.size(); ++i) {
        const auto f = d.validation.features(i);
        CHECK_FALSE(std::equal(f.begin(), f.end(), d.aux.entries[0].x.begin()));
    }
}

TEST_CASE("rounds=0 gives no records and the initial weights") {
    auto c = small(0);
    const auto r = run_experiment(c);
    CHECK(r.records.empty());
    CHECK(r.final_params == r.initial_params);
}

TEST_CASE("benign run: record fields are in range") {
    auto c = small(4);
    const auto r = run_experiment(c);
    REQUIRE(r.records.size() == 4);
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        const auto& rec = r.records[i];
        CHECK(rec.t == i + 1);
        CHECK(rec.val_acc_global >= 0.0);
        CHECK(rec.val_acc_global <= 100.0);
        CHECK(rec.mal_conf_mean >= 0.0);
        CHECK(rec.mal_conf_mean <= 1.0);
        CHECK(rec.l2_ben_min <= rec.l2_ben_max);
        CHECK(rec.krum_chosen_agent == -1);
        CHECK(rec.mal_chosen == 1);
    }
    CHECK(r.kappa > 0.0);
}

TEST_CASE("early stop keeps the stopping round") {
    auto c = small(10);
    c.federation.target_accuracy = 0.0;
    CHECK(run_experiment(c).records.size() == 1);
}

TEST_CASE("determinism: byte-identical outputs, thread count irrelevant") {
    auto c = small(3);
    c.malicious.attack.strategy = AttackStrategy::alternating_min;
    c.malicious.attack.rho = 0.5;
    testutil::TempDir dir;
    emit_metrics(run_experiment(c), c, dir / "a");
    emit_metrics(run_experiment(c), c, dir / "b");
    c.federation.threads = 3;
    emit_metrics(run_experiment(c), c, dir / "c");
    for (const char* f : {"metrics.csv", "histograms.csv", "final_weights.bin"}) {
        const auto a = testutil::read_file(dir / "a" / f);
        CHECK(!a.empty());
        CHECK(a == testutil::read_file(dir / "b" / f));
        CHECK(a == testutil::read_file(dir / "c" / f));
    }
    c.seed = 2;
    emit_metrics(run_experiment(c), c, dir / "d");
    CHECK(testutil::read_file(dir / "a" / "metrics.csv") != testutil::read_file(dir / "d" / "metrics.csv"));
}

TEST_CASE("emit_metrics: schema, round trip, config, weights") {
    auto c = small(3);
    c.malicious.attack.strategy = AttackStrategy::targeted_explicit;
    testutil::TempDir dir;
    const auto r = run_experiment(c);
    emit_metrics(r, c, dir.path());

    const auto text = testutil::read_file(dir / "metrics.csv");
    CHECK(count_lines(text) == 4);
    CHECK(text.substr(0, text.find('\n')) ==
          "t,val_acc_global,mal_conf_mean,mal_targets_hit_frac,val_acc_mal_local,acc_flag,acc_gap,"
          "dist_flag,dist_deviation,l2_ben_min,l2_ben_max,l2_mal_min,l2_mal_max,krum_chosen_agent,"
          "mal_chosen");
    CHECK(read_metrics_csv(dir / "metrics.csv") == r.records);
    CHECK(read_weights(dir / "final_weights.bin") == r.final_params);

    const auto resolved = load_config(dir / "config.json");
    REQUIRE(resolved.stealth.kappa.has_value());
    CHECK(*resolved.stealth.kappa == r.kappa);
    CHECK(resolved.seed == c.seed);

    const auto hist = read_histograms_csv(dir / "histograms.csv");
    CHECK(hist.size() == 3 * 10);
    for (const auto& h : hist) {
        std::size_t total = 0;
        for (auto n : h.counts) total += n;
        CHECK(total == r.final_params.size());
        CHECK(h.counts.size() == 8 + 2);
        CHECK(h.malicious == (h.agent == 0));
    }
    for (const auto& e : std::filesystem::directory_iterator(dir.path()))
        CHECK(e.path().extension() != ".tmp");
}

TEST_CASE("format_double") {
    CHECK(format_double(std::nan("")) == "nan");
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(-3.0) == "-3");
    CHECK(std::stod(format_double(1e-300)) == 1e-300);
    for (double v : {0.123456789012, 1.234567891e-300, 97.123456, 2.0 / 3.0}) {
        const auto s = format_double(v);
        CHECK(std::stod(s) == v);
        std::size_t digits = 0;
        for (char ch : s.substr(0, s.find('e')))
            if (std::isdigit(static_cast<unsigned char>(ch))) ++digits;
        CHECK(digits >= 6);
    }
}

TEST_CASE("read_metrics_csv rejects malformed files") {
    testutil::TempDir dir;
    testutil::write_file(dir / "bad.csv", "t,val\n1,2\n");
    CHECK_THROWS_AS(read_metrics_csv(dir / "bad.csv"), FormatError);
    CHECK_THROWS(read_metrics_csv(dir / "missing.csv"));
    testutil::write_file(dir / "w.bin", "FPWT");
    CHECK_THROWS(read_weights(dir / "w.bin"));
}

TEST_CASE("estimate equals the previous round's benign aggregate when always selected") {
    auto c = small(5);
    c.malicious.attack.strategy = AttackStrategy::targeted_explicit;
    c.malicious.attack.estimation = Estimation::previous_step;
    const auto r = run_experiment(c, RunOptions{true, false});
    REQUIRE(r.estimates.size() == 5);
    for (double v : r.estimates[0]) CHECK(v == 0.0);
    for (std::size_t t = 1; t < 5; ++t) {
        REQUIRE(r.estimates[t].size() == r.benign_aggregates[t - 1].size());
        double worst = 0.0;
        for (std::size_t i = 0; i < r.estimates[t].size(); ++i)
            worst = std::max(worst, std::abs(r.estimates[t][i] - r.benign_aggregates[t - 1][i]));
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("benign rounds: calibrated kappa false-positive rate <= 10% over 60 rounds") {
    ExperimentConfig c;
    c.federation.rounds = 60;
    const auto r = run_experiment(c, RunOptions{false, false});
    REQUIRE(r.records.size() == 60);
    std::size_t flagged = 0;
    for (const auto& rec : r.records) flagged += rec.dist_flag == 1;
    MESSAGE("kappa " << r.kappa << ", flagged " << flagged << "/60");
    CHECK(flagged <= 6);
}
