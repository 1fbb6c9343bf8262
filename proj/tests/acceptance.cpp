// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "fedpoison/attacks.hpp"
#include "fedpoison/byzantine.hpp"
#include "fedpoison/errors.hpp"
#include "fedpoison/harness.hpp"
#include "fedpoison/nn.hpp"
#include "fedpoison/protocol.hpp"
#include "fedpoison/random.hpp"

using namespace fedpoison;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("%s  %-28s %s  (%.1fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(double v, int prec = 3) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------
// Desk-scale scenarios

ExperimentConfig desk(AttackStrategy strategy) {
    ExperimentConfig c;  // synthetic blobs, K = k = 10, 40 rounds
    c.malicious.attack.strategy = strategy;
    return c;
}

std::vector<RoundRecord> run(const ExperimentConfig& c) {
    return run_experiment(c, RunOptions{false, false}).records;
}

template <class Pred>
std::size_t count_rounds(const std::vector<RoundRecord>& rs, Pred p) {
    return static_cast<std::size_t>(std::count_if(rs.begin(), rs.end(), p));
}

bool overlaps(const RoundRecord& r) {
    if (std::isnan(r.l2_mal_min)) return false;
    return std::min(r.l2_ben_max, r.l2_mal_max) > std::max(r.l2_ben_min, r.l2_mal_min);
}

double frac(std::size_t n, std::size_t d) { return d ? static_cast<double>(n) / static_cast<double>(d) : 0.0; }

constexpr double kDeskRho = 0.5;

// Shared by three criteria.
std::vector<RoundRecord>& explicit_run() {
    static auto rs = run(desk(AttackStrategy::targeted_explicit));
    return rs;
}
std::vector<RoundRecord>& altmin_run() {
    static auto rs = [] {
        auto c = desk(AttackStrategy::alternating_min);
        c.malicious.attack.rho = kDeskRho;
        return run(c);
    }();
    return rs;
}

// ---------------------------------------------------------------------------

Outcome numerical_core() {
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        ModelSpec spec;
        spec.layer_sizes = {2 + rng.below(5), 2 + rng.below(6), 2 + rng.below(4)};
        ParameterVector w(spec.parameter_count());
        for (auto& v : w) v = 0.5 * rng.normal();
        std::vector<std::vector<double>> xs(1 + rng.below(4), std::vector<double>(spec.input_dim()));
        std::vector<LabeledSample> batch;
        for (auto& x : xs) {
            for (auto& v : x) v = rng.normal();
            batch.push_back({x, rng.below(spec.class_count())});
        }
        const auto g = gradient(spec, w, batch);
        const std::size_t i = rng.below(w.size());
        const double h = 1e-6;
        auto wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        const double fd = (cross_entropy_loss(spec, wp, batch) - cross_entropy_loss(spec, wm, batch)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-7, std::abs(fd) + std::abs(g[i])));
    }

    // Adam, first step: m = (1-b1) g, v = (1-b2) g^2, bias-corrected to g and g^2.
    const OptimizerSettings adam{OptimizerKind::adam, 0.001};
    const std::vector<double> g{0.3, -2.0, 1e-3, 0.0};
    const ParameterVector p{1.0, 2.0, 3.0, 4.0};
    auto [next, st] = optimizer_step(OptimizerState::create(adam, 4), p, g);
    double adam_err = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double mhat = ((1 - 0.9) * g[i]) / (1 - 0.9);
        const double vhat = ((1 - 0.999) * g[i] * g[i]) / (1 - 0.999);
        adam_err = std::max(adam_err, std::abs(next[i] - (p[i] - 0.001 * mhat / (std::sqrt(vhat) + 1e-8))));
    }
    return {worst < 1e-4 && adam_err <= 1e-12,
            "max FD rel err " + fmt(worst) + ", Adam step err " + fmt(adam_err)};
}

Outcome aggregation_oracles() {
    Rng rng(7);
    std::size_t mismatches = 0;
    const std::size_t instances = 1000;
    for (std::size_t trial = 0; trial < instances; ++trial) {
        const std::size_t n = 1 + rng.below(9), dim = 1 + rng.below(16);
        std::vector<std::vector<double>> ups(n, std::vector<double>(dim));
        for (auto& u : ups)
            for (auto& v : u) v = rng.below(4) == 0 ? std::round(rng.normal()) : rng.normal();
        const auto med = coomed(ups);
        for (std::size_t d = 0; d < dim; ++d) {
            std::vector<double> col;
            for (const auto& u : ups) col.push_back(u[d]);
            std::sort(col.begin(), col.end());
            const double want = n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
            if (med[d] != want) ++mismatches;
        }
    }
    const std::vector<std::vector<double>> planted{{0.0}, {0.1}, {0.2}, {0.3}, {10.0}};
    const auto pick = krum_select(planted, {});
    bool rejected = false;
    try {
        krum_select(std::vector<std::vector<double>>(4, std::vector<double>{0.0}), {});
    } catch (const InvalidArgument&) {
        rejected = true;
    }
    return {mismatches == 0 && pick != 4 && rejected,
            std::to_string(mismatches) + " median mismatches in " + std::to_string(instances) +
                " instances, Krum picked " + std::to_string(pick) + ", n=4 f=1 rejected " +
                (rejected ? "yes" : "no")};
}

class Constant : public AgentBehavior {
public:
    explicit Constant(std::vector<double> d) : d_(std::move(d)) {}
    Update local_update(const RoundContext& ctx) override { return {ctx.agent, d_}; }

private:
    std::vector<double> d_;
};

Outcome boosting_identity() {
    Rng rng(3);
    double worst = 0.0;
    for (std::size_t K : {10u, 100u}) {
        std::vector<double> tilde(500);
        for (auto& v : tilde) v = rng.normal();
        std::vector<std::unique_ptr<AgentBehavior>> agents;
        const double alpha = 1.0 / static_cast<double>(K);
        agents.push_back(std::make_unique<Constant>(boost(tilde, 1.0 / alpha)));
        for (std::size_t i = 1; i < K; ++i) agents.push_back(std::make_unique<Constant>(std::vector<double>(500, 0.0)));
        const std::vector<std::size_t> sizes(K, 60);
        std::vector<double> w0(500);
        for (auto& v : w0) v = rng.normal();
        auto [next, out] = run_round(ServerState::create(w0, sizes), ModelSpec{{9, 50}}, agents, {});
        for (std::size_t i = 0; i < 500; ++i) {
            // in ulps of the operands
            const double ulp = 2.220446049250313e-16 * (std::abs(w0[i]) + std::abs(tilde[i]));
            worst = std::max(worst, std::abs(next.global_params[i] - (w0[i] + tilde[i])) / ulp);
        }
    }
    return {worst <= 4.0, "max deviation " + fmt(worst) + " ulp"};
}

Outcome targeted_poisoning() {
    const auto& te = explicit_run();
    const auto base = run(desk(AttackStrategy::none));
    std::size_t first = 0;
    for (const auto& r : te)
        if (r.mal_conf_mean >= 0.9) {
            first = r.t;
            break;
        }
    const double gap = std::abs(base.back().val_acc_global - te.back().val_acc_global);
    return {first != 0 && first <= 10 && gap <= 5.0,
            "conf >= 0.9 first at round " + std::to_string(first) + ", final acc " +
                fmt(te.back().val_acc_global) + " vs benign " + fmt(base.back().val_acc_global)};
}

Outcome detectability() {
    const auto& te = explicit_run();
    const auto& am = altmin_run();
    const double te_f = frac(count_rounds(te, [](const auto& r) { return r.acc_flag == 1; }), te.size());
    const double am_f = frac(count_rounds(am, [](const auto& r) { return r.acc_flag == 1; }), am.size());
    return {te_f >= 0.9 && am_f <= 0.3,
            "accuracy check flags explicit " + fmt(te_f) + ", alt-min " + fmt(am_f)};
}

Outcome distance_stealth() {
    const auto& te = explicit_run();
    const auto& am = altmin_run();
    const double am_o = frac(count_rounds(am, overlaps), am.size());
    const double te_o = frac(count_rounds(te, overlaps), te.size());
    return {am_o >= 0.7 && te_o <= 0.3,
            "range overlap alt-min " + fmt(am_o) + ", explicit " + fmt(te_o)};
}

Outcome data_poisoning() {
    auto c = desk(AttackStrategy::data_poison);
    c.dataset.train_size = 60000;  // 6000-row shards against 1000 copies
    const auto rs = run(c);
    double worst = 0.0;
    for (const auto& r : rs) worst = std::max(worst, r.mal_conf_mean);
    return {worst < 0.5, "max target confidence " + fmt(worst) + " over " + std::to_string(rs.size()) + " rounds"};
}

Outcome byzantine_bypass() {
    auto kc = desk(AttackStrategy::alternating_min);
    kc.malicious.attack.lambda = 2.0;
    kc.malicious.attack.rho = kDeskRho;
    kc.aggregation.rule = AggregationRule::krum;
    const auto kr = run(kc);
    const auto chosen = count_rounds(kr, [](const auto& r) { return r.mal_chosen == 1; });

    auto mc = desk(AttackStrategy::targeted_explicit);
    mc.malicious.attack.lambda = 1.0;
    mc.aggregation.rule = AggregationRule::coomed;
    const auto cm = run(mc);
    const auto confident = count_rounds(cm, [](const auto& r) { return r.mal_conf_mean >= 0.5; });
    const double chance = 100.0 / static_cast<double>(mc.dataset.classes);
    const double acc = cm.back().val_acc_global;

    return {frac(chosen, kr.size()) > 0.5 && frac(confident, cm.size()) > 0.5 && acc >= chance + 20.0,
            "Krum chose malicious " + std::to_string(chosen) + "/" + std::to_string(kr.size()) +
                "; coomed conf >= 0.5 in " + std::to_string(confident) + "/" + std::to_string(cm.size()) +
                ", acc " + fmt(acc)};
}

Outcome estimation() {
    auto c = desk(AttackStrategy::targeted_explicit);
    c.federation.rounds = 10;
    const auto none = run(c);
    c.malicious.attack.estimation = Estimation::previous_step;
    c.malicious.attack.correction = Correction::pre;
    const auto pre = run(c);
    c.malicious.attack.correction = Correction::post;
    const auto post = run(c);

    bool monotone = true;
    std::string detail = "rounds 2-4 none/pre:";
    for (std::size_t t = 2; t <= 4; ++t) {
        monotone = monotone && pre[t - 1].mal_conf_mean >= none[t - 1].mal_conf_mean;
        detail += " " + fmt(none[t - 1].mal_conf_mean) + "/" + fmt(pre[t - 1].mal_conf_mean);
    }
    const bool post_worse = post.back().mal_conf_mean < pre.back().mal_conf_mean;
    detail += "; final pre " + fmt(pre.back().mal_conf_mean) + " post " + fmt(post.back().mal_conf_mean);
    return {monotone && post_worse, detail};
}

Outcome implicit_vs_explicit() {
    auto c = desk(AttackStrategy::targeted_explicit);
    c.federation.rounds = 20;
    const auto ex = run(c);
    c.malicious.attack.strategy = AttackStrategy::targeted_implicit;
    c.malicious.attack.implicit_steps = c.malicious.attack.malicious_epochs;
    const auto im = run(c);
    auto hit = [](const auto& r) { return r.mal_targets_hit_frac == 1.0; };
    const auto ne = count_rounds(ex, hit), ni = count_rounds(im, hit);
    return {ni < ne, "objective met in " + std::to_string(ni) + " implicit vs " + std::to_string(ne) +
                         " explicit rounds of " + std::to_string(ex.size())};
}

Outcome determinism() {
    const auto root = std::filesystem::temp_directory_path() / "fedpoison_acceptance_det";
    std::filesystem::remove_all(root);
    bool same = true;
    std::string detail;
    for (auto strategy : {AttackStrategy::alternating_min, AttackStrategy::data_poison}) {
        auto c = desk(strategy);
        c.federation.rounds = 5;
        c.malicious.attack.rho = kDeskRho;
        emit_metrics(run_experiment(c), c, root / "a");
        c.federation.threads = 4;
        emit_metrics(run_experiment(c), c, root / "b");
        std::ifstream fa(root / "a" / "metrics.csv"), fb(root / "b" / "metrics.csv");
        const std::string a{std::istreambuf_iterator<char>(fa), {}}, b{std::istreambuf_iterator<char>(fb), {}};
        same = same && !a.empty() && a == b;
        detail += to_string(strategy) + (a == b ? " identical " : " DIFFERS ") + "(" +
                  std::to_string(a.size()) + " bytes); ";
    }
    std::filesystem::remove_all(root);
    return {same, detail};
}

}  // namespace

int main() {
    report("numerical-core", numerical_core);
    report("aggregation-oracles", aggregation_oracles);
    report("boosting-identity", boosting_identity);
    report("targeted-poisoning", targeted_poisoning);
    report("detectability", detectability);
    report("distance-stealth", distance_stealth);
    report("data-poisoning-contrast", data_poisoning);
    report("byzantine-bypass", byzantine_bypass);
    report("estimation", estimation);
    report("implicit-vs-explicit", implicit_vs_explicit);
    report("determinism", determinism);
    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
