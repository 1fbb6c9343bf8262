#include "fedpoison/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "fedpoison/errors.hpp"
#include "fedpoison/random.hpp"

namespace fedpoison {

void TrainingPlan::validate(std::size_t shard_size) const {
    if (batch_size == 0) throw InvalidArgument("training plan: batch size must be positive");
    if (batch_size > shard_size)
        throw InvalidArgument("training plan: batch size " + std::to_string(batch_size) +
                              " exceeds shard size " + std::to_string(shard_size));
    optimizer.validate();
}

ServerState ServerState::create(ParameterVector initial, std::span<const std::size_t> shard_sizes) {
    if (shard_sizes.empty()) throw InvalidArgument("server: no agents");
    const double total = static_cast<double>(
        std::accumulate(shard_sizes.begin(), shard_sizes.end(), std::size_t{0}));
    if (total == 0.0) throw InvalidArgument("server: all shards empty");
    ServerState state;
    state.global_params = std::move(initial);
    state.history.push_back(state.global_params);
    for (std::size_t l : shard_sizes) state.alphas.push_back(static_cast<double>(l) / total);
    return state;
}

std::vector<std::size_t> select_agents(std::size_t K, std::size_t k, std::size_t round,
                                       std::uint64_t seed) {
    if (k == 0) throw InvalidArgument("select_agents: k must be positive");
    if (k > K)
        throw InvalidArgument("select_agents: k=" + std::to_string(k) + " exceeds K=" +
                              std::to_string(K));
    std::vector<std::size_t> all(K);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (k == K) return all;
    Rng rng(derive_seed(seed, 0, round, StreamPurpose::agent_selection));
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(K - i));
        std::swap(all[i], all[j]);
    }
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
}

std::uint64_t batch_order_seed(std::uint64_t master, std::size_t agent, std::size_t round) {
    return derive_seed(master, agent, round, StreamPurpose::batch_order);
}

ParameterVector local_train(const ModelSpec& spec, std::span<const double> start,
                            std::span<const LabeledSample> samples, const TrainingPlan& plan,
                            std::uint64_t seed, const GradientHook& extra) {
    if (samples.empty()) throw InvalidArgument("local training: empty shard");
    plan.validate(samples.size());
    ParameterVector w(start.begin(), start.end());
    if (plan.epochs == 0) return w;

    auto opt = OptimizerState::create(plan.optimizer, w.size());
    std::vector<std::size_t> order(samples.size());
    std::vector<LabeledSample> batch;
    GradientVector grad;
    for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(seed, 0, epoch, StreamPurpose::batch_order));
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t begin = 0; begin < order.size(); begin += plan.batch_size) {
            const std::size_t end = std::min(order.size(), begin + plan.batch_size);
            batch.clear();
            for (std::size_t i = begin; i < end; ++i) batch.push_back(samples[order[i]]);
            const double loss = loss_and_gradient(spec, w, batch, grad);
            if (!std::isfinite(loss))
                throw TrainingError("local training diverged (non-finite loss) in epoch " +
                                    std::to_string(epoch));
            if (extra) extra(w, grad);
            try {
                apply_optimizer(opt, w, grad);
            } catch (const NumericalError& e) {
                throw TrainingError(std::string("local training diverged: ") + e.what());
            }
        }
    }
    return w;
}

Update benign_local_update(const ModelSpec& spec, std::span<const double> w_global,
                           std::span<const LabeledSample> shard, const TrainingPlan& plan,
                           std::uint64_t seed, std::size_t agent) {
    const auto w = local_train(spec, w_global, shard, plan, seed);
    return {agent, vec::sub(w, w_global)};
}

std::vector<double> weighted_average(std::span<const Update> updates,
                                     std::span<const double> alphas) {
    if (updates.empty()) throw InvalidArgument("weighted_average: no updates");
    if (updates.size() != alphas.size())
        throw InvalidArgument("weighted_average: " + std::to_string(updates.size()) +
                              " updates but " + std::to_string(alphas.size()) + " weights");
    std::vector<double> out(updates.front().delta.size(), 0.0);
    for (std::size_t i = 0; i < updates.size(); ++i) {
        if (updates[i].delta.size() != out.size())
            throw InvalidArgument("weighted_average: update length mismatch");
        vec::axpy(alphas[i], updates[i].delta, out);
    }
    return out;
}

BenignAgent::BenignAgent(std::vector<LabeledSample> shard, TrainingPlan plan)
    : shard_(std::move(shard)), plan_(std::move(plan)) {}

Update BenignAgent::local_update(const RoundContext& ctx) {
    return benign_local_update(*ctx.spec, ctx.global_params, shard_, plan_,
                               batch_order_seed(ctx.master_seed, ctx.agent, ctx.round), ctx.agent);
}

std::pair<ServerState, RoundOutcome> run_round(ServerState state, const ModelSpec& spec,
                                               std::span<const std::unique_ptr<AgentBehavior>> agents,
                                               const RoundOptions& options) {
    const std::size_t K = agents.size();
    if (K == 0) throw InvalidArgument("run_round: no agents");
    if (state.alphas.size() != K)
        throw InvalidArgument("run_round: server knows " + std::to_string(state.alphas.size()) +
                              " agents, got " + std::to_string(K) + " behaviors");
    const std::size_t k = options.clients_per_round == 0 ? K : options.clients_per_round;

    RoundOutcome outcome;
    outcome.round = state.round;
    outcome.selected = select_agents(K, k, state.round, options.master_seed);
    for (std::size_t a : outcome.selected)
        if (!agents[a]) throw InvalidArgument("run_round: agent " + std::to_string(a) + " has no behavior");

    double alpha_sum = 0.0;
    for (std::size_t a : outcome.selected) alpha_sum += state.alphas[a];
    for (std::size_t a : outcome.selected) outcome.alphas.push_back(state.alphas[a] / alpha_sum);

    const std::size_t n = outcome.selected.size();
    outcome.updates.resize(n);
    std::vector<std::exception_ptr> failures(n);
    auto work = [&](std::size_t pos) {
        const std::size_t a = outcome.selected[pos];
        RoundContext ctx{&spec, state.round, a, state.global_params, outcome.alphas[pos],
                         options.master_seed};
        try {
            outcome.updates[pos] = agents[a]->local_update(ctx);
            outcome.updates[pos].agent = a;
            if (outcome.updates[pos].delta.size() != state.global_params.size())
                throw TrainingError("update has wrong length");
            if (!vec::all_finite(outcome.updates[pos].delta))
                throw TrainingError("update has non-finite entries");
        } catch (...) {
            failures[pos] = std::current_exception();
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, n));
    if (threads == 1) {
        for (std::size_t pos = 0; pos < n; ++pos) work(pos);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t pos = next++; pos < n; pos = next++) work(pos);
            });
    }

    for (std::size_t pos = 0; pos < n; ++pos) {
        if (!failures[pos]) continue;
        const std::string where = "round " + std::to_string(state.round) + ", agent " +
                                  std::to_string(outcome.selected[pos]) + ": ";
        try {
            std::rethrow_exception(failures[pos]);
        } catch (const std::exception& e) {
            throw TrainingError(where + e.what());
        }
    }

    switch (options.aggregation.rule) {
        case AggregationRule::avg:
            outcome.aggregate = weighted_average(outcome.updates, outcome.alphas);
            break;
        case AggregationRule::krum: {
            std::vector<std::vector<double>> deltas;
            for (const auto& u : outcome.updates) deltas.push_back(u.delta);
            const std::size_t pos = krum_select(deltas, options.aggregation.krum);
            outcome.krum_chosen = outcome.selected[pos];
            outcome.aggregate = outcome.updates[pos].delta;
            break;
        }
        case AggregationRule::coomed: {
            std::vector<std::vector<double>> deltas;
            for (const auto& u : outcome.updates) deltas.push_back(u.delta);
            outcome.aggregate = coomed(deltas);
            break;
        }
    }

    vec::axpy(1.0, outcome.aggregate, state.global_params);
    ++state.round;
    state.history.push_back(state.global_params);
    return {std::move(state), std::move(outcome)};
}

bool early_stop(double accuracy_pct, std::size_t rounds_done, double target_pct,
                std::size_t max_rounds) {
    return accuracy_pct >= target_pct || rounds_done >= max_rounds;
}

}  // namespace fedpoison
