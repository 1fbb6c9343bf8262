#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedpoison/byzantine.hpp"
#include "fedpoison/nn.hpp"

namespace fedpoison {

/// Local training schedule of one agent: E epochs of mini-batches of size B.
struct TrainingPlan {
    std::size_t epochs = 5;
    std::size_t batch_size = 10;
    OptimizerSettings optimizer{OptimizerKind::sgd, 0.1};

    void validate(std::size_t shard_size) const;
};

/// delta_i = w_i - w_G sent by agent i.
struct Update {
    std::size_t agent = 0;
    std::vector<double> delta;
};

struct ServerState {
    std::size_t round = 0;
    ParameterVector global_params;
    /// w_G^0 .. w_G^round.
    std::vector<ParameterVector> history;
    /// alpha_i = l_i / l over all K agents.
    std::vector<double> alphas;

    static ServerState create(ParameterVector initial, std::span<const std::size_t> shard_sizes);
};

/// k distinct agents out of K, ascending. Deterministic in (seed, round);
/// returns every agent when k == K.
std::vector<std::size_t> select_agents(std::size_t K, std::size_t k, std::size_t round,
                                       std::uint64_t seed);

/// Adds extra objective terms to a mini-batch gradient, given the current
/// weights. Used by the attacks to bolt penalties onto the shared loop.
using GradientHook = std::function<void(std::span<const double> w, GradientVector& grad)>;

/// Runs plan.epochs epochs of mini-batch training from `start` over `samples`
/// and returns the final weights. Batch order is a seeded shuffle per epoch.
ParameterVector local_train(const ModelSpec& spec, std::span<const double> start,
                            std::span<const LabeledSample> samples, const TrainingPlan& plan,
                            std::uint64_t seed, const GradientHook& extra = {});

/// Benign behavior: train on the shard from w_G, report w_local - w_G.
Update benign_local_update(const ModelSpec& spec, std::span<const double> w_global,
                           std::span<const LabeledSample> shard, const TrainingPlan& plan,
                           std::uint64_t seed, std::size_t agent = 0);

/// sum_i alpha_i delta_i.
std::vector<double> weighted_average(std::span<const Update> updates,
                                     std::span<const double> alphas);

enum class AggregationRule { avg, krum, coomed };

struct AggregationConfig {
    AggregationRule rule = AggregationRule::avg;
    KrumConfig krum;
};

/// What an agent gets to see when asked for an update.
struct RoundContext {
    const ModelSpec* spec = nullptr;
    std::size_t round = 0;
    std::size_t agent = 0;
    std::span<const double> global_params;
    /// This agent's aggregation weight among the selected agents.
    double alpha = 0.0;
    std::uint64_t master_seed = 0;
};

class AgentBehavior {
public:
    virtual ~AgentBehavior() = default;
    virtual Update local_update(const RoundContext& ctx) = 0;
    virtual bool malicious() const { return false; }
};

class BenignAgent : public AgentBehavior {
public:
    BenignAgent(std::vector<LabeledSample> shard, TrainingPlan plan);
    Update local_update(const RoundContext& ctx) override;

private:
    std::vector<LabeledSample> shard_;
    TrainingPlan plan_;
};

/// Per-(agent, round) seed for batch ordering, shared by benign and attack code.
std::uint64_t batch_order_seed(std::uint64_t master, std::size_t agent, std::size_t round);

struct RoundOutcome {
    std::size_t round = 0;
    std::vector<std::size_t> selected;
    std::vector<Update> updates;  ///< ordered like `selected`
    std::vector<double> alphas;   ///< renormalized over `selected`
    std::vector<double> aggregate;
    std::optional<std::size_t> krum_chosen;  ///< agent index, Krum only
};

struct RoundOptions {
    std::size_t clients_per_round = 0;  ///< k; 0 means all agents
    AggregationConfig aggregation;
    std::uint64_t master_seed = 0;
    std::size_t threads = 1;
};

/// One synchronous round: select, collect updates (possibly concurrently),
/// aggregate, advance w_G. Agent failures abort with the round and agent named.
std::pair<ServerState, RoundOutcome> run_round(ServerState state, const ModelSpec& spec,
                                               std::span<const std::unique_ptr<AgentBehavior>> agents,
                                               const RoundOptions& options);

/// True once accuracy reaches the target or `rounds_done` hits the cap.
bool early_stop(double accuracy_pct, std::size_t rounds_done, double target_pct,
                std::size_t max_rounds);

}  // namespace fedpoison
