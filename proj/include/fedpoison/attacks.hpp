#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedpoison/datasets.hpp"
#include "fedpoison/nn.hpp"
#include "fedpoison/protocol.hpp"

namespace fedpoison {

enum class AttackStrategy {
    none,
    targeted_explicit,
    targeted_implicit,
    stealthy,
    alternating_min,
    data_poison,
};

enum class Estimation { none, previous_step };
enum class Correction { pre, post };

struct AttackConfig {
    AttackStrategy strategy = AttackStrategy::none;
    double lambda = 10.0;            ///< boosting factor
    double rho = 1e-4;               ///< distance penalty weight
    std::size_t malicious_epochs = 5;  ///< E_m
    /// Stealth-objective steps run after each malicious step (alternating min).
    std::size_t stealth_steps = 10;
    /// Malicious-objective steps per alternating-min epoch.
    std::size_t malicious_steps = 1;
    /// Step budget for implicit boosting; 0 means malicious_epochs.
    std::size_t implicit_steps = 0;
    Estimation estimation = Estimation::none;
    Correction correction = Correction::pre;
    /// Subtract the raw delta_m (not alpha_m * delta_m) in the previous-step estimate.
    bool literal_estimate = false;
    std::size_t copies = 1000;
    double noise_amplitude = 0.05;
    /// Clip noisy copies to [0, 1]. The config parser turns this on for pixel
    /// and tabular sources; synthetic features are unbounded.
    bool clip_poison = false;
    /// Optimizer for every attack objective.
    OptimizerSettings optimizer{OptimizerKind::adam, 0.001};
    /// Optimizer for the stealth (training-loss) part; defaults to `optimizer`.
    std::optional<OptimizerSettings> stealth_optimizer;

    void validate() const;
};

/// lambda * delta.
std::vector<double> boost(std::span<const double> delta, double lambda);

/// E_m optimizer steps on the auxiliary batch (target labels) from `start`,
/// then boost(w - start, lambda).
std::vector<double> targeted_explicit_update(const ModelSpec& spec, std::span<const double> start,
                                             Batch aux_targets, std::size_t steps, double lambda,
                                             const OptimizerSettings& optimizer);

/// d/d(delta) of L(aux; start + alpha_m * delta), which is alpha_m * grad_w L.
GradientVector implicit_gradient(const ModelSpec& spec, std::span<const double> start,
                                 std::span<const double> delta, double alpha_m,
                                 Batch aux_targets);

/// Optimizes delta directly against L(aux; start + alpha_m * delta) starting
/// from delta = 0. No explicit boost.
std::vector<double> targeted_implicit_update(const ModelSpec& spec, std::span<const double> start,
                                             Batch aux_targets, double alpha_m, std::size_t steps,
                                             const OptimizerSettings& optimizer);

/// rho * (delta - ref) / ||delta - ref||; zero when delta == ref.
std::vector<double> distance_penalty_gradient(std::span<const double> delta,
                                              std::span<const double> ref, double rho);

/// Minimizes lambda * L(aux; w) + L(shard; w) + rho * ||w - start - prev_ben_mean||
/// with the mini-batch loop of local_train (plan.epochs = E_m). Returns w - start.
std::vector<double> stealthy_update(const ModelSpec& spec, std::span<const double> start,
                                    std::span<const LabeledSample> shard, Batch aux_targets,
                                    double lambda, double rho,
                                    std::span<const double> prev_ben_mean,
                                    const TrainingPlan& plan, std::uint64_t seed);

struct AlternatingSchedule {
    std::size_t epochs = 10;          ///< E_m
    std::size_t malicious_steps = 1;  ///< per epoch
    std::size_t stealth_steps = 10;   ///< per epoch
    std::size_t batch_size = 10;      ///< stealth mini-batch size
    OptimizerSettings malicious_optimizer{OptimizerKind::adam, 0.001};
    OptimizerSettings stealth_optimizer{OptimizerKind::adam, 0.001};
};

/// Per epoch: minimize the malicious loss from the current w, boost that
/// epoch's increment by lambda, then run the stealth objective (shard loss +
/// rho distance) for stealth_steps mini-batches. Returns final w - start.
std::vector<double> alternating_min_update(const ModelSpec& spec, std::span<const double> start,
                                           std::span<const LabeledSample> shard,
                                           Batch aux_targets, double lambda, double rho,
                                           std::span<const double> prev_ben_mean,
                                           const AlternatingSchedule& schedule,
                                           std::uint64_t seed);

/// What the malicious agent may know: globals at the rounds it was selected
/// and its own past updates.
struct MaliciousState {
    std::optional<std::size_t> last_selected_round;
    std::vector<double> last_update;      ///< delta_m sent at last_selected_round
    ParameterVector last_global;          ///< w_G received at last_selected_round
    double last_alpha = 0.0;              ///< alpha_m at last_selected_round
    std::vector<std::size_t> selected_rounds;
};

/// (w_now - w_last - alpha_m * delta_last) / (t - t_last): the mean per-round
/// benign aggregate since the last selection. Zero before any selection.
std::vector<double> estimate_previous_step(const MaliciousState& state,
                                           std::span<const double> w_now, std::size_t t,
                                           bool literal = false);

using AttackFn = std::function<std::vector<double>(std::span<const double> start)>;

/// pre: run `base` from w_prev + estimate. post: base(w_prev) - lambda * estimate.
std::vector<double> apply_correction(Correction mode, const AttackFn& base,
                                     std::span<const double> w_prev,
                                     std::span<const double> estimate, double lambda);

/// Shard plus `copies` noisy copies of x labeled `target`. Noise is uniform in
/// [0, noise_amplitude] per feature, then clipped to [0, 1] when `clip` is set.
Dataset dirty_label_poison(const Dataset& shard, std::span<const double> x, std::size_t target,
                           std::size_t copies, double noise_amplitude, std::uint64_t seed,
                           bool clip = true);

/// The single adversarial agent, dispatching on AttackConfig::strategy.
class MaliciousAgent : public AgentBehavior {
public:
    MaliciousAgent(Dataset shard, AuxSet aux, AttackConfig config, TrainingPlan benign_plan);

    Update local_update(const RoundContext& ctx) override;
    bool malicious() const override { return true; }

    const MaliciousState& state() const { return state_; }
    /// Estimate used in the most recent selected round (zero if none).
    const std::vector<double>& last_estimate() const { return last_estimate_; }

private:
    std::vector<double> base_attack(const RoundContext& ctx, std::span<const double> start,
                                     std::span<const double> prev_ben_mean);

    Dataset shard_;
    std::vector<LabeledSample> shard_samples_;
    AuxSet aux_;
    std::vector<LabeledSample> aux_targets_;
    AttackConfig config_;
    TrainingPlan benign_plan_;
    MaliciousState state_;
    std::vector<double> last_estimate_;
    std::optional<Dataset> poisoned_;
    std::vector<LabeledSample> poisoned_samples_;
};

}  // namespace fedpoison
