#include "fedpoison/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedpoison/errors.hpp"
#include "fedpoison/random.hpp"

namespace fedpoison {

void AttackConfig::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
        throw InvalidArgument("attack: lambda must be positive and finite");
    if (!(rho >= 0.0) || !std::isfinite(rho))
        throw InvalidArgument("attack: rho must be non-negative and finite");
    if (!(noise_amplitude >= 0.0)) throw InvalidArgument("attack: noise amplitude must be >= 0");
    if (strategy == AttackStrategy::alternating_min && malicious_steps == 0)
        throw InvalidArgument("attack: alternating minimization needs malicious_steps >= 1");
    optimizer.validate();
    if (stealth_optimizer) stealth_optimizer->validate();
}

std::vector<double> boost(std::span<const double> delta, double lambda) {
    if (!(lambda > 0.0)) throw InvalidArgument("boost: lambda must be positive");
    return vec::scaled(delta, lambda);
}

namespace {

void require_aux(Batch aux) {
    if (aux.empty()) throw InvalidArgument("attack: auxiliary set is empty");
}

void step_or_diverge(OptimizerState& opt, std::span<double> w, const GradientVector& grad,
                     double loss, const char* who) {
    if (!std::isfinite(loss))
        throw TrainingError(std::string(who) + ": diverged (non-finite loss)");
    try {
        apply_optimizer(opt, w, grad);
    } catch (const NumericalError& e) {
        throw TrainingError(std::string(who) + ": " + e.what());
    }
}

}  // namespace

std::vector<double> targeted_explicit_update(const ModelSpec& spec, std::span<const double> start,
                                             Batch aux_targets, std::size_t steps, double lambda,
                                             const OptimizerSettings& optimizer) {
    require_aux(aux_targets);
    ParameterVector w(start.begin(), start.end());
    auto opt = OptimizerState::create(optimizer, w.size());
    GradientVector grad;
    for (std::size_t s = 0; s < steps; ++s) {
        const double loss = loss_and_gradient(spec, w, aux_targets, grad);
        step_or_diverge(opt, w, grad, loss, "targeted explicit");
    }
    return boost(vec::sub(w, start), lambda);
}

GradientVector implicit_gradient(const ModelSpec& spec, std::span<const double> start,
                                 std::span<const double> delta, double alpha_m,
                                 Batch aux_targets) {
    ParameterVector w(start.begin(), start.end());
    vec::axpy(alpha_m, delta, w);
    auto grad = gradient(spec, w, aux_targets);
    for (double& g : grad) g *= alpha_m;
    return grad;
}

std::vector<double> targeted_implicit_update(const ModelSpec& spec, std::span<const double> start,
                                             Batch aux_targets, double alpha_m, std::size_t steps,
                                             const OptimizerSettings& optimizer) {
    require_aux(aux_targets);
    if (!(alpha_m > 0.0 && alpha_m <= 1.0))
        throw InvalidArgument("targeted implicit: alpha_m must lie in (0, 1]");
    std::vector<double> delta(start.size(), 0.0);
    auto opt = OptimizerState::create(optimizer, delta.size());
    ParameterVector w(start.size());
    GradientVector grad;
    for (std::size_t s = 0; s < steps; ++s) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = start[i] + alpha_m * delta[i];
        const double loss = loss_and_gradient(spec, w, aux_targets, grad);
        for (double& g : grad) g *= alpha_m;  // chain rule through w = start + alpha_m * delta
        step_or_diverge(opt, delta, grad, loss, "targeted implicit");
    }
    return delta;
}

std::vector<double> distance_penalty_gradient(std::span<const double> delta,
                                              std::span<const double> ref, double rho) {
    auto diff = vec::sub(delta, ref);
    const double norm = vec::norm2(diff);
    if (norm == 0.0 || rho == 0.0) return std::vector<double>(delta.size(), 0.0);
    for (double& d : diff) d *= rho / norm;
    return diff;
}

namespace {

/// Adds rho * d||w - start - ref||/dw to grad.
void add_distance_penalty(std::span<const double> w, std::span<const double> start,
                          std::span<const double> ref, double rho, GradientVector& grad) {
    if (rho == 0.0) return;
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = (w[i] - start[i]) - ref[i];
        sq += d * d;
    }
    if (sq == 0.0) return;
    const double scale = rho / std::sqrt(sq);
    for (std::size_t i = 0; i < w.size(); ++i) grad[i] += scale * ((w[i] - start[i]) - ref[i]);
}

std::vector<double> reference_or_zero(std::span<const double> ref, std::size_t n) {
    if (ref.empty()) return std::vector<double>(n, 0.0);
    if (ref.size() != n) throw InvalidArgument("attack: benign mean has wrong length");
    return {ref.begin(), ref.end()};
}

}  // namespace

std::vector<double> stealthy_update(const ModelSpec& spec, std::span<const double> start,
                                    std::span<const LabeledSample> shard, Batch aux_targets,
                                    double lambda, double rho,
                                    std::span<const double> prev_ben_mean,
                                    const TrainingPlan& plan, std::uint64_t seed) {
    const auto ref = reference_or_zero(prev_ben_mean, start.size());
    GradientVector aux_grad;
    GradientHook hook = [&](std::span<const double> w, GradientVector& grad) {
        if (lambda != 0.0 && !aux_targets.empty()) {
            const double loss = loss_and_gradient(spec, w, aux_targets, aux_grad);
            if (!std::isfinite(loss)) throw TrainingError("stealthy: diverged on auxiliary loss");
            vec::axpy(lambda, aux_grad, grad);
        }
        add_distance_penalty(w, start, ref, rho, grad);
    };
    const auto w = local_train(spec, start, shard, plan, seed, hook);
    return vec::sub(w, start);
}

std::vector<double> alternating_min_update(const ModelSpec& spec, std::span<const double> start,
                                           std::span<const LabeledSample> shard,
                                           Batch aux_targets, double lambda, double rho,
                                           std::span<const double> prev_ben_mean,
                                           const AlternatingSchedule& schedule,
                                           std::uint64_t seed) {
    require_aux(aux_targets);
    if (schedule.stealth_steps > 0) {
        if (shard.empty()) throw InvalidArgument("alternating min: empty shard");
        if (schedule.batch_size == 0 || schedule.batch_size > shard.size())
            throw InvalidArgument("alternating min: batch size must lie in [1, shard size]");
    }
    const auto ref = reference_or_zero(prev_ben_mean, start.size());

    ParameterVector w(start.begin(), start.end());
    auto mal_opt = OptimizerState::create(schedule.malicious_optimizer, w.size());
    auto stealth_opt = OptimizerState::create(schedule.stealth_optimizer, w.size());
    GradientVector grad;
    ParameterVector probe(w.size());

    std::vector<std::size_t> order(shard.size());
    std::size_t cursor = order.size();
    std::size_t reshuffles = 0;
    std::vector<LabeledSample> batch;

    for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        // Malicious objective from the current weights, then boost the increment.
        probe = w;
        for (std::size_t s = 0; s < schedule.malicious_steps; ++s) {
            const double loss = loss_and_gradient(spec, probe, aux_targets, grad);
            step_or_diverge(mal_opt, probe, grad, loss, "alternating min (malicious)");
        }
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += lambda * (probe[i] - w[i]);

        // Stealth objective: training loss on the shard plus the distance penalty.
        for (std::size_t s = 0; s < schedule.stealth_steps; ++s) {
            if (cursor + schedule.batch_size > order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                Rng rng(derive_seed(seed, 0, reshuffles++, StreamPurpose::batch_order));
                rng.shuffle(std::span<std::size_t>(order));
                cursor = 0;
            }
            batch.clear();
            for (std::size_t i = 0; i < schedule.batch_size; ++i) batch.push_back(shard[order[cursor++]]);
            const double loss = loss_and_gradient(spec, w, batch, grad);
            add_distance_penalty(w, start, ref, rho, grad);
            step_or_diverge(stealth_opt, w, grad, loss, "alternating min (stealth)");
        }
    }
    return vec::sub(w, start);
}

std::vector<double> estimate_previous_step(const MaliciousState& state,
                                           std::span<const double> w_now, std::size_t t,
                                           bool literal) {
    if (!state.last_selected_round) return std::vector<double>(w_now.size(), 0.0);
    const std::size_t t_last = *state.last_selected_round;
    if (t == t_last) throw InvalidArgument("estimate_previous_step: t equals last selection round");
    if (t < t_last) throw InvalidArgument("estimate_previous_step: t precedes last selection");
    const double own_weight = literal ? 1.0 : state.last_alpha;
    auto est = vec::sub(w_now, state.last_global);
    vec::axpy(-own_weight, state.last_update, est);
    const double inv = 1.0 / static_cast<double>(t - t_last);
    for (double& v : est) v *= inv;
    return est;
}

std::vector<double> apply_correction(Correction mode, const AttackFn& base,
                                     std::span<const double> w_prev,
                                     std::span<const double> estimate, double lambda) {
    if (mode == Correction::pre) return base(vec::add(w_prev, estimate));
    auto delta = base(w_prev);
    vec::axpy(-lambda, estimate, delta);
    return delta;
}

Dataset dirty_label_poison(const Dataset& shard, std::span<const double> x, std::size_t target,
                           std::size_t copies, double noise_amplitude, std::uint64_t seed,
                           bool clip) {
    if (x.size() != shard.dim()) throw InvalidArgument("dirty_label_poison: sample has wrong length");
    Dataset out = shard;
    Rng rng(seed);
    std::vector<double> copy(x.size());
    for (std::size_t c = 0; c < copies; ++c) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double noise = noise_amplitude > 0.0 ? rng.uniform(0.0, noise_amplitude) : 0.0;
            copy[i] = clip && noise_amplitude > 0.0 ? std::clamp(x[i] + noise, 0.0, 1.0) : x[i] + noise;
        }
        out.add(copy, target);
    }
    return out;
}

// ---------------------------------------------------------------------------

MaliciousAgent::MaliciousAgent(Dataset shard, AuxSet aux, AttackConfig config,
                               TrainingPlan benign_plan)
    : shard_(std::move(shard)),
      aux_(std::move(aux)),
      config_(std::move(config)),
      benign_plan_(std::move(benign_plan)) {
    config_.validate();
    shard_samples_ = shard_.samples();
    aux_targets_ = aux_.target_batch();
}

std::vector<double> MaliciousAgent::base_attack(const RoundContext& ctx,
                                                std::span<const double> start,
                                                std::span<const double> prev_ben_mean) {
    const auto& spec = *ctx.spec;
    const auto seed = batch_order_seed(ctx.master_seed, ctx.agent, ctx.round);
    const auto stealth_opt = config_.stealth_optimizer.value_or(config_.optimizer);
    switch (config_.strategy) {
        case AttackStrategy::none:
            return benign_local_update(spec, start, shard_samples_, benign_plan_, seed).delta;
        case AttackStrategy::targeted_explicit:
            return targeted_explicit_update(spec, start, aux_targets_, config_.malicious_epochs,
                                            config_.lambda, config_.optimizer);
        case AttackStrategy::targeted_implicit:
            return targeted_implicit_update(
                spec, start, aux_targets_, ctx.alpha,
                config_.implicit_steps == 0 ? config_.malicious_epochs : config_.implicit_steps,
                config_.optimizer);
        case AttackStrategy::stealthy: {
            TrainingPlan plan{config_.malicious_epochs, benign_plan_.batch_size, stealth_opt};
            return stealthy_update(spec, start, shard_samples_, aux_targets_, config_.lambda,
                                   config_.rho, prev_ben_mean, plan, seed);
        }
        case AttackStrategy::alternating_min: {
            AlternatingSchedule schedule{config_.malicious_epochs, config_.malicious_steps,
                                         config_.stealth_steps, benign_plan_.batch_size,
                                         config_.optimizer, stealth_opt};
            return alternating_min_update(spec, start, shard_samples_, aux_targets_,
                                          config_.lambda, config_.rho, prev_ben_mean, schedule,
                                          seed);
        }
        case AttackStrategy::data_poison: {
            if (!poisoned_) {
                Dataset poisoned = shard_;
                for (std::size_t j = 0; j < aux_.size(); ++j) {
                    const auto& e = aux_.entries[j];
                    poisoned = dirty_label_poison(
                        poisoned, e.x, e.target_label, config_.copies, config_.noise_amplitude,
                        derive_seed(ctx.master_seed, ctx.agent, 0, StreamPurpose::poison_noise, j),
                        config_.clip_poison);
                }
                poisoned_ = std::move(poisoned);
                poisoned_samples_ = poisoned_->samples();
            }
            return benign_local_update(spec, start, poisoned_samples_, benign_plan_, seed).delta;
        }
    }
    throw InvalidArgument("unknown attack strategy");
}

Update MaliciousAgent::local_update(const RoundContext& ctx) {
    const std::span<const double> w = ctx.global_params;
    auto estimate = estimate_previous_step(state_, w, ctx.round, config_.literal_estimate);

    // estimate = sum_{j != m} alpha_j delta_j; per-agent mean for the distance term
    auto ben_mean = estimate;
    if (ctx.alpha < 1.0) ben_mean = vec::scaled(ben_mean, 1.0 / (1.0 - ctx.alpha));

    std::vector<double> delta;
    if (config_.estimation == Estimation::previous_step) {
        delta = apply_correction(
            config_.correction,
            [&](std::span<const double> start) { return base_attack(ctx, start, ben_mean); }, w,
            estimate, config_.lambda);
    } else {
        delta = base_attack(ctx, w, ben_mean);
    }

    state_.last_selected_round = ctx.round;
    state_.last_update = delta;
    state_.last_global.assign(w.begin(), w.end());
    state_.last_alpha = ctx.alpha;
    state_.selected_rounds.push_back(ctx.round);
    last_estimate_ = std::move(estimate);
    return {ctx.agent, std::move(delta)};
}

}  // namespace fedpoison
