#include "fedpoison/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedpoison/errors.hpp"
#include "fedpoison/random.hpp"

namespace fedpoison {

void ModelSpec::validate() const {
    if (layer_sizes.size() < 2)
        throw InvalidArgument("ModelSpec: need at least an input and an output layer");
    for (std::size_t s : layer_sizes)
        if (s == 0) throw InvalidArgument("ModelSpec: layer sizes must be positive");
}

std::size_t ModelSpec::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
        n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
    return n;
}

namespace {

void check_inputs(const ModelSpec& spec, std::span<const double> params,
                  std::span<const double> x) {
    spec.validate();
    if (params.size() != spec.parameter_count())
        throw InvalidArgument("parameter vector has length " + std::to_string(params.size()) +
                              ", model expects " + std::to_string(spec.parameter_count()));
    if (x.size() != spec.input_dim())
        throw InvalidArgument("feature vector has length " + std::to_string(x.size()) +
                              ", model expects " + std::to_string(spec.input_dim()));
}

void check_batch(const ModelSpec& spec, std::span<const double> params, Batch batch) {
    if (batch.empty()) throw InvalidArgument("empty batch");
    for (const auto& s : batch) {
        check_inputs(spec, params, s.x);
        if (s.label >= spec.class_count())
            throw InvalidArgument("label " + std::to_string(s.label) + " outside [0, " +
                                  std::to_string(spec.class_count()) + ")");
    }
}

/// Per-call scratch: activations of every layer (post-ReLU for hidden layers,
/// raw logits for the last one).
struct Activations {
    std::vector<std::vector<double>> layers;

    explicit Activations(const ModelSpec& spec) {
        layers.resize(spec.layer_sizes.size());
        for (std::size_t l = 0; l < spec.layer_sizes.size(); ++l)
            layers[l].resize(spec.layer_sizes[l]);
    }
};

/// Runs the network and leaves logits in acts.layers.back().
void run_layers(const ModelSpec& spec, std::span<const double> params,
                std::span<const double> x, Activations& acts) {
    std::copy(x.begin(), x.end(), acts.layers[0].begin());
    std::size_t offset = 0;
    const std::size_t last = spec.layer_count() - 1;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t in = spec.layer_sizes[l];
        const std::size_t out = spec.layer_sizes[l + 1];
        const double* w = params.data() + offset;
        const double* b = w + in * out;
        const auto& a_in = acts.layers[l];
        auto& a_out = acts.layers[l + 1];
        for (std::size_t o = 0; o < out; ++o) {
            const double* row = w + o * in;
            double z = b[o];
            for (std::size_t i = 0; i < in; ++i) z += row[i] * a_in[i];
            a_out[o] = (l == last) ? z : std::max(0.0, z);
        }
        offset += in * out + out;
    }
}

void softmax_inplace(std::vector<double>& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

/// -log softmax(z)[label], via log-sum-exp.
double nll_from_logits(const std::vector<double>& z, std::size_t label) {
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    return (mx + std::log(sum)) - z[label];
}

}  // namespace

ParameterVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    ParameterVector params(spec.parameter_count(), 0.0);
    Rng rng(seed);
    std::size_t offset = 0;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t in = spec.layer_sizes[l];
        const std::size_t out = spec.layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (std::size_t i = 0; i < in * out; ++i) params[offset + i] = rng.uniform(-limit, limit);
        offset += in * out + out;
    }
    return params;
}

std::vector<double> forward(const ModelSpec& spec, std::span<const double> params,
                            std::span<const double> x) {
    check_inputs(spec, params, x);
    Activations acts(spec);
    run_layers(spec, params, x, acts);
    auto probs = acts.layers.back();
    softmax_inplace(probs);
    return probs;
}

std::size_t predict(const ModelSpec& spec, std::span<const double> params,
                    std::span<const double> x) {
    check_inputs(spec, params, x);
    Activations acts(spec);
    run_layers(spec, params, x, acts);
    const auto& z = acts.layers.back();
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

double cross_entropy_loss(const ModelSpec& spec, std::span<const double> params, Batch batch) {
    check_batch(spec, params, batch);
    Activations acts(spec);
    double total = 0.0;
    for (const auto& s : batch) {
        run_layers(spec, params, s.x, acts);
        total += nll_from_logits(acts.layers.back(), s.label);
    }
    return total / static_cast<double>(batch.size());
}

double loss_and_gradient(const ModelSpec& spec, std::span<const double> params, Batch batch,
                         GradientVector& grad) {
    check_batch(spec, params, batch);
    grad.assign(params.size(), 0.0);
    Activations acts(spec);

    // Per-layer parameter offsets.
    std::vector<std::size_t> offsets(spec.layer_count());
    {
        std::size_t off = 0;
        for (std::size_t l = 0; l < spec.layer_count(); ++l) {
            offsets[l] = off;
            off += spec.layer_sizes[l] * spec.layer_sizes[l + 1] + spec.layer_sizes[l + 1];
        }
    }
    std::vector<double> delta, delta_prev;
    double total = 0.0;

    for (const auto& s : batch) {
        run_layers(spec, params, s.x, acts);
        total += nll_from_logits(acts.layers.back(), s.label);

        // dL/dz at the output: softmax - onehot.
        delta = acts.layers.back();
        softmax_inplace(delta);
        delta[s.label] -= 1.0;

        for (std::size_t l = spec.layer_count(); l-- > 0;) {
            const std::size_t in = spec.layer_sizes[l];
            const std::size_t out = spec.layer_sizes[l + 1];
            const double* w = params.data() + offsets[l];
            double* gw = grad.data() + offsets[l];
            double* gb = gw + in * out;
            const auto& a_in = acts.layers[l];
            for (std::size_t o = 0; o < out; ++o) {
                const double d = delta[o];
                if (d == 0.0) continue;
                double* grow = gw + o * in;
                for (std::size_t i = 0; i < in; ++i) grow[i] += d * a_in[i];
                gb[o] += d;
            }
            if (l == 0) break;
            // Propagate through W^T and the ReLU of layer l.
            delta_prev.assign(in, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                const double d = delta[o];
                if (d == 0.0) continue;
                const double* row = w + o * in;
                for (std::size_t i = 0; i < in; ++i) delta_prev[i] += row[i] * d;
            }
            for (std::size_t i = 0; i < in; ++i)
                if (a_in[i] <= 0.0) delta_prev[i] = 0.0;
            delta.swap(delta_prev);
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& g : grad) g *= inv;
    return total * inv;
}

GradientVector gradient(const ModelSpec& spec, std::span<const double> params, Batch batch) {
    GradientVector grad;
    loss_and_gradient(spec, params, batch, grad);
    return grad;
}

double accuracy(const ModelSpec& spec, std::span<const double> params, Batch batch) {
    if (batch.empty()) throw InvalidArgument("accuracy: empty batch");
    Activations acts(spec);
    std::size_t correct = 0;
    for (const auto& s : batch) {
        check_inputs(spec, params, s.x);
        run_layers(spec, params, s.x, acts);
        const auto& z = acts.layers.back();
        const auto pred = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
        if (pred == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(batch.size());
}

void OptimizerSettings::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw InvalidArgument("optimizer: learning rate must be finite and non-negative");
    if (kind == OptimizerKind::adam) {
        if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
            throw InvalidArgument("adam: betas must lie in (0, 1)");
        if (!(epsilon > 0.0)) throw InvalidArgument("adam: epsilon must be positive");
    }
}

OptimizerState OptimizerState::create(const OptimizerSettings& settings, std::size_t n) {
    settings.validate();
    OptimizerState state;
    state.settings = settings;
    if (settings.kind == OptimizerKind::adam) {
        state.first_moment.assign(n, 0.0);
        state.second_moment.assign(n, 0.0);
    }
    return state;
}

void apply_optimizer(OptimizerState& state, std::span<double> params,
                     std::span<const double> grad) {
    if (grad.size() != params.size())
        throw InvalidArgument("optimizer: gradient length " + std::to_string(grad.size()) +
                              " does not match parameter length " +
                              std::to_string(params.size()));
    if (!vec::all_finite(grad)) throw NumericalError("optimizer: non-finite gradient entry");

    const auto& cfg = state.settings;
    if (cfg.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.learning_rate * grad[i];
        ++state.step_count;
        return;
    }

    if (state.first_moment.size() != params.size()) {
        state.first_moment.assign(params.size(), 0.0);
        state.second_moment.assign(params.size(), 0.0);
    }
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto& m = state.first_moment;
    auto& v = state.second_moment;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

std::pair<ParameterVector, OptimizerState> optimizer_step(OptimizerState state,
                                                          ParameterVector params,
                                                          std::span<const double> grad) {
    apply_optimizer(state, params, grad);
    return {std::move(params), std::move(state)};
}

}  // namespace fedpoison
