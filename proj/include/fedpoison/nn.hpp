#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fedpoison/vector_ops.hpp"

namespace fedpoison {

enum class Activation { relu };

/// Fully connected classifier: layer_sizes = {input, hidden..., classes}.
/// ReLU on hidden layers, softmax on the output.
///
/// Parameters are stored flat, layer-major: for each layer the weight matrix
/// (out rows x in columns, row-major) followed by the out-length bias.
struct ModelSpec {
    std::vector<std::size_t> layer_sizes;
    Activation activation = Activation::relu;

    void validate() const;
    std::size_t parameter_count() const;
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t class_count() const { return layer_sizes.back(); }
    std::size_t layer_count() const { return layer_sizes.size() - 1; }
};

struct LabeledSample {
    std::span<const double> x;
    std::size_t label = 0;
};

using Batch = std::span<const LabeledSample>;

/// Glorot-uniform weights, zero biases.
ParameterVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// Class probabilities f(x; w).
std::vector<double> forward(const ModelSpec& spec, std::span<const double> params,
                            std::span<const double> x);

std::size_t predict(const ModelSpec& spec, std::span<const double> params,
                    std::span<const double> x);

/// Mean of -log p(label) over the batch.
double cross_entropy_loss(const ModelSpec& spec, std::span<const double> params, Batch batch);

/// Analytic gradient of cross_entropy_loss with respect to params.
GradientVector gradient(const ModelSpec& spec, std::span<const double> params, Batch batch);

/// Fused loss + gradient; `grad` is resized and overwritten. Returns the loss.
double loss_and_gradient(const ModelSpec& spec, std::span<const double> params, Batch batch,
                         GradientVector& grad);

/// Fraction of the batch classified correctly, in [0, 1].
double accuracy(const ModelSpec& spec, std::span<const double> params, Batch batch);

enum class OptimizerKind { sgd, adam };

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::sgd;
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

struct OptimizerState {
    OptimizerSettings settings;
    std::uint64_t step_count = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;

    /// Fresh state for an n-parameter model; Adam moments zero-initialized.
    static OptimizerState create(const OptimizerSettings& settings, std::size_t n);
};

/// In-place update of params. Throws NumericalError on non-finite gradients.
void apply_optimizer(OptimizerState& state, std::span<double> params,
                     std::span<const double> grad);

/// Value-semantics form of apply_optimizer.
std::pair<ParameterVector, OptimizerState> optimizer_step(OptimizerState state,
                                                          ParameterVector params,
                                                          std::span<const double> grad);

}  // namespace fedpoison
