#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "splinet/layers.hpp"

namespace splinet {

/// Mixing weights of the semi-supervised loss. `gamma[l]` weights the
/// reconstruction loss taken at the input of layer l.
struct LossWeights {
    double alpha = 1.0;
    double beta = 0.5;
    std::vector<double> gamma;

    /// Throws ConfigError when a weight is out of range.
    void validate() const;
};

/// Inputs with optional labels. Unlabeled datasets leave `labels` empty.
struct Dataset {
    std::vector<Vector> inputs;
    std::vector<std::size_t> labels;

    std::size_t size() const { return inputs.size(); }
    bool empty() const { return inputs.empty(); }
    bool labeled() const { return !inputs.empty() && labels.size() == inputs.size(); }
};

struct BatchItem {
    std::span<const double> x;
    std::optional<std::size_t> label;
};

using Batch = std::vector<BatchItem>;

Batch labeled_batch(const Dataset& data);
Batch unlabeled_batch(const Dataset& data);

double cross_entropy(std::span<const double> logits, std::size_t label);

/// −Σ p log p with 0·log 0 = 0.
double entropy_loss(std::span<const double> probs);

/// ||A[x]ᵀ f(x) − x||².
double reconstruction_loss(const Network& net, std::span<const double> x);

/// Same loss with the input of layer l as the reconstruction target.
double per_layer_reconstruction_loss(const Network& net, std::span<const double> x, std::size_t layer);

/// α · mean CE over labeled items + (1 − α) · mean (β R + (1 − β) E) over all
/// items + Σ_l γ_l · mean R^(l) over all items.
double combined_loss(const Network& net, const Batch& batch, const LossWeights& weights);

struct LossGradient {
    double loss = 0.0;
    ParameterSet grads;
};

/// Gradient of combined_loss with every slope and pooling winner frozen at
/// the forward trace. Per-item gradients are summed in item order.
LossGradient loss_gradients(const Network& net, const Batch& batch, const LossWeights& weights);

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // L2 coefficient on weight arrays, not biases
    double decay_factor = 1.0;  // step decay of the learning rate
    std::size_t decay_every = 0;  // epochs; 0 keeps the rate constant
};

struct AdamState {
    ParameterSet m;
    ParameterSet v;
    std::size_t t = 0;
};

ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, const OptimizerConfig& config);
ParameterSet adam_step(const ParameterSet& params, const ParameterSet& grads, AdamState& state,
                       const OptimizerConfig& config);

struct TrainConfig {
    LossWeights weights;
    OptimizerConfig optimizer;
    std::size_t epochs = 10;
    std::size_t labeled_batch = 16;
    std::size_t unlabeled_batch = 32;
    std::uint64_t seed = 1;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double mean_R = 0.0;
    double mean_E = 0.0;
};

struct TrainResult {
    Network net;
    std::vector<EpochRecord> history;
};

/// Each step draws `labeled_batch` labeled items and `unlabeled_batch`
/// unlabeled items; an epoch is one pass over the unlabeled set (or over the
/// labeled set when there is none). Orders are reshuffled per epoch from the
/// seed. `test` may be empty.
TrainResult train(const Network& net, const Dataset& labeled, const Dataset& unlabeled, const Dataset& test,
                  const TrainConfig& config);

double accuracy(const Network& net, const Dataset& data);
double generalization_gap(double train_acc, double test_acc);

std::size_t argmax(std::span<const double> v);

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history);

}  // namespace splinet
