#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "splinet/layers.hpp"
#include "splinet/trainer.hpp"

namespace splinet {

struct AdversarialOptions {
    bool logit_gradient = false;  // ascend the logit f_k instead of the softmax output
    bool renormalize = false;     // rescale x' to unit norm
};

struct AdversarialResult {
    Vector original;
    Vector perturbed;
    Vector gradient;
    double alpha = 0.0;
    std::size_t target = 0;
    Vector original_probs;
    Vector perturbed_probs;
    bool flipped = false;
    double perturbation_norm = 0.0;  // ||x' − x||; equals α·||gradient|| without renormalization
};

/// d ŷ_k / dx under the frozen region of x (or d f_k / dx with `logit`).
Vector target_gradient(const Network& net, std::span<const double> x, std::size_t k, bool logit = false);

/// x' = x + α · d ŷ_k / dx.
AdversarialResult gen_adversarial(const Network& net, std::span<const double> x, std::size_t k, double alpha,
                                  const AdversarialOptions& options = {});

/// ||d ŷ_k / dx||.
double sensitivity(const Network& net, std::span<const double> x, std::size_t k);

/// Second most probable class.
std::size_t runner_up_class(std::span<const double> logits);

struct SweepRow {
    double alpha = 0.0;
    double flip_rate = 0.0;
    double mean_perturbation_norm = 0.0;
};

/// One row per α in ascending order. Each input is pushed toward `target`, or
/// toward its runner-up class when no target is given.
std::vector<SweepRow> attack_sweep(const Network& net, const std::vector<Vector>& inputs, std::vector<double> alphas,
                                   std::optional<std::size_t> target = std::nullopt,
                                   const AdversarialOptions& options = {});

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace splinet
