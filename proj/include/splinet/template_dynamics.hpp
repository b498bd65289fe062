#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "splinet/tensor.hpp"

namespace splinet {

/// Free templates A_c (one row per class) and biases, trained directly on a
/// single unit-norm input with the softmax cross-entropy.
struct TemplateState {
    Matrix templates;  // (C, D)
    Vector biases;     // (C)
    std::size_t step = 0;
    double learning_rate = 0.1;
    std::optional<double> budget;  // Σ_c ||A_c||² ≤ K when set

    std::size_t classes() const { return templates.rows(); }
    std::size_t dim() const { return templates.cols(); }
    double squared_norm() const;
};

TemplateState random_template_state(std::size_t classes, std::size_t dim, double scale, std::uint64_t seed,
                                    double learning_rate = 0.1);

struct TemplateGradient {
    Matrix templates;  // d CE / d A_c, one row per class
    Vector biases;     // d CE / d b_c
};

/// Throws DomainError when | ||x|| − 1 | > 1e-6. The correct-class row is
/// the exact negation of the summed wrong-class rows, so the class sum vanishes.
TemplateGradient ce_template_gradient(const TemplateState& state, std::span<const double> x, std::size_t label);

/// Σ_c grad_c accumulated over the wrong classes first, then the correct one.
Vector gradient_class_sum(const TemplateGradient& g, std::size_t label);

double template_ce_loss(const TemplateState& state, std::span<const double> x, std::size_t label);

TemplateState step_unregularized(const TemplateState& state, std::span<const double> x, std::size_t label);

/// Gradient step on the templates (biases held fixed), then radial rescaling
/// of the whole stack onto Σ||A_c||² = K whenever the budget is exceeded.
TemplateState step_constrained(const TemplateState& state, std::span<const double> x, std::size_t label,
                               double budget);

/// A_y = sqrt((C−1)K/C)·x, A_c = −sqrt(K/(C(C−1)))·x otherwise; zero biases.
TemplateState optimal_templates(std::span<const double> x, std::size_t label, std::size_t classes, double budget);

/// Template gradient with its component along the stacked templates removed
/// (the tangent part on the budget sphere); zero at constrained stationary points.
double projected_gradient_norm(const TemplateState& state, std::span<const double> x, std::size_t label);

/// ||Σ_c <A_c, x> A_c − x||.
double reconstruction_identity_check(const TemplateState& state, std::span<const double> x);

/// cos(A_c, x) and ||A_c|| per class.
struct TemplateAlignment {
    std::vector<double> cosine;
    std::vector<double> norm;
};

TemplateAlignment template_alignment(const TemplateState& state, std::span<const double> x);

struct SimulationOptions {
    std::size_t classes = 2;
    std::size_t dim = 16;
    std::optional<double> budget;  // constrained dynamics when set
    double learning_rate = 0.1;
    std::size_t steps = 5000;
    double init_scale = 0.1;
    std::uint64_t seed = 1;
    std::size_t label = 0;
    std::size_t record_every = 1;
};

struct TrajectoryPoint {
    std::size_t t = 0;
    std::size_t cls = 0;
    double cosine = 0.0;
    double norm = 0.0;
};

struct Simulation {
    Vector x;
    TemplateState state;
    std::vector<TrajectoryPoint> trajectory;
};

/// Trains free templates on one random unit input drawn from the seed.
Simulation simulate_templates(const SimulationOptions& options);

/// Columns: t, class, cos_to_x, norm.
void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryPoint>& trajectory);

}  // namespace splinet
