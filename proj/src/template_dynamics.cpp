#include "splinet/template_dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "splinet/csv.hpp"
#include "splinet/layers.hpp"

namespace splinet {

namespace {

void require_unit(std::span<const double> x) {
    const double n = norm2(x);
    if (std::abs(n - 1.0) > 1e-6) {
        throw DomainError("template dynamics expect a unit-norm input, got norm " + std::to_string(n));
    }
}

void require_label(const TemplateState& s, std::size_t label) {
    if (label >= s.classes()) {
        throw IndexError("class " + std::to_string(label) + " out of range for " + std::to_string(s.classes()) +
                         " templates");
    }
}

Vector scores(const TemplateState& s, std::span<const double> x) {
    Vector z = matvec(s.templates, x);
    axpy(1.0, s.biases, z);
    return z;
}

}  // namespace

double TemplateState::squared_norm() const {
    const double n = norm2(templates.data());
    return n * n;
}

TemplateState random_template_state(std::size_t classes, std::size_t dim, double scale, std::uint64_t seed,
                                    double learning_rate) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    TemplateState s;
    s.templates = Matrix(classes, dim);
    for (double& v : s.templates.data()) {
        v = normal(rng);
    }
    s.biases.assign(classes, 0.0);
    s.learning_rate = learning_rate;
    return s;
}

TemplateGradient ce_template_gradient(const TemplateState& state, std::span<const double> x, std::size_t label) {
    require_unit(x);
    require_label(state, label);
    if (x.size() != state.dim()) {
        throw ShapeError("template dimension does not match input");
    }
    const Vector p = softmax(scores(state, x));
    TemplateGradient g{Matrix(state.classes(), state.dim()), Vector(state.classes(), 0.0)};
    Vector correct_row(state.dim(), 0.0);
    double correct_bias = 0.0;
    for (std::size_t c = 0; c < state.classes(); ++c) {
        if (c == label) {
            continue;
        }
        for (std::size_t d = 0; d < state.dim(); ++d) {
            g.templates(c, d) = x[d] * p[c];
            correct_row[d] += g.templates(c, d);
        }
        g.biases[c] = p[c];
        correct_bias += p[c];
    }
    // x(ŷ_y − 1) written as −Σ_{c≠y} xŷ_c.
    for (std::size_t d = 0; d < state.dim(); ++d) {
        g.templates(label, d) = -correct_row[d];
    }
    g.biases[label] = -correct_bias;
    return g;
}

Vector gradient_class_sum(const TemplateGradient& g, std::size_t label) {
    Vector sum(g.templates.cols(), 0.0);
    for (std::size_t c = 0; c < g.templates.rows(); ++c) {
        if (c != label) {
            axpy(1.0, g.templates.row(c), sum);
        }
    }
    axpy(1.0, g.templates.row(label), sum);
    return sum;
}

double template_ce_loss(const TemplateState& state, std::span<const double> x, std::size_t label) {
    require_label(state, label);
    const Vector z = scores(state, x);
    double m = z[0];
    for (double v : z) {
        m = std::max(m, v);
    }
    double s = 0.0;
    for (double v : z) {
        s += std::exp(v - m);
    }
    return -z[label] + m + std::log(s);
}

TemplateState step_unregularized(const TemplateState& state, std::span<const double> x, std::size_t label) {
    const TemplateGradient g = ce_template_gradient(state, x, label);
    TemplateState next = state;
    axpy(-state.learning_rate, g.templates.data(), next.templates.data());
    axpy(-state.learning_rate, g.biases, next.biases);
    ++next.step;
    return next;
}

TemplateState step_constrained(const TemplateState& state, std::span<const double> x, std::size_t label,
                               double budget) {
    if (!(budget > 0.0)) {
        throw DomainError("template norm budget must be positive");
    }
    const TemplateGradient g = ce_template_gradient(state, x, label);
    TemplateState next = state;
    next.budget = budget;
    axpy(-state.learning_rate, g.templates.data(), next.templates.data());
    const double sq = next.squared_norm();
    if (sq > budget) {
        const double scale = std::sqrt(budget / sq);
        for (double& v : next.templates.data()) {
            v *= scale;
        }
    }
    ++next.step;
    return next;
}

TemplateState optimal_templates(std::span<const double> x, std::size_t label, std::size_t classes, double budget) {
    require_unit(x);
    if (classes < 2) {
        throw DomainError("optimal templates need at least 2 classes");
    }
    if (!(budget > 0.0)) {
        throw DomainError("template norm budget must be positive");
    }
    if (label >= classes) {
        throw IndexError("class out of range");
    }
    const double c = static_cast<double>(classes);
    const double correct = std::sqrt((c - 1.0) * budget / c);
    const double wrong = -std::sqrt(budget / (c * (c - 1.0)));
    TemplateState s;
    s.templates = Matrix(classes, x.size());
    for (std::size_t k = 0; k < classes; ++k) {
        const double coef = k == label ? correct : wrong;
        for (std::size_t d = 0; d < x.size(); ++d) {
            s.templates(k, d) = coef * x[d];
        }
    }
    s.biases.assign(classes, 0.0);
    s.budget = budget;
    return s;
}

double projected_gradient_norm(const TemplateState& state, std::span<const double> x, std::size_t label) {
    const TemplateGradient g = ce_template_gradient(state, x, label);
    const auto a = state.templates.data();
    const auto gd = g.templates.data();
    const double aa = dot(a, a);
    Vector tangent(gd.begin(), gd.end());
    if (aa > 0.0) {
        axpy(-dot(gd, a) / aa, a, tangent);
    }
    return norm2(tangent);
}

double reconstruction_identity_check(const TemplateState& state, std::span<const double> x) {
    Vector recon(x.size(), 0.0);
    for (std::size_t c = 0; c < state.classes(); ++c) {
        axpy(dot(state.templates.row(c), x), state.templates.row(c), recon);
    }
    return norm2(subtract(recon, x));
}

TemplateAlignment template_alignment(const TemplateState& state, std::span<const double> x) {
    TemplateAlignment out;
    const double nx = norm2(x);
    for (std::size_t c = 0; c < state.classes(); ++c) {
        const double n = norm2(state.templates.row(c));
        out.norm.push_back(n);
        out.cosine.push_back(n > 0.0 && nx > 0.0 ? dot(state.templates.row(c), x) / (n * nx) : 0.0);
    }
    return out;
}

Simulation simulate_templates(const SimulationOptions& options) {
    if (options.classes < 2 || options.dim == 0) {
        throw DomainError("simulation needs at least 2 classes and a positive dimension");
    }
    if (options.label >= options.classes) {
        throw IndexError("label " + std::to_string(options.label) + " out of range");
    }
    Simulation sim;
    std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss;
    sim.x.resize(options.dim);
    for (double& v : sim.x) {
        v = gauss(rng);
    }
    sim.x = scaled(sim.x, 1.0 / norm2(sim.x));
    sim.state = random_template_state(options.classes, options.dim, options.init_scale, options.seed,
                                      options.learning_rate);
    const std::size_t every = std::max<std::size_t>(options.record_every, 1);
    auto record = [&] {
        const TemplateAlignment a = template_alignment(sim.state, sim.x);
        for (std::size_t c = 0; c < options.classes; ++c) {
            sim.trajectory.push_back({sim.state.step, c, a.cosine[c], a.norm[c]});
        }
    };
    record();
    for (std::size_t t = 0; t < options.steps; ++t) {
        sim.state = options.budget ? step_constrained(sim.state, sim.x, options.label, *options.budget)
                                   : step_unregularized(sim.state, sim.x, options.label);
        if (sim.state.step % every == 0 || t + 1 == options.steps) {
            record();
        }
    }
    return sim;
}

void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryPoint>& trajectory) {
    CsvWriter csv(os, {"t", "class", "cos_to_x", "norm"});
    for (const TrajectoryPoint& p : trajectory) {
        csv.row(std::to_string(p.t), std::to_string(p.cls), format_real(p.cosine), format_real(p.norm));
    }
}

}  // namespace splinet
