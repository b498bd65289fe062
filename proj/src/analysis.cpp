#include "splinet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <random>

#include <Eigen/Dense>
#include <json.hpp>

namespace splinet {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct Bound {
    std::string kind;
    double frobenius = 1.0;
    double spectral = 1.0;
};

// Spectral norm of a layer's linear part, matrix-free through the frozen
// evaluation of a one-layer network (linear layers carry no trace).
double linear_layer_spectral(const Layer& layer, const Shape3& in_shape, const PowerIterationOptions& opts) {
    const Network single(in_shape, {layer});
    const ActivationTrace trace{{LayerTrace{}}};
    NetworkCache cache;
    cache.layers.resize(1);
    return spectral_norm([&](std::span<const double> v) { return apply_frozen(single, trace, v, false); },
                         [&](std::span<const double> u) {
                             return backprop_frozen(single, trace, cache, u, nullptr, false);
                         },
                         in_shape.size(), opts);
}

double conv_frobenius(const Conv2D& conv) {
    // Column norms of the circulant-block matrix, one basis response at a time.
    const Network single(conv.in_shape, {Layer{conv}});
    const ActivationTrace trace{{LayerTrace{}}};
    Vector basis(conv.in_shape.size(), 0.0);
    double sum = 0.0;
    for (std::size_t k = 0; k < basis.size(); ++k) {
        basis[k] = 1.0;
        const Vector col = apply_frozen(single, trace, basis, false);
        basis[k] = 0.0;
        for (double v : col) {
            sum += v * v;
        }
    }
    return std::sqrt(sum);
}

Bound layer_bound(const Layer& layer, const Shape3& in_shape, const PowerIterationOptions& opts) {
    return std::visit(
        overloaded{
            [&](const Dense& d) {
                return Bound{"dense", frobenius_norm(d.weights), spectral_norm(d.weights, opts)};
            },
            [&](const Conv2D& c) {
                return Bound{"conv2d", conv_frobenius(c), linear_layer_spectral(layer, in_shape, opts)};
            },
            [&](const Activation& a) {
                const double width = static_cast<double>(in_shape.size());
                switch (a.kind) {
                    case ActivationKind::relu:
                        return Bound{"relu", width, 1.0};
                    case ActivationKind::leaky_relu:
                        return Bound{"leaky_relu", width, std::max(1.0, a.leaky_slope)};
                    case ActivationKind::abs:
                        return Bound{"abs", width, 1.0};
                }
                return Bound{};
            },
            [&](const MaxPool& p) {
                std::vector<std::size_t> multiplicity(p.pool.in_size, 0);
                for (const auto& region : p.pool.regions) {
                    for (std::uint32_t idx : region) {
                        ++multiplicity[idx];
                    }
                }
                const auto overlap = *std::max_element(multiplicity.begin(), multiplicity.end());
                return Bound{"max_pool", std::sqrt(static_cast<double>(p.pool.regions.size())),
                             std::sqrt(static_cast<double>(overlap))};
            },
            [&](const MeanPool& p) {
                const AffineForm f = layer_affine(layer, in_shape, LayerTrace{});
                (void)p;
                return Bound{"mean_pool", frobenius_norm(f.A), spectral_norm(f.A, opts)};
            },
            [&](const ResidualBlock& r) {
                const Network inner_net(in_shape, r.inner);
                double frob = 1.0;
                double spec = 1.0;
                for (std::size_t k = 0; k < r.inner.size(); ++k) {
                    const Bound b = layer_bound(r.inner[k], inner_net.layer_in_shape(k), opts);
                    frob *= b.frobenius;
                    spec *= b.spectral;
                }
                if (r.projection) {
                    frob += frobenius_norm(r.projection->weights);
                    spec += spectral_norm(r.projection->weights, opts);
                } else {
                    frob += std::sqrt(static_cast<double>(in_shape.size()));
                    spec += 1.0;
                }
                return Bound{"residual", frob, spec};
            },
        },
        layer.op);
}

const Layer* layer_checked(const Network& net, std::size_t index) {
    if (index >= net.size()) {
        throw IndexError("layer index " + std::to_string(index) + " out of range for a network of " +
                         std::to_string(net.size()) + " layers");
    }
    return &net.layer(index);
}

void check_linear_nonnegative(const Layer& layer, std::size_t top, bool& first_linear_seen,
                              std::vector<GlobalInferenceViolation>& out) {
    auto check_params = [&](std::span<const double> w, std::span<const double> b, const char* what) {
        if (!first_linear_seen) {
            first_linear_seen = true;
            return;
        }
        if (std::any_of(w.begin(), w.end(), [](double v) { return v < 0.0; })) {
            out.push_back({top, std::string(what) + " has negative weights"});
        }
        if (std::any_of(b.begin(), b.end(), [](double v) { return v < 0.0; })) {
            out.push_back({top, std::string(what) + " has negative bias"});
        }
    };
    std::visit(overloaded{
                   [&](const Dense& d) { check_params(d.weights.data(), d.bias, "dense layer"); },
                   [&](const Conv2D& c) { check_params(c.filters, c.bias, "conv2d layer"); },
                   [&](const Activation& a) {
                       if (a.kind == ActivationKind::relu) {
                           out.push_back({top, "relu is not strictly increasing"});
                       } else if (a.kind == ActivationKind::abs) {
                           out.push_back({top, "abs is not increasing"});
                       }
                   },
                   [&](const ResidualBlock& r) {
                       for (const Layer& l : r.inner) {
                           check_linear_nonnegative(l, top, first_linear_seen, out);
                       }
                       if (r.projection) {
                           check_params(r.projection->weights.data(), r.projection->bias, "residual projection");
                       }
                   },
                   [](const auto&) {},
               },
               layer.op);
}

}  // namespace

LipschitzReport lipschitz_upper(const Network& net, const LipschitzOptions& options) {
    LipschitzReport report;
    for (std::size_t i = 0; i < net.size(); ++i) {
        const Bound b = layer_bound(net.layer(i), net.layer_in_shape(i), options.power);
        report.layers.push_back(LayerLipschitz{i, b.kind, b.frobenius, b.spectral});
        report.composed_frobenius *= b.frobenius;
        report.composed_spectral *= b.spectral;
    }
    if (options.sample_pairs > 0) {
        report.empirical_max_ratio = empirical_lipschitz_ratio(net, options.sample_pairs, options.seed);
        report.sampled_pairs = options.sample_pairs;
    }
    return report;
}

double empirical_lipschitz_ratio(const Network& net, std::size_t pairs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const std::size_t dim = net.input_dim();
    Vector x(dim);
    Vector y(dim);
    double best = 0.0;
    for (std::size_t p = 0; p < pairs; ++p) {
        for (double& v : x) {
            v = normal(rng);
        }
        const double scale = (p % 2 == 0) ? 1.0 : 1e-3;
        for (std::size_t d = 0; d < dim; ++d) {
            y[d] = (p % 2 == 0 ? 0.0 : x[d]) + scale * normal(rng);
        }
        const double dx = norm2(subtract(x, y));
        if (dx == 0.0) {
            continue;
        }
        const double df = norm2(subtract(network_forward(net, x).logits, network_forward(net, y).logits));
        best = std::max(best, df / dx);
    }
    return best;
}

double softmax_contraction_bound(std::size_t classes) {
    if (classes < 2) {
        throw DomainError("softmax contraction bound needs at least 2 classes");
    }
    const double c = static_cast<double>(classes);
    return (c - 1.0) / (c * c);
}

double empirical_softmax_ratio(std::size_t classes, std::size_t pairs, std::uint64_t seed, double scale) {
    softmax_contraction_bound(classes);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    Vector x(classes);
    Vector y(classes);
    double best = 0.0;
    for (std::size_t p = 0; p < pairs; ++p) {
        for (std::size_t c = 0; c < classes; ++c) {
            x[c] = normal(rng);
            y[c] = normal(rng);
        }
        const Vector dx = subtract(x, y);
        const Vector ds = subtract(softmax(x), softmax(y));
        const double den = dot(dx, dx);
        if (den > 0.0) {
            best = std::max(best, dot(ds, ds) / den);
        }
    }
    return best;
}

double region_distance(const Network& net, std::span<const double> x1, std::span<const double> x2,
                       std::size_t layer_index, RegionNorm norm) {
    const Layer* layer = layer_checked(net, layer_index);
    const ActivationTrace t1 = network_forward(net, x1).trace;
    const ActivationTrace t2 = network_forward(net, x2).trace;
    const LayerTrace& r1 = t1.layers[layer_index];
    const LayerTrace& r2 = t2.layers[layer_index];
    if (std::holds_alternative<Activation>(layer->op)) {
        double sum = 0.0;
        double peak = 0.0;
        for (std::size_t d = 0; d < r1.slopes.size(); ++d) {
            const double v = r1.slopes[d] * r2.slopes[d];
            sum += v * v;
            peak = std::max(peak, std::abs(v));
        }
        return norm == RegionNorm::frobenius ? std::sqrt(sum) : peak;
    }
    if (const auto* pool = std::get_if<MaxPool>(&layer->op)) {
        // A₁ᵀA₂ has entry (i, j) = number of regions where x1 picks i and x2 picks j.
        std::map<std::pair<std::uint32_t, std::uint32_t>, double> entries;
        for (std::size_t d = 0; d < r1.winners.size(); ++d) {
            entries[{r1.winners[d], r2.winners[d]}] += 1.0;
        }
        if (norm == RegionNorm::frobenius) {
            double sum = 0.0;
            for (const auto& [key, v] : entries) {
                sum += v * v;
            }
            return std::sqrt(sum);
        }
        const std::size_t n = pool->pool.in_size;
        auto apply = [&](std::span<const double> v) {
            Vector out(n, 0.0);
            for (const auto& [key, w] : entries) {
                out[key.first] += w * v[key.second];
            }
            return out;
        };
        auto apply_t = [&](std::span<const double> u) {
            Vector out(n, 0.0);
            for (const auto& [key, w] : entries) {
                out[key.second] += w * u[key.first];
            }
            return out;
        };
        return spectral_norm(apply, apply_t, n, PowerIterationOptions{1000, 1e-13, 0x5eed});
    }
    throw IndexError("layer " + std::to_string(layer_index) + " is not a nonlinearity or max-pool layer");
}

double separation(const Network& net, std::span<const double> x1, std::span<const double> x2,
                  std::size_t layer_index) {
    layer_checked(net, layer_index);
    return norm2(subtract(layer_output(net, x1, layer_index), layer_output(net, x2, layer_index)));
}

bool ActivationGraph::is_bipartite() const {
    std::vector<int> colour(nodes.size(), -1);
    std::vector<std::vector<std::size_t>> adj(nodes.size());
    for (const auto& [a, b] : edges) {
        adj.at(a).push_back(b);
        adj.at(b).push_back(a);
    }
    for (std::size_t s = 0; s < nodes.size(); ++s) {
        if (colour[s] != -1) {
            continue;
        }
        colour[s] = 0;
        std::deque<std::size_t> queue{s};
        while (!queue.empty()) {
            const std::size_t u = queue.front();
            queue.pop_front();
            for (std::size_t v : adj[u]) {
                if (colour[v] == -1) {
                    colour[v] = 1 - colour[u];
                    queue.push_back(v);
                } else if (colour[v] == colour[u]) {
                    return false;
                }
            }
        }
    }
    return true;
}

ActivationGraph activation_graph(const Network& net, std::span<const double> x) {
    const ActivationTrace trace = network_forward(net, x).trace;
    ActivationGraph g;
    for (std::size_t i = 0; i < net.size(); ++i) {
        g.nodes.push_back(GraphNode{i, encode_layer_trace(net.layer(i), trace.layers[i])});
        if (i > 0) {
            g.edges.emplace_back(i - 1, i);
        }
    }
    for (const auto& [a, b] : g.edges) {
        if (g.nodes[b].layer != g.nodes[a].layer + 1) {
            throw ConsistencyError("activation graph edge skips a layer");
        }
    }
    if (!g.is_bipartite()) {
        throw ConsistencyError("activation graph is not bipartite");
    }
    return g;
}

TemplatePotential template_potential(const Network& net, const std::vector<Vector>& inputs) {
    if (inputs.size() < 2) {
        throw DomainError("template potential needs at least 2 inputs");
    }
    TemplatePotential report;
    const std::size_t dim = net.input_dim();
    const std::size_t classes = net.output_dim();
    report.class_mean_norm.assign(classes, 0.0);
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(inputs.size() * classes), static_cast<Eigen::Index>(dim));
    double deviation = 0.0;
    double off_diag = 0.0;
    Eigen::Index r = 0;
    for (const Vector& x : inputs) {
        const TemplateSet t = templates(net, x);
        const Matrix g = gram(t);
        double dev = 0.0;
        for (std::size_t i = 0; i < classes; ++i) {
            report.class_mean_norm[i] += norm2(t.row(i)) / static_cast<double>(inputs.size());
            for (std::size_t j = 0; j < classes; ++j) {
                const double target = i == j ? 1.0 : 0.0;
                dev += (g(i, j) - target) * (g(i, j) - target);
                if (i != j) {
                    off_diag += std::abs(g(i, j));
                }
            }
            for (std::size_t d = 0; d < dim; ++d) {
                rows(r, static_cast<Eigen::Index>(d)) = t.rows(i, d);
            }
            ++r;
        }
        deviation += std::sqrt(dev);
    }
    const auto n = static_cast<double>(inputs.size());
    report.gram_deviation = deviation / n;
    report.mean_off_diagonal = classes > 1 ? off_diag / (n * static_cast<double>(classes * (classes - 1))) : 0.0;
    report.samples = inputs.size();

    const Eigen::RowVectorXd mean = rows.colwise().mean();
    report.mean_vector_norm = mean.norm();
    const Eigen::MatrixXd centered = rows.rowwise() - mean;
    const Eigen::Index samples = centered.rows();
    const double denom = static_cast<double>(samples - 1);
    Eigen::VectorXd spectrum;
    Eigen::Index keep = 0;
    if (samples - 1 < centered.cols()) {
        // Nonzero covariance eigenvalues equal those of the centered Gram matrix.
        const Eigen::MatrixXd g = centered * centered.transpose() / denom;
        spectrum = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g, Eigen::EigenvaluesOnly).eigenvalues();
        keep = samples - 1;
    } else {
        const Eigen::MatrixXd cov = centered.transpose() * centered / denom;
        spectrum = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov, Eigen::EigenvaluesOnly).eigenvalues();
        keep = centered.cols();
    }
    // Ascending order: the top `keep` eigenvalues span the sample subspace.
    const double lmax = spectrum(spectrum.size() - 1);
    const double lmin = spectrum(spectrum.size() - keep);
    report.isotropy_ratio = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
    return report;
}

GlobalInferenceCheck check_global_inference(const Network& net) {
    GlobalInferenceCheck check;
    bool first_linear_seen = false;
    for (std::size_t i = 0; i < net.size(); ++i) {
        check_linear_nonnegative(net.layer(i), i, first_linear_seen, check.violations);
    }
    if (net.size() == 0 || !std::holds_alternative<Dense>(net.layer(net.size() - 1).op)) {
        check.violations.push_back({net.size() == 0 ? 0 : net.size() - 1, "last layer is not dense"});
    }
    check.satisfied = check.violations.empty();
    return check;
}

std::string to_json(const LipschitzReport& report) {
    nlohmann::json j;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : report.layers) {
        j["layers"].push_back({{"layer", l.layer},
                               {"kind", l.kind},
                               {"frobenius_bound", l.frobenius_bound},
                               {"spectral_bound", l.spectral_bound}});
    }
    j["composed_frobenius"] = report.composed_frobenius;
    j["composed_spectral"] = report.composed_spectral;
    j["empirical_max_ratio"] = report.empirical_max_ratio;
    j["sampled_pairs"] = report.sampled_pairs;
    return j.dump(2);
}

std::string to_json(const TemplatePotential& report) {
    nlohmann::json j;
    j["class_mean_norm"] = report.class_mean_norm;
    j["mean_vector_norm"] = report.mean_vector_norm;
    j["isotropy_ratio"] = report.isotropy_ratio;
    j["gram_deviation"] = report.gram_deviation;
    j["mean_off_diagonal"] = report.mean_off_diagonal;
    j["samples"] = report.samples;
    return j.dump(2);
}

std::string to_json(const GlobalInferenceCheck& report) {
    nlohmann::json j;
    j["satisfied"] = report.satisfied;
    j["violations"] = nlohmann::json::array();
    for (const auto& v : report.violations) {
        j["violations"].push_back({{"layer", v.layer}, {"reason", v.reason}});
    }
    return j.dump(2);
}

}  // namespace splinet
