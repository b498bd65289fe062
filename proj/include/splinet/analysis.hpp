#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "splinet/layers.hpp"
#include "splinet/splinex.hpp"

namespace splinet {

struct LayerLipschitz {
    std::size_t layer = 0;
    std::string kind;
    double frobenius_bound = 0.0;
    double spectral_bound = 0.0;
};

struct LipschitzReport {
    std::vector<LayerLipschitz> layers;
    double composed_frobenius = 1.0;
    double composed_spectral = 1.0;
    double empirical_max_ratio = 0.0;
    std::size_t sampled_pairs = 0;
};

struct LipschitzOptions {
    std::size_t sample_pairs = 0;  // 0 skips the empirical ratio
    std::uint64_t seed = 1;
    PowerIterationOptions power{1000, 1e-13, 0x5eed};
};

/// Per-layer Frobenius-style and spectral bounds and their products. Linear
/// stages use ||W||_F and ||W||_2; elementwise nonlinearities report the
/// output width as the loose bound and the largest admissible |slope| as the
/// tight one; max-pool reports sqrt(D_out) and sqrt(max region overlap).
LipschitzReport lipschitz_upper(const Network& net, const LipschitzOptions& options = {});

/// Empirical sup of ||f(x) − f(y)|| / ||x − y|| over random pairs: half drawn
/// independently, half as small perturbations of one another.
double empirical_lipschitz_ratio(const Network& net, std::size_t pairs, std::uint64_t seed);

/// (C − 1) / C², the contraction constant claimed for the softmax on the
/// squared ratio ||σ(x) − σ(y)||² / ||x − y||².
double softmax_contraction_bound(std::size_t classes);

/// Max of ||σ(x) − σ(y)||² / ||x − y||² over independent N(0, scale² I) logit pairs.
double empirical_softmax_ratio(std::size_t classes, std::size_t pairs, std::uint64_t seed, double scale = 1.0);

enum class RegionNorm { frobenius, spectral };

/// ||A₁ᵀ A₂|| for the slope (or selection) matrices of layer `layer_index`
/// under the traces of x1 and x2. The layer must be elementwise or max-pool.
double region_distance(const Network& net, std::span<const double> x1, std::span<const double> x2,
                       std::size_t layer_index, RegionNorm norm = RegionNorm::frobenius);

/// ||z[x1] − z[x2]|| where z is the output of layer `layer_index`.
double separation(const Network& net, std::span<const double> x1, std::span<const double> x2,
                  std::size_t layer_index);

struct GraphNode {
    std::size_t layer = 0;
    std::vector<std::uint8_t> region;  // encoded trace record of that layer

    bool operator==(const GraphNode&) const = default;
};

struct ActivationGraph {
    std::vector<GraphNode> nodes;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // node indices

    bool operator==(const ActivationGraph&) const = default;
    /// Two-colouring by breadth-first search.
    bool is_bipartite() const;
};

ActivationGraph activation_graph(const Network& net, std::span<const double> x);

struct TemplatePotential {
    std::vector<double> class_mean_norm;
    double mean_vector_norm = 0.0;
    double isotropy_ratio = 0.0;
    double gram_deviation = 0.0;
    double mean_off_diagonal = 0.0;
    std::size_t samples = 0;
};

/// Moment statistics of the templates over `inputs`. The isotropy ratio is
/// λ_max / λ_min of the template sample covariance over its nonzero spectrum
/// (the span of the samples when they are fewer than the dimension); the
/// deviation is the mean ||A[x]A[x]ᵀ − I||_F.
TemplatePotential template_potential(const Network& net, const std::vector<Vector>& inputs);

struct GlobalInferenceViolation {
    std::size_t layer = 0;
    std::string reason;
};

struct GlobalInferenceCheck {
    bool satisfied = true;
    std::vector<GlobalInferenceViolation> violations;
};

/// Sufficient conditions only: free first linear layer, nonnegative weights
/// and biases afterwards, strictly increasing nonlinearities, dense head.
GlobalInferenceCheck check_global_inference(const Network& net);

std::string to_json(const LipschitzReport& report);
std::string to_json(const TemplatePotential& report);
std::string to_json(const GlobalInferenceCheck& report);

}  // namespace splinet
