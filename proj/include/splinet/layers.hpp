#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "splinet/tensor.hpp"

namespace splinet {

enum class Padding { valid, zero_same };

enum class ActivationKind { relu, leaky_relu, abs };

constexpr double kDefaultLeakySlope = 0.01;

struct Dense {
    Matrix weights;  // (out, in)
    Vector bias;     // (out)
};

/// Stride-1 cross-correlation with a per-output-channel shared bias.
struct Conv2D {
    Shape3 in_shape;
    std::size_t out_channels = 1;
    std::size_t kernel_rows = 1;
    std::size_t kernel_cols = 1;
    Padding padding = Padding::valid;
    Vector filters;  // (C_out, C_in, M, N) row-major
    Vector bias;     // (C_out)

    Shape3 out_shape() const;
    double filter(std::size_t co, std::size_t ci, std::size_t m, std::size_t n) const {
        return filters[((co * in_shape.channels + ci) * kernel_rows + m) * kernel_cols + n];
    }
};

struct Activation {
    ActivationKind kind = ActivationKind::relu;
    double leaky_slope = kDefaultLeakySlope;  // only read for leaky_relu
};

/// Pooling regions over flat input indices. `window` is set when the regions
/// were generated from a 2-D (kh, kw) tiling, and is used for compact storage.
struct PoolRegions {
    std::vector<std::vector<std::uint32_t>> regions;
    std::size_t in_size = 0;
    Shape3 out_shape;
    std::optional<std::pair<std::size_t, std::size_t>> window;
    Shape3 window_in_shape;
};

struct MaxPool {
    PoolRegions pool;
};

struct MeanPool {
    PoolRegions pool;
};

struct Layer;

/// output = inner(x) + skip(x); skip is the identity unless a projection is given.
struct ResidualBlock {
    std::vector<Layer> inner;
    std::optional<Dense> projection;
};

struct Layer {
    std::variant<Dense, Conv2D, Activation, MaxPool, MeanPool, ResidualBlock> op;
};

/// Non-overlapping (kh, kw) windows per channel; trailing partial windows are
/// kept so every input index is covered.
PoolRegions pool_regions_2d(const Shape3& in_shape, std::size_t kh, std::size_t kw);

/// Per-layer region evidence. Elementwise nonlinearities fill `slopes`,
/// max-pooling fills `winners` (flat input index per region), residual blocks
/// nest one record per inner layer. Linear layers leave everything empty.
struct LayerTrace {
    std::vector<double> slopes;
    std::vector<std::uint32_t> winners;
    std::vector<LayerTrace> inner;

    bool operator==(const LayerTrace&) const = default;
};

struct ActivationTrace {
    std::vector<LayerTrace> layers;

    bool operator==(const ActivationTrace&) const = default;
};

/// Per-parameter arrays in network traversal order (weights, then bias, per
/// parametrized layer, depth first through residual blocks).
using ParameterSet = std::vector<Vector>;

class Network {
public:
    Network() = default;
    /// Validates shape propagation; throws ShapeError naming the layer index.
    Network(Shape3 input_shape, std::vector<Layer> layers);

    const Shape3& input_shape() const { return input_shape_; }
    std::size_t input_dim() const { return input_shape_.size(); }
    std::size_t output_dim() const { return shapes_.empty() ? input_dim() : shapes_.back().size(); }
    std::size_t size() const { return layers_.size(); }

    const std::vector<Layer>& layers() const { return layers_; }
    const Layer& layer(std::size_t i) const { return layers_.at(i); }
    Shape3 layer_in_shape(std::size_t i) const { return i == 0 ? input_shape_ : shapes_.at(i - 1); }
    const Shape3& layer_out_shape(std::size_t i) const { return shapes_.at(i); }

    /// Mutable views of every parameter array, in ParameterSet order.
    std::vector<std::span<double>> parameters();
    std::vector<std::span<const double>> parameters() const;
    ParameterSet zero_parameter_set() const;
    ParameterSet parameter_values() const;
    void set_parameters(const ParameterSet& values);

    /// Index of the first ParameterSet entry owned by top-level layer i.
    std::size_t parameter_offset(std::size_t layer_index) const { return offsets_.at(layer_index); }

private:
    Shape3 input_shape_;
    std::vector<Layer> layers_;
    std::vector<Shape3> shapes_;
    std::vector<std::size_t> offsets_;
};

std::size_t parameter_array_count(const Layer& layer);

// Single-layer evaluation.

Vector dense_forward(const Matrix& weights, std::span<const double> bias, std::span<const double> x);

/// filters: (C_out, C_in, M, N); bias: (C_out); x: (C_in, I, J).
Tensor conv2d_forward(const Tensor& filters, std::span<const double> bias, const Tensor& x, Padding padding);
Vector conv2d_forward(const Conv2D& conv, std::span<const double> x);

/// Dense matrix C with C·flatten(x) + b == flatten(conv(x)).
std::pair<Matrix, Vector> conv_as_matrix(const Conv2D& conv);
std::pair<Matrix, Vector> conv_as_matrix(const Tensor& filters, std::span<const double> bias,
                                         const Shape3& in_shape, Padding padding);

struct NonlinearityOutput {
    Vector output;
    std::vector<double> slopes;
};

/// Slope per coordinate from the admissible set of `act`; a pre-activation of
/// exactly zero takes the inactive slope (ReLU 0, LeakyReLU η, Abs +1).
NonlinearityOutput nonlinearity_forward(const Activation& act, std::span<const double> x);

struct PoolOutput {
    Vector output;
    std::vector<std::uint32_t> winners;
};

/// Ties go to the lowest index.
PoolOutput maxpool_forward(const std::vector<std::vector<std::uint32_t>>& regions, std::span<const double> x);
Vector meanpool_forward(const std::vector<std::vector<std::uint32_t>>& regions, std::span<const double> x);

struct ResidualOutput {
    Vector output;
    LayerTrace trace;
};

ResidualOutput residual_forward(const ResidualBlock& block, const Shape3& in_shape, std::span<const double> x);

/// Max-subtracted softmax.
Vector softmax(std::span<const double> z);

struct ForwardResult {
    Vector logits;
    ActivationTrace trace;
};

/// Pre-softmax logits plus every nonlinearity and pooling decision in layer order.
ForwardResult network_forward(const Network& net, std::span<const double> x);

/// Representation after layer `layer_index` (its output).
Vector layer_output(const Network& net, std::span<const double> x, std::size_t layer_index);

// Frozen-region evaluation. With the trace held fixed every layer is affine,
// so these run the network's active spline piece rather than the network.

struct LayerCache {
    Vector input;
    std::vector<LayerCache> inner;
};

struct NetworkCache {
    std::vector<LayerCache> layers;  // indexed by absolute layer index
};

constexpr std::size_t kAllLayers = std::numeric_limits<std::size_t>::max();

/// Applies layers [first, last) with the region choices of `trace`. With
/// `with_bias == false` the result is the linear part A·x of the piece.
Vector apply_frozen(const Network& net, const ActivationTrace& trace, std::span<const double> x, bool with_bias,
                    NetworkCache* cache = nullptr, std::size_t first = 0, std::size_t last = kAllLayers);

/// Vector-Jacobian product of the frozen piece over layers [first, last):
/// returns (d out / d in)ᵀ upstream. When `grads` is given, parameter
/// gradients are accumulated into it; bias gradients only if `bias_grads`.
Vector backprop_frozen(const Network& net, const ActivationTrace& trace, const NetworkCache& cache,
                       std::span<const double> upstream, ParameterSet* grads, bool bias_grads,
                       std::size_t first = 0, std::size_t last = kAllLayers);

/// Forward pass recording the trace and the per-layer inputs.
ForwardResult forward_with_cache(const Network& net, std::span<const double> x, NetworkCache& cache);

}  // namespace splinet
