#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "splinet/layers.hpp"

namespace splinet {

using Rng = std::mt19937_64;

/// He-style initialization: weights ~ N(0, gain² · 2 / fan_in), biases ~ N(0, bias_scale²).
Dense make_dense(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0, double bias_scale = 0.1);
Conv2D make_conv(const Shape3& in_shape, std::size_t out_channels, std::size_t kernel, Padding padding, Rng& rng,
                 double gain = 1.0, double bias_scale = 0.1);

inline Layer relu() { return Layer{Activation{ActivationKind::relu}}; }
inline Layer leaky_relu(double slope = kDefaultLeakySlope) { return Layer{Activation{ActivationKind::leaky_relu, slope}}; }
inline Layer abs_layer() { return Layer{Activation{ActivationKind::abs}}; }
inline Layer max_pool_2d(const Shape3& in, std::size_t k) { return Layer{MaxPool{pool_regions_2d(in, k, k)}}; }
inline Layer mean_pool_2d(const Shape3& in, std::size_t k) { return Layer{MeanPool{pool_regions_2d(in, k, k)}}; }

/// Fully connected net: Dense, activation, ..., Dense(classes).
Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
                 ActivationKind activation, std::uint64_t seed);

enum class PoolKind { max, mean };

/// conv3x3(c1) - relu - pool2 - conv3x3(c2) - relu - pool2 - dense(classes).
Network make_small_cnn(const Shape3& input_shape, std::size_t classes, std::uint64_t seed,
                       std::size_t channels1 = 8, std::size_t channels2 = 16, PoolKind pool = PoolKind::max);

struct RandomArchitectureOptions {
    std::size_t max_input_side = 6;
    std::size_t max_channels = 3;
    std::size_t max_classes = 4;
    std::size_t max_blocks = 4;
};

/// Random mix of dense, conv, ReLU/LeakyReLU/Abs, max/mean pooling and residual
/// blocks ending in a dense head; deterministic per seed.
Network make_random_architecture(std::uint64_t seed, const RandomArchitectureOptions& options = {});

/// Standard normal vector.
Vector random_normal(std::size_t n, Rng& rng, double scale = 1.0);
Vector random_unit(std::size_t n, Rng& rng);

/// Unit-norm input for `net`.
Vector random_input(const Network& net, Rng& rng);

}  // namespace splinet
