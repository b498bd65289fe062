#include "splinet/builders.hpp"

#include <cmath>

namespace splinet {

namespace {

std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Layer random_activation(Rng& rng) {
    switch (uniform_int(rng, 0, 2)) {
        case 0:
            return relu();
        case 1:
            return leaky_relu(0.1);
        default:
            return abs_layer();
    }
}

}  // namespace

Vector random_normal(std::size_t n, Rng& rng, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    Vector v(n);
    for (double& x : v) {
        x = normal(rng);
    }
    return v;
}

Vector random_unit(std::size_t n, Rng& rng) {
    Vector v = random_normal(n, rng);
    const double nv = norm2(v);
    for (double& x : v) {
        x /= nv;
    }
    return v;
}

Vector random_input(const Network& net, Rng& rng) {
    return random_unit(net.input_dim(), rng);
}

Dense make_dense(std::size_t in, std::size_t out, Rng& rng, double gain, double bias_scale) {
    const double sd = gain * std::sqrt(2.0 / static_cast<double>(in));
    Dense d{Matrix(out, in, random_normal(out * in, rng, sd)), random_normal(out, rng, bias_scale)};
    if (bias_scale == 0.0) {
        d.bias.assign(out, 0.0);
    }
    return d;
}

Conv2D make_conv(const Shape3& in_shape, std::size_t out_channels, std::size_t kernel, Padding padding, Rng& rng,
                 double gain, double bias_scale) {
    Conv2D c;
    c.in_shape = in_shape;
    c.out_channels = out_channels;
    c.kernel_rows = kernel;
    c.kernel_cols = kernel;
    c.padding = padding;
    const double fan_in = static_cast<double>(in_shape.channels * kernel * kernel);
    c.filters = random_normal(out_channels * in_shape.channels * kernel * kernel, rng, gain * std::sqrt(2.0 / fan_in));
    c.bias = bias_scale == 0.0 ? Vector(out_channels, 0.0) : random_normal(out_channels, rng, bias_scale);
    return c;
}

Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
                 ActivationKind activation, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Layer> layers;
    std::size_t width = input_dim;
    for (std::size_t h : hidden) {
        layers.push_back(Layer{make_dense(width, h, rng)});
        layers.push_back(Layer{Activation{activation, activation == ActivationKind::leaky_relu ? 0.1 : kDefaultLeakySlope}});
        width = h;
    }
    layers.push_back(Layer{make_dense(width, classes, rng)});
    return Network(Shape3{input_dim, 1, 1}, std::move(layers));
}

Network make_small_cnn(const Shape3& input_shape, std::size_t classes, std::uint64_t seed, std::size_t channels1,
                       std::size_t channels2, PoolKind pool) {
    Rng rng(seed);
    std::vector<Layer> layers;
    auto add_pool = [&](const Shape3& s) {
        layers.push_back(pool == PoolKind::max ? max_pool_2d(s, 2) : mean_pool_2d(s, 2));
    };
    Conv2D c1 = make_conv(input_shape, channels1, 3, Padding::valid, rng, 1.0, 0.0);
    Shape3 s = c1.out_shape();
    layers.push_back(Layer{std::move(c1)});
    layers.push_back(relu());
    add_pool(s);
    s = pool_regions_2d(s, 2, 2).out_shape;
    Conv2D c2 = make_conv(s, channels2, 3, Padding::valid, rng, 1.0, 0.0);
    s = c2.out_shape();
    layers.push_back(Layer{std::move(c2)});
    layers.push_back(relu());
    add_pool(s);
    s = pool_regions_2d(s, 2, 2).out_shape;
    layers.push_back(Layer{make_dense(s.size(), classes, rng, 1.0, 0.0)});
    return Network(input_shape, std::move(layers));
}

Network make_random_architecture(std::uint64_t seed, const RandomArchitectureOptions& options) {
    Rng rng(seed);
    Shape3 s{uniform_int(rng, 1, options.max_channels), uniform_int(rng, 3, options.max_input_side),
             uniform_int(rng, 3, options.max_input_side)};
    const Shape3 input = s;
    std::vector<Layer> layers;
    const std::size_t blocks = uniform_int(rng, 1, options.max_blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t choice = uniform_int(rng, 0, 3);
        if (choice == 0 || (choice == 2 && (s.rows < 2 || s.cols < 2))) {
            const std::size_t k = uniform_int(rng, 1, std::min<std::size_t>(3, std::min(s.rows, s.cols)));
            const Padding pad = uniform_int(rng, 0, 1) == 0 ? Padding::valid : Padding::zero_same;
            Conv2D c = make_conv(s, uniform_int(rng, 1, options.max_channels), k, pad, rng);
            s = c.out_shape();
            layers.push_back(Layer{std::move(c)});
            layers.push_back(random_activation(rng));
        } else if (choice == 1) {
            ResidualBlock r;
            Conv2D c1 = make_conv(s, s.channels, std::min<std::size_t>(3, std::min(s.rows, s.cols)), Padding::zero_same,
                                  rng, 0.7);
            Conv2D c2 = make_conv(s, s.channels, std::min<std::size_t>(3, std::min(s.rows, s.cols)), Padding::zero_same,
                                  rng, 0.7);
            r.inner.push_back(Layer{std::move(c1)});
            r.inner.push_back(random_activation(rng));
            r.inner.push_back(Layer{std::move(c2)});
            layers.push_back(Layer{std::move(r)});
            layers.push_back(random_activation(rng));
        } else if (choice == 2) {
            const std::size_t k = 2;
            layers.push_back(uniform_int(rng, 0, 1) == 0 ? max_pool_2d(s, k) : mean_pool_2d(s, k));
            s = pool_regions_2d(s, k, k).out_shape;
        } else {
            layers.push_back(random_activation(rng));
        }
    }
    // Dense head, optionally through a projected residual block.
    std::size_t width = s.size();
    const std::size_t hidden = uniform_int(rng, 3, 8);
    if (uniform_int(rng, 0, 1) == 0) {
        ResidualBlock r;
        r.inner.push_back(Layer{make_dense(width, hidden, rng)});
        r.inner.push_back(random_activation(rng));
        r.inner.push_back(Layer{make_dense(hidden, hidden, rng)});
        r.projection = make_dense(width, hidden, rng);
        layers.push_back(Layer{std::move(r)});
    } else {
        layers.push_back(Layer{make_dense(width, hidden, rng)});
    }
    layers.push_back(random_activation(rng));
    width = hidden;
    layers.push_back(Layer{make_dense(width, uniform_int(rng, 2, options.max_classes), rng)});
    return Network(input, std::move(layers));
}

}  // namespace splinet
