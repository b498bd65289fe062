#include "splinet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace splinet {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string shape_str(const Shape3& s) {
    return "(" + std::to_string(s.channels) + "," + std::to_string(s.rows) + "," + std::to_string(s.cols) + ")";
}

void check_regions(const PoolRegions& pool, std::size_t in_size) {
    if (pool.in_size != in_size) {
        throw ShapeError("pooling expects input of size " + std::to_string(pool.in_size) + ", got " +
                         std::to_string(in_size));
    }
    if (pool.regions.size() != pool.out_shape.size()) {
        throw ShapeError("pooling output shape does not match region count");
    }
    std::vector<bool> covered(in_size, false);
    for (const auto& region : pool.regions) {
        if (region.empty()) {
            throw ConfigError("pooling region is empty");
        }
        for (std::uint32_t idx : region) {
            if (idx >= in_size) {
                throw ConfigError("pooling region index " + std::to_string(idx) + " out of range");
            }
            covered[idx] = true;
        }
    }
    if (std::find(covered.begin(), covered.end(), false) != covered.end()) {
        throw ConfigError("pooling regions do not cover every input index");
    }
}

Shape3 out_shape_of(const Layer& layer, const Shape3& in);

Shape3 out_shape_of_sequence(const std::vector<Layer>& layers, Shape3 shape) {
    for (const Layer& l : layers) {
        shape = out_shape_of(l, shape);
    }
    return shape;
}

Shape3 out_shape_of(const Layer& layer, const Shape3& in) {
    return std::visit(
        overloaded{
            [&](const Dense& d) -> Shape3 {
                if (d.weights.cols() != in.size()) {
                    throw ShapeError("dense layer expects input of size " + std::to_string(d.weights.cols()) +
                                     ", got " + std::to_string(in.size()));
                }
                if (d.bias.size() != d.weights.rows()) {
                    throw ShapeError("dense bias length does not match weight rows");
                }
                return Shape3{d.weights.rows(), 1, 1};
            },
            [&](const Conv2D& c) -> Shape3 {
                if (!(c.in_shape == in)) {
                    throw ShapeError("conv2d declared input shape " + shape_str(c.in_shape) + ", got " +
                                     shape_str(in));
                }
                if (c.kernel_rows > in.rows || c.kernel_cols > in.cols || c.kernel_rows == 0 ||
                    c.kernel_cols == 0) {
                    throw ShapeError("conv2d filter larger than input " + shape_str(in));
                }
                if (c.filters.size() != c.out_channels * in.channels * c.kernel_rows * c.kernel_cols) {
                    throw ShapeError("conv2d filter bank size mismatch");
                }
                if (c.bias.size() != c.out_channels) {
                    throw ShapeError("conv2d bias length must equal output channels");
                }
                return c.out_shape();
            },
            [&](const Activation& a) -> Shape3 {
                if (a.kind == ActivationKind::leaky_relu && !(a.leaky_slope > 0.0)) {
                    throw ConfigError("leaky relu slope must be positive");
                }
                return in;
            },
            [&](const MaxPool& p) -> Shape3 {
                check_regions(p.pool, in.size());
                return p.pool.out_shape;
            },
            [&](const MeanPool& p) -> Shape3 {
                check_regions(p.pool, in.size());
                return p.pool.out_shape;
            },
            [&](const ResidualBlock& r) -> Shape3 {
                const Shape3 inner = out_shape_of_sequence(r.inner, in);
                if (r.projection) {
                    const Shape3 skip = out_shape_of(Layer{*r.projection}, in);
                    if (skip.size() != inner.size()) {
                        throw ShapeError("residual projection output " + std::to_string(skip.size()) +
                                         " does not match inner path output " + std::to_string(inner.size()));
                    }
                } else if (inner.size() != in.size()) {
                    throw ShapeError("residual inner path changes size " + std::to_string(in.size()) + " -> " +
                                     std::to_string(inner.size()) + " without a projection");
                }
                return inner;
            },
        },
        layer.op);
}

void collect_parameters(Layer& layer, std::vector<std::span<double>>& out) {
    std::visit(overloaded{
                   [&](Dense& d) {
                       out.emplace_back(d.weights.data());
                       out.emplace_back(d.bias);
                   },
                   [&](Conv2D& c) {
                       out.emplace_back(c.filters);
                       out.emplace_back(c.bias);
                   },
                   [&](ResidualBlock& r) {
                       for (Layer& l : r.inner) {
                           collect_parameters(l, out);
                       }
                       if (r.projection) {
                           out.emplace_back(r.projection->weights.data());
                           out.emplace_back(r.projection->bias);
                       }
                   },
                   [](auto&) {},
               },
               layer.op);
}

// Forward over one layer, either recording region choices (`frozen == nullptr`)
// or replaying the choices in `frozen`.
Vector run_layer(const Layer& layer, const Shape3& in_shape, std::span<const double> x, const LayerTrace* frozen,
                 LayerTrace* record, bool with_bias, LayerCache* cache);

Vector run_dense(const Dense& d, std::span<const double> x, bool with_bias) {
    Vector out = matvec(d.weights, x);
    if (with_bias) {
        axpy(1.0, d.bias, out);
    }
    return out;
}

Vector run_conv(const Conv2D& c, std::span<const double> x, bool with_bias) {
    const Shape3& in = c.in_shape;
    const Shape3 out_shape = c.out_shape();
    const std::ptrdiff_t pad_r = c.padding == Padding::zero_same ? (static_cast<std::ptrdiff_t>(c.kernel_rows) - 1) / 2 : 0;
    const std::ptrdiff_t pad_c = c.padding == Padding::zero_same ? (static_cast<std::ptrdiff_t>(c.kernel_cols) - 1) / 2 : 0;
    const auto in_rows = static_cast<std::ptrdiff_t>(in.rows);
    const auto in_cols = static_cast<std::ptrdiff_t>(in.cols);
    const auto out_rows = static_cast<std::ptrdiff_t>(out_shape.rows);
    const auto out_cols = static_cast<std::ptrdiff_t>(out_shape.cols);
    Vector out(out_shape.size(), 0.0);
    for (std::size_t co = 0; co < c.out_channels; ++co) {
        double* o = out.data() + co * out_shape.rows * out_shape.cols;
        if (with_bias) {
            std::fill(o, o + out_shape.rows * out_shape.cols, c.bias[co]);
        }
        for (std::size_t ci = 0; ci < in.channels; ++ci) {
            const double* xin = x.data() + ci * in.rows * in.cols;
            for (std::size_t m = 0; m < c.kernel_rows; ++m) {
                for (std::size_t n = 0; n < c.kernel_cols; ++n) {
                    const double w = c.filter(co, ci, m, n);
                    if (w == 0.0) {
                        continue;
                    }
                    const std::ptrdiff_t dr = static_cast<std::ptrdiff_t>(m) - pad_r;
                    const std::ptrdiff_t dc = static_cast<std::ptrdiff_t>(n) - pad_c;
                    const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -dr);
                    const std::ptrdiff_t i1 = std::min(out_rows, in_rows - dr);
                    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dc);
                    const std::ptrdiff_t j1 = std::min(out_cols, in_cols - dc);
                    for (std::ptrdiff_t i = i0; i < i1; ++i) {
                        double* orow = o + i * out_cols;
                        const double* xrow = xin + (i + dr) * in_cols + dc;
                        for (std::ptrdiff_t j = j0; j < j1; ++j) {
                            orow[j] += w * xrow[j];
                        }
                    }
                }
            }
        }
    }
    return out;
}

Vector backprop_conv(const Conv2D& c, std::span<const double> x, std::span<const double> up, std::span<Vector> grads,
                     bool bias_grads) {
    const Shape3& in = c.in_shape;
    const Shape3 out_shape = c.out_shape();
    const std::ptrdiff_t pad_r = c.padding == Padding::zero_same ? (static_cast<std::ptrdiff_t>(c.kernel_rows) - 1) / 2 : 0;
    const std::ptrdiff_t pad_c = c.padding == Padding::zero_same ? (static_cast<std::ptrdiff_t>(c.kernel_cols) - 1) / 2 : 0;
    const auto in_rows = static_cast<std::ptrdiff_t>(in.rows);
    const auto in_cols = static_cast<std::ptrdiff_t>(in.cols);
    const auto out_rows = static_cast<std::ptrdiff_t>(out_shape.rows);
    const auto out_cols = static_cast<std::ptrdiff_t>(out_shape.cols);
    const bool want_grads = !grads.empty();
    Vector gx(in.size(), 0.0);
    for (std::size_t co = 0; co < c.out_channels; ++co) {
        const double* g = up.data() + co * out_shape.rows * out_shape.cols;
        if (want_grads && bias_grads) {
            double s = 0.0;
            for (std::size_t k = 0; k < out_shape.rows * out_shape.cols; ++k) {
                s += g[k];
            }
            grads[1][co] += s;
        }
        for (std::size_t ci = 0; ci < in.channels; ++ci) {
            const double* xin = want_grads ? x.data() + ci * in.rows * in.cols : nullptr;
            double* gin = gx.data() + ci * in.rows * in.cols;
            for (std::size_t m = 0; m < c.kernel_rows; ++m) {
                for (std::size_t n = 0; n < c.kernel_cols; ++n) {
                    const std::size_t widx = ((co * in.channels + ci) * c.kernel_rows + m) * c.kernel_cols + n;
                    const double w = c.filters[widx];
                    const std::ptrdiff_t dr = static_cast<std::ptrdiff_t>(m) - pad_r;
                    const std::ptrdiff_t dc = static_cast<std::ptrdiff_t>(n) - pad_c;
                    const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -dr);
                    const std::ptrdiff_t i1 = std::min(out_rows, in_rows - dr);
                    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dc);
                    const std::ptrdiff_t j1 = std::min(out_cols, in_cols - dc);
                    for (std::ptrdiff_t i = i0; i < i1; ++i) {
                        const double* grow = g + i * out_cols;
                        double* girow = gin + (i + dr) * in_cols + dc;
                        for (std::ptrdiff_t j = j0; j < j1; ++j) {
                            girow[j] += w * grow[j];
                        }
                    }
                    if (want_grads) {
                        double gw = 0.0;
                        for (std::ptrdiff_t i = i0; i < i1; ++i) {
                            const double* grow = g + i * out_cols;
                            const double* xrow = xin + (i + dr) * in_cols + dc;
                            for (std::ptrdiff_t j = j0; j < j1; ++j) {
                                gw += grow[j] * xrow[j];
                            }
                        }
                        grads[0][widx] += gw;
                    }
                }
            }
        }
    }
    return gx;
}

std::vector<double> record_slopes(const Activation& act, std::span<const double> x) {
    std::vector<double> slopes(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) {
        switch (act.kind) {
            case ActivationKind::relu:
                slopes[d] = x[d] > 0.0 ? 1.0 : 0.0;
                break;
            case ActivationKind::leaky_relu:
                slopes[d] = x[d] > 0.0 ? 1.0 : act.leaky_slope;
                break;
            case ActivationKind::abs:
                slopes[d] = x[d] < 0.0 ? -1.0 : 1.0;
                break;
        }
    }
    return slopes;
}

std::vector<std::uint32_t> record_winners(const PoolRegions& pool, std::span<const double> x) {
    std::vector<std::uint32_t> winners(pool.regions.size());
    for (std::size_t d = 0; d < pool.regions.size(); ++d) {
        const auto& region = pool.regions[d];
        std::uint32_t best = region.front();
        for (std::uint32_t idx : region) {
            if (x[idx] > x[best] || (x[idx] == x[best] && idx < best)) {
                best = idx;
            }
        }
        winners[d] = best;
    }
    return winners;
}

std::vector<Shape3> inner_in_shapes(const ResidualBlock& r, const Shape3& in) {
    std::vector<Shape3> shapes;
    shapes.reserve(r.inner.size());
    Shape3 s = in;
    for (const Layer& l : r.inner) {
        shapes.push_back(s);
        s = out_shape_of(l, s);
    }
    return shapes;
}

Vector run_layer(const Layer& layer, const Shape3& in_shape, std::span<const double> x, const LayerTrace* frozen,
                 LayerTrace* record, bool with_bias, LayerCache* cache) {
    if (cache) {
        cache->input.assign(x.begin(), x.end());
    }
    return std::visit(
        overloaded{
            [&](const Dense& d) { return run_dense(d, x, with_bias); },
            [&](const Conv2D& c) { return run_conv(c, x, with_bias); },
            [&](const Activation& a) {
                std::vector<double> slopes;
                const std::vector<double>* used = nullptr;
                if (frozen) {
                    if (frozen->slopes.size() != x.size()) {
                        throw ConsistencyError("trace has " + std::to_string(frozen->slopes.size()) +
                                               " slopes for a nonlinearity of width " + std::to_string(x.size()));
                    }
                    used = &frozen->slopes;
                } else {
                    slopes = record_slopes(a, x);
                    used = &slopes;
                }
                Vector out(x.size());
                for (std::size_t d = 0; d < x.size(); ++d) {
                    out[d] = (*used)[d] * x[d];
                }
                if (record) {
                    record->slopes = std::move(slopes);
                }
                return out;
            },
            [&](const MaxPool& p) {
                std::vector<std::uint32_t> winners;
                const std::vector<std::uint32_t>* used = nullptr;
                if (frozen) {
                    if (frozen->winners.size() != p.pool.regions.size()) {
                        throw ConsistencyError("trace winner count does not match pooling regions");
                    }
                    used = &frozen->winners;
                } else {
                    winners = record_winners(p.pool, x);
                    used = &winners;
                }
                Vector out(p.pool.regions.size());
                for (std::size_t d = 0; d < out.size(); ++d) {
                    const std::uint32_t w = (*used)[d];
                    if (w >= x.size()) {
                        throw ConsistencyError("trace winner index out of range");
                    }
                    out[d] = x[w];
                }
                if (record) {
                    record->winners = std::move(winners);
                }
                return out;
            },
            [&](const MeanPool& p) { return meanpool_forward(p.pool.regions, x); },
            [&](const ResidualBlock& r) {
                const std::vector<Shape3> shapes = inner_in_shapes(r, in_shape);
                if (frozen && frozen->inner.size() != r.inner.size()) {
                    throw ConsistencyError("residual trace has wrong number of inner records");
                }
                if (record) {
                    record->inner.assign(r.inner.size(), LayerTrace{});
                }
                if (cache) {
                    cache->inner.assign(r.inner.size(), LayerCache{});
                }
                Vector h(x.begin(), x.end());
                for (std::size_t k = 0; k < r.inner.size(); ++k) {
                    h = run_layer(r.inner[k], shapes[k], h, frozen ? &frozen->inner[k] : nullptr,
                                  record ? &record->inner[k] : nullptr, with_bias, cache ? &cache->inner[k] : nullptr);
                }
                const Vector skip = r.projection ? run_dense(*r.projection, x, with_bias) : Vector(x.begin(), x.end());
                axpy(1.0, skip, h);
                return h;
            },
        },
        layer.op);
}

Vector backprop_layer(const Layer& layer, const Shape3& in_shape, const LayerTrace& trace, const LayerCache& cache,
                      std::span<const double> up, std::span<Vector> grads, bool bias_grads) {
    const bool want_grads = !grads.empty();
    return std::visit(
        overloaded{
            [&](const Dense& d) {
                if (want_grads) {
                    const auto& x = cache.input;
                    auto& gw = grads[0];
                    for (std::size_t r = 0; r < d.weights.rows(); ++r) {
                        if (up[r] == 0.0) {
                            continue;
                        }
                        axpy(up[r], x, std::span<double>(gw.data() + r * d.weights.cols(), d.weights.cols()));
                    }
                    if (bias_grads) {
                        axpy(1.0, up, grads[1]);
                    }
                }
                return matvec_transposed(d.weights, up);
            },
            [&](const Conv2D& c) { return backprop_conv(c, cache.input, up, grads, bias_grads); },
            [&](const Activation&) {
                if (trace.slopes.size() != up.size()) {
                    throw ConsistencyError("trace slope count does not match upstream gradient");
                }
                Vector g(up.size());
                for (std::size_t d = 0; d < up.size(); ++d) {
                    g[d] = trace.slopes[d] * up[d];
                }
                return g;
            },
            [&](const MaxPool& p) {
                if (trace.winners.size() != up.size()) {
                    throw ConsistencyError("trace winner count does not match upstream gradient");
                }
                Vector g(p.pool.in_size, 0.0);
                for (std::size_t d = 0; d < up.size(); ++d) {
                    g[trace.winners[d]] += up[d];
                }
                return g;
            },
            [&](const MeanPool& p) {
                Vector g(p.pool.in_size, 0.0);
                for (std::size_t d = 0; d < up.size(); ++d) {
                    const auto& region = p.pool.regions[d];
                    const double share = up[d] / static_cast<double>(region.size());
                    for (std::uint32_t idx : region) {
                        g[idx] += share;
                    }
                }
                return g;
            },
            [&](const ResidualBlock& r) {
                const std::vector<Shape3> shapes = inner_in_shapes(r, in_shape);
                std::vector<std::size_t> offsets(r.inner.size() + 1, 0);
                for (std::size_t k = 0; k < r.inner.size(); ++k) {
                    offsets[k + 1] = offsets[k] + parameter_array_count(r.inner[k]);
                }
                Vector g(up.begin(), up.end());
                for (std::size_t k = r.inner.size(); k-- > 0;) {
                    std::span<Vector> sub =
                        want_grads ? grads.subspan(offsets[k], offsets[k + 1] - offsets[k]) : std::span<Vector>{};
                    g = backprop_layer(r.inner[k], shapes[k], trace.inner.at(k), cache.inner.at(k), g, sub,
                                       bias_grads);
                }
                if (r.projection) {
                    LayerCache proj_cache{cache.input, {}};
                    std::span<Vector> sub = want_grads ? grads.subspan(offsets.back(), 2) : std::span<Vector>{};
                    const Vector gs =
                        backprop_layer(Layer{*r.projection}, in_shape, LayerTrace{}, proj_cache, up, sub, bias_grads);
                    axpy(1.0, gs, g);
                } else {
                    axpy(1.0, up, g);
                }
                return g;
            },
        },
        layer.op);
}

}  // namespace

Shape3 Conv2D::out_shape() const {
    if (padding == Padding::zero_same) {
        return Shape3{out_channels, in_shape.rows, in_shape.cols};
    }
    return Shape3{out_channels, in_shape.rows - kernel_rows + 1, in_shape.cols - kernel_cols + 1};
}

PoolRegions pool_regions_2d(const Shape3& in_shape, std::size_t kh, std::size_t kw) {
    if (kh == 0 || kw == 0) {
        throw ConfigError("pooling window must be at least 1x1");
    }
    const std::size_t out_rows = (in_shape.rows + kh - 1) / kh;
    const std::size_t out_cols = (in_shape.cols + kw - 1) / kw;
    PoolRegions pool;
    pool.in_size = in_shape.size();
    pool.out_shape = Shape3{in_shape.channels, out_rows, out_cols};
    pool.window = std::make_pair(kh, kw);
    pool.window_in_shape = in_shape;
    for (std::size_t c = 0; c < in_shape.channels; ++c) {
        for (std::size_t oi = 0; oi < out_rows; ++oi) {
            for (std::size_t oj = 0; oj < out_cols; ++oj) {
                std::vector<std::uint32_t> region;
                for (std::size_t i = oi * kh; i < std::min(in_shape.rows, (oi + 1) * kh); ++i) {
                    for (std::size_t j = oj * kw; j < std::min(in_shape.cols, (oj + 1) * kw); ++j) {
                        region.push_back(static_cast<std::uint32_t>(flat_index(in_shape, c, i, j)));
                    }
                }
                pool.regions.push_back(std::move(region));
            }
        }
    }
    return pool;
}

std::size_t parameter_array_count(const Layer& layer) {
    return std::visit(overloaded{
                          [](const Dense&) -> std::size_t { return 2; },
                          [](const Conv2D&) -> std::size_t { return 2; },
                          [](const ResidualBlock& r) -> std::size_t {
                              std::size_t n = r.projection ? 2 : 0;
                              for (const Layer& l : r.inner) {
                                  n += parameter_array_count(l);
                              }
                              return n;
                          },
                          [](const auto&) -> std::size_t { return 0; },
                      },
                      layer.op);
}

Network::Network(Shape3 input_shape, std::vector<Layer> layers)
    : input_shape_(input_shape), layers_(std::move(layers)) {
    if (input_shape_.size() == 0) {
        throw ShapeError("network input shape must have nonzero extents");
    }
    Shape3 s = input_shape_;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            s = out_shape_of(layers_[i], s);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError("layer " + std::to_string(i) + ": " + e.what());
        }
        shapes_.push_back(s);
        offsets_.push_back(offset);
        offset += parameter_array_count(layers_[i]);
    }
}

std::vector<std::span<double>> Network::parameters() {
    std::vector<std::span<double>> out;
    for (Layer& l : layers_) {
        collect_parameters(l, out);
    }
    return out;
}

std::vector<std::span<const double>> Network::parameters() const {
    auto mutable_views = const_cast<Network*>(this)->parameters();
    return {mutable_views.begin(), mutable_views.end()};
}

ParameterSet Network::zero_parameter_set() const {
    ParameterSet out;
    for (auto p : parameters()) {
        out.emplace_back(p.size(), 0.0);
    }
    return out;
}

ParameterSet Network::parameter_values() const {
    ParameterSet out;
    for (auto p : parameters()) {
        out.emplace_back(p.begin(), p.end());
    }
    return out;
}

void Network::set_parameters(const ParameterSet& values) {
    auto views = parameters();
    if (views.size() != values.size()) {
        throw ShapeError("parameter set has " + std::to_string(values.size()) + " arrays, network has " +
                         std::to_string(views.size()));
    }
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (views[i].size() != values[i].size()) {
            throw ShapeError("parameter array " + std::to_string(i) + " has wrong length");
        }
        std::copy(values[i].begin(), values[i].end(), views[i].begin());
    }
}

Vector dense_forward(const Matrix& weights, std::span<const double> bias, std::span<const double> x) {
    if (bias.size() != weights.rows()) {
        throw ShapeError("dense_forward: bias length " + std::to_string(bias.size()) + " != rows " +
                         std::to_string(weights.rows()));
    }
    Vector out = matvec(weights, x);
    axpy(1.0, bias, out);
    return out;
}

namespace {

Conv2D conv_from_tensors(const Tensor& filters, std::span<const double> bias, const Shape3& in_shape,
                         Padding padding) {
    if (filters.rank() != 4) {
        throw ShapeError("conv filters must be rank 4 (C_out, C_in, M, N)");
    }
    const auto& fs = filters.shape();
    if (fs[1] != in_shape.channels) {
        throw ShapeError("conv filters expect " + std::to_string(fs[1]) + " input channels, input has " +
                         std::to_string(in_shape.channels));
    }
    if (fs[2] > in_shape.rows || fs[3] > in_shape.cols) {
        throw ShapeError("conv filter " + std::to_string(fs[2]) + "x" + std::to_string(fs[3]) +
                         " larger than input " + shape_str(in_shape));
    }
    if (bias.size() != fs[0]) {
        throw ShapeError("conv bias length must equal output channels");
    }
    Conv2D c;
    c.in_shape = in_shape;
    c.out_channels = fs[0];
    c.kernel_rows = fs[2];
    c.kernel_cols = fs[3];
    c.padding = padding;
    c.filters.assign(filters.data().begin(), filters.data().end());
    c.bias.assign(bias.begin(), bias.end());
    return c;
}

}  // namespace

Tensor conv2d_forward(const Tensor& filters, std::span<const double> bias, const Tensor& x, Padding padding) {
    if (x.rank() != 3) {
        throw ShapeError("conv2d_forward expects a (C,I,J) input");
    }
    const Shape3 in{x.shape()[0], x.shape()[1], x.shape()[2]};
    const Conv2D c = conv_from_tensors(filters, bias, in, padding);
    return unflatten(run_conv(c, x.data(), true), c.out_shape());
}

Vector conv2d_forward(const Conv2D& conv, std::span<const double> x) {
    if (x.size() != conv.in_shape.size()) {
        throw ShapeError("conv2d_forward: input size mismatch");
    }
    return run_conv(conv, x, true);
}

std::pair<Matrix, Vector> conv_as_matrix(const Conv2D& conv) {
    const Shape3 out_shape = conv.out_shape();
    const std::size_t in_size = conv.in_shape.size();
    Matrix m(out_shape.size(), in_size);
    // Column k is the response to the k-th basis signal.
    Vector basis(in_size, 0.0);
    for (std::size_t k = 0; k < in_size; ++k) {
        basis[k] = 1.0;
        const Vector col = run_conv(conv, basis, false);
        basis[k] = 0.0;
        for (std::size_t r = 0; r < col.size(); ++r) {
            m(r, k) = col[r];
        }
    }
    Vector b(out_shape.size());
    const std::size_t plane = out_shape.rows * out_shape.cols;
    for (std::size_t co = 0; co < conv.out_channels; ++co) {
        std::fill(b.begin() + co * plane, b.begin() + (co + 1) * plane, conv.bias[co]);
    }
    return {std::move(m), std::move(b)};
}

std::pair<Matrix, Vector> conv_as_matrix(const Tensor& filters, std::span<const double> bias, const Shape3& in_shape,
                                         Padding padding) {
    return conv_as_matrix(conv_from_tensors(filters, bias, in_shape, padding));
}

NonlinearityOutput nonlinearity_forward(const Activation& act, std::span<const double> x) {
    NonlinearityOutput out;
    out.slopes = record_slopes(act, x);
    out.output.resize(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) {
        out.output[d] = out.slopes[d] * x[d];
    }
    return out;
}

PoolOutput maxpool_forward(const std::vector<std::vector<std::uint32_t>>& regions, std::span<const double> x) {
    PoolRegions pool;
    pool.regions = regions;
    pool.in_size = x.size();
    for (const auto& region : regions) {
        if (region.empty()) {
            throw ConfigError("maxpool region is empty");
        }
        for (std::uint32_t idx : region) {
            if (idx >= x.size()) {
                throw ConfigError("maxpool region index out of range");
            }
        }
    }
    PoolOutput out;
    out.winners = record_winners(pool, x);
    out.output.resize(regions.size());
    for (std::size_t d = 0; d < regions.size(); ++d) {
        out.output[d] = x[out.winners[d]];
    }
    return out;
}

Vector meanpool_forward(const std::vector<std::vector<std::uint32_t>>& regions, std::span<const double> x) {
    Vector out(regions.size());
    for (std::size_t d = 0; d < regions.size(); ++d) {
        const auto& region = regions[d];
        if (region.empty()) {
            throw ConfigError("meanpool region is empty");
        }
        double s = 0.0;
        for (std::uint32_t idx : region) {
            if (idx >= x.size()) {
                throw ConfigError("meanpool region index out of range");
            }
            s += x[idx];
        }
        out[d] = s / static_cast<double>(region.size());
    }
    return out;
}

ResidualOutput residual_forward(const ResidualBlock& block, const Shape3& in_shape, std::span<const double> x) {
    const Layer layer{block};
    out_shape_of(layer, in_shape);
    if (x.size() != in_shape.size()) {
        throw ShapeError("residual_forward: input size mismatch");
    }
    ResidualOutput out;
    out.output = run_layer(layer, in_shape, x, nullptr, &out.trace, true, nullptr);
    return out;
}

Vector softmax(std::span<const double> z) {
    if (z.empty()) {
        return {};
    }
    const double m = *std::max_element(z.begin(), z.end());
    Vector p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        s += p[i];
    }
    for (double& v : p) {
        v /= s;
    }
    return p;
}

namespace {

void check_input(const Network& net, std::span<const double> x) {
    if (x.size() != net.input_dim()) {
        throw ShapeError("network expects input of size " + std::to_string(net.input_dim()) + ", got " +
                         std::to_string(x.size()));
    }
}

ForwardResult forward_impl(const Network& net, std::span<const double> x, NetworkCache* cache) {
    check_input(net, x);
    ForwardResult result;
    result.trace.layers.resize(net.size());
    if (cache) {
        cache->layers.assign(net.size(), LayerCache{});
    }
    Vector h(x.begin(), x.end());
    for (std::size_t i = 0; i < net.size(); ++i) {
        h = run_layer(net.layer(i), net.layer_in_shape(i), h, nullptr, &result.trace.layers[i], true,
                      cache ? &cache->layers[i] : nullptr);
    }
    result.logits = std::move(h);
    return result;
}

}  // namespace

ForwardResult network_forward(const Network& net, std::span<const double> x) {
    return forward_impl(net, x, nullptr);
}

ForwardResult forward_with_cache(const Network& net, std::span<const double> x, NetworkCache& cache) {
    return forward_impl(net, x, &cache);
}

Vector layer_output(const Network& net, std::span<const double> x, std::size_t layer_index) {
    if (layer_index >= net.size()) {
        throw IndexError("layer index " + std::to_string(layer_index) + " out of range for a network of " +
                         std::to_string(net.size()) + " layers");
    }
    check_input(net, x);
    Vector h(x.begin(), x.end());
    for (std::size_t i = 0; i <= layer_index; ++i) {
        h = run_layer(net.layer(i), net.layer_in_shape(i), h, nullptr, nullptr, true, nullptr);
    }
    return h;
}

Vector apply_frozen(const Network& net, const ActivationTrace& trace, std::span<const double> x, bool with_bias,
                    NetworkCache* cache, std::size_t first, std::size_t last) {
    last = std::min(last, net.size());
    if (first > last) {
        throw IndexError("apply_frozen: empty layer range");
    }
    if (trace.layers.size() != net.size()) {
        throw ConsistencyError("trace covers " + std::to_string(trace.layers.size()) + " layers, network has " +
                               std::to_string(net.size()));
    }
    if (x.size() != net.layer_in_shape(first).size()) {
        throw ShapeError("apply_frozen: input size mismatch at layer " + std::to_string(first));
    }
    if (cache && cache->layers.size() != net.size()) {
        cache->layers.assign(net.size(), LayerCache{});
    }
    Vector h(x.begin(), x.end());
    for (std::size_t i = first; i < last; ++i) {
        h = run_layer(net.layer(i), net.layer_in_shape(i), h, &trace.layers[i], nullptr, with_bias,
                      cache ? &cache->layers[i] : nullptr);
    }
    return h;
}

Vector backprop_frozen(const Network& net, const ActivationTrace& trace, const NetworkCache& cache,
                       std::span<const double> upstream, ParameterSet* grads, bool bias_grads, std::size_t first,
                       std::size_t last) {
    last = std::min(last, net.size());
    if (first > last) {
        throw IndexError("backprop_frozen: empty layer range");
    }
    if (last > 0 && upstream.size() != net.layer_out_shape(last - 1).size()) {
        throw ShapeError("backprop_frozen: upstream gradient size mismatch");
    }
    Vector g(upstream.begin(), upstream.end());
    for (std::size_t i = last; i-- > first;) {
        std::span<Vector> sub;
        if (grads) {
            sub = std::span<Vector>(*grads).subspan(net.parameter_offset(i), parameter_array_count(net.layer(i)));
        }
        g = backprop_layer(net.layer(i), net.layer_in_shape(i), trace.layers.at(i), cache.layers.at(i), g, sub,
                           bias_grads);
    }
    return g;
}

}  // namespace splinet
