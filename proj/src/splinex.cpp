#include "splinet/splinex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include "splinet/csv.hpp"

namespace splinet {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

class BitWriter {
public:
    void put(std::uint64_t value, unsigned bits) {
        for (unsigned k = 0; k < bits; ++k) {
            if (bit_ % 8 == 0) {
                bytes_.push_back(0);
            }
            if ((value >> k) & 1u) {
                bytes_.back() |= static_cast<std::uint8_t>(1u << (bit_ % 8));
            }
            ++bit_;
        }
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t bit_ = 0;
};

unsigned bits_for(std::size_t choices) {
    unsigned bits = 0;
    while ((std::size_t{1} << bits) < choices) {
        ++bits;
    }
    return bits;
}

void encode_layer(const Layer& layer, const LayerTrace& tr, BitWriter& out) {
    std::visit(overloaded{
                   [&](const Activation& a) {
                       const double active = a.kind == ActivationKind::abs ? -1.0 : 1.0;
                       for (double s : tr.slopes) {
                           out.put(s == active ? 1u : 0u, 1);
                       }
                   },
                   [&](const MaxPool& p) {
                       if (tr.winners.size() != p.pool.regions.size()) {
                           throw ConsistencyError("signature: winner count does not match pooling regions");
                       }
                       for (std::size_t d = 0; d < p.pool.regions.size(); ++d) {
                           const auto& region = p.pool.regions[d];
                           const auto it = std::find(region.begin(), region.end(), tr.winners[d]);
                           if (it == region.end()) {
                               throw ConsistencyError("signature: winner outside its pooling region");
                           }
                           out.put(static_cast<std::uint64_t>(it - region.begin()), bits_for(region.size()));
                       }
                   },
                   [&](const ResidualBlock& r) {
                       if (tr.inner.size() != r.inner.size()) {
                           throw ConsistencyError("signature: residual trace size mismatch");
                       }
                       for (std::size_t k = 0; k < r.inner.size(); ++k) {
                           encode_layer(r.inner[k], tr.inner[k], out);
                       }
                   },
                   [](const auto&) {},
               },
               layer.op);
}

std::vector<Shape3> sequence_in_shapes(const std::vector<Layer>& layers, Shape3 s) {
    // Output shapes come from a throwaway network so validation stays in one place.
    std::vector<Shape3> shapes;
    const Network probe(s, layers);
    for (std::size_t k = 0; k < layers.size(); ++k) {
        shapes.push_back(probe.layer_in_shape(k));
    }
    return shapes;
}

Matrix pool_mean_matrix(const PoolRegions& pool) {
    Matrix m(pool.regions.size(), pool.in_size);
    for (std::size_t d = 0; d < pool.regions.size(); ++d) {
        const double w = 1.0 / static_cast<double>(pool.regions[d].size());
        for (std::uint32_t idx : pool.regions[d]) {
            m(d, idx) += w;
        }
    }
    return m;
}

void require_empty(const LayerTrace& t, const char* what) {
    if (!t.slopes.empty() || !t.winners.empty() || !t.inner.empty()) {
        throw ConsistencyError(std::string("trace record carries region data for a ") + what + " layer");
    }
}

double layer_margin(const Layer& layer, const Shape3& in_shape, std::span<const double> x, const LayerTrace& tr) {
    return std::visit(
        overloaded{
            [&](const Activation&) {
                double m = std::numeric_limits<double>::infinity();
                for (double v : x) {
                    m = std::min(m, std::abs(v));
                }
                return m;
            },
            [&](const MaxPool& p) {
                double m = std::numeric_limits<double>::infinity();
                for (std::size_t d = 0; d < p.pool.regions.size(); ++d) {
                    const double best = x[tr.winners[d]];
                    for (std::uint32_t idx : p.pool.regions[d]) {
                        if (idx != tr.winners[d]) {
                            m = std::min(m, best - x[idx]);
                        }
                    }
                }
                return m;
            },
            [&](const ResidualBlock& r) {
                double m = std::numeric_limits<double>::infinity();
                const auto shapes = sequence_in_shapes(r.inner, in_shape);
                Vector h(x.begin(), x.end());
                for (std::size_t k = 0; k < r.inner.size(); ++k) {
                    m = std::min(m, layer_margin(r.inner[k], shapes[k], h, tr.inner[k]));
                    const Network single(shapes[k], {r.inner[k]});
                    h = network_forward(single, h).logits;
                }
                return m;
            },
            [](const auto&) { return std::numeric_limits<double>::infinity(); },
        },
        layer.op);
}

void count_units(const Layer& layer, const Shape3& in_shape, std::size_t& units, double& bound) {
    std::visit(overloaded{
                   [&](const Activation&) {
                       units += in_shape.size();
                       bound *= std::pow(2.0, static_cast<double>(in_shape.size()));
                   },
                   [&](const MaxPool& p) {
                       units += p.pool.regions.size();
                       for (const auto& region : p.pool.regions) {
                           bound *= static_cast<double>(region.size());
                       }
                   },
                   [&](const ResidualBlock& r) {
                       const auto shapes = sequence_in_shapes(r.inner, in_shape);
                       for (std::size_t k = 0; k < r.inner.size(); ++k) {
                           count_units(r.inner[k], shapes[k], units, bound);
                       }
                   },
                   [](const auto&) {},
               },
               layer.op);
}

}  // namespace

Vector AffineForm::apply(std::span<const double> x) const {
    Vector y = matvec(A, x);
    axpy(1.0, b, y);
    return y;
}

std::string RegionSignature::hex() const {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (std::uint8_t byte : bytes) {
        s.push_back(digits[byte >> 4]);
        s.push_back(digits[byte & 0xf]);
    }
    return s;
}

RegionSignature encode_signature(const Network& net, const ActivationTrace& trace) {
    if (trace.layers.size() != net.size()) {
        throw ConsistencyError("signature: trace does not match network depth");
    }
    BitWriter bits;
    for (std::size_t i = 0; i < net.size(); ++i) {
        encode_layer(net.layer(i), trace.layers[i], bits);
    }
    RegionSignature sig;
    sig.bytes.push_back(kSignatureVersion);
    const auto body = bits.take();
    sig.bytes.insert(sig.bytes.end(), body.begin(), body.end());
    return sig;
}

std::vector<std::uint8_t> encode_layer_trace(const Layer& layer, const LayerTrace& record) {
    BitWriter bits;
    encode_layer(layer, record, bits);
    return bits.take();
}

AffineForm layer_affine(const Layer& layer, const Shape3& in_shape, const LayerTrace& fragment) {
    return std::visit(
        overloaded{
            [&](const Dense& d) {
                require_empty(fragment, "dense");
                return AffineForm{d.weights, d.bias};
            },
            [&](const Conv2D& c) {
                require_empty(fragment, "conv2d");
                auto [m, b] = conv_as_matrix(c);
                return AffineForm{std::move(m), std::move(b)};
            },
            [&](const Activation&) {
                if (fragment.slopes.size() != in_shape.size()) {
                    throw ConsistencyError("nonlinearity trace has " + std::to_string(fragment.slopes.size()) +
                                           " slopes, layer width is " + std::to_string(in_shape.size()));
                }
                return AffineForm{Matrix::diagonal(fragment.slopes), Vector(in_shape.size(), 0.0)};
            },
            [&](const MaxPool& p) {
                if (fragment.winners.size() != p.pool.regions.size()) {
                    throw ConsistencyError("max-pool trace winner count does not match regions");
                }
                Matrix m(p.pool.regions.size(), p.pool.in_size);
                for (std::size_t d = 0; d < fragment.winners.size(); ++d) {
                    const auto& region = p.pool.regions[d];
                    if (std::find(region.begin(), region.end(), fragment.winners[d]) == region.end()) {
                        throw ConsistencyError("max-pool winner outside its region");
                    }
                    m(d, fragment.winners[d]) = 1.0;
                }
                return AffineForm{std::move(m), Vector(p.pool.regions.size(), 0.0)};
            },
            [&](const MeanPool& p) {
                require_empty(fragment, "mean-pool");
                return AffineForm{pool_mean_matrix(p.pool), Vector(p.pool.regions.size(), 0.0)};
            },
            [&](const ResidualBlock& r) {
                if (fragment.inner.size() != r.inner.size()) {
                    throw ConsistencyError("residual trace has wrong number of inner records");
                }
                const auto shapes = sequence_in_shapes(r.inner, in_shape);
                std::vector<AffineForm> inner;
                for (std::size_t k = 0; k < r.inner.size(); ++k) {
                    inner.push_back(layer_affine(r.inner[k], shapes[k], fragment.inner[k]));
                }
                AffineForm path = inner.empty() ? AffineForm{Matrix::identity(in_shape.size()),
                                                             Vector(in_shape.size(), 0.0)}
                                                : compose_affine(inner);
                if (r.projection) {
                    path.A = matrix_add(path.A, r.projection->weights);
                    axpy(1.0, r.projection->bias, path.b);
                } else {
                    for (std::size_t d = 0; d < in_shape.size(); ++d) {
                        path.A(d, d) += 1.0;
                    }
                }
                return path;
            },
        },
        layer.op);
}

AffineForm layer_affine(const Network& net, std::size_t layer_index, const LayerTrace& fragment) {
    if (layer_index >= net.size()) {
        throw IndexError("layer_affine: layer index out of range");
    }
    return layer_affine(net.layer(layer_index), net.layer_in_shape(layer_index), fragment);
}

AffineForm compose_affine(std::span<const AffineForm> forms) {
    if (forms.empty()) {
        throw ShapeError("compose_affine: nothing to compose");
    }
    AffineForm acc = forms.front();
    for (std::size_t k = 1; k < forms.size(); ++k) {
        const AffineForm& next = forms[k];
        if (next.A.cols() != acc.A.rows()) {
            throw ShapeError("compose_affine: form " + std::to_string(k) + " expects input of size " +
                             std::to_string(next.A.cols()) + ", previous output is " + std::to_string(acc.A.rows()));
        }
        // Each earlier bias is pushed through every later slope matrix.
        Vector b = matvec(next.A, acc.b);
        axpy(1.0, next.b, b);
        acc = AffineForm{matmul(next.A, acc.A), std::move(b)};
    }
    return acc;
}

Extraction extract_affine(const Network& net, std::span<const double> x) {
    if (net.input_dim() > kMaxExtractionInputDim || net.output_dim() > kMaxExtractionOutputDim) {
        throw DomainError("dense A[x] extraction supports up to " + std::to_string(kMaxExtractionInputDim) +
                          " inputs and " + std::to_string(kMaxExtractionOutputDim) + " outputs, network has " +
                          std::to_string(net.input_dim()) + " and " + std::to_string(net.output_dim()));
    }
    NetworkCache cache;
    ForwardResult fwd = forward_with_cache(net, x, cache);
    const std::size_t rows = fwd.logits.size();
    Matrix a(rows, net.input_dim());
    Vector seed(rows, 0.0);
    for (std::size_t c = 0; c < rows; ++c) {
        seed[c] = 1.0;
        const Vector g = backprop_frozen(net, fwd.trace, cache, seed, nullptr, false);
        seed[c] = 0.0;
        std::copy(g.begin(), g.end(), a.row(c).begin());
    }
    Vector b = subtract(fwd.logits, matvec(a, x));
    Extraction e;
    e.signature = encode_signature(net, fwd.trace);
    e.form = AffineForm{std::move(a), std::move(b)};
    e.trace = std::move(fwd.trace);
    e.logits = std::move(fwd.logits);
    return e;
}

TemplateSet templates(const Network& net, std::span<const double> x) {
    Extraction e = extract_affine(net, x);
    return TemplateSet{std::move(e.form.A), std::move(e.form.b), Vector(x.begin(), x.end())};
}

Matrix gram(const TemplateSet& t) {
    const std::size_t c = t.classes();
    Matrix g(c, c);
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = i; j < c; ++j) {
            g(i, j) = g(j, i) = dot(t.row(i), t.row(j));
        }
    }
    return g;
}

InputEncoding encode_input(const Network& net, std::span<const double> x) {
    Extraction e = extract_affine(net, x);
    return InputEncoding{matvec(e.form.A, x), std::move(e.signature)};
}

double boundary_margin(const Network& net, std::span<const double> x) {
    NetworkCache cache;
    const ForwardResult fwd = forward_with_cache(net, x, cache);
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < net.size(); ++i) {
        m = std::min(m, layer_margin(net.layer(i), net.layer_in_shape(i), cache.layers[i].input, fwd.trace.layers[i]));
    }
    return m;
}

std::size_t nonlinear_unit_count(const Network& net) {
    std::size_t units = 0;
    double bound = 1.0;
    for (std::size_t i = 0; i < net.size(); ++i) {
        count_units(net.layer(i), net.layer_in_shape(i), units, bound);
    }
    return units;
}

double signature_count_bound(const Network& net) {
    std::size_t units = 0;
    double bound = 1.0;
    for (std::size_t i = 0; i < net.size(); ++i) {
        count_units(net.layer(i), net.layer_in_shape(i), units, bound);
    }
    return bound;
}

RegionEnumeration enumerate_regions_bruteforce(const Network& net, const Box& box, std::size_t density) {
    const std::size_t dim = net.input_dim();
    if (dim > kMaxEnumerationInputDim) {
        throw DomainError("region enumeration supports input dimension <= 3, got " + std::to_string(dim));
    }
    const std::size_t units = nonlinear_unit_count(net);
    if (units > kMaxEnumerationUnits) {
        throw DomainError("region enumeration supports <= 12 nonlinear units, network has " + std::to_string(units));
    }
    if (box.lower.size() != dim || box.upper.size() != dim) {
        throw ShapeError("region enumeration box does not match input dimension");
    }
    if (density < 2) {
        throw DomainError("grid density must be at least 2");
    }
    std::map<RegionSignature, std::size_t> index;
    RegionEnumeration out;
    std::vector<std::size_t> counter(dim, 0);
    Vector x(dim);
    while (true) {
        for (std::size_t d = 0; d < dim; ++d) {
            const double t = static_cast<double>(counter[d]) / static_cast<double>(density - 1);
            x[d] = box.lower[d] + t * (box.upper[d] - box.lower[d]);
        }
        Extraction e = extract_affine(net, x);
        ++out.grid_points;
        auto [it, inserted] = index.emplace(e.signature, out.regions.size());
        if (inserted) {
            out.regions.push_back(RegionGroup{e.signature, std::move(e.form), {x}, 0.0});
        } else {
            RegionGroup& g = out.regions[it->second];
            double dev = 0.0;
            for (std::size_t k = 0; k < g.form.A.data().size(); ++k) {
                dev = std::max(dev, std::abs(g.form.A.data()[k] - e.form.A.data()[k]));
            }
            for (std::size_t k = 0; k < g.form.b.size(); ++k) {
                dev = std::max(dev, std::abs(g.form.b[k] - e.form.b[k]));
            }
            g.max_form_deviation = std::max(g.max_form_deviation, dev);
            g.points.push_back(x);
        }
        std::size_t d = 0;
        while (d < dim && ++counter[d] == density) {
            counter[d] = 0;
            ++d;
        }
        if (d == dim) {
            break;
        }
    }
    return out;
}

void write_templates_csv(std::ostream& os, const TemplateSet& t) {
    std::vector<std::string> header{"class", "bias"};
    for (std::size_t d = 0; d < t.rows.cols(); ++d) {
        header.push_back("a_" + std::to_string(d));
    }
    CsvWriter csv(os, header);
    for (std::size_t c = 0; c < t.classes(); ++c) {
        Vector values{t.biases[c]};
        values.insert(values.end(), t.row(c).begin(), t.row(c).end());
        csv.row_values(std::to_string(c), values);
    }
}

void write_gram_csv(std::ostream& os, const Matrix& g) {
    std::vector<std::string> header{"class"};
    for (std::size_t c = 0; c < g.cols(); ++c) {
        header.push_back(std::to_string(c));
    }
    CsvWriter csv(os, header);
    for (std::size_t r = 0; r < g.rows(); ++r) {
        csv.row_values(std::to_string(r), g.row(r));
    }
}

}  // namespace splinet
