#include "splinet/io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "splinet/builders.hpp"

namespace splinet {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
    if (bytes.size() < offset + 4) {
        throw LengthError(path.string() + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void check_magic(std::uint32_t observed, std::uint32_t expected, const std::filesystem::path& path) {
    if (observed != expected) {
        std::ostringstream msg;
        msg << path.string() << ": bad IDX magic 0x" << std::hex << std::setfill('0') << std::setw(8) << observed
            << std::dec << " (" << observed << "), expected " << expected;
        throw FormatError(msg.str());
    }
}

void check_length(const std::vector<unsigned char>& bytes, std::size_t needed, const std::filesystem::path& path) {
    if (bytes.size() < needed) {
        throw LengthError(path.string() + ": truncated, expected " + std::to_string(needed) + " bytes, found " +
                          std::to_string(bytes.size()));
    }
}

// Model JSON helpers.

json shape_json(const Shape3& s) { return json::array({s.channels, s.rows, s.cols}); }

Shape3 shape_from(const json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw FormatError("shape must be an array of 3 integers");
    }
    return Shape3{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

json pool_json(const char* type, const PoolRegions& p) {
    json j{{"type", type}};
    if (p.window) {
        j["in_shape"] = shape_json(p.window_in_shape);
        j["window"] = json::array({p.window->first, p.window->second});
    } else {
        j["in_size"] = p.in_size;
        j["out_shape"] = shape_json(p.out_shape);
        j["regions"] = p.regions;
    }
    return j;
}

PoolRegions pool_from(const json& j) {
    if (j.contains("window")) {
        const auto& w = j.at("window");
        return pool_regions_2d(shape_from(j.at("in_shape")), w.at(0).get<std::size_t>(), w.at(1).get<std::size_t>());
    }
    PoolRegions p;
    p.in_size = j.at("in_size").get<std::size_t>();
    p.out_shape = shape_from(j.at("out_shape"));
    p.regions = j.at("regions").get<std::vector<std::vector<std::uint32_t>>>();
    return p;
}

struct ParamEntry {
    std::string path;
    const Vector* weights;
    const Vector* bias;
};

json dense_descriptor(const Dense& d) {
    return json{{"type", "dense"}, {"in", d.weights.cols()}, {"out", d.weights.rows()}};
}

json layer_json(const Layer& layer, const std::string& path, std::vector<json>& params);

json layers_json(const std::vector<Layer>& layers, const std::string& prefix, std::vector<json>& params) {
    json arr = json::array();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        arr.push_back(layer_json(layers[i], prefix + std::to_string(i), params));
    }
    return arr;
}

json param_entry(const std::string& path, std::span<const double> w, std::span<const double> b) {
    return json{{"layer", path}, {"weights", std::vector<double>(w.begin(), w.end())},
                {"bias", std::vector<double>(b.begin(), b.end())}};
}

json layer_json(const Layer& layer, const std::string& path, std::vector<json>& params) {
    return std::visit(
        overloaded{
            [&](const Dense& d) {
                params.push_back(param_entry(path, d.weights.data(), d.bias));
                return dense_descriptor(d);
            },
            [&](const Conv2D& c) {
                params.push_back(param_entry(path, c.filters, c.bias));
                return json{{"type", "conv2d"},
                            {"in_shape", shape_json(c.in_shape)},
                            {"out_channels", c.out_channels},
                            {"kernel", json::array({c.kernel_rows, c.kernel_cols})},
                            {"padding", c.padding == Padding::valid ? "valid" : "same"}};
            },
            [&](const Activation& a) {
                switch (a.kind) {
                    case ActivationKind::relu:
                        return json{{"type", "relu"}};
                    case ActivationKind::leaky_relu:
                        return json{{"type", "leaky_relu"}, {"slope", a.leaky_slope}};
                    case ActivationKind::abs:
                        break;
                }
                return json{{"type", "abs"}};
            },
            [&](const MaxPool& p) { return pool_json("max_pool", p.pool); },
            [&](const MeanPool& p) { return pool_json("mean_pool", p.pool); },
            [&](const ResidualBlock& r) {
                json j{{"type", "residual"}, {"inner", layers_json(r.inner, path + "/inner/", params)}};
                if (r.projection) {
                    params.push_back(param_entry(path + "/projection", r.projection->weights.data(),
                                                 r.projection->bias));
                    j["projection"] = dense_descriptor(*r.projection);
                }
                return j;
            },
        },
        layer.op);
}

using ParamMap = std::map<std::string, const json*>;

std::pair<Vector, Vector> take_params(const ParamMap& params, const std::string& path, std::size_t weights,
                                      std::size_t bias) {
    const auto it = params.find(path);
    if (it == params.end()) {
        throw FormatError("layer " + path + ": missing parameter entry");
    }
    const json& e = *it->second;
    if (!e.contains("weights") || !e.contains("bias")) {
        throw FormatError("layer " + path + ": parameter entry needs 'weights' and 'bias' arrays");
    }
    Vector w = e.at("weights").get<Vector>();
    Vector b = e.at("bias").get<Vector>();
    if (w.size() != weights || b.size() != bias) {
        throw FormatError("layer " + path + ": expected " + std::to_string(weights) + " weights and " +
                          std::to_string(bias) + " biases, found " + std::to_string(w.size()) + " and " +
                          std::to_string(b.size()));
    }
    return {std::move(w), std::move(b)};
}

Dense dense_from(const json& j, const ParamMap& params, const std::string& path) {
    const std::size_t in = j.at("in").get<std::size_t>();
    const std::size_t out = j.at("out").get<std::size_t>();
    auto [w, b] = take_params(params, path, in * out, out);
    return Dense{Matrix(out, in, std::move(w)), std::move(b)};
}

std::vector<Layer> layers_from(const json& arr, const ParamMap& params, const std::string& prefix);

Layer layer_from(const json& j, const ParamMap& params, const std::string& path) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "dense") {
        return Layer{dense_from(j, params, path)};
    }
    if (type == "conv2d") {
        Conv2D c;
        c.in_shape = shape_from(j.at("in_shape"));
        c.out_channels = j.at("out_channels").get<std::size_t>();
        c.kernel_rows = j.at("kernel").at(0).get<std::size_t>();
        c.kernel_cols = j.at("kernel").at(1).get<std::size_t>();
        const std::string pad = j.at("padding").get<std::string>();
        if (pad != "valid" && pad != "same") {
            throw FormatError("layer " + path + ": unknown padding '" + pad + "'");
        }
        c.padding = pad == "valid" ? Padding::valid : Padding::zero_same;
        auto [w, b] = take_params(params, path,
                                  c.out_channels * c.in_shape.channels * c.kernel_rows * c.kernel_cols,
                                  c.out_channels);
        c.filters = std::move(w);
        c.bias = std::move(b);
        return Layer{std::move(c)};
    }
    if (type == "relu") {
        return relu();
    }
    if (type == "leaky_relu") {
        return leaky_relu(j.at("slope").get<double>());
    }
    if (type == "abs") {
        return abs_layer();
    }
    if (type == "max_pool") {
        return Layer{MaxPool{pool_from(j)}};
    }
    if (type == "mean_pool") {
        return Layer{MeanPool{pool_from(j)}};
    }
    if (type == "residual") {
        ResidualBlock r;
        r.inner = layers_from(j.at("inner"), params, path + "/inner/");
        if (j.contains("projection")) {
            r.projection = dense_from(j.at("projection"), params, path + "/projection");
        }
        return Layer{std::move(r)};
    }
    throw FormatError("layer " + path + ": unknown layer type '" + type + "'");
}

std::vector<Layer> layers_from(const json& arr, const ParamMap& params, const std::string& prefix) {
    if (!arr.is_array()) {
        throw FormatError("architecture must be an array");
    }
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = prefix + std::to_string(i);
        try {
            layers.push_back(layer_from(arr[i], params, path));
        } catch (const json::exception& e) {
            throw FormatError("layer " + path + ": " + e.what());
        }
    }
    return layers;
}

Vector gaussian_point(std::size_t dim, const Vector& mean, std::normal_distribution<double>& gauss, Rng& rng) {
    Vector v(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        v[d] = mean[d] + gauss(rng);
    }
    return v;
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    check_magic(read_be32(bytes, 0, path), kImageMagic, path);
    const std::size_t n = read_be32(bytes, 4, path);
    IdxImages out;
    out.rows = read_be32(bytes, 8, path);
    out.cols = read_be32(bytes, 12, path);
    const std::size_t pixels = out.rows * out.cols;
    check_length(bytes, 16 + n * pixels, path);
    out.images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vector img(pixels);
        for (std::size_t p = 0; p < pixels; ++p) {
            img[p] = static_cast<double>(bytes[16 + i * pixels + p]) / 255.0;
        }
        out.images.push_back(std::move(img));
    }
    return out;
}

std::vector<std::size_t> read_idx_labels(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    check_magic(read_be32(bytes, 0, path), kLabelMagic, path);
    const std::size_t n = read_be32(bytes, 4, path);
    check_length(bytes, 8 + n, path);
    return std::vector<std::size_t>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

ImageDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    IdxImages img = read_idx_images(images);
    std::vector<std::size_t> lab = read_idx_labels(labels);
    if (img.images.size() != lab.size()) {
        throw ConsistencyError("image file has " + std::to_string(img.images.size()) + " items, label file has " +
                               std::to_string(lab.size()));
    }
    ImageDataset out;
    out.shape = Shape3{1, img.rows, img.cols};
    out.data.inputs = std::move(img.images);
    out.data.labels = std::move(lab);
    normalize_in_place(out.data);
    return out;
}

Vector normalize(std::span<const double> x) {
    const double n = norm2(x);
    if (n == 0.0) {
        throw DataError("cannot unit-normalize a zero vector");
    }
    return scaled(x, 1.0 / n);
}

void normalize_in_place(Dataset& data) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        // Already-unit vectors are left untouched so normalizing twice equals once.
        if (norm2(data.inputs[i]) == 1.0) {
            continue;
        }
        try {
            data.inputs[i] = normalize(data.inputs[i]);
        } catch (const DataError&) {
            throw DataError("input " + std::to_string(i) + " is a zero vector");
        }
    }
}

DatasetBundle gen_two_gaussians(std::size_t n, double separation, std::uint64_t seed, std::size_t dim) {
    if (n == 0 || dim == 0) {
        throw ConfigError("two-Gaussian generator needs n >= 1 and dim >= 1");
    }
    DatasetBundle b;
    b.input_shape = Shape3{1, 1, dim};
    Vector m0(dim, 0.0), m1(dim, 0.0);
    m0[0] = separation / 2.0;
    m1[0] = -separation / 2.0;
    b.class_means = {m0, m1};
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Dataset* d : {&b.train, &b.test}) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < 2; ++c) {
                d->inputs.push_back(gaussian_point(dim, b.class_means[c], gauss, rng));
                d->labels.push_back(c);
            }
        }
        normalize_in_place(*d);
    }
    return b;
}

DatasetBundle gen_square_edges(std::size_t n, double noise, std::uint64_t seed, std::size_t side) {
    if (n == 0 || side < 3) {
        throw ConfigError("edge generator needs n >= 1 and side >= 3");
    }
    DatasetBundle b;
    b.input_shape = Shape3{1, side, side};
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, noise);
    std::uniform_int_distribution<std::size_t> position(1, side - 1);
    std::bernoulli_distribution flip(0.5);
    for (Dataset* d : {&b.train, &b.test}) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < 2; ++c) {
                const std::size_t edge = position(rng);
                const bool negative = flip(rng);
                Vector img(side * side);
                for (std::size_t r = 0; r < side; ++r) {
                    for (std::size_t col = 0; col < side; ++col) {
                        const bool high = c == 0 ? r < edge : col < edge;
                        img[r * side + col] = ((high != negative) ? 1.0 : 0.0) + gauss(rng);
                    }
                }
                d->inputs.push_back(std::move(img));
                d->labels.push_back(c);
            }
        }
        normalize_in_place(*d);
    }
    return b;
}

std::string model_to_json(const Network& net, std::uint64_t rng_seed) {
    std::vector<json> params;
    json doc;
    doc["format_version"] = kModelFormatVersion;
    doc["input_shape"] = shape_json(net.input_shape());
    doc["class_count"] = net.output_dim();
    doc["rng_seed"] = rng_seed;
    doc["architecture"] = layers_json(net.layers(), "", params);
    doc["parameters"] = params;
    return doc.dump(1);
}

ModelFile model_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError("model JSON parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    try {
        if (!doc.is_object() || !doc.contains("format_version")) {
            throw FormatError("model JSON lacks format_version");
        }
        const int version = doc.at("format_version").get<int>();
        if (version != kModelFormatVersion) {
            throw FormatError("unsupported model format_version " + std::to_string(version) + " (expected " +
                              std::to_string(kModelFormatVersion) + ")");
        }
        ParamMap params;
        for (const json& e : doc.at("parameters")) {
            params[e.at("layer").get<std::string>()] = &e;
        }
        ModelFile out;
        out.rng_seed = doc.value("rng_seed", std::uint64_t{0});
        try {
            out.net = Network(shape_from(doc.at("input_shape")), layers_from(doc.at("architecture"), params, ""));
        } catch (const ShapeError& e) {
            throw FormatError(std::string("model architecture is inconsistent: ") + e.what());
        } catch (const ConfigError& e) {
            throw FormatError(std::string("model architecture is invalid: ") + e.what());
        }
        const std::size_t classes = doc.at("class_count").get<std::size_t>();
        if (classes != out.net.output_dim()) {
            throw FormatError("class_count " + std::to_string(classes) + " does not match network output " +
                              std::to_string(out.net.output_dim()));
        }
        return out;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model JSON schema error: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const Network& net, std::uint64_t rng_seed) {
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << model_to_json(net, rng_seed) << '\n';
}

ModelFile load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return model_from_json(text);
}

}  // namespace splinet
