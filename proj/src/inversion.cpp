#include "splinet/inversion.hpp"

#include <string>

#include "splinet/csv.hpp"
#include "splinet/splinex.hpp"

namespace splinet {

namespace {

void check_layer(const Network& net, std::size_t layer_index) {
    if (layer_index >= net.size() && !(layer_index == 0 && net.size() == 0)) {
        throw IndexError("reconstruction layer " + std::to_string(layer_index) + " out of range for " +
                         std::to_string(net.size()) + " layers");
    }
}

}  // namespace

Vector invert_to_layer(const Network& net, std::span<const double> x, std::size_t layer_index) {
    check_layer(net, layer_index);
    NetworkCache cache;
    const ForwardResult fwd = forward_with_cache(net, x, cache);
    return backprop_frozen(net, fwd.trace, cache, fwd.logits, nullptr, false, layer_index);
}

Vector invert(const Network& net, std::span<const double> x) {
    return invert_to_layer(net, x, 0);
}

Vector layer_input(const Network& net, std::span<const double> x, std::size_t layer_index) {
    check_layer(net, layer_index);
    if (layer_index == 0) {
        return Vector(x.begin(), x.end());
    }
    return layer_output(net, x, layer_index - 1);
}

double reconstruction_error(const Network& net, std::span<const double> x, std::size_t layer_index) {
    check_layer(net, layer_index);
    NetworkCache cache;
    const ForwardResult fwd = forward_with_cache(net, x, cache);
    const Vector recon = backprop_frozen(net, fwd.trace, cache, fwd.logits, nullptr, false, layer_index);
    const Vector& z = layer_index == 0 ? Vector(x.begin(), x.end()) : cache.layers[layer_index].input;
    const double e = norm2(subtract(recon, z));
    return e * e;
}

double bias_leakage(const Network& net, std::span<const double> x) {
    const Extraction e = extract_affine(net, x);
    return norm2(matvec_transposed(e.form.A, e.form.b));
}

std::vector<ReconstructionReport> reconstruction_report(const Network& net, const std::vector<Vector>& inputs,
                                                        const std::vector<double>& gamma) {
    std::vector<std::size_t> layers;
    for (std::size_t l = 0; l < gamma.size(); ++l) {
        if (gamma[l] != 0.0) {
            check_layer(net, l);
            layers.push_back(l);
        }
    }
    std::vector<ReconstructionReport> out;
    out.reserve(inputs.size());
    for (const Vector& x : inputs) {
        ReconstructionReport r;
        r.input = x;
        r.reconstruction = invert(net, x);
        const double e = norm2(subtract(r.reconstruction, x));
        r.squared_error = e * e;
        r.layers = layers;
        for (std::size_t l : layers) {
            r.layer_errors.push_back(reconstruction_error(net, x, l));
        }
        r.bias_leakage = bias_leakage(net, x);
        out.push_back(std::move(r));
    }
    return out;
}

void write_reconstruction_csv(std::ostream& os, const std::vector<ReconstructionReport>& reports) {
    std::vector<std::string> header{"sample_id", "sq_error", "bias_leakage"};
    if (!reports.empty()) {
        for (std::size_t l : reports.front().layers) {
            header.push_back("r_" + std::to_string(l));
        }
    }
    CsvWriter csv(os, header);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        Vector values{reports[i].squared_error, reports[i].bias_leakage};
        values.insert(values.end(), reports[i].layer_errors.begin(), reports[i].layer_errors.end());
        csv.row_values(std::to_string(i), values);
    }
}

}  // namespace splinet
