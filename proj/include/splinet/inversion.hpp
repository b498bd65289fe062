#pragma once

#include <ostream>
#include <span>
#include <vector>

#include "splinet/layers.hpp"

namespace splinet {

/// x̂ = A[x]ᵀ f(x) on the pre-softmax logits, computed as one frozen-region
/// backward sweep seeded with the logits.
Vector invert(const Network& net, std::span<const double> x);

/// (df / dz)ᵀ f(x) where z is the input of layer `layer_index` (z = x for 0).
Vector invert_to_layer(const Network& net, std::span<const double> x, std::size_t layer_index);

/// Representation entering layer `layer_index`.
Vector layer_input(const Network& net, std::span<const double> x, std::size_t layer_index);

/// ||(df/dz)ᵀ f − z||² at layer `layer_index`; layer 0 is the input-space loss.
double reconstruction_error(const Network& net, std::span<const double> x, std::size_t layer_index = 0);

/// ||A[x]ᵀ b[x]||, the bias leakage into the reconstruction.
double bias_leakage(const Network& net, std::span<const double> x);

struct ReconstructionReport {
    Vector input;
    Vector reconstruction;
    double squared_error = 0.0;
    std::vector<std::size_t> layers;     // configured per-layer indices
    std::vector<double> layer_errors;    // R at each configured layer
    double bias_leakage = 0.0;
};

/// One report per input; per-layer errors for every index with nonzero weight in `gamma`.
std::vector<ReconstructionReport> reconstruction_report(const Network& net, const std::vector<Vector>& inputs,
                                                        const std::vector<double>& gamma = {});

/// Columns: sample_id, sq_error, bias_leakage, then r_<layer> per configured layer.
void write_reconstruction_csv(std::ostream& os, const std::vector<ReconstructionReport>& reports);

}  // namespace splinet
