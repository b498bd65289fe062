#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "splinet/layers.hpp"

namespace splinet {

/// The affine piece y = A·x + b active at some input.
struct AffineForm {
    Matrix A;
    Vector b;

    Vector apply(std::span<const double> x) const;
};

/// Canonical byte encoding of an activation trace: a version byte, then one
/// bit per elementwise unit and ceil(log2 |R_d|) bits per max-pool region,
/// layer ordered (depth first through residual blocks), packed little-endian.
struct RegionSignature {
    std::vector<std::uint8_t> bytes;

    std::string hex() const;
    auto operator<=>(const RegionSignature&) const = default;
};

constexpr std::uint8_t kSignatureVersion = 1;

RegionSignature encode_signature(const Network& net, const ActivationTrace& trace);

/// Bit-packed region choice of a single layer (no version byte).
std::vector<std::uint8_t> encode_layer_trace(const Layer& layer, const LayerTrace& record);

/// Per-class templates A[x]_c and biases b[x]_c for one input.
struct TemplateSet {
    Matrix rows;  // (C, D)
    Vector biases;
    Vector input;

    std::size_t classes() const { return rows.rows(); }
    std::span<const double> row(std::size_t c) const { return rows.row(c); }
};

/// Affine form of a single top-level layer under the given trace record.
AffineForm layer_affine(const Network& net, std::size_t layer_index, const LayerTrace& fragment);
AffineForm layer_affine(const Layer& layer, const Shape3& in_shape, const LayerTrace& fragment);

/// Composition in application order: forms[0] is applied first.
AffineForm compose_affine(std::span<const AffineForm> forms);

struct Extraction {
    AffineForm form;
    RegionSignature signature;
    ActivationTrace trace;
    Vector logits;
};

constexpr std::size_t kMaxExtractionInputDim = 4096;
constexpr std::size_t kMaxExtractionOutputDim = 64;

/// A[x] by one frozen-region backward sweep per output row; b[x] = f(x) − A[x]x.
/// Throws DomainError beyond 4096 inputs or 64 outputs.
Extraction extract_affine(const Network& net, std::span<const double> x);

TemplateSet templates(const Network& net, std::span<const double> x);

/// G_ij = <A_i, A_j>.
Matrix gram(const TemplateSet& t);

struct InputEncoding {
    Vector amplitude;  // A[x]·x
    RegionSignature phase;
};

InputEncoding encode_input(const Network& net, std::span<const double> x);

/// Smallest distance of any recorded decision to its switching point: |pre-activation|
/// for elementwise units, winner minus runner-up for max-pool regions.
double boundary_margin(const Network& net, std::span<const double> x);

/// Elementwise units plus max-pool regions, counted through residual blocks.
std::size_t nonlinear_unit_count(const Network& net);

/// 2^(elementwise units) × Π |R_d| over max-pool regions.
double signature_count_bound(const Network& net);

struct Box {
    Vector lower;
    Vector upper;
};

struct RegionGroup {
    RegionSignature signature;
    AffineForm form;                  // from the first grid point in the group
    std::vector<Vector> points;
    double max_form_deviation = 0.0;  // max |ΔA|, |Δb| over members
};

struct RegionEnumeration {
    std::vector<RegionGroup> regions;
    std::size_t grid_points = 0;
};

constexpr std::size_t kMaxEnumerationInputDim = 3;
constexpr std::size_t kMaxEnumerationUnits = 12;

/// Grid-samples `box` with `density` points per axis and groups the samples by
/// signature. Refuses networks with input dim > 3 or more than 12 nonlinear units.
RegionEnumeration enumerate_regions_bruteforce(const Network& net, const Box& box, std::size_t density);

void write_templates_csv(std::ostream& os, const TemplateSet& t);
void write_gram_csv(std::ostream& os, const Matrix& g);

}  // namespace splinet
