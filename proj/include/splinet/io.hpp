#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "splinet/layers.hpp"
#include "splinet/trainer.hpp"

namespace splinet {

/// Raw IDX image file contents, pixels scaled to [0, 1].
struct IdxImages {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Vector> images;
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::size_t> read_idx_labels(const std::filesystem::path& path);

struct ImageDataset {
    Shape3 shape;
    Dataset data;  // unit-normalized
};

/// Big-endian IDX pair (magic 2051 images, 2049 labels); pixels scaled to
/// [0, 1] and then unit-normalized.
ImageDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

struct DatasetBundle {
    Shape3 input_shape;
    Dataset train;
    Dataset test;
    Dataset unlabeled;
    std::vector<Vector> class_means;  // generating means, before normalization
    std::string normalization = "unit-l2";
};

/// Two isotropic Gaussian classes (unit variance) in `dim` dimensions, class 0
/// centred at +(separation/2)·e₁ and class 1 at −(separation/2)·e₁; `n` points
/// per class in each of train and test.
DatasetBundle gen_two_gaussians(std::size_t n, double separation, std::uint64_t seed, std::size_t dim = 2);

/// 1×side×side step images: class 0 has a horizontal edge, class 1 a vertical
/// one, at a random position with random polarity, plus Gaussian pixel noise.
/// class_means is left empty.
DatasetBundle gen_square_edges(std::size_t n, double noise, std::uint64_t seed, std::size_t side = 8);

/// x / ||x||; zero vectors raise DataError.
Vector normalize(std::span<const double> x);
void normalize_in_place(Dataset& data);

constexpr int kModelFormatVersion = 1;

struct ModelFile {
    Network net;
    std::uint64_t rng_seed = 0;
};

std::string model_to_json(const Network& net, std::uint64_t rng_seed = 0);
ModelFile model_from_json(const std::string& text);

void save_model(const std::filesystem::path& path, const Network& net, std::uint64_t rng_seed = 0);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace splinet
