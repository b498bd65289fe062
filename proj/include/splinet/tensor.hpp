#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "splinet/errors.hpp"

namespace splinet {

using Vector = std::vector<double>;

/// Extents of a (channels, rows, cols) signal. Flat vectors use (D, 1, 1).
struct Shape3 {
    std::size_t channels = 1;
    std::size_t rows = 1;
    std::size_t cols = 1;

    std::size_t size() const { return channels * rows * cols; }
    bool operator==(const Shape3&) const = default;
};

/// Dense row-major tensor of arbitrary rank.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    double& at(std::size_t c, std::size_t i, std::size_t j);
    double at(std::size_t c, std::size_t i, std::size_t j) const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Channel-major flattening: (c, i, j) -> c*I*J + i*J + j.
Vector flatten(const Tensor& t);
Tensor unflatten(std::span<const double> v, const Shape3& shape);

inline std::size_t flat_index(const Shape3& s, std::size_t c, std::size_t i, std::size_t j) {
    return (c * s.rows + i) * s.cols + j;
}

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> d);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    Matrix transposed() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
double max_abs(std::span<const double> v);

Vector add(std::span<const double> a, std::span<const double> b);
Vector subtract(std::span<const double> a, std::span<const double> b);
Vector scaled(std::span<const double> a, double s);
/// y += s * x
void axpy(double s, std::span<const double> x, std::span<double> y);

Vector matvec(const Matrix& m, std::span<const double> v);
/// mᵀ v without materializing the transpose.
Vector matvec_transposed(const Matrix& m, std::span<const double> v);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matrix_add(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& m);

struct PowerIterationOptions {
    int max_iterations = 100;
    double tolerance = 1e-10;
    std::uint64_t seed = 0x5eed;
};

/// Largest singular value by power iteration on mᵀm. Zero matrix -> 0.
double spectral_norm(const Matrix& m, const PowerIterationOptions& options = {});

using LinearMap = std::function<Vector(std::span<const double>)>;

/// Matrix-free variant: `apply` computes M·v, `apply_transposed` Mᵀ·u.
double spectral_norm(const LinearMap& apply, const LinearMap& apply_transposed, std::size_t in_dim,
                     const PowerIterationOptions& options = {});

}  // namespace splinet
