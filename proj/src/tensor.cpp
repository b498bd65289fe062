#include "splinet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>

namespace splinet {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_extents(const std::vector<std::size_t>& shape) {
    if (shape.empty()) {
        throw ShapeError("tensor rank must be at least 1");
    }
    for (std::size_t e : shape) {
        if (e == 0) {
            throw ShapeError("tensor extents must be >= 1");
        }
    }
}

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(what) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (data_.size() != product(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape product " + std::to_string(product(shape_)));
    }
}

double& Tensor::at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
}

double Tensor::at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
}

Vector flatten(const Tensor& t) {
    if (t.rank() != 3) {
        throw ShapeError("flatten expects a (C,I,J) tensor, got rank " + std::to_string(t.rank()));
    }
    // Row-major storage of (C,I,J) is already channel-major.
    return Vector(t.data().begin(), t.data().end());
}

Tensor unflatten(std::span<const double> v, const Shape3& shape) {
    if (v.size() != shape.size()) {
        throw ShapeError("unflatten: vector of size " + std::to_string(v.size()) +
                         " cannot take shape of size " + std::to_string(shape.size()));
    }
    return Tensor({shape.channels, shape.rows, shape.cols}, Vector(v.begin(), v.end()));
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        m(i, i) = d[i];
    }
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

Vector add(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "add");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return out;
}

Vector subtract(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "subtract");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    return out;
}

Vector scaled(std::span<const double> a, double s) {
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] * s;
    }
    return out;
}

void axpy(double s, std::span<const double> x, std::span<double> y) {
    require_same_size(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] += s * x[i];
    }
}

Vector matvec(const Matrix& m, std::span<const double> v) {
    if (v.size() != m.cols()) {
        throw ShapeError("matvec: matrix has " + std::to_string(m.cols()) + " columns, vector has " +
                         std::to_string(v.size()) + " entries");
    }
    Vector out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out[r] = dot(m.row(r), v);
    }
    return out;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> v) {
    if (v.size() != m.rows()) {
        throw ShapeError("matvec_transposed: matrix has " + std::to_string(m.rows()) +
                         " rows, vector has " + std::to_string(v.size()) + " entries");
    }
    Vector out(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        axpy(v[r], m.row(r), out);
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner extents " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik != 0.0) {
                axpy(aik, b.row(k), out_row);
            }
        }
    }
    return out;
}

Matrix matrix_add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("matrix_add: shape mismatch");
    }
    Matrix out = a;
    axpy(1.0, b.data(), out.data());
    return out;
}

double frobenius_norm(const Matrix& m) {
    return norm2(m.data());
}

double spectral_norm(const Matrix& m, const PowerIterationOptions& options) {
    if (max_abs(m.data()) == 0.0) {
        if (options.max_iterations < 1) {
            throw DomainError("spectral_norm: at least one iteration is required");
        }
        return 0.0;
    }
    return spectral_norm([&](std::span<const double> v) { return matvec(m, v); },
                         [&](std::span<const double> u) { return matvec_transposed(m, u); }, m.cols(), options);
}

double spectral_norm(const LinearMap& apply, const LinearMap& apply_transposed, std::size_t in_dim,
                     const PowerIterationOptions& options) {
    if (options.max_iterations < 1) {
        throw DomainError("spectral_norm: at least one iteration is required");
    }
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal;
    Vector v(in_dim);
    for (double& x : v) {
        x = normal(rng);
    }
    double estimate = 0.0;
    for (int it = 0; it < options.max_iterations; ++it) {
        const double n = norm2(v);
        if (n == 0.0) {
            return estimate;
        }
        for (double& x : v) {
            x /= n;
        }
        const Vector mv = apply(v);
        const double next = norm2(mv);
        v = apply_transposed(mv);
        const bool converged = it > 0 && std::abs(next - estimate) <= options.tolerance * next;
        estimate = next;
        if (converged) {
            break;
        }
    }
    return estimate;
}

}  // namespace splinet
