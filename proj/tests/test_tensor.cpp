#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "splinet/tensor.hpp"

using namespace splinet;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix m(r, c);
    for (double& v : m.data()) {
        v = g(rng);
    }
    return m;
}

double svd_max(const Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            e(i, j) = m(i, j);
        }
    }
    return Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
}

}  // namespace

TEST_SUITE("tensor") {
    TEST_CASE("flatten of a 3x3x3 tensor has dimension 27") {
        CHECK(flatten(Tensor({3, 3, 3})).size() == 27);
    }

    TEST_CASE("flatten singleton") {
        CHECK(flatten(Tensor({1, 1, 1}, {5.0})) == Vector{5.0});
    }

    TEST_CASE("flatten is channel major") {
        Tensor t({2, 1, 2});
        t.at(0, 0, 0) = 1;
        t.at(0, 0, 1) = 2;
        t.at(1, 0, 0) = 3;
        t.at(1, 0, 1) = 4;
        CHECK(flatten(t) == Vector{1, 2, 3, 4});
        CHECK(flat_index(Shape3{2, 1, 2}, 1, 0, 1) == 3);
    }

    TEST_CASE("flatten and unflatten are inverse") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-1, 1);
        for (std::size_t c = 1; c <= 4; ++c) {
            for (std::size_t i = 1; i <= 6; ++i) {
                for (std::size_t j = 1; j <= 6; ++j) {
                    Tensor t({c, i, j});
                    for (double& v : t.data()) {
                        v = u(rng);
                    }
                    const Tensor back = unflatten(flatten(t), Shape3{c, i, j});
                    REQUIRE(back.shape() == t.shape());
                    for (std::size_t k = 0; k < t.size(); ++k) {
                        CHECK(back.data()[k] == t.data()[k]);
                    }
                }
            }
        }
    }

    TEST_CASE("tensor construction checks data length and extents") {
        CHECK_THROWS_AS(Tensor({2, 2}, Vector{1.0, 2.0, 3.0}), ShapeError);
        CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
        CHECK_THROWS_AS(unflatten(Vector{1.0, 2.0}, Shape3{1, 1, 3}), ShapeError);
    }

    TEST_CASE("spectral norm of simple matrices") {
        CHECK(spectral_norm(Matrix::identity(3)) == doctest::Approx(1.0).epsilon(1e-12));
        const Vector d{3.0, 1.0};
        CHECK(spectral_norm(Matrix::diagonal(d)) == doctest::Approx(3.0).epsilon(1e-12));
        CHECK(spectral_norm(Matrix(3, 2, 0.0)) == 0.0);
    }

    TEST_CASE("spectral norm matches SVD on random 5x4 matrices") {
        std::mt19937_64 rng(11);
        for (int trial = 0; trial < 20; ++trial) {
            const Matrix m = random_matrix(5, 4, rng);
            CHECK(std::abs(spectral_norm(m, {1000, 1e-15, 1}) - svd_max(m)) <= 1e-8);
        }
    }

    TEST_CASE("matrix-free spectral norm agrees with the dense one") {
        std::mt19937_64 rng(5);
        const Matrix m = random_matrix(6, 3, rng);
        const double free = spectral_norm([&](std::span<const double> v) { return matvec(m, v); },
                                          [&](std::span<const double> v) { return matvec_transposed(m, v); }, 3,
                                          {1000, 1e-15, 1});
        CHECK(std::abs(free - svd_max(m)) <= 1e-8);
    }

    TEST_CASE("frobenius norm examples") {
        CHECK(frobenius_norm(Matrix::identity(2)) == doctest::Approx(std::sqrt(2.0)));
        CHECK(frobenius_norm(Matrix(2, 2, 0.0)) == 0.0);
        CHECK(frobenius_norm(Matrix(2, 2, {1, 2, 2, 4})) == doctest::Approx(5.0).epsilon(1e-15));
    }

    TEST_CASE("spectral norm never exceeds frobenius norm") {
        std::mt19937_64 rng(17);
        std::uniform_int_distribution<std::size_t> dim(1, 8);
        for (int trial = 0; trial < 200; ++trial) {
            const Matrix m = random_matrix(dim(rng), dim(rng), rng);
            CHECK(spectral_norm(m) <= frobenius_norm(m) * (1 + 1e-12));
        }
    }

    TEST_CASE("matvec is associative with matmul") {
        std::mt19937_64 rng(23);
        const Matrix a = random_matrix(4, 5, rng);
        const Matrix b = random_matrix(5, 3, rng);
        const Vector v{0.3, -1.2, 2.0};
        const Vector lhs = matvec(matmul(a, b), v);
        const Vector rhs = matvec(a, matvec(b, v));
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            CHECK(std::abs(lhs[i] - rhs[i]) <= 1e-10 * std::max(1.0, std::abs(rhs[i])));
        }
    }

    TEST_CASE("transposed matvec matches the explicit transpose") {
        std::mt19937_64 rng(29);
        const Matrix a = random_matrix(3, 4, rng);
        const Vector u{1.0, -2.0, 0.5};
        const Vector lhs = matvec_transposed(a, u);
        const Vector rhs = matvec(a.transposed(), u);
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-14));
        }
    }

    TEST_CASE("mismatched operands raise shape errors") {
        CHECK_THROWS_AS(matvec(Matrix(2, 3), Vector{1.0, 2.0}), ShapeError);
        CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
        CHECK_THROWS_AS(dot(Vector{1.0}, Vector{1.0, 2.0}), ShapeError);
    }
}
