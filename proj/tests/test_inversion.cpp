#include <doctest.h>

#include <sstream>

#include "splinet/builders.hpp"
#include "splinet/inversion.hpp"
#include "splinet/splinex.hpp"
#include "splinet/template_dynamics.hpp"
#include "splinet/trainer.hpp"

using namespace splinet;

namespace {

// Q from a Gram-Schmidt pass over random columns.
Matrix random_orthogonal(std::size_t n, Rng& rng) {
    std::vector<Vector> cols;
    while (cols.size() < n) {
        Vector v = random_normal(n, rng);
        for (const auto& c : cols) {
            axpy(-dot(v, c), c, v);
        }
        cols.push_back(scaled(v, 1.0 / norm2(v)));
    }
    Matrix q(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            q(i, j) = cols[j][i];
        }
    }
    return q;
}

}  // namespace

TEST_SUITE("inversion") {
    TEST_CASE("orthonormal linear net reconstructs exactly") {
        Rng rng(1);
        const Network net(Shape3{4, 1, 1}, {Layer{Dense{random_orthogonal(4, rng), Vector(4, 0.0)}},
                                            Layer{Dense{random_orthogonal(4, rng), Vector(4, 0.0)}}});
        const Vector x = random_unit(4, rng);
        const Vector xh = invert(net, x);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(xh[i] == doctest::Approx(x[i]).epsilon(1e-13));
        }
        CHECK(reconstruction_error(net, x) <= 1e-24);
    }

    TEST_CASE("optimal templates reconstruct exactly") {
        Rng rng(2);
        const Vector x = random_unit(6, rng);
        const TemplateState opt = optimal_templates(x, 2, 5, 1.0);
        const Network net(Shape3{6, 1, 1}, {Layer{Dense{opt.templates, Vector(5, 0.0)}}});
        CHECK(max_abs(subtract(invert(net, x), x)) <= 1e-9);
    }

    TEST_CASE("random nets match the assembled affine form") {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const Network net = make_random_architecture(seed);
            Rng rng(seed);
            const Vector x = random_input(net, rng);
            const Extraction e = extract_affine(net, x);
            const Vector want = add(matvec_transposed(e.form.A, matvec(e.form.A, x)), matvec_transposed(e.form.A, e.form.b));
            const Vector got = invert(net, x);
            CHECK(max_abs(subtract(got, want)) <= 1e-10 * std::max(1.0, max_abs(want)));
            const Vector leak = matvec_transposed(e.form.A, e.form.b);
            CHECK(bias_leakage(net, x) == doctest::Approx(norm2(leak)).epsilon(1e-10));
        }
    }

    TEST_CASE("positively homogeneous for zero-bias nets") {
        Rng rng(3);
        const Network net(Shape3{5, 1, 1}, {Layer{make_dense(5, 7, rng, 1.0, 0.0)}, relu(),
                                            Layer{make_dense(7, 3, rng, 1.0, 0.0)}});
        const Vector x = random_unit(5, rng);
        const Vector base = invert(net, x);
        for (double c : {0.5, 2.0, 7.0}) {
            const Vector scaled_inv = invert(net, scaled(x, c));
            for (std::size_t i = 0; i < 5; ++i) {
                CHECK(scaled_inv[i] == doctest::Approx(c * base[i]).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("abs nets with orthonormal stages reconstruct exactly") {
        Rng rng(4);
        const Network net(Shape3{4, 1, 1}, {Layer{Dense{random_orthogonal(4, rng), Vector(4, 0.0)}}, abs_layer(),
                                            Layer{Dense{random_orthogonal(4, rng), Vector(4, 0.0)}}, abs_layer(),
                                            Layer{Dense{random_orthogonal(4, rng), Vector(4, 0.0)}}});
        for (int i = 0; i < 5; ++i) {
            const Vector x = random_unit(4, rng);
            CHECK(max_abs(subtract(invert(net, x), x)) <= 1e-13);
        }
    }

    TEST_CASE("layer targets") {
        Rng rng(5);
        const Network net(Shape3{3, 1, 1}, {Layer{make_dense(3, 4, rng)}, relu(), Layer{make_dense(4, 2, rng)}});
        const Vector x = random_unit(3, rng);
        CHECK(layer_input(net, x, 0) == x);
        CHECK(layer_input(net, x, 2) == layer_output(net, x, 1));
        CHECK(invert_to_layer(net, x, 0) == invert(net, x));
        const Vector z = layer_input(net, x, 2);
        const Vector r = subtract(invert_to_layer(net, x, 2), z);
        CHECK(reconstruction_error(net, x, 2) == doctest::Approx(dot(r, r)).epsilon(1e-14));
        CHECK_THROWS_AS(reconstruction_error(net, x, 3), IndexError);
    }

    TEST_CASE("report agrees with the trainer loss") {
        const Network net = make_mlp(4, {5, 5}, 3, ActivationKind::leaky_relu, 6);
        Rng rng(6);
        std::vector<Vector> xs;
        for (int i = 0; i < 10; ++i) {
            xs.push_back(random_unit(4, rng));
        }
        const std::vector<double> gamma{0.0, 0.0, 0.5, 0.0, 0.1};
        const auto reports = reconstruction_report(net, xs, gamma);
        REQUIRE(reports.size() == 10);
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const auto& r = reports[i];
            const Vector diff = subtract(r.reconstruction, r.input);
            CHECK(std::abs(r.squared_error - dot(diff, diff)) <= 1e-12);
            CHECK(r.squared_error == reconstruction_loss(net, xs[i]));
            REQUIRE(r.layers == std::vector<std::size_t>{2, 4});
            CHECK(r.layer_errors[0] == per_layer_reconstruction_loss(net, xs[i], 2));
            CHECK(r.layer_errors[1] == per_layer_reconstruction_loss(net, xs[i], 4));
        }
        std::ostringstream os;
        write_reconstruction_csv(os, reports);
        const std::string csv = os.str();
        CHECK(csv.rfind("sample_id,sq_error,bias_leakage,r_2,r_4\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
    }

    TEST_CASE("identity net reports zero") {
        const Network net(Shape3{3, 1, 1}, {});
        const auto reports = reconstruction_report(net, {Vector{1, 0, 0}, Vector{0, 0.6, 0.8}});
        for (const auto& r : reports) {
            CHECK(r.squared_error == 0.0);
            CHECK(r.bias_leakage == 0.0);
        }
    }
}
