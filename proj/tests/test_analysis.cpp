#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <json.hpp>

#include "splinet/analysis.hpp"
#include "splinet/builders.hpp"

using namespace splinet;

namespace {

double svd_max(const Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            e(i, j) = m(i, j);
        }
    }
    return Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
}

Network relu_net(std::size_t d) {
    return Network(Shape3{d, 1, 1}, {relu()});
}

}  // namespace

TEST_SUITE("analysis") {
    TEST_CASE("dense 2I bounds") {
        const Vector two(3, 2.0);
        const Network net(Shape3{3, 1, 1}, {Layer{Dense{Matrix::diagonal(two), Vector(3, 0.0)}}});
        const LipschitzReport r = lipschitz_upper(net);
        CHECK(r.layers[0].spectral_bound == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(r.layers[0].frobenius_bound == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-14));
    }

    TEST_CASE("ReLU layer bounds") {
        const LipschitzReport r = lipschitz_upper(relu_net(4));
        CHECK(r.layers[0].spectral_bound == 1.0);
        CHECK(r.layers[0].frobenius_bound == 4.0);
    }

    TEST_CASE("max pool bounds") {
        const Shape3 s{1, 4, 4};
        const LipschitzReport r = lipschitz_upper(Network(s, {max_pool_2d(s, 2)}));
        CHECK(r.layers[0].spectral_bound == 1.0);
        CHECK(r.layers[0].frobenius_bound == 2.0);
    }

    TEST_CASE("conv spectral bound matches SVD of the conv matrix") {
        Rng rng(3);
        const Conv2D c = make_conv(Shape3{2, 5, 5}, 3, 3, Padding::zero_same, rng);
        const LipschitzReport r = lipschitz_upper(Network(c.in_shape, {Layer{c}}));
        const auto [m, b] = conv_as_matrix(c);
        CHECK(std::abs(r.layers[0].spectral_bound - svd_max(m)) <= 1e-8);
        CHECK(r.layers[0].frobenius_bound == doctest::Approx(frobenius_norm(m)).epsilon(1e-13));
    }

    TEST_CASE("composed bounds are products and certify random pairs") {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const Network net = make_mlp(5, {8}, 3, ActivationKind::relu, seed);
            const LipschitzReport r = lipschitz_upper(net, {10000, seed, {1000, 1e-13, 1}});
            double prod = 1.0;
            for (const auto& l : r.layers) {
                prod *= l.spectral_bound;
            }
            CHECK(r.composed_spectral == doctest::Approx(prod).epsilon(1e-14));
            CHECK(r.composed_spectral <= r.composed_frobenius);
            CHECK(r.empirical_max_ratio <= r.composed_spectral + 1e-9);
            CHECK(r.sampled_pairs == 10000);
        }
    }

    TEST_CASE("residual bound adds the skip") {
        Rng rng(4);
        ResidualBlock block;
        const Dense d = make_dense(3, 3, rng);
        block.inner = {Layer{d}};
        const LipschitzReport r = lipschitz_upper(Network(Shape3{3, 1, 1}, {Layer{block}}));
        CHECK(r.layers[0].spectral_bound == doctest::Approx(svd_max(d.weights) + 1.0).epsilon(1e-9));
    }

    TEST_CASE("softmax contraction constant") {
        CHECK(softmax_contraction_bound(2) == 0.25);
        CHECK(softmax_contraction_bound(10) == doctest::Approx(0.09).epsilon(1e-15));
        CHECK_THROWS_AS(softmax_contraction_bound(1), DomainError);
        for (std::size_t c : {2u, 3u, 10u}) {
            CHECK(empirical_softmax_ratio(c, 20000, 7) <= softmax_contraction_bound(c));
        }
    }

    TEST_CASE("softmax contraction constant fails for nearby pairs when C >= 3") {
        // At logits (0, 0, -40) the softmax Jacobian has eigenvalue 1/2 along
        // (1, -1, 0), so the squared ratio of a small step approaches 1/4 > 2/9.
        const Vector x{0.0, 0.0, -40.0};
        const Vector y{1e-4, -1e-4, -40.0};
        const Vector ds = subtract(softmax(x), softmax(y));
        const Vector dx = subtract(x, y);
        const double ratio = dot(ds, ds) / dot(dx, dx);
        CHECK(ratio == doctest::Approx(0.25).epsilon(1e-6));
        CHECK(ratio > softmax_contraction_bound(3));
    }

    TEST_CASE("region distance examples") {
        const Network net = relu_net(3);
        const Vector x{1, 2, 3};
        CHECK(region_distance(net, x, x, 0) == doctest::Approx(std::sqrt(3.0)));
        const Network two = relu_net(2);
        CHECK(region_distance(two, Vector{1, -1}, Vector{-1, 1}, 0) == 0.0);
        CHECK(region_distance(net, Vector{1, 1, -1}, Vector{-1, 1, 1}, 0) == 1.0);
        CHECK(region_distance(net, Vector{1, 1, -1}, Vector{-1, 1, 1}, 0, RegionNorm::spectral) == 1.0);
        CHECK_THROWS_AS(region_distance(net, x, x, 1), IndexError);
        Rng rng(1);
        const Network lin(Shape3{3, 1, 1}, {Layer{make_dense(3, 3, rng)}});
        CHECK_THROWS_AS(region_distance(lin, x, x, 0), IndexError);
    }

    TEST_CASE("region distance is largest for the input itself among sub-masks") {
        const Network net = relu_net(6);
        const Vector x{1, 2, -1, 3, 4, -2};
        const double self = region_distance(net, x, x, 0);
        const Vector subs[] = {{1, -2, -1, 3, 4, -2}, {-1, -2, -1, 3, -4, -2}, {-1, -1, -1, -1, -1, -1}};
        for (const Vector& y : subs) {
            CHECK(region_distance(net, x, y, 0) <= self);
        }
    }

    TEST_CASE("max pool region distance counts shared winners") {
        const Shape3 s{1, 2, 4};
        const Network net(s, {max_pool_2d(s, 2)});
        const Vector a{1, 0, 0, 0, 1, 0, 0, 0};
        const Vector b{1, 0, 0, 0, 0, 1, 0, 0};
        CHECK(region_distance(net, a, a, 0) == doctest::Approx(std::sqrt(2.0)));
        CHECK(region_distance(net, a, b, 0) == doctest::Approx(std::sqrt(2.0)));
        CHECK(region_distance(net, a, b, 0, RegionNorm::spectral) == doctest::Approx(1.0).epsilon(1e-9));
    }

    TEST_CASE("separation") {
        Rng rng(2);
        const Dense d = make_dense(3, 2, rng);
        const Network lin(Shape3{3, 1, 1}, {Layer{d}});
        const Vector x1{0.1, 0.2, 0.3};
        const Vector x2{-0.3, 0.5, 0.0};
        CHECK(separation(lin, x1, x1, 0) == 0.0);
        CHECK(separation(lin, x1, x2, 0) ==
              doctest::Approx(norm2(matvec(d.weights, subtract(x1, x2)))).epsilon(1e-14));
        const Network net = make_random_architecture(3);
        const Vector a = random_input(net, rng);
        const Vector b = random_input(net, rng);
        for (std::size_t l = 0; l < net.size(); ++l) {
            CHECK(separation(net, a, b, l) ==
                  doctest::Approx(norm2(subtract(layer_output(net, a, l), layer_output(net, b, l)))));
        }
        CHECK_THROWS_AS(separation(net, a, b, net.size()), IndexError);
    }

    TEST_CASE("activation graph is a bipartite path") {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const Network net = make_random_architecture(seed);
            Rng rng(seed);
            const Vector x = random_input(net, rng);
            const ActivationGraph g = activation_graph(net, x);
            CHECK(g.nodes.size() == net.size());
            CHECK(g.edges.size() == net.size() - 1);
            CHECK(g.is_bipartite());
            for (const auto& [a, b] : g.edges) {
                CHECK(g.nodes[b].layer == g.nodes[a].layer + 1);
            }
            CHECK(activation_graph(net, x) == g);
        }
    }

    TEST_CASE("inputs differing in one layer's mask differ at that node only") {
        // Layer 2 is the second ReLU; shift x so only its mask changes.
        const Dense first{Matrix::identity(2), Vector{0, 0}};
        const Dense second{Matrix(2, 2, {1, 0, 0, 1}), Vector{-1.0, -1.0}};
        const Network net(Shape3{2, 1, 1}, {Layer{first}, relu(), Layer{second}, relu()});
        const ActivationGraph a = activation_graph(net, Vector{0.5, 0.5});
        const ActivationGraph b = activation_graph(net, Vector{1.5, 0.5});
        for (std::size_t i = 0; i < a.nodes.size(); ++i) {
            CHECK((a.nodes[i] == b.nodes[i]) == (i != 3));
        }
        CHECK(a.edges == b.edges);
    }

    TEST_CASE("odd cycles are not bipartite") {
        ActivationGraph g;
        g.nodes.resize(3);
        g.edges = {{0, 1}, {1, 2}, {2, 0}};
        CHECK_FALSE(g.is_bipartite());
    }

    TEST_CASE("template potential of orthonormal templates") {
        const Network net(Shape3{3, 1, 1}, {Layer{Dense{Matrix::identity(3), Vector(3, 0.0)}}});
        const TemplatePotential p = template_potential(net, {Vector{1, 0, 0}, Vector{0, 1, 0}});
        CHECK(p.gram_deviation == 0.0);
        CHECK(p.mean_off_diagonal == 0.0);
        CHECK(p.class_mean_norm == std::vector<double>{1, 1, 1});
        CHECK_THROWS_AS(template_potential(net, {Vector{1, 0, 0}}), DomainError);
    }

    TEST_CASE("duplicated templates raise the deviation") {
        const Vector row{1.0, 0.0, 0.0};
        Matrix w(3, 3);
        for (std::size_t c = 0; c < 3; ++c) {
            std::copy(row.begin(), row.end(), w.row(c).begin());
        }
        const Network net(Shape3{3, 1, 1}, {Layer{Dense{w, Vector(3, 0.0)}}});
        const TemplatePotential p = template_potential(net, {Vector{1, 0, 0}, Vector{0, 1, 0}});
        // AAᵀ = 11ᵀ so the deviation is ||11ᵀ − I||_F = sqrt(6).
        CHECK(p.gram_deviation == doctest::Approx(std::sqrt(6.0)));
        CHECK(p.mean_off_diagonal == 1.0);
    }

    TEST_CASE("template potential of a random small CNN is finite") {
        const Network net = make_small_cnn(Shape3{1, 12, 12}, 4, 3, 3, 4);
        Rng rng(3);
        std::vector<Vector> xs;
        for (int i = 0; i < 20; ++i) {
            xs.push_back(random_input(net, rng));
        }
        const TemplatePotential p = template_potential(net, xs);
        CHECK(std::isfinite(p.gram_deviation));
        CHECK(std::isfinite(p.isotropy_ratio));
        CHECK(p.isotropy_ratio >= 1.0);
        CHECK(std::isfinite(p.mean_vector_norm));
        const auto j = nlohmann::json::parse(to_json(p));
        CHECK(j.contains("isotropy_ratio"));
        CHECK(j.at("samples") == 20);
    }

    TEST_CASE("global inference conditions") {
        Rng rng(5);
        Dense d1 = make_dense(3, 4, rng);
        Dense d2 = make_dense(4, 2, rng);
        for (double& v : d2.weights.data()) {
            v = std::abs(v);
        }
        for (double& v : d2.bias) {
            v = std::abs(v);
        }
        d1.weights(0, 0) = -1.0;
        const Network ok(Shape3{3, 1, 1}, {Layer{d1}, leaky_relu(), Layer{d2}});
        CHECK(check_global_inference(ok).satisfied);

        Dense bad = d2;
        bad.weights(1, 2) = -0.5;
        const Network neg(Shape3{3, 1, 1}, {Layer{d1}, leaky_relu(), Layer{bad}});
        const auto c = check_global_inference(neg);
        CHECK_FALSE(c.satisfied);
        REQUIRE(c.violations.size() == 1);
        CHECK(c.violations[0].layer == 2);

        const Network with_relu(Shape3{3, 1, 1}, {Layer{d1}, relu(), Layer{d2}});
        CHECK_FALSE(check_global_inference(with_relu).satisfied);

        const Network no_head(Shape3{3, 1, 1}, {Layer{d1}, leaky_relu()});
        CHECK_FALSE(check_global_inference(no_head).satisfied);
        const auto j = nlohmann::json::parse(to_json(check_global_inference(with_relu)));
        CHECK(j.at("satisfied") == false);
    }

    TEST_CASE("lipschitz report serializes") {
        const auto j = nlohmann::json::parse(to_json(lipschitz_upper(make_random_architecture(2))));
        CHECK(j.contains("composed_spectral"));
        CHECK(j.contains("composed_frobenius"));
        CHECK(j.at("layers").is_array());
    }
}
