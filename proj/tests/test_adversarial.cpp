#include <doctest.h>

#include <cmath>
#include <sstream>

#include "splinet/adversarial.hpp"
#include "splinet/analysis.hpp"
#include "splinet/builders.hpp"
#include "splinet/splinex.hpp"

using namespace splinet;

namespace {

// dŷ_k/dx = p_k (W_k − Σ_j p_j W_j) for ŷ = softmax(Wx + b).
Vector closed_form_gradient(const Dense& d, std::span<const double> x, std::size_t k) {
    const Vector p = softmax(dense_forward(d.weights, d.bias, x));
    Vector mean(x.size(), 0.0);
    for (std::size_t j = 0; j < p.size(); ++j) {
        axpy(p[j], d.weights.row(j), mean);
    }
    return scaled(subtract(d.weights.row(k), mean), p[k]);
}

}  // namespace

TEST_SUITE("adversarial") {
    TEST_CASE("zero step is the identity") {
        const Network net = make_mlp(5, {6}, 3, ActivationKind::relu, 1);
        Rng rng(1);
        const Vector x = random_unit(5, rng);
        const AdversarialResult r = gen_adversarial(net, x, 2, 0.0);
        CHECK(r.perturbed == x);
        CHECK(r.original == x);
        CHECK_FALSE(r.flipped);
        CHECK(r.perturbation_norm == 0.0);
        CHECK_THROWS_AS(gen_adversarial(net, x, 3, 0.1), IndexError);
    }

    TEST_CASE("linear softmax model matches the closed form") {
        Rng rng(2);
        const Dense d = make_dense(4, 3, rng);
        const Network net(Shape3{4, 1, 1}, {Layer{d}});
        const Vector x = random_unit(4, rng);
        for (std::size_t k = 0; k < 3; ++k) {
            const Vector want = closed_form_gradient(d, x, k);
            const AdversarialResult r = gen_adversarial(net, x, k, 0.3);
            for (std::size_t i = 0; i < 4; ++i) {
                CHECK(r.gradient[i] == doctest::Approx(want[i]).epsilon(1e-13));
                CHECK(r.perturbed[i] == doctest::Approx(x[i] + 0.3 * want[i]).epsilon(1e-13));
            }
            CHECK(r.perturbation_norm == doctest::Approx(0.3 * norm2(want)).epsilon(1e-13));
            CHECK(sensitivity(net, x, k) == doctest::Approx(norm2(want)).epsilon(1e-13));
        }
    }

    TEST_CASE("uniform prediction sensitivity of a linear model") {
        // Zero bias and x orthogonal to every row gives p = 1/C.
        const Matrix w(3, 3, {1, 0, 0, 0, 1, 0, -1, -1, 0});
        const Network net(Shape3{3, 1, 1}, {Layer{Dense{w, Vector(3, 0.0)}}});
        const Vector x{0, 0, 1};
        // (1/3)(W_0 − mean row) with mean row (0, 0, 0).
        CHECK(sensitivity(net, x, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
        CHECK(sensitivity(net, x, 2) == doctest::Approx(std::sqrt(2.0) / 3.0).epsilon(1e-14));
    }

    TEST_CASE("saturated prediction has negligible sensitivity") {
        const Network net(Shape3{2, 1, 1}, {Layer{Dense{Matrix(2, 2, {30, 0, 0, 0}), Vector{0, 0}}}});
        const Vector x{1, 0};
        CHECK(sensitivity(net, x, 0) <= 1e-9);
        CHECK(sensitivity(net, x, 1) <= 1e-9);
    }

    TEST_CASE("small steps increase the target probability") {
        std::size_t tested = 0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const Network net = make_random_architecture(seed);
            Rng rng(seed);
            const Vector x = random_input(net, rng);
            const std::size_t k = runner_up_class(network_forward(net, x).logits);
            const AdversarialResult r = gen_adversarial(net, x, k, 1e-3);
            if (norm2(r.gradient) == 0.0) {
                continue;
            }
            CHECK(r.perturbed_probs[k] > r.original_probs[k]);
            ++tested;
        }
        CHECK(tested >= 18);
    }

    TEST_CASE("gradient matches finite differences of the target probability") {
        for (std::uint64_t seed = 1; seed <= 8; ++seed) {
            const Network net = make_random_architecture(seed);
            Rng rng(seed + 100);
            const Vector x = random_input(net, rng);
            if (boundary_margin(net, x) < 1e-3) {
                continue;
            }
            const std::size_t k = seed % net.output_dim();
            const Vector g = target_gradient(net, x, k);
            for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 10)) {
                Vector up = x, down = x;
                up[i] += 1e-6;
                down[i] -= 1e-6;
                const double fd =
                    (softmax(network_forward(net, up).logits)[k] - softmax(network_forward(net, down).logits)[k]) / 2e-6;
                CHECK(std::abs(fd - g[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
            }
        }
    }

    TEST_CASE("logit gradient is the template row") {
        const Network net = make_mlp(4, {5}, 3, ActivationKind::leaky_relu, 3);
        Rng rng(3);
        const Vector x = random_unit(4, rng);
        const TemplateSet t = templates(net, x);
        const Vector g = target_gradient(net, x, 1, true);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(g[i] == doctest::Approx(t.row(1)[i]).epsilon(1e-13));
        }
        AdversarialOptions opt;
        opt.renormalize = true;
        CHECK(norm2(gen_adversarial(net, x, 1, 0.5, opt).perturbed) == doctest::Approx(1.0).epsilon(1e-14));
    }

    TEST_CASE("sensitivity is below the composed bound") {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const Network net = make_random_architecture(seed);
            const double bound = 0.5 * lipschitz_upper(net).composed_spectral;
            Rng rng(seed);
            const Vector x = random_input(net, rng);
            for (std::size_t k = 0; k < net.output_dim(); ++k) {
                CHECK(sensitivity(net, x, k) <= bound * (1 + 1e-9));
            }
        }
    }

    TEST_CASE("flipped means the argmax changed") {
        const Network net = make_mlp(3, {4}, 2, ActivationKind::relu, 4);
        Rng rng(4);
        for (int i = 0; i < 20; ++i) {
            const Vector x = random_unit(3, rng);
            const AdversarialResult r = gen_adversarial(net, x, runner_up_class(network_forward(net, x).logits), 5.0);
            const bool changed = argmax(r.perturbed_probs) != argmax(r.original_probs);
            CHECK(r.flipped == changed);
        }
    }

    TEST_CASE("runner-up class") {
        CHECK(runner_up_class(Vector{0.1, 3.0, 2.0}) == 2);
        CHECK(runner_up_class(Vector{5.0, 1.0}) == 1);
        CHECK_THROWS_AS(runner_up_class(Vector{1.0}), DomainError);
    }

    TEST_CASE("attack sweep") {
        const Network net = make_mlp(4, {6}, 3, ActivationKind::relu, 5);
        Rng rng(5);
        std::vector<Vector> xs;
        for (int i = 0; i < 12; ++i) {
            xs.push_back(random_unit(4, rng));
        }
        const auto rows = attack_sweep(net, xs, {1.0, 0.0, 0.1});
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].alpha == 0.0);
        CHECK(rows[0].flip_rate == 0.0);
        CHECK(rows[0].mean_perturbation_norm == 0.0);
        CHECK(rows[1].alpha == 0.1);
        for (const auto& r : rows) {
            CHECK(std::isfinite(r.flip_rate));
            CHECK(std::isfinite(r.mean_perturbation_norm));
        }
        std::ostringstream os;
        write_sweep_csv(os, rows);
        CHECK(os.str().rfind("alpha,flip_rate,mean_pert_norm\n", 0) == 0);
        CHECK_THROWS_AS(attack_sweep(net, {}, {0.1}), DomainError);
        CHECK_THROWS_AS(attack_sweep(net, xs, {}), DomainError);
    }
}
