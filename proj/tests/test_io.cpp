#include <doctest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <unistd.h>

#include "splinet/builders.hpp"
#include "splinet/io.hpp"

using namespace splinet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("splinet_io_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(p, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

const std::vector<std::uint8_t> kImages{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                        0, 51, 102, 255, 10, 0, 0, 20};
const std::vector<std::uint8_t> kLabels{0, 0, 8, 1, 0, 0, 0, 2, 7, 3};

std::size_t perceptron_errors(const Dataset& d, std::size_t epochs) {
    const std::size_t dim = d.inputs[0].size();
    Vector w(dim + 1, 0.0);
    auto score = [&](const Vector& x) { return dot(std::span(w).first(dim), x) + w[dim]; };
    for (std::size_t e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double y = d.labels[i] == 1 ? 1.0 : -1.0;
            if (y * score(d.inputs[i]) <= 0) {
                axpy(y, d.inputs[i], std::span(w).first(dim));
                w[dim] += y;
            }
        }
    }
    std::size_t errors = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        errors += (score(d.inputs[i]) > 0) != (d.labels[i] == 1) ? 1 : 0;
    }
    return errors;
}

}  // namespace

TEST_SUITE("io") {
    TEST_CASE("handcrafted IDX pair") {
        TempDir dir;
        write_bytes(dir.path / "img", kImages);
        write_bytes(dir.path / "lbl", kLabels);
        const IdxImages raw = read_idx_images(dir.path / "img");
        CHECK(raw.rows == 2);
        CHECK(raw.cols == 2);
        REQUIRE(raw.images.size() == 2);
        CHECK(raw.images[0] == Vector{0.0, 51.0 / 255, 102.0 / 255, 1.0});
        CHECK(raw.images[1] == Vector{10.0 / 255, 0.0, 0.0, 20.0 / 255});
        CHECK(read_idx_labels(dir.path / "lbl") == std::vector<std::size_t>{7, 3});

        const ImageDataset ds = load_mnist_idx(dir.path / "img", dir.path / "lbl");
        CHECK(ds.shape == Shape3{1, 2, 2});
        CHECK(ds.data.labels == std::vector<std::size_t>{7, 3});
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(norm2(ds.data.inputs[i]) == doctest::Approx(1.0).epsilon(1e-15));
            const Vector want = normalize(raw.images[i]);
            CHECK(ds.data.inputs[i] == want);
        }
    }

    TEST_CASE("IDX errors") {
        TempDir dir;
        std::vector<std::uint8_t> bad = kImages;
        bad[2] = 0;
        bad[3] = 0;
        write_bytes(dir.path / "zero", bad);
        try {
            read_idx_images(dir.path / "zero");
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("0x00000000") != std::string::npos);
        }
        write_bytes(dir.path / "swapped", kLabels);
        CHECK_THROWS_AS(read_idx_images(dir.path / "swapped"), FormatError);

        write_bytes(dir.path / "short", std::vector<std::uint8_t>(kImages.begin(), kImages.end() - 1));
        CHECK_THROWS_AS(read_idx_images(dir.path / "short"), LengthError);
        write_bytes(dir.path / "stub", {0, 0, 8});
        CHECK_THROWS_AS(read_idx_labels(dir.path / "stub"), LengthError);

        write_bytes(dir.path / "img", kImages);
        write_bytes(dir.path / "lbl3", {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3});
        CHECK_THROWS_AS(load_mnist_idx(dir.path / "img", dir.path / "lbl3"), ConsistencyError);
        CHECK_THROWS_AS(read_idx_images(dir.path / "missing"), FormatError);

        write_bytes(dir.path / "blank", {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0});
        write_bytes(dir.path / "blank_lbl", {0, 0, 8, 1, 0, 0, 0, 1, 0});
        CHECK_THROWS_AS(load_mnist_idx(dir.path / "blank", dir.path / "blank_lbl"), DataError);
    }

    TEST_CASE("generators are deterministic and normalized") {
        const DatasetBundle a = gen_two_gaussians(30, 3.0, 11, 4);
        const DatasetBundle b = gen_two_gaussians(30, 3.0, 11, 4);
        CHECK(a.train.inputs == b.train.inputs);
        CHECK(a.test.inputs == b.test.inputs);
        CHECK(a.train.labels == b.train.labels);
        CHECK(a.train.size() == 60);
        CHECK(a.test.size() == 60);
        CHECK(gen_two_gaussians(30, 3.0, 12, 4).train.inputs != a.train.inputs);

        const DatasetBundle e1 = gen_square_edges(10, 0.1, 3);
        const DatasetBundle e2 = gen_square_edges(10, 0.1, 3);
        CHECK(e1.train.inputs == e2.train.inputs);
        CHECK(e1.input_shape == Shape3{1, 8, 8});
        for (const Dataset* d : {&a.train, &a.test, &e1.train, &e1.test}) {
            for (const auto& x : d->inputs) {
                CHECK(std::abs(norm2(x) - 1.0) <= 1e-12);
            }
        }
        CHECK_THROWS_AS(gen_two_gaussians(0, 1.0, 1), ConfigError);
    }

    TEST_CASE("zero separation gives coincident means") {
        const DatasetBundle b = gen_two_gaussians(5, 0.0, 1, 3);
        REQUIRE(b.class_means.size() == 2);
        CHECK(b.class_means[0] == b.class_means[1]);
        const DatasetBundle far = gen_two_gaussians(5, 6.0, 1, 3);
        CHECK(far.class_means[0] == Vector{3.0, 0.0, 0.0});
        CHECK(far.class_means[1] == Vector{-3.0, 0.0, 0.0});
    }

    TEST_CASE("large separation is linearly separable") {
        const DatasetBundle b = gen_two_gaussians(100, 20.0, 2, 5);
        CHECK(perceptron_errors(b.train, 100) == 0);
        CHECK(perceptron_errors(b.test, 100) == 0);
        const DatasetBundle edges = gen_square_edges(50, 0.0, 2);
        CHECK(edges.train.size() == 100);
    }

    TEST_CASE("normalization") {
        const Vector n = normalize(Vector{3, 4});
        CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-15));
        CHECK_THROWS_AS(normalize(Vector{0, 0}), DataError);
        Dataset d;
        d.inputs = {Vector{1, 2, 3}, Vector{-5, 0.1, 7}};
        normalize_in_place(d);
        const auto once = d.inputs;
        normalize_in_place(d);
        CHECK(d.inputs == once);
    }

    TEST_CASE("model round trip is bit exact") {
        TempDir dir;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const Network net = make_random_architecture(seed);
            save_model(dir.path / "m.json", net, seed);
            const ModelFile loaded = load_model(dir.path / "m.json");
            CHECK(loaded.rng_seed == seed);
            CHECK(loaded.net.parameter_values() == net.parameter_values());
            Rng rng(seed);
            for (int i = 0; i < 20; ++i) {
                const Vector x = random_input(net, rng);
                CHECK(network_forward(loaded.net, x).logits == network_forward(net, x).logits);
            }
            CHECK(model_to_json(loaded.net, seed) == model_to_json(net, seed));
        }
        const Network cnn = make_small_cnn(Shape3{1, 12, 12}, 3, 9);
        const ModelFile back = model_from_json(model_to_json(cnn));
        Rng rng(9);
        const Vector x = random_input(cnn, rng);
        CHECK(network_forward(back.net, x).logits == network_forward(cnn, x).logits);
    }

    TEST_CASE("model JSON errors") {
        const Network net = make_mlp(3, {4}, 2, ActivationKind::relu, 1);
        const std::string text = model_to_json(net, 1);

        const std::string corrupt = text.substr(0, 40) + "}{" + text.substr(40);
        try {
            model_from_json(corrupt);
            FAIL("expected a parse error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }

        auto doc = nlohmann::json::parse(text);
        auto missing = doc;
        missing["parameters"].erase(missing["parameters"].begin() + 1);
        try {
            model_from_json(missing.dump());
            FAIL("expected a schema error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
        }

        auto versioned = doc;
        versioned["format_version"] = 2;
        try {
            model_from_json(versioned.dump());
            FAIL("expected a version error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("format_version") != std::string::npos);
        }

        auto wrong_count = doc;
        wrong_count["class_count"] = 5;
        CHECK_THROWS_AS(model_from_json(wrong_count.dump()), FormatError);
    }
}
