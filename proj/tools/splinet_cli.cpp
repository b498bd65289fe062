#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "splinet/adversarial.hpp"
#include "splinet/analysis.hpp"
#include "splinet/builders.hpp"
#include "splinet/inversion.hpp"
#include "splinet/io.hpp"
#include "splinet/splinex.hpp"
#include "splinet/template_dynamics.hpp"
#include "splinet/trainer.hpp"

using namespace splinet;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitVerify = 3;

struct DataOptions {
    std::string dataset = "gaussians";
    std::size_t n = 100;
    double separation = 6.0;
    double noise = 0.3;
    std::string data_dir = "data/mnist";
    std::uint64_t seed = 1;
};

struct ModelOptions {
    std::string model;
    std::string arch = "mlp";
    std::vector<std::size_t> hidden{16};
    std::string activation = "relu";
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
    cmd->add_option("--dataset", d.dataset, "gaussians, edges or mnist")
        ->check(CLI::IsMember({"gaussians", "edges", "mnist"}));
    cmd->add_option("--n", d.n, "synthetic points per class");
    cmd->add_option("--separation", d.separation, "two-Gaussian mean distance");
    cmd->add_option("--noise", d.noise, "edge-image pixel noise");
    cmd->add_option("--data-dir", d.data_dir, "directory with the MNIST IDX files");
    cmd->add_option("--seed", d.seed, "random seed");
}

void add_model_options(CLI::App* cmd, ModelOptions& m) {
    cmd->add_option("--model", m.model, "model JSON; a fresh network is built when omitted");
    cmd->add_option("--arch", m.arch, "mlp or cnn")->check(CLI::IsMember({"mlp", "cnn"}));
    cmd->add_option("--hidden", m.hidden, "MLP hidden widths")->delimiter(',');
    cmd->add_option("--activation", m.activation, "relu, leaky_relu or abs")
        ->check(CLI::IsMember({"relu", "leaky_relu", "abs"}));
}

ActivationKind activation_kind(const std::string& s) {
    if (s == "leaky_relu") {
        return ActivationKind::leaky_relu;
    }
    return s == "abs" ? ActivationKind::abs : ActivationKind::relu;
}

DatasetBundle load_data(const DataOptions& d) {
    if (d.dataset == "gaussians") {
        return gen_two_gaussians(d.n, d.separation, d.seed);
    }
    if (d.dataset == "edges") {
        return gen_square_edges(d.n, d.noise, d.seed);
    }
    const fs::path dir(d.data_dir);
    ImageDataset train = load_mnist_idx(dir / "train-images.idx", dir / "train-labels.idx");
    ImageDataset test = load_mnist_idx(dir / "test-images.idx", dir / "test-labels.idx");
    DatasetBundle b;
    b.input_shape = train.shape;
    b.train = std::move(train.data);
    b.test = std::move(test.data);
    return b;
}

std::size_t class_count(const DatasetBundle& b) {
    std::size_t c = 0;
    for (const Dataset* d : {&b.train, &b.test}) {
        for (std::size_t y : d->labels) {
            c = std::max(c, y + 1);
        }
    }
    return std::max<std::size_t>(c, 2);
}

Network build_model(const ModelOptions& m, const DatasetBundle& b, std::uint64_t seed) {
    if (!m.model.empty()) {
        Network net = load_model(m.model).net;
        if (net.input_shape().size() != b.input_shape.size()) {
            throw ConfigError("model input size " + std::to_string(net.input_shape().size()) +
                              " does not match dataset input size " + std::to_string(b.input_shape.size()));
        }
        return net;
    }
    const std::size_t classes = class_count(b);
    if (m.arch == "cnn") {
        return make_small_cnn(b.input_shape, classes, seed);
    }
    return make_mlp(b.input_shape.size(), m.hidden, classes, activation_kind(m.activation), seed);
}

std::vector<Vector> sample_inputs(const DatasetBundle& b, std::size_t count) {
    const Dataset& src = b.test.empty() ? b.train : b.test;
    count = std::min(count, src.size());
    return {src.inputs.begin(), src.inputs.begin() + static_cast<std::ptrdiff_t>(count)};
}

fs::path prepare_out(const std::string& out) {
    fs::create_directories(out);
    return fs::path(out);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) {
        throw ConfigError("cannot write " + path.string());
    }
    os << text;
}

template <typename Writer>
void write_csv(const fs::path& path, Writer&& writer) {
    std::ofstream os(path);
    if (!os) {
        throw ConfigError("cannot write " + path.string());
    }
    writer(os);
}

// Balanced labeled subset of `count` items; the rest of the training set becomes unlabeled.
void split_labeled(const Dataset& train, std::optional<std::size_t> count, std::uint64_t seed, Dataset& labeled,
                   Dataset& unlabeled) {
    if (!count || *count >= train.size()) {
        labeled = train;
        return;
    }
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t classes = 0;
    for (std::size_t y : train.labels) {
        classes = std::max(classes, y + 1);
    }
    std::vector<std::size_t> quota(classes, *count / classes);
    for (std::size_t c = 0; c < *count % classes; ++c) {
        ++quota[c];
    }
    for (std::size_t i : order) {
        const std::size_t y = train.labels[i];
        if (quota[y] > 0) {
            --quota[y];
            labeled.inputs.push_back(train.inputs[i]);
            labeled.labels.push_back(y);
        } else {
            unlabeled.inputs.push_back(train.inputs[i]);
        }
    }
}

int run_train(const DataOptions& data, const ModelOptions& model, TrainConfig cfg, std::optional<std::size_t> labeled_count,
              const std::string& optimizer, const std::string& out) {
    cfg.weights.validate();
    cfg.optimizer.kind = optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    cfg.seed = data.seed;
    const DatasetBundle b = load_data(data);
    Dataset labeled, unlabeled;
    split_labeled(b.train, labeled_count, data.seed, labeled, unlabeled);
    const Network init = build_model(model, b, data.seed);
    const TrainResult r = train(init, labeled, unlabeled, b.test, cfg);

    const fs::path dir = prepare_out(out);
    save_model(dir / "model.json", r.net, data.seed);
    write_csv(dir / "history.csv", [&](std::ostream& os) { write_history_csv(os, r.history); });
    const EpochRecord& last = r.history.back();
    json summary{{"dataset", data.dataset},  {"labeled", labeled.size()},  {"unlabeled", unlabeled.size()},
                 {"epochs", cfg.epochs},     {"final_loss", last.loss},    {"train_acc", last.train_acc},
                 {"test_acc", last.test_acc}, {"mean_R", last.mean_R},     {"mean_E", last.mean_E},
                 {"generalization_gap", generalization_gap(last.train_acc, last.test_acc)}};
    write_text(dir / "train_summary.json", summary.dump(2) + "\n");
    std::printf("trained %zu epochs on %zu labeled + %zu unlabeled inputs\n", cfg.epochs, labeled.size(),
                unlabeled.size());
    std::printf("final loss %.6f, train accuracy %.4f, test accuracy %.4f\n", last.loss, last.train_acc, last.test_acc);
    std::printf("wrote %s\n", dir.string().c_str());
    return 0;
}

int run_extract(const DataOptions& data, const ModelOptions& model, std::size_t count, const std::string& out) {
    const DatasetBundle b = load_data(data);
    const Network net = build_model(model, b, data.seed);
    const fs::path dir = prepare_out(out);
    json items = json::array();
    double worst = 0.0;
    const auto inputs = sample_inputs(b, count);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Extraction e = extract_affine(net, inputs[i]);
        const TemplateSet t = templates(net, inputs[i]);
        write_csv(dir / ("templates_" + std::to_string(i) + ".csv"), [&](std::ostream& os) { write_templates_csv(os, t); });
        write_csv(dir / ("gram_" + std::to_string(i) + ".csv"), [&](std::ostream& os) { write_gram_csv(os, gram(t)); });
        const double residual = max_abs(subtract(network_forward(net, inputs[i]).logits, e.form.apply(inputs[i])));
        worst = std::max(worst, residual);
        items.push_back({{"sample_id", i}, {"signature", e.signature.hex()}, {"identity_residual", residual},
                         {"logits", e.logits}});
    }
    write_text(dir / "extract.json", json{{"inputs", items}, {"max_identity_residual", worst}}.dump(2) + "\n");
    std::printf("extracted templates for %zu inputs, max identity residual %.3g\n", inputs.size(), worst);
    return 0;
}

int run_lipschitz(const DataOptions& data, const ModelOptions& model, std::size_t pairs, const std::string& out) {
    const DatasetBundle b = load_data(data);
    const Network net = build_model(model, b, data.seed);
    LipschitzOptions opt;
    opt.sample_pairs = pairs;
    opt.seed = data.seed;
    const LipschitzReport r = lipschitz_upper(net, opt);
    const fs::path dir = prepare_out(out);
    write_text(dir / "lipschitz.json", to_json(r) + "\n");
    std::printf("composed spectral bound %.6g, composed Frobenius bound %.6g\n", r.composed_spectral,
                r.composed_frobenius);
    if (pairs > 0) {
        std::printf("empirical max ratio over %zu pairs %.6g\n", r.sampled_pairs, r.empirical_max_ratio);
    }
    return 0;
}

int run_invert(const DataOptions& data, const ModelOptions& model, std::size_t count, const std::vector<double>& gamma,
               const std::string& out) {
    const DatasetBundle b = load_data(data);
    const Network net = build_model(model, b, data.seed);
    const auto reports = reconstruction_report(net, sample_inputs(b, count), gamma);
    const fs::path dir = prepare_out(out);
    write_csv(dir / "reconstruction.csv", [&](std::ostream& os) { write_reconstruction_csv(os, reports); });
    double mean = 0.0;
    for (const auto& r : reports) {
        mean += r.squared_error / static_cast<double>(reports.size());
    }
    std::printf("reconstructed %zu inputs, mean squared error %.6g\n", reports.size(), mean);
    return 0;
}

int run_adversarial(const DataOptions& data, const ModelOptions& model, std::size_t count,
                    const std::vector<double>& alphas, std::optional<std::size_t> target, const AdversarialOptions& opt,
                    const std::string& out) {
    const DatasetBundle b = load_data(data);
    const Network net = build_model(model, b, data.seed);
    if (target && *target >= net.output_dim()) {
        throw ConfigError("target class " + std::to_string(*target) + " out of range");
    }
    const auto rows = attack_sweep(net, sample_inputs(b, count), alphas, target, opt);
    const fs::path dir = prepare_out(out);
    write_csv(dir / "sweep.csv", [&](std::ostream& os) { write_sweep_csv(os, rows); });
    for (const auto& r : rows) {
        std::printf("alpha %-10g flip rate %.4f mean perturbation %.6g\n", r.alpha, r.flip_rate,
                    r.mean_perturbation_norm);
    }
    return 0;
}

int run_simulate(const SimulationOptions& opt, const std::string& out) {
    const Simulation sim = simulate_templates(opt);
    const fs::path dir = prepare_out(out);
    write_csv(dir / "trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, sim.trajectory); });
    const TemplateAlignment al = template_alignment(sim.state, sim.x);
    json classes = json::array();
    std::printf("after %zu steps (%s):\n", opt.steps, opt.budget ? "constrained" : "unregularized");
    for (std::size_t c = 0; c < sim.state.classes(); ++c) {
        const double coef = dot(sim.state.templates.row(c), sim.x);
        json entry{{"class", c}, {"coefficient", coef}, {"cosine", al.cosine[c]}, {"norm", al.norm[c]}};
        std::printf("  class %zu: <A,x> %.6f  cos %.6f  norm %.6f", c, coef, al.cosine[c], al.norm[c]);
        if (opt.budget) {
            const double k = *opt.budget, n = static_cast<double>(opt.classes);
            const double expected = c == opt.label ? std::sqrt((n - 1) * k / n) : -std::sqrt(k / (n * (n - 1)));
            entry["optimal_coefficient"] = expected;
            std::printf("  (optimum %.6f)", expected);
        }
        std::printf("\n");
        classes.push_back(entry);
    }
    json summary{{"steps", opt.steps}, {"learning_rate", opt.learning_rate}, {"classes", classes},
                 {"squared_norm", sim.state.squared_norm()}};
    if (opt.budget) {
        summary["budget"] = *opt.budget;
    }
    write_text(dir / "templates.json", summary.dump(2) + "\n");
    return 0;
}

int run_regions(const ModelOptions& model, std::size_t input_dim, std::size_t classes, std::uint64_t seed,
                std::size_t density, double extent, const std::string& out) {
    const Network net = model.model.empty()
                            ? make_mlp(input_dim, model.hidden, classes, activation_kind(model.activation), seed)
                            : load_model(model.model).net;
    const std::size_t dim = net.input_shape().size();
    const RegionEnumeration r = enumerate_regions_bruteforce(net, Box{Vector(dim, -extent), Vector(dim, extent)}, density);
    const fs::path dir = prepare_out(out);
    double worst = 0.0;
    write_csv(dir / "regions.csv", [&](std::ostream& os) {
        os << "region,signature,points,max_form_deviation\n";
        for (std::size_t i = 0; i < r.regions.size(); ++i) {
            const auto& g = r.regions[i];
            worst = std::max(worst, g.max_form_deviation);
            std::ostringstream dev;
            dev.precision(17);
            dev << g.max_form_deviation;
            os << i << ',' << g.signature.hex() << ',' << g.points.size() << ',' << dev.str() << '\n';
        }
    });
    json summary{{"regions", r.regions.size()},
                 {"grid_points", r.grid_points},
                 {"signature_bound", signature_count_bound(net)},
                 {"max_form_deviation", worst}};
    write_text(dir / "regions.json", summary.dump(2) + "\n");
    std::printf("%zu regions over %zu grid points (bound %.6g), max form deviation %.3g\n", r.regions.size(),
                r.grid_points, signature_count_bound(net), worst);
    return 0;
}

double gradient_check(const Network& net, const Batch& batch, const LossWeights& w) {
    const LossGradient g = loss_gradients(net, batch, w);
    const ParameterSet p = net.parameter_values();
    Network probe = net;
    double worst = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        for (std::size_t i = 0; i < p[a].size(); ++i) {
            ParameterSet q = p;
            q[a][i] = p[a][i] + 1e-5;
            probe.set_parameters(q);
            const double up = combined_loss(probe, batch, w);
            q[a][i] = p[a][i] - 1e-5;
            probe.set_parameters(q);
            const double fd = (up - combined_loss(probe, batch, w)) / 2e-5;
            worst = std::max(worst, std::abs(fd - g.grads[a][i]) / std::max({std::abs(fd), std::abs(g.grads[a][i]), 1e-3}));
        }
    }
    return worst;
}

int run_verify(std::uint64_t seed, std::size_t inputs, const std::string& out) {
    std::vector<std::pair<std::string, Network>> nets;
    nets.emplace_back("small_cnn", make_small_cnn(Shape3{1, 8, 8}, 3, seed, 2, 3));
    nets.emplace_back("random_architecture", make_random_architecture(seed));
    json results = json::array();
    bool ok = true;
    for (const auto& [name, net] : nets) {
        Rng rng(seed);
        double identity = 0.0;
        Batch batch;
        std::vector<Vector> guarded;
        for (std::size_t i = 0; i < inputs; ++i) {
            const Vector x = random_input(net, rng);
            identity = std::max(identity, max_abs(subtract(network_forward(net, x).logits, extract_affine(net, x).form.apply(x))));
        }
        // Finite differences need inputs away from every region boundary.
        for (int attempt = 0; attempt < 1000 && guarded.size() < 3; ++attempt) {
            Vector x = random_input(net, rng);
            if (boundary_margin(net, x) > 1e-3) {
                guarded.push_back(std::move(x));
            }
        }
        for (std::size_t i = 0; i < guarded.size(); ++i) {
            batch.push_back({guarded[i], i == 2 ? std::nullopt : std::optional<std::size_t>(i % net.output_dim())});
        }
        double grad = 0.0;
        if (!batch.empty()) {
            grad = std::max(grad, gradient_check(net, batch, {1.0, 0.5, {}}));
            grad = std::max(grad, gradient_check(net, batch, {0.0, 1.0, {}}));
            grad = std::max(grad, gradient_check(net, batch, {0.5, 0.5, {}}));
        }
        const bool pass = identity <= 1e-9 && grad <= 1e-4 && !batch.empty();
        ok = ok && pass;
        results.push_back({{"network", name},
                           {"inputs", inputs},
                           {"identity_residual", identity},
                           {"gradient_checked_inputs", batch.size()},
                           {"gradient_max_rel_error", grad},
                           {"pass", pass}});
        std::printf("%-20s identity residual %.3g, gradient rel error %.3g on %zu inputs: %s\n", name.c_str(), identity,
                    grad, batch.size(), pass ? "ok" : "FAILED");
    }
    const fs::path dir = prepare_out(out);
    write_text(dir / "verify.json", json{{"results", results}, {"pass", ok}}.dump(2) + "\n");
    return ok ? 0 : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Exact affine-spline analysis of small deep networks"};
    app.require_subcommand(1);
    std::string out = "out";
    app.add_option("--out", out, "output directory")->capture_default_str();

    DataOptions data;
    ModelOptions model;
    std::vector<double> gamma;
    std::size_t count = 10;

    auto* train_cmd = app.add_subcommand("train", "train a network with the combined loss");
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.optimizer.learning_rate = 1e-2;
    std::optional<std::size_t> labeled;
    std::string optimizer = "adam";
    add_data_options(train_cmd, data);
    add_model_options(train_cmd, model);
    train_cmd->add_option("--alpha", cfg.weights.alpha, "weight of the supervised cross-entropy");
    train_cmd->add_option("--beta", cfg.weights.beta, "reconstruction share of the unsupervised term");
    train_cmd->add_option("--gamma", gamma, "per-layer reconstruction weights")->delimiter(',');
    train_cmd->add_option("--labeled", labeled, "number of labeled training inputs (rest unlabeled)");
    train_cmd->add_option("--epochs", cfg.epochs)->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", cfg.optimizer.learning_rate);
    train_cmd->add_option("--optimizer", optimizer)->check(CLI::IsMember({"adam", "sgd"}));
    train_cmd->add_option("--weight-decay", cfg.optimizer.weight_decay);
    train_cmd->add_option("--labeled-batch", cfg.labeled_batch);
    train_cmd->add_option("--unlabeled-batch", cfg.unlabeled_batch);
    train_cmd->add_option("--out", out);

    auto* extract_cmd = app.add_subcommand("extract", "templates and Gram matrices for dataset inputs");
    add_data_options(extract_cmd, data);
    add_model_options(extract_cmd, model);
    extract_cmd->add_option("--count", count, "number of inputs");
    extract_cmd->add_option("--out", out);

    auto* lip_cmd = app.add_subcommand("lipschitz", "per-layer and composed Lipschitz bounds");
    std::size_t pairs = 1000;
    add_data_options(lip_cmd, data);
    add_model_options(lip_cmd, model);
    lip_cmd->add_option("--pairs", pairs, "random pairs for the empirical ratio");
    lip_cmd->add_option("--out", out);

    auto* invert_cmd = app.add_subcommand("invert", "reconstruction x̂ = A[x]ᵀf(x) and its errors");
    add_data_options(invert_cmd, data);
    add_model_options(invert_cmd, model);
    invert_cmd->add_option("--count", count, "number of inputs");
    invert_cmd->add_option("--gamma", gamma, "per-layer weights selecting extra layers")->delimiter(',');
    invert_cmd->add_option("--out", out);

    auto* adv_cmd = app.add_subcommand("adversarial", "flip-rate sweep over step sizes");
    std::vector<double> alphas{0.0, 0.01, 0.1, 1.0};
    std::optional<std::size_t> target;
    AdversarialOptions adv;
    add_data_options(adv_cmd, data);
    add_model_options(adv_cmd, model);
    adv_cmd->add_option("--count", count, "number of inputs");
    adv_cmd->add_option("--alpha-grid", alphas, "step sizes")->delimiter(',');
    adv_cmd->add_option("--target", target, "target class (default: runner-up per input)");
    adv_cmd->add_flag("--logit", adv.logit_gradient, "ascend the logit instead of the softmax output");
    adv_cmd->add_flag("--renormalize", adv.renormalize, "rescale perturbed inputs to unit norm");
    adv_cmd->add_option("--out", out);

    auto* sim_cmd = app.add_subcommand("simulate-templates", "free-template dynamics on one input");
    SimulationOptions sim;
    double budget = 1.0;
    bool regularized = false;
    sim_cmd->add_option("--classes", sim.classes);
    sim_cmd->add_option("--dim", sim.dim);
    sim_cmd->add_option("--budget", budget, "norm budget K");
    sim_cmd->add_option("--lambda", sim.learning_rate, "learning rate");
    sim_cmd->add_option("--steps", sim.steps);
    sim_cmd->add_flag("--regularized", regularized, "enforce the norm budget");
    sim_cmd->add_option("--init-scale", sim.init_scale);
    sim_cmd->add_option("--record-every", sim.record_every);
    sim_cmd->add_option("--seed", sim.seed);
    sim_cmd->add_option("--out", out);

    auto* regions_cmd = app.add_subcommand("regions", "brute-force region enumeration on a tiny network");
    std::size_t input_dim = 2, classes = 2, density = 41;
    double extent = 2.0;
    std::uint64_t region_seed = 1;
    add_model_options(regions_cmd, model);
    regions_cmd->add_option("--input-dim", input_dim);
    regions_cmd->add_option("--classes", classes);
    regions_cmd->add_option("--density", density, "grid points per axis");
    regions_cmd->add_option("--extent", extent, "half-width of the sampled box");
    regions_cmd->add_option("--seed", region_seed);
    regions_cmd->add_option("--out", out);

    auto* verify_cmd = app.add_subcommand("verify", "LSO-identity and gradient checks");
    std::uint64_t verify_seed = 1;
    std::size_t verify_inputs = 20;
    verify_cmd->add_option("--seed", verify_seed);
    verify_cmd->add_option("--inputs", verify_inputs);
    verify_cmd->add_option("--out", out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*train_cmd) {
            cfg.weights.gamma = gamma;
            return run_train(data, model, cfg, labeled, optimizer, out);
        }
        if (*extract_cmd) {
            return run_extract(data, model, count, out);
        }
        if (*lip_cmd) {
            return run_lipschitz(data, model, pairs, out);
        }
        if (*invert_cmd) {
            return run_invert(data, model, count, gamma, out);
        }
        if (*adv_cmd) {
            return run_adversarial(data, model, count, alphas, target, adv, out);
        }
        if (*sim_cmd) {
            if (regularized) {
                sim.budget = budget;
            }
            return run_simulate(sim, out);
        }
        if (*regions_cmd) {
            return run_regions(model, input_dim, classes, region_seed, density, extent, out);
        }
        return run_verify(verify_seed, verify_inputs, out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitConfig;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kExitConfig;
    } catch (const DomainError& e) {
        std::fprintf(stderr, "invalid request: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
