#include "splinet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "splinet/builders.hpp"
#include "splinet/csv.hpp"
#include "splinet/inversion.hpp"
#include "splinet/parallel.hpp"

namespace splinet {

namespace {

constexpr double kUnitTolerance = 1e-6;

// Per-item loss coefficients after batch averaging.
struct Coefficients {
    double ce = 0.0;                                    // applied to labeled items only
    double entropy = 0.0;
    std::vector<std::pair<std::size_t, double>> recon;  // (layer, weight), ascending layer
};

Coefficients coefficients(const Batch& batch, const LossWeights& w, std::size_t layers) {
    w.validate();
    Coefficients c;
    if (batch.empty()) {
        return c;
    }
    const std::size_t labeled = static_cast<std::size_t>(
        std::count_if(batch.begin(), batch.end(), [](const BatchItem& b) { return b.label.has_value(); }));
    const double n = static_cast<double>(batch.size());
    if (labeled > 0) {
        c.ce = w.alpha / static_cast<double>(labeled);
    }
    c.entropy = (1.0 - w.alpha) * (1.0 - w.beta) / n;
    std::map<std::size_t, double> recon;
    const double r0 = (1.0 - w.alpha) * w.beta / n;
    if (r0 != 0.0) {
        recon[0] += r0;
    }
    for (std::size_t l = 0; l < w.gamma.size(); ++l) {
        if (w.gamma[l] == 0.0) {
            continue;
        }
        if (l >= std::max<std::size_t>(layers, 1)) {
            throw IndexError("gamma entry for layer " + std::to_string(l) + " but the network has " +
                             std::to_string(layers) + " layers");
        }
        recon[l] += w.gamma[l] / n;
    }
    c.recon.assign(recon.begin(), recon.end());
    return c;
}

void check_label(std::size_t label, std::size_t classes) {
    if (label >= classes) {
        throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(classes) +
                         " classes");
    }
}

// dE/dz for E = −Σ p log p with p = softmax(z).
Vector entropy_logit_gradient(std::span<const double> p, double entropy) {
    Vector g(p.size(), 0.0);
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) {
            g[k] = -p[k] * (std::log(p[k]) + entropy);
        }
    }
    return g;
}

double item_loss(const Network& net, const BatchItem& item, const Coefficients& c) {
    double loss = 0.0;
    const bool need_logits = (c.ce != 0.0 && item.label) || c.entropy != 0.0;
    if (need_logits) {
        const Vector logits = network_forward(net, item.x).logits;
        if (c.ce != 0.0 && item.label) {
            loss += c.ce * cross_entropy(logits, *item.label);
        }
        if (c.entropy != 0.0) {
            loss += c.entropy * entropy_loss(softmax(logits));
        }
    }
    for (const auto& [layer, w] : c.recon) {
        loss += w * reconstruction_error(net, item.x, layer);
    }
    return loss;
}

// Loss of one item and its gradient accumulated into `grads`.
double item_gradient(const Network& net, const BatchItem& item, const Coefficients& c, ParameterSet& grads) {
    NetworkCache cache;
    const ForwardResult fwd = forward_with_cache(net, item.x, cache);
    const Vector& f = fwd.logits;
    const Vector p = softmax(f);
    Vector upstream(f.size(), 0.0);
    double loss = 0.0;

    if (c.ce != 0.0 && item.label) {
        loss += c.ce * cross_entropy(f, *item.label);
        for (std::size_t k = 0; k < f.size(); ++k) {
            upstream[k] += c.ce * (p[k] - (k == *item.label ? 1.0 : 0.0));
        }
    }
    if (c.entropy != 0.0) {
        const double e = entropy_loss(p);
        loss += c.entropy * e;
        axpy(c.entropy, entropy_logit_gradient(p, e), upstream);
    }

    // R^(l) = ||J_lᵀ f − z_l||² with J_l = df/dz_l under the frozen trace. With
    // r = J_lᵀ f − z_l: dR = 2 rᵀ (dJ_lᵀ f + J_lᵀ df − dz_l). The first term only
    // touches weights above l, the second seeds the output, the third is
    // injected at z_l.
    std::vector<std::pair<std::size_t, Vector>> injections;
    for (const auto& [layer, w] : c.recon) {
        const std::span<const double> z =
            layer == 0 ? item.x : std::span<const double>(cache.layers[layer].input);
        const Vector back = backprop_frozen(net, fwd.trace, cache, f, nullptr, false, layer);
        const Vector r = subtract(back, z);
        loss += w * dot(r, r);
        NetworkCache linear_cache;
        const Vector jr = apply_frozen(net, fwd.trace, r, false, &linear_cache, layer);
        axpy(2.0 * w, jr, upstream);
        backprop_frozen(net, fwd.trace, linear_cache, scaled(f, 2.0 * w), &grads, false, layer);
        injections.emplace_back(layer, scaled(r, -2.0 * w));
    }

    std::size_t hi = net.size();
    Vector current = upstream;
    for (auto it = injections.rbegin(); it != injections.rend(); ++it) {
        current = backprop_frozen(net, fwd.trace, cache, current, &grads, true, it->first, hi);
        axpy(1.0, it->second, current);
        hi = it->first;
    }
    if (hi > 0) {
        backprop_frozen(net, fwd.trace, cache, current, &grads, true, 0, hi);
    }
    return loss;
}

void check_same_shape(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) {
        throw ShapeError("parameter set has " + std::to_string(a.size()) + " arrays, gradient has " +
                         std::to_string(b.size()));
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size()) {
            throw ShapeError("parameter array " + std::to_string(i) + " has length " + std::to_string(a[i].size()) +
                             ", gradient has " + std::to_string(b[i].size()));
        }
    }
}

void check_normalized(const Dataset& data, const char* name) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (std::abs(norm2(data.inputs[i]) - 1.0) > kUnitTolerance) {
            throw DataError(std::string(name) + " input " + std::to_string(i) + " is not unit-normalized");
        }
    }
}

struct Means {
    double r = 0.0;
    double e = 0.0;
};

Means mean_unsupervised(const Network& net, const std::vector<const Vector*>& inputs) {
    std::vector<double> r(inputs.size()), e(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) {
        NetworkCache cache;
        const ForwardResult fwd = forward_with_cache(net, *inputs[i], cache);
        const Vector back = backprop_frozen(net, fwd.trace, cache, fwd.logits, nullptr, false, 0);
        const Vector d = subtract(back, *inputs[i]);
        r[i] = dot(d, d);
        e[i] = entropy_loss(softmax(fwd.logits));
    });
    Means m;
    if (!inputs.empty()) {
        m.r = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(inputs.size());
        m.e = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(inputs.size());
    }
    return m;
}

}  // namespace

void LossWeights::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw ConfigError("beta must lie in [0, 1], got " + std::to_string(beta));
    }
    for (std::size_t l = 0; l < gamma.size(); ++l) {
        if (!(gamma[l] >= 0.0) || !std::isfinite(gamma[l])) {
            throw ConfigError("gamma[" + std::to_string(l) + "] must be >= 0");
        }
    }
}

Batch labeled_batch(const Dataset& data) {
    Batch b;
    for (std::size_t i = 0; i < data.size(); ++i) {
        b.push_back({data.inputs[i], data.labeled() ? std::optional<std::size_t>(data.labels[i]) : std::nullopt});
    }
    return b;
}

Batch unlabeled_batch(const Dataset& data) {
    Batch b;
    for (const Vector& x : data.inputs) {
        b.push_back({x, std::nullopt});
    }
    return b;
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
    check_label(label, logits.size());
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) {
        s += std::exp(z - m);
    }
    return m + std::log(s) - logits[label];
}

double entropy_loss(std::span<const double> probs) {
    double e = 0.0;
    for (double p : probs) {
        if (p < 0.0) {
            throw DomainError("probability entries must be nonnegative");
        }
        if (p > 0.0) {
            e -= p * std::log(p);
        }
    }
    return e;
}

double reconstruction_loss(const Network& net, std::span<const double> x) {
    return reconstruction_error(net, x, 0);
}

double per_layer_reconstruction_loss(const Network& net, std::span<const double> x, std::size_t layer) {
    return reconstruction_error(net, x, layer);
}

double combined_loss(const Network& net, const Batch& batch, const LossWeights& weights) {
    const Coefficients c = coefficients(batch, weights, net.size());
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) { losses[i] = item_loss(net, batch[i], c); });
    return std::accumulate(losses.begin(), losses.end(), 0.0);
}

LossGradient loss_gradients(const Network& net, const Batch& batch, const LossWeights& weights) {
    const Coefficients c = coefficients(batch, weights, net.size());
    std::vector<ParameterSet> per_item(batch.size());
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        per_item[i] = net.zero_parameter_set();
        losses[i] = item_gradient(net, batch[i], c, per_item[i]);
    });
    LossGradient out;
    out.grads = net.zero_parameter_set();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out.loss += losses[i];
        for (std::size_t a = 0; a < out.grads.size(); ++a) {
            axpy(1.0, per_item[i][a], out.grads[a]);
        }
    }
    return out;
}

ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, const OptimizerConfig& config) {
    check_same_shape(params, grads);
    ParameterSet out = params;
    for (std::size_t a = 0; a < out.size(); ++a) {
        axpy(-config.learning_rate, grads[a], out[a]);
    }
    return out;
}

ParameterSet adam_step(const ParameterSet& params, const ParameterSet& grads, AdamState& state,
                       const OptimizerConfig& config) {
    check_same_shape(params, grads);
    if (state.m.empty()) {
        state.m.clear();
        state.v.clear();
        for (const Vector& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
        state.t = 0;
    }
    check_same_shape(params, state.m);
    ++state.t;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    ParameterSet out = params;
    for (std::size_t a = 0; a < out.size(); ++a) {
        for (std::size_t i = 0; i < out[a].size(); ++i) {
            const double g = grads[a][i];
            state.m[a][i] = config.beta1 * state.m[a][i] + (1.0 - config.beta1) * g;
            state.v[a][i] = config.beta2 * state.v[a][i] + (1.0 - config.beta2) * g * g;
            const double mhat = state.m[a][i] / c1;
            const double vhat = state.v[a][i] / c2;
            out[a][i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
        }
    }
    return out;
}

TrainResult train(const Network& net, const Dataset& labeled, const Dataset& unlabeled, const Dataset& test,
                  const TrainConfig& config) {
    config.weights.validate();
    if (config.weights.alpha > 0.0 && !labeled.labeled()) {
        throw ConfigError("alpha > 0 requires a nonempty labeled set");
    }
    if (config.labeled_batch == 0 || (!unlabeled.empty() && config.unlabeled_batch == 0)) {
        throw ConfigError("batch sizes must be positive");
    }
    if (labeled.empty() && unlabeled.empty()) {
        throw ConfigError("no training data");
    }
    check_normalized(labeled, "labeled");
    check_normalized(unlabeled, "unlabeled");
    for (std::size_t y : labeled.labels) {
        check_label(y, net.output_dim());
    }

    const bool unsupervised_active =
        config.weights.alpha < 1.0 ||
        std::any_of(config.weights.gamma.begin(), config.weights.gamma.end(), [](double g) { return g != 0.0; });

    TrainResult result{net, {}};
    Network& model = result.net;
    Rng rng(config.seed);
    AdamState adam;

    std::vector<std::size_t> lab_order(labeled.size());
    std::iota(lab_order.begin(), lab_order.end(), std::size_t{0});
    std::vector<std::size_t> unl_order(unlabeled.size());
    std::iota(unl_order.begin(), unl_order.end(), std::size_t{0});
    std::size_t lab_cursor = lab_order.size();

    std::vector<const Vector*> all_inputs;
    for (const Vector& x : labeled.inputs) {
        all_inputs.push_back(&x);
    }
    for (const Vector& x : unlabeled.inputs) {
        all_inputs.push_back(&x);
    }

    auto next_labeled = [&](Batch& batch, std::size_t count) {
        for (std::size_t k = 0; k < count && !lab_order.empty(); ++k) {
            if (lab_cursor == lab_order.size()) {
                std::shuffle(lab_order.begin(), lab_order.end(), rng);
                lab_cursor = 0;
            }
            const std::size_t i = lab_order[lab_cursor++];
            batch.push_back({labeled.inputs[i], labeled.labels[i]});
        }
    };

    OptimizerConfig opt = config.optimizer;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.optimizer.decay_every > 0 && epoch > 1 && (epoch - 1) % config.optimizer.decay_every == 0) {
            opt.learning_rate *= config.optimizer.decay_factor;
        }
        std::vector<Batch> batches;
        if (!unlabeled.empty()) {
            std::shuffle(unl_order.begin(), unl_order.end(), rng);
            for (std::size_t start = 0; start < unl_order.size(); start += config.unlabeled_batch) {
                Batch batch;
                next_labeled(batch, config.labeled_batch);
                if (unsupervised_active) {
                    const std::size_t stop = std::min(unl_order.size(), start + config.unlabeled_batch);
                    for (std::size_t k = start; k < stop; ++k) {
                        batch.push_back({unlabeled.inputs[unl_order[k]], std::nullopt});
                    }
                }
                batches.push_back(std::move(batch));
            }
        } else {
            const std::size_t steps = (labeled.size() + config.labeled_batch - 1) / config.labeled_batch;
            for (std::size_t s = 0; s < steps; ++s) {
                Batch batch;
                next_labeled(batch, config.labeled_batch);
                batches.push_back(std::move(batch));
            }
        }

        double loss_sum = 0.0;
        for (const Batch& batch : batches) {
            LossGradient g = loss_gradients(model, batch, config.weights);
            loss_sum += g.loss;
            ParameterSet params = model.parameter_values();
            if (opt.weight_decay != 0.0) {
                // Weight arrays sit at even positions (weights, then bias, per layer).
                for (std::size_t a = 0; a < params.size(); a += 2) {
                    axpy(opt.weight_decay, params[a], g.grads[a]);
                }
            }
            params = opt.kind == OptimizerKind::sgd ? sgd_step(params, g.grads, opt)
                                                    : adam_step(params, g.grads, adam, opt);
            model.set_parameters(params);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
        rec.train_acc = labeled.labeled() ? accuracy(model, labeled) : 0.0;
        rec.test_acc = test.labeled() ? accuracy(model, test) : 0.0;
        const Means m = mean_unsupervised(model, all_inputs);
        rec.mean_R = m.r;
        rec.mean_E = m.e;
        result.history.push_back(rec);
    }
    return result;
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double accuracy(const Network& net, const Dataset& data) {
    if (data.empty()) {
        throw DomainError("accuracy of an empty dataset");
    }
    if (!data.labeled()) {
        throw DataError("accuracy needs labels");
    }
    std::vector<char> correct(data.size(), 0);
    parallel_for(data.size(), [&](std::size_t i) {
        correct[i] = argmax(network_forward(net, data.inputs[i]).logits) == data.labels[i] ? 1 : 0;
    });
    const auto hits = std::count(correct.begin(), correct.end(), 1);
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

double generalization_gap(double train_acc, double test_acc) {
    return std::abs(train_acc - test_acc);
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
    CsvWriter csv(os, {"epoch", "loss", "train_acc", "test_acc", "mean_R", "mean_E"});
    for (const EpochRecord& r : history) {
        const Vector values{r.loss, r.train_acc, r.test_acc, r.mean_R, r.mean_E};
        csv.row_values(std::to_string(r.epoch), values);
    }
}

}  // namespace splinet
