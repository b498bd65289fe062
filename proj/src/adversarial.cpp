#include "splinet/adversarial.hpp"

#include <algorithm>
#include <string>

#include "splinet/csv.hpp"
#include "splinet/parallel.hpp"

namespace splinet {

namespace {

void check_class(std::size_t k, std::size_t classes) {
    if (k >= classes) {
        throw IndexError("class " + std::to_string(k) + " out of range for " + std::to_string(classes) + " classes");
    }
}

}  // namespace

Vector target_gradient(const Network& net, std::span<const double> x, std::size_t k, bool logit) {
    NetworkCache cache;
    const ForwardResult fwd = forward_with_cache(net, x, cache);
    check_class(k, fwd.logits.size());
    Vector up(fwd.logits.size(), 0.0);
    if (logit) {
        up[k] = 1.0;
    } else {
        const Vector p = softmax(fwd.logits);
        for (std::size_t j = 0; j < p.size(); ++j) {
            up[j] = p[k] * ((j == k ? 1.0 : 0.0) - p[j]);
        }
    }
    return backprop_frozen(net, fwd.trace, cache, up, nullptr, false);
}

AdversarialResult gen_adversarial(const Network& net, std::span<const double> x, std::size_t k, double alpha,
                                  const AdversarialOptions& options) {
    AdversarialResult r;
    r.original.assign(x.begin(), x.end());
    r.alpha = alpha;
    r.target = k;
    r.gradient = target_gradient(net, x, k, options.logit_gradient);
    if (alpha == 0.0) {
        r.perturbed = r.original;
    } else {
        r.perturbed = r.original;
        axpy(alpha, r.gradient, r.perturbed);
        if (options.renormalize) {
            const double n = norm2(r.perturbed);
            if (n > 0.0) {
                r.perturbed = scaled(r.perturbed, 1.0 / n);
            }
        }
    }
    r.original_probs = softmax(network_forward(net, r.original).logits);
    r.perturbed_probs = softmax(network_forward(net, r.perturbed).logits);
    r.flipped = argmax(r.original_probs) != argmax(r.perturbed_probs);
    r.perturbation_norm = norm2(subtract(r.perturbed, r.original));
    return r;
}

double sensitivity(const Network& net, std::span<const double> x, std::size_t k) {
    return norm2(target_gradient(net, x, k, false));
}

std::size_t runner_up_class(std::span<const double> logits) {
    if (logits.size() < 2) {
        throw DomainError("runner-up class needs at least two classes");
    }
    const std::size_t best = argmax(logits);
    std::size_t second = best == 0 ? 1 : 0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        if (c != best && logits[c] > logits[second]) {
            second = c;
        }
    }
    return second;
}

std::vector<SweepRow> attack_sweep(const Network& net, const std::vector<Vector>& inputs, std::vector<double> alphas,
                                   std::optional<std::size_t> target, const AdversarialOptions& options) {
    if (inputs.empty() || alphas.empty()) {
        throw DomainError("attack sweep needs at least one input and one alpha");
    }
    std::sort(alphas.begin(), alphas.end());
    std::vector<SweepRow> rows;
    for (double alpha : alphas) {
        std::vector<char> flipped(inputs.size());
        std::vector<double> norms(inputs.size());
        parallel_for(inputs.size(), [&](std::size_t i) {
            const std::size_t k = target ? *target : runner_up_class(network_forward(net, inputs[i]).logits);
            const AdversarialResult r = gen_adversarial(net, inputs[i], k, alpha, options);
            flipped[i] = r.flipped ? 1 : 0;
            norms[i] = r.perturbation_norm;
        });
        SweepRow row;
        row.alpha = alpha;
        const double n = static_cast<double>(inputs.size());
        row.flip_rate = static_cast<double>(std::count(flipped.begin(), flipped.end(), 1)) / n;
        for (double v : norms) {
            row.mean_perturbation_norm += v / n;
        }
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
    CsvWriter csv(os, {"alpha", "flip_rate", "mean_pert_norm"});
    for (const SweepRow& r : rows) {
        csv.row(format_real(r.alpha), format_real(r.flip_rate), format_real(r.mean_perturbation_norm));
    }
}

}  // namespace splinet
