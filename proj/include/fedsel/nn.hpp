// Minimal trainable softmax classifier: multinomial logistic regression,
// optionally with one tanh hidden layer. Plain seeded mini-batch SGD.
// Every operation is a pure function of its arguments (seeds included).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsel/matrix.hpp"
#include "fedsel/rng.hpp"

namespace fedsel {

struct Architecture {
    int input_dim = 0;
    int num_classes = 0;
    int hidden_dim = 0;  // 0 = pure logistic regression

    // Weight layout: hidden_dim == 0 -> [W (N x d), b (N)];
    // hidden_dim  > 0 -> [W1 (h x d), b1 (h), W2 (N x h), b2 (N)].
    std::size_t param_count() const {
        const auto d = static_cast<std::size_t>(input_dim);
        const auto n = static_cast<std::size_t>(num_classes);
        const auto h = static_cast<std::size_t>(hidden_dim);
        if (hidden_dim == 0) return n * d + n;
        return h * d + h + n * h + n;
    }

    bool operator==(const Architecture&) const = default;
};

inline void validate_arch(const Architecture& arch) {
    if (arch.input_dim < 1) throw std::invalid_argument("Architecture: input_dim must be >= 1");
    if (arch.num_classes < 2) throw std::invalid_argument("Architecture: num_classes must be >= 2");
    if (arch.hidden_dim < 0) throw std::invalid_argument("Architecture: hidden_dim must be >= 0");
}

struct ModelParams {
    Architecture arch;
    std::vector<double> weights;
};

struct LabeledDataset {
    Matrix features;          // rows = samples
    std::vector<int> labels;  // in [0, num_classes)

    std::size_t size() const { return labels.size(); }
};

struct UnlabeledDataset {
    Matrix features;

    std::size_t size() const { return features.rows; }
};

inline void check_finite(const std::vector<double>& values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string(what) + ": non-finite value");
    }
}

// Deterministic init, weights ~ uniform(-0.05, 0.05). Small symmetric init
// keeps fresh models close to the uniform predictor.
inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
    validate_arch(arch);
    rng::Engine eng(seed);
    ModelParams params{arch, std::vector<double>(arch.param_count())};
    for (double& w : params.weights) w = eng.uniform(-0.05, 0.05);
    return params;
}

namespace detail {

// softmax(z) written into out; max-shifted for stability.
inline void softmax_row(std::span<const double> logits, std::span<double> out) {
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - zmax);
        sum += out[i];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

// Forward pass for one sample. `hidden` must have size h when h > 0 and
// receives the tanh activations (needed again by the backward pass).
inline void forward_sample(const ModelParams& params, std::span<const double> x,
                           std::span<double> hidden, std::span<double> probs) {
    const auto& arch = params.arch;
    const auto d = static_cast<std::size_t>(arch.input_dim);
    const auto n = static_cast<std::size_t>(arch.num_classes);
    const auto h = static_cast<std::size_t>(arch.hidden_dim);
    const double* w = params.weights.data();

    std::vector<double> logits(n);
    if (h == 0) {
        const double* bias = w + n * d;
        for (std::size_t c = 0; c < n; ++c) {
            double z = bias[c];
            const double* row = w + c * d;
            for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
            logits[c] = z;
        }
    } else {
        const double* w1 = w;
        const double* b1 = w + h * d;
        const double* w2 = b1 + h;
        const double* b2 = w2 + n * h;
        for (std::size_t u = 0; u < h; ++u) {
            double z = b1[u];
            const double* row = w1 + u * d;
            for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
            hidden[u] = std::tanh(z);
        }
        for (std::size_t c = 0; c < n; ++c) {
            double z = b2[c];
            const double* row = w2 + c * h;
            for (std::size_t u = 0; u < h; ++u) z += row[u] * hidden[u];
            logits[c] = z;
        }
    }
    softmax_row(logits, probs);
}

inline void check_feature_width(const Architecture& arch, const Matrix& features, const char* op) {
    if (features.cols != static_cast<std::size_t>(arch.input_dim)) {
        throw std::invalid_argument(std::string(op) + ": feature width " +
                                    std::to_string(features.cols) + " != input_dim " +
                                    std::to_string(arch.input_dim));
    }
}

}  // namespace detail

// Class probabilities for every row of `features`; each row sums to 1.
inline Matrix forward_probs(const ModelParams& params, const Matrix& features) {
    detail::check_feature_width(params.arch, features, "forward_probs");
    const auto n = static_cast<std::size_t>(params.arch.num_classes);
    const auto h = static_cast<std::size_t>(params.arch.hidden_dim);
    Matrix probs(features.rows, n);
    std::vector<double> hidden(h);
    for (std::size_t i = 0; i < features.rows; ++i) {
        detail::forward_sample(params, features.row(i), hidden, probs.row(i));
    }
    return probs;
}

// Mean cross-entropy, -log p clamped at 1e-12 so the result stays finite.
inline double ce_loss(const ModelParams& params, const LabeledDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("ce_loss: empty dataset");
    if (data.features.rows != data.labels.size()) {
        throw std::invalid_argument("ce_loss: features/labels size mismatch");
    }
    const Matrix probs = forward_probs(params, data.features);
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int label = data.labels[i];
        if (label < 0 || label >= params.arch.num_classes) {
            throw std::invalid_argument("ce_loss: label out of range");
        }
        total += -std::log(std::max(probs(i, static_cast<std::size_t>(label)), 1e-12));
    }
    return total / static_cast<double>(data.size());
}

// Mean cross-entropy gradient over the given sample indices, in the same
// layout as ModelParams::weights. Exposed so tests can finite-difference it.
inline std::vector<double> ce_gradient(const ModelParams& params, const Matrix& features,
                                       const std::vector<int>& labels,
                                       std::span<const std::size_t> indices) {
    detail::check_feature_width(params.arch, features, "ce_gradient");
    if (indices.empty()) throw std::invalid_argument("ce_gradient: no samples");
    const auto& arch = params.arch;
    const auto d = static_cast<std::size_t>(arch.input_dim);
    const auto n = static_cast<std::size_t>(arch.num_classes);
    const auto h = static_cast<std::size_t>(arch.hidden_dim);

    std::vector<double> grad(params.weights.size(), 0.0);
    std::vector<double> hidden(h);
    std::vector<double> probs(n);
    std::vector<double> dhidden(h);

    for (const std::size_t i : indices) {
        detail::forward_sample(params, features.row(i), hidden, probs);
        const int label = labels[i];
        if (label < 0 || label >= arch.num_classes) {
            throw std::invalid_argument("ce_gradient: label out of range");
        }
        const auto x = features.row(i);
        // dL/dlogit_c = p_c - [c == label]
        if (h == 0) {
            double* gw = grad.data();
            double* gb = grad.data() + n * d;
            for (std::size_t c = 0; c < n; ++c) {
                const double delta = probs[c] - (static_cast<int>(c) == label ? 1.0 : 0.0);
                gb[c] += delta;
                double* row = gw + c * d;
                for (std::size_t j = 0; j < d; ++j) row[j] += delta * x[j];
            }
        } else {
            const double* w2 = params.weights.data() + h * d + h;
            double* gw1 = grad.data();
            double* gb1 = grad.data() + h * d;
            double* gw2 = gb1 + h;
            double* gb2 = gw2 + n * h;
            std::fill(dhidden.begin(), dhidden.end(), 0.0);
            for (std::size_t c = 0; c < n; ++c) {
                const double delta = probs[c] - (static_cast<int>(c) == label ? 1.0 : 0.0);
                gb2[c] += delta;
                double* row = gw2 + c * h;
                for (std::size_t u = 0; u < h; ++u) {
                    row[u] += delta * hidden[u];
                    dhidden[u] += delta * w2[c * h + u];
                }
            }
            for (std::size_t u = 0; u < h; ++u) {
                const double dz = dhidden[u] * (1.0 - hidden[u] * hidden[u]);  // tanh'
                gb1[u] += dz;
                double* row = gw1 + u * d;
                const auto xr = features.row(i);
                for (std::size_t j = 0; j < d; ++j) row[j] += dz * xr[j];
            }
        }
    }
    const double scale = 1.0 / static_cast<double>(indices.size());
    for (double& g : grad) g *= scale;
    return grad;
}

// Mini-batch SGD; shuffling reseeded per epoch, batches walked in order and
// reduced sequentially so results do not depend on parallel execution.
inline ModelParams sgd_train(const ModelParams& params, const LabeledDataset& data, int epochs,
                             int batch_size, double lr, std::uint64_t seed) {
    if (data.size() == 0) throw std::invalid_argument("sgd_train: empty dataset");
    if (epochs < 1) throw std::invalid_argument("sgd_train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("sgd_train: batch_size must be >= 1");
    if (lr < 0.0) throw std::invalid_argument("sgd_train: lr must be >= 0");
    detail::check_feature_width(params.arch, data.features, "sgd_train");

    ModelParams result = params;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng::Engine eng(rng::derive(seed, 0x5d1f, static_cast<std::uint64_t>(epoch)));
        eng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
            const std::vector<double> grad = ce_gradient(
                result, data.features, data.labels,
                std::span<const std::size_t>(order.data() + start, end - start));
            for (std::size_t i = 0; i < grad.size(); ++i) result.weights[i] -= lr * grad[i];
        }
    }
    check_finite(result.weights, "sgd_train");
    return result;
}

// Fraction of samples whose argmax prediction matches the label;
// argmax ties break to the lowest class index.
inline double accuracy(const ModelParams& params, const LabeledDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
    const Matrix probs = forward_probs(params, data.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto row = probs.row(i);
        const std::size_t best = static_cast<std::size_t>(
            std::max_element(row.begin(), row.end()) - row.begin());
        if (static_cast<int>(best) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace fedsel
