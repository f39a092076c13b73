// Attention-based client selection: KL prediction distances between client
// models on the server's unlabeled probe set, row-softmax compatibility,
// loss-based values, attention scores, the lambda/eta and cumulative-
// threshold selection rules, threshold schedules, score-weighted
// aggregation weights, and the two baseline selectors.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsel/matrix.hpp"
#include "fedsel/nn.hpp"

namespace fedsel {

struct ScoreReport {
    int round = 0;
    Matrix distances;            // K x K, zero diagonal
    Matrix compatibility;        // K x K, rows sum to 1
    std::vector<double> values;  // per-client loss of the global model
    std::vector<double> scores;  // compatibility * values
};

enum class PolicyKind { fedabc_lambda, fedabc_threshold, fedavg_all, cho_loss_rank };

// Temporal weighting for the lambda rule; grows with the round index so the
// effective cut lambda/eta falls over time.
struct EtaSchedule {
    enum class Kind { round_fraction, constant };
    Kind kind = Kind::round_fraction;
    double constant_value = 1.0;

    double at(int t, int total_rounds) const {
        if (kind == Kind::constant) return constant_value;
        return static_cast<double>(t + 1) / static_cast<double>(total_rounds);
    }
};

struct ThresholdSchedule {
    enum class Shape { linear, concave, convex };
    Shape shape = Shape::linear;
    double start = 0.2;
    double coef = 0.1;  // linear: step per two rounds; concave: log scale; convex: quadratic scale
    double cap = 1.0;
};

// tau_t for round index t in [0, T); non-decreasing by construction.
inline double threshold_at(const ThresholdSchedule& schedule, int t, int total_rounds) {
    if (t < 0 || t >= total_rounds) {
        throw std::invalid_argument("threshold_at: round index " + std::to_string(t) +
                                    " outside [0, " + std::to_string(total_rounds) + ")");
    }
    double tau = 0.0;
    switch (schedule.shape) {
        case ThresholdSchedule::Shape::linear:
            tau = schedule.start + schedule.coef * static_cast<double>(t / 2);
            break;
        case ThresholdSchedule::Shape::concave:
            tau = schedule.start + schedule.coef * std::log1p(static_cast<double>(t));
            break;
        case ThresholdSchedule::Shape::convex:
            tau = schedule.start + schedule.coef * static_cast<double>(t) * static_cast<double>(t);
            break;
    }
    return std::min(tau, schedule.cap);
}

namespace detail {

inline double schedule_mean(const ThresholdSchedule& schedule, int total_rounds) {
    double sum = 0.0;
    for (int t = 0; t < total_rounds; ++t) sum += threshold_at(schedule, t, total_rounds);
    return sum / static_cast<double>(total_rounds);
}

}  // namespace detail

// Builds a schedule for T rounds. The concave (logarithmic) and convex
// (quadratic) coefficients are solved by bisection so their mean over
// [0, T) matches the linear schedule's mean, keeping average participation
// comparable across shapes.
inline ThresholdSchedule make_threshold_schedule(ThresholdSchedule::Shape shape, int total_rounds,
                                                 double cap = 1.0, double start = 0.2) {
    if (total_rounds < 1) throw std::invalid_argument("make_threshold_schedule: T must be >= 1");
    if (!(cap > 0.0)) throw std::invalid_argument("make_threshold_schedule: cap must be positive");
    ThresholdSchedule linear{ThresholdSchedule::Shape::linear, start, 0.1, cap};
    if (shape == ThresholdSchedule::Shape::linear) return linear;

    const double target = detail::schedule_mean(linear, total_rounds);
    ThresholdSchedule out{shape, start, 0.0, cap};
    double lo = 0.0;
    double hi = 1.0;
    while (detail::schedule_mean(ThresholdSchedule{shape, start, hi, cap}, total_rounds) < target &&
           hi < 1e12) {
        hi *= 2.0;
    }
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (detail::schedule_mean(ThresholdSchedule{shape, start, mid, cap}, total_rounds) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    out.coef = 0.5 * (lo + hi);
    return out;
}

struct SelectionPolicy {
    PolicyKind kind = PolicyKind::fedabc_threshold;
    double lambda = 0.1;
    EtaSchedule eta;
    ThresholdSchedule tau;
    std::vector<int> cho_counts;  // clients per round; empty = default curve
};

struct SelectionDecision {
    std::vector<int> mask;        // 0/1 per client
    std::vector<double> weights;  // aggregation weights, zero where unselected
    double cutoff = 0.0;          // tau_t or lambda/eta_t that produced the mask
};

// Divergence between two prediction rows, with the 1/N scale applied to the
// summed P_n log(P_n / Q_n) terms; 0 log(0/q) contributes 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
    if (p.empty()) throw std::invalid_argument("kl_divergence: empty distributions");
    double psum = 0.0, qsum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        psum += p[i];
        qsum += q[i];
    }
    if (std::abs(psum - 1.0) > 1e-6 || std::abs(qsum - 1.0) > 1e-6) {
        throw std::invalid_argument("kl_divergence: inputs must sum to 1");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) total += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
    }
    return total / static_cast<double>(p.size());
}

// d[k][j] = mean KL divergence between models k and j's softmax predictions
// over the probe set. Diagonal is exactly zero. Per-sample sums reduce in
// fixed index order, so the result is independent of any parallel schedule.
inline Matrix pairwise_distances(const std::vector<ModelParams>& registry,
                                 const UnlabeledDataset& probe) {
    if (registry.empty()) throw std::invalid_argument("pairwise_distances: empty registry");
    if (probe.size() == 0) throw std::invalid_argument("pairwise_distances: empty probe set");
    const std::size_t clients = registry.size();

    std::vector<Matrix> predictions;
    predictions.reserve(clients);
    for (const auto& params : registry) predictions.push_back(forward_probs(params, probe.features));

    Matrix distances(clients, clients);
    for (std::size_t k = 0; k < clients; ++k) {
        for (std::size_t j = 0; j < clients; ++j) {
            if (k == j) continue;
            double sum = 0.0;
            for (std::size_t i = 0; i < probe.size(); ++i) {
                sum += kl_divergence(predictions[k].row(i), predictions[j].row(i));
            }
            distances(k, j) = sum / static_cast<double>(probe.size());
        }
    }
    return distances;
}

// Row softmax of the negated distances; the self term (exp(0) = 1) stays in
// every row's normalization.
inline Matrix compatibility(const Matrix& distances) {
    if (distances.rows != distances.cols) {
        throw std::invalid_argument("compatibility: distance matrix must be square");
    }
    Matrix compat(distances.rows, distances.cols);
    for (std::size_t k = 0; k < distances.rows; ++k) {
        double sum = 0.0;
        for (std::size_t j = 0; j < distances.cols; ++j) {
            const double d = distances(k, j);
            if (!(d >= 0.0) || !std::isfinite(d)) {
                throw std::invalid_argument("compatibility: distances must be finite and >= 0");
            }
            compat(k, j) = std::exp(-d);
            sum += compat(k, j);
        }
        for (std::size_t j = 0; j < distances.cols; ++j) compat(k, j) /= sum;
    }
    return compat;
}

// A client's value this round: the global model's loss on its private data.
// High loss marks information the global model has not captured yet.
inline double client_value(const LabeledDataset& client_data, const ModelParams& global_params) {
    return ce_loss(global_params, client_data);
}

// scores = compatibility * values; each score is a convex combination of the
// values, so it lies in [min v, max v].
inline std::vector<double> attention_scores(const Matrix& compat, const std::vector<double>& values) {
    if (compat.cols != values.size() || compat.rows != values.size()) {
        throw std::invalid_argument("attention_scores: shape mismatch");
    }
    for (double v : values) {
        if (v < 0.0) throw std::invalid_argument("attention_scores: values must be >= 0");
    }
    std::vector<double> scores(values.size(), 0.0);
    for (std::size_t k = 0; k < compat.rows; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < compat.cols; ++j) s += compat(k, j) * values[j];
        scores[k] = s;
    }
    return scores;
}

namespace detail {

// Indices sorted by score descending, ties to the lowest index.
inline std::vector<std::size_t> rank_desc(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    return order;
}

inline std::size_t argmax_lowest(const std::vector<double>& scores) {
    return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                    scores.begin());
}

}  // namespace detail

// m[k] = 1 iff S[k] > lambda / eta_t. If nobody clears the cut, the argmax
// client is selected so aggregation never runs on an empty set.
inline SelectionDecision select_by_lambda(const std::vector<double>& scores, double lambda,
                                          double eta_t) {
    if (scores.empty()) throw std::invalid_argument("select_by_lambda: no scores");
    if (!(lambda > 0.0)) throw std::invalid_argument("select_by_lambda: lambda must be positive");
    if (!(eta_t > 0.0) || eta_t > 1.0) {
        throw std::invalid_argument("select_by_lambda: eta_t must be in (0, 1]");
    }
    SelectionDecision decision;
    decision.cutoff = lambda / eta_t;
    decision.mask.assign(scores.size(), 0);
    bool any = false;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (scores[k] > decision.cutoff) {
            decision.mask[k] = 1;
            any = true;
        }
    }
    if (!any) decision.mask[detail::argmax_lowest(scores)] = 1;
    return decision;
}

// Greedy cumulative rule on normalized scores: rank descending and select
// until the running share exceeds tau_t. All-zero scores degenerate to
// selecting everyone.
inline SelectionDecision select_by_threshold(const std::vector<double>& scores, double tau_t) {
    if (scores.empty()) throw std::invalid_argument("select_by_threshold: no scores");
    if (!(tau_t > 0.0) || tau_t > 1.0) {
        throw std::invalid_argument("select_by_threshold: tau_t must be in (0, 1]");
    }
    SelectionDecision decision;
    decision.cutoff = tau_t;
    decision.mask.assign(scores.size(), 0);

    double total = 0.0;
    for (double s : scores) {
        if (s < 0.0) throw std::invalid_argument("select_by_threshold: scores must be >= 0");
        total += s;
    }
    if (total <= 0.0) {
        std::fill(decision.mask.begin(), decision.mask.end(), 1);
        return decision;
    }

    double cumulative = 0.0;
    for (const std::size_t k : detail::rank_desc(scores)) {
        decision.mask[k] = 1;
        cumulative += scores[k] / total;
        if (cumulative > tau_t) break;
    }
    return decision;
}

// w[k] = m[k] S[k] / sum_j m[j] S[j]; uniform over the selected set when all
// selected scores are zero.
inline std::vector<double> aggregation_weights(const std::vector<double>& scores,
                                               const std::vector<int>& mask) {
    if (scores.size() != mask.size()) {
        throw std::invalid_argument("aggregation_weights: shape mismatch");
    }
    double total = 0.0;
    std::size_t selected = 0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k] != 0) {
            if (scores[k] < 0.0) {
                throw std::invalid_argument("aggregation_weights: scores must be >= 0");
            }
            total += scores[k];
            ++selected;
        }
    }
    if (selected == 0) throw std::invalid_argument("aggregation_weights: empty selection");

    std::vector<double> weights(mask.size(), 0.0);
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k] == 0) continue;
        weights[k] = (total > 0.0) ? scores[k] / total : 1.0 / static_cast<double>(selected);
    }
    return weights;
}

// FedAvg: everyone participates, uniform weights.
inline SelectionDecision baseline_select_all(int num_clients) {
    if (num_clients < 1) throw std::invalid_argument("baseline_select_all: K must be >= 1");
    SelectionDecision decision;
    decision.mask.assign(static_cast<std::size_t>(num_clients), 1);
    decision.weights.assign(static_cast<std::size_t>(num_clients),
                            1.0 / static_cast<double>(num_clients));
    return decision;
}

// Loss-ranked baseline: the n_t highest-value clients, uniform weights.
inline SelectionDecision baseline_cho_select(const std::vector<double>& values, int count) {
    if (values.empty()) throw std::invalid_argument("baseline_cho_select: no values");
    if (count < 1 || static_cast<std::size_t>(count) > values.size()) {
        throw std::invalid_argument("baseline_cho_select: count out of range");
    }
    SelectionDecision decision;
    decision.mask.assign(values.size(), 0);
    decision.weights.assign(values.size(), 0.0);
    const auto order = detail::rank_desc(values);
    for (int i = 0; i < count; ++i) {
        decision.mask[order[static_cast<std::size_t>(i)]] = 1;
        decision.weights[order[static_cast<std::size_t>(i)]] = 1.0 / static_cast<double>(count);
    }
    return decision;
}

// Per-round client counts for the loss-ranked baseline. (T=20, K=10) uses
// the published participation curve; other sizes scale the linear threshold
// schedule.
inline std::vector<int> default_cho_counts(int total_rounds, int num_clients) {
    if (total_rounds < 1 || num_clients < 1) {
        throw std::invalid_argument("default_cho_counts: T and K must be >= 1");
    }
    if (total_rounds == 20 && num_clients == 10) {
        return {2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 9, 10, 10, 10, 10};
    }
    const ThresholdSchedule linear =
        make_threshold_schedule(ThresholdSchedule::Shape::linear, total_rounds);
    std::vector<int> counts(static_cast<std::size_t>(total_rounds));
    for (int t = 0; t < total_rounds; ++t) {
        const double share = threshold_at(linear, t, total_rounds);
        const int n = static_cast<int>(std::floor(share * num_clients + 0.5));
        counts[static_cast<std::size_t>(t)] = std::clamp(n, 1, num_clients);
    }
    return counts;
}

inline std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::fedabc_lambda: return "fedabc_lambda";
        case PolicyKind::fedabc_threshold: return "fedabc_threshold";
        case PolicyKind::fedavg_all: return "fedavg_all";
        case PolicyKind::cho_loss_rank: return "cho_loss_rank";
    }
    return "unknown";
}

inline PolicyKind parse_policy(const std::string& name) {
    if (name == "fedabc_lambda") return PolicyKind::fedabc_lambda;
    if (name == "fedabc_threshold") return PolicyKind::fedabc_threshold;
    if (name == "fedavg_all") return PolicyKind::fedavg_all;
    if (name == "cho_loss_rank") return PolicyKind::cho_loss_rank;
    throw std::invalid_argument("unknown policy '" + name + "'");
}

inline std::string to_string(ThresholdSchedule::Shape shape) {
    switch (shape) {
        case ThresholdSchedule::Shape::linear: return "linear";
        case ThresholdSchedule::Shape::concave: return "concave";
        case ThresholdSchedule::Shape::convex: return "convex";
    }
    return "unknown";
}

inline ThresholdSchedule::Shape parse_shape(const std::string& name) {
    if (name == "linear") return ThresholdSchedule::Shape::linear;
    if (name == "concave") return ThresholdSchedule::Shape::concave;
    if (name == "convex") return ThresholdSchedule::Shape::convex;
    throw std::invalid_argument("unknown schedule shape '" + name + "'");
}

}  // namespace fedsel
