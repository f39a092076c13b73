// Round orchestration: round-0 bootstrap with full participation, the
// configure / select / report loop, the per-client model registry, and
// weighted aggregation. Per-client RNG streams are derived from
// (master seed, round, client id) so selection decisions never perturb
// another client's training randomness.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fedsel/data.hpp"
#include "fedsel/nn.hpp"
#include "fedsel/selection.hpp"

namespace fedsel {

namespace seed_stream {
constexpr std::uint64_t client_init = 0x11;
constexpr std::uint64_t global_init = 0x22;
constexpr std::uint64_t client_train = 0x33;
}  // namespace seed_stream

inline std::uint64_t client_init_seed(std::uint64_t master, int client_id) {
    return rng::derive(master, seed_stream::client_init, static_cast<std::uint64_t>(client_id));
}

inline std::uint64_t client_train_seed(std::uint64_t master, int round, int client_id) {
    return rng::derive(master, seed_stream::client_train,
                       (static_cast<std::uint64_t>(round) << 20) ^
                           static_cast<std::uint64_t>(client_id));
}

struct ClientRecord {
    int id = 0;
    LabeledDataset data;
    ModelParams last_uploaded;    // latest params this client sent
    double current_value = 0.0;   // loss of the global model on this client's data
};

struct ServerState {
    ModelParams global;
    std::vector<ModelParams> registry;  // latest uploaded params per client
    UnlabeledDataset unlabeled;         // probe set for scoring
    LabeledDataset test;
    int round = 0;
};

struct RoundMetrics {
    int round = 0;
    double test_accuracy = 0.0;
    int num_selected = 0;
    double participation_ratio = 0.0;
    std::optional<ScoreReport> scores;  // present for the attention policies
    SelectionDecision decision;
};

struct HyperParams {
    int epochs = 20;
    int batch_size = 64;
    double lr = 0.001;
};

struct SimulationConfig {
    Architecture arch;
    SelectionPolicy policy;
    HyperParams hyper;
    int rounds = 20;
    std::uint64_t master_seed = 0;
    bool round0_aggregate = false;  // global starts as the mean of client inits instead of a fresh init
};

// Round 0: every client initializes and uploads; the registry is populated
// and the round counter moves to 1. No local training happens yet.
inline ServerState round_zero(std::vector<ClientRecord>& clients, const Architecture& arch,
                              std::uint64_t master_seed, UnlabeledDataset unlabeled,
                              LabeledDataset test, bool aggregate_inits = false) {
    if (clients.empty()) throw std::invalid_argument("round_zero: no clients");
    ServerState state;
    state.registry.reserve(clients.size());
    for (auto& client : clients) {
        client.last_uploaded = init_params(arch, client_init_seed(master_seed, client.id));
        client.current_value = 0.0;
        state.registry.push_back(client.last_uploaded);
    }
    if (aggregate_inits) {
        const std::vector<double> uniform(clients.size(), 1.0 / static_cast<double>(clients.size()));
        state.global = ModelParams{arch, {}};
        state.global.weights.assign(arch.param_count(), 0.0);
        for (std::size_t k = 0; k < state.registry.size(); ++k) {
            for (std::size_t i = 0; i < state.global.weights.size(); ++i) {
                state.global.weights[i] += uniform[k] * state.registry[k].weights[i];
            }
        }
    } else {
        state.global = init_params(arch, rng::derive(master_seed, seed_stream::global_init));
    }
    state.unlabeled = std::move(unlabeled);
    state.test = std::move(test);
    state.round = 1;
    return state;
}

// One client's report step: the value is evaluated on the received global
// model first, then local training starts from those same global params.
inline std::pair<ModelParams, double> client_report(const ClientRecord& client,
                                                    const ModelParams& global,
                                                    const HyperParams& hyper,
                                                    std::uint64_t train_seed) {
    const double value = client_value(client.data, global);
    ModelParams start = global;
    ModelParams trained = sgd_train(start, client.data, hyper.epochs, hyper.batch_size,
                                    hyper.lr, train_seed);
    return {std::move(trained), value};
}

// Weighted parameter mean with a fixed summation order.
inline ModelParams aggregate(const std::vector<ModelParams>& params_list,
                             const std::vector<double>& weights) {
    if (params_list.empty()) throw std::invalid_argument("aggregate: empty params list");
    if (params_list.size() != weights.size()) {
        throw std::invalid_argument("aggregate: params/weights size mismatch");
    }
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("aggregate: weights must be >= 0");
        total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("aggregate: all weights are zero");

    const Architecture& arch = params_list.front().arch;
    for (const auto& params : params_list) {
        if (!(params.arch == arch)) throw std::invalid_argument("aggregate: mixed architectures");
    }
    ModelParams out{arch, std::vector<double>(params_list.front().weights.size(), 0.0)};
    for (std::size_t k = 0; k < params_list.size(); ++k) {
        const double w = weights[k] / total;
        for (std::size_t i = 0; i < out.weights.size(); ++i) {
            out.weights[i] += w * params_list[k].weights[i];
        }
    }
    check_finite(out.weights, "aggregate");
    return out;
}

// One global round: (1) configure: broadcast the global model, every client
// reports its value; (2) selection: score and select per policy; (3) report:
// selected clients train, the registry and global model update, metrics are
// taken on the test set.
inline RoundMetrics run_round(ServerState& state, std::vector<ClientRecord>& clients,
                              const SimulationConfig& config) {
    if (state.round < 1) throw std::invalid_argument("run_round: round_zero has not run");
    const std::size_t num_clients = clients.size();
    const int t = state.round;       // 1-based round counter
    const int t_index = t - 1;       // schedule index in [0, T)

    // configure: values from all clients (one forward pass each)
    std::vector<double> values(num_clients);
    for (std::size_t k = 0; k < num_clients; ++k) {
        values[k] = client_value(clients[k].data, state.global);
        clients[k].current_value = values[k];
    }

    // selection
    std::optional<ScoreReport> report;
    SelectionDecision decision;
    switch (config.policy.kind) {
        case PolicyKind::fedavg_all:
            decision = baseline_select_all(static_cast<int>(num_clients));
            break;
        case PolicyKind::cho_loss_rank: {
            const std::vector<int> counts = config.policy.cho_counts.empty()
                ? default_cho_counts(config.rounds, static_cast<int>(num_clients))
                : config.policy.cho_counts;
            if (counts.size() != static_cast<std::size_t>(config.rounds)) {
                throw std::invalid_argument("run_round: cho_counts length must equal rounds");
            }
            decision = baseline_cho_select(values, counts[static_cast<std::size_t>(t_index)]);
            break;
        }
        case PolicyKind::fedabc_lambda:
        case PolicyKind::fedabc_threshold: {
            ScoreReport r;
            r.round = t;
            r.distances = pairwise_distances(state.registry, state.unlabeled);
            r.compatibility = compatibility(r.distances);
            r.values = values;
            r.scores = attention_scores(r.compatibility, values);
            if (config.policy.kind == PolicyKind::fedabc_lambda) {
                const double eta = config.policy.eta.at(t_index, config.rounds);
                decision = select_by_lambda(r.scores, config.policy.lambda, eta);
            } else {
                const double tau = threshold_at(config.policy.tau, t_index, config.rounds);
                decision = select_by_threshold(r.scores, tau);
            }
            decision.weights = aggregation_weights(r.scores, decision.mask);
            report = std::move(r);
            break;
        }
    }

    // report: selected clients train from the received global model; the
    // registry refreshes only for them
    std::vector<ModelParams> trained;
    std::vector<double> trained_weights;
    for (std::size_t k = 0; k < num_clients; ++k) {
        if (decision.mask[k] == 0) continue;
        ModelParams params = sgd_train(state.global, clients[k].data, config.hyper.epochs,
                                       config.hyper.batch_size, config.hyper.lr,
                                       client_train_seed(config.master_seed, t, clients[k].id));
        clients[k].last_uploaded = params;
        state.registry[k] = params;
        trained.push_back(std::move(params));
        trained_weights.push_back(decision.weights[k]);
    }
    state.global = aggregate(trained, trained_weights);

    RoundMetrics metrics;
    metrics.round = t;
    metrics.test_accuracy = accuracy(state.global, state.test);
    metrics.num_selected = 0;
    for (int m : decision.mask) metrics.num_selected += m;
    metrics.participation_ratio =
        static_cast<double>(metrics.num_selected) / static_cast<double>(num_clients);
    metrics.scores = std::move(report);
    metrics.decision = std::move(decision);

    state.round = t + 1;
    return metrics;
}

inline std::vector<ClientRecord> make_clients(const std::vector<LabeledDataset>& client_sets) {
    std::vector<ClientRecord> clients;
    clients.reserve(client_sets.size());
    for (std::size_t k = 0; k < client_sets.size(); ++k) {
        ClientRecord client;
        client.id = static_cast<int>(k);
        client.data = client_sets[k];
        clients.push_back(std::move(client));
    }
    return clients;
}

// Full run: round 0 bootstrap, then `rounds` global rounds. Deterministic
// for a fixed (config, bundle).
inline std::vector<RoundMetrics> run_experiment(const SimulationConfig& config,
                                                const DataBundle& bundle) {
    if (config.rounds < 1) throw std::invalid_argument("run_experiment: rounds must be >= 1");
    std::vector<ClientRecord> clients = make_clients(bundle.client_sets);
    ServerState state = round_zero(clients, config.arch, config.master_seed,
                                   bundle.server_unlabeled, bundle.server_test,
                                   config.round0_aggregate);
    std::vector<RoundMetrics> history;
    history.reserve(static_cast<std::size_t>(config.rounds));
    for (int t = 0; t < config.rounds; ++t) {
        history.push_back(run_round(state, clients, config));
    }
    return history;
}

}  // namespace fedsel
