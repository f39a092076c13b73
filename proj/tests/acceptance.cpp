// Acceptance suite: one evaluation per criterion, one pass/fail line each.
// Exits with the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fedsel/fedsel.hpp"

using namespace fedsel;

namespace {

int g_failures = 0;

class Criterion {
public:
    Criterion(int index, std::string title)
        : index_(index), title_(std::move(title)),
          start_(std::chrono::steady_clock::now()) {}

    void check(bool ok, const std::string& detail) {
        if (!ok) failed_details_.push_back(detail);
    }

    void finish(double time_limit_seconds = 0.0) {
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        if (time_limit_seconds > 0.0 && elapsed > time_limit_seconds) {
            failed_details_.push_back("runtime " + std::to_string(elapsed) + "s exceeds " +
                                      std::to_string(time_limit_seconds) + "s");
        }
        const bool ok = failed_details_.empty();
        std::printf("criterion %d [%s] (%.2fs) %s\n", index_, ok ? "PASS" : "FAIL", elapsed,
                    title_.c_str());
        for (const std::string& detail : failed_details_) {
            std::printf("    - %s\n", detail.c_str());
        }
        if (!ok) ++g_failures;
    }

private:
    int index_;
    std::string title_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::string> failed_details_;
};

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    return buf;
}

// ---------------------------------------------------------------------------
// Straight-line scoring pipeline, reimplemented independently of the library:
// plain softmax without max shift, explicit loops throughout.

struct OracleResult {
    std::vector<std::vector<double>> distances;
    std::vector<std::vector<double>> compat;
    std::vector<double> scores;
};

OracleResult score_pipeline_oracle(const std::vector<ModelParams>& registry,
                                   const UnlabeledDataset& probe,
                                   const std::vector<double>& values) {
    const std::size_t clients = registry.size();
    const auto n = static_cast<std::size_t>(registry.front().arch.num_classes);
    const auto d = static_cast<std::size_t>(registry.front().arch.input_dim);

    auto predict = [&](const ModelParams& m, std::size_t row) {
        std::vector<double> p(n);
        double denom = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            double z = m.weights[n * d + c];
            for (std::size_t j = 0; j < d; ++j) z += m.weights[c * d + j] * probe.features(row, j);
            p[c] = std::exp(z);
            denom += p[c];
        }
        for (double& v : p) v /= denom;
        return p;
    };

    OracleResult out;
    out.distances.assign(clients, std::vector<double>(clients, 0.0));
    for (std::size_t k = 0; k < clients; ++k) {
        for (std::size_t j = 0; j < clients; ++j) {
            if (k == j) continue;
            double mean = 0.0;
            for (std::size_t i = 0; i < probe.size(); ++i) {
                const auto pk = predict(registry[k], i);
                const auto pj = predict(registry[j], i);
                double kl = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    if (pk[c] > 0.0) kl += pk[c] * std::log(pk[c] / std::max(pj[c], 1e-12));
                }
                mean += kl / static_cast<double>(n);
            }
            out.distances[k][j] = mean / static_cast<double>(probe.size());
        }
    }
    out.compat.assign(clients, std::vector<double>(clients, 0.0));
    for (std::size_t k = 0; k < clients; ++k) {
        double denom = 0.0;
        for (std::size_t j = 0; j < clients; ++j) denom += std::exp(-out.distances[k][j]);
        for (std::size_t j = 0; j < clients; ++j) {
            out.compat[k][j] = std::exp(-out.distances[k][j]) / denom;
        }
    }
    out.scores.assign(clients, 0.0);
    for (std::size_t k = 0; k < clients; ++k) {
        for (std::size_t j = 0; j < clients; ++j) out.scores[k] += out.compat[k][j] * values[j];
    }
    return out;
}

void criterion_1_oracle_equivalence() {
    Criterion crit(1, "score pipeline matches an independent brute-force reimplementation");
    rng::Engine eng(20260810);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int clients = 2 + static_cast<int>(eng.uniform_int(3));  // K in [2, 4]
        const int classes = 2 + static_cast<int>(eng.uniform_int(2));  // N in [2, 3]
        const int dim = 1 + static_cast<int>(eng.uniform_int(4));
        const std::size_t probe_n = 1 + eng.uniform_int(5);

        const Architecture arch{dim, classes, 0};
        std::vector<ModelParams> registry;
        std::vector<double> values;
        for (int k = 0; k < clients; ++k) {
            ModelParams m = init_params(arch, eng.next_u64());
            for (double& w : m.weights) w = eng.uniform(-2.0, 2.0);
            registry.push_back(std::move(m));
            values.push_back(eng.uniform(0.0, 3.0));
        }
        UnlabeledDataset probe;
        probe.features = Matrix(probe_n, static_cast<std::size_t>(dim));
        for (double& v : probe.features.data) v = eng.normal();

        const Matrix distances = pairwise_distances(registry, probe);
        const Matrix compat = compatibility(distances);
        const std::vector<double> scores = attention_scores(compat, values);
        const OracleResult oracle = score_pipeline_oracle(registry, probe, values);

        for (std::size_t k = 0; k < static_cast<std::size_t>(clients); ++k) {
            worst = std::max(worst, std::abs(scores[k] - oracle.scores[k]));
            for (std::size_t j = 0; j < static_cast<std::size_t>(clients); ++j) {
                worst = std::max(worst, std::abs(distances(k, j) - oracle.distances[k][j]));
                worst = std::max(worst, std::abs(compat(k, j) - oracle.compat[k][j]));
            }
        }
    }
    crit.check(worst <= 1e-12, "max |library - oracle| = " + std::to_string(worst));
    crit.finish(5.0);
}

void criterion_2_hand_vectors() {
    Criterion crit(2, "hand-checked compatibility, weight, and greedy-threshold vectors");

    Matrix d(2, 2);
    d(0, 1) = std::log(2.0);
    d(1, 0) = std::log(2.0);
    const Matrix c = compatibility(d);
    crit.check(std::abs(c(0, 0) - 2.0 / 3.0) <= 1e-12 && std::abs(c(0, 1) - 1.0 / 3.0) <= 1e-12,
               "row [0, ln 2] -> [" + fmt(c(0, 0)) + ", " + fmt(c(0, 1)) + "], expected [2/3, 1/3]");

    const std::vector<double> w = aggregation_weights({0.6, 0.2, 0.2}, {1, 1, 0});
    crit.check(std::abs(w[0] - 0.75) <= 1e-12 && std::abs(w[1] - 0.25) <= 1e-12 && w[2] == 0.0,
               "weights -> [" + fmt(w[0]) + ", " + fmt(w[1]) + ", " + fmt(w[2]) +
                   "], expected [0.75, 0.25, 0]");

    const SelectionDecision greedy = select_by_threshold({0.5, 0.3, 0.2}, 0.6);
    crit.check(greedy.mask == std::vector<int>{1, 1, 0},
               "greedy tau=0.6 selected mask != {1,1,0}");
    crit.finish();
}

void criterion_3_linear_schedule() {
    Criterion crit(3, "linear threshold schedule steps 0.2 by 0.1 every two rounds, capped at 1");
    const ThresholdSchedule linear = make_threshold_schedule(ThresholdSchedule::Shape::linear, 20);
    const std::vector<double> expected{0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0.5, 0.5, 0.6, 0.6,
                                       0.7, 0.7, 0.8, 0.8, 0.9, 0.9, 1.0, 1.0, 1.0, 1.0};
    for (int t = 0; t < 20; ++t) {
        const double tau = threshold_at(linear, t, 20);
        const double want = expected[static_cast<std::size_t>(t)];
        if (std::abs(tau - want) > 1e-15) {
            crit.check(false, "tau_" + std::to_string(t) + " = " + fmt(tau) + ", expected " +
                                  fmt(want));
        }
    }
    crit.finish();
}

DataBundle bundle_for(int classes, int dim, int per_class, int clients, double alpha,
                      std::uint64_t seed, int probe_n, int test_n) {
    const LabeledDataset pool = make_synthetic(classes, dim, per_class, 5.0, seed);
    ServerSplit split = split_server(pool, probe_n, test_n, rng::derive(seed, 1));
    DataBundle bundle;
    bundle.client_sets =
        dirichlet_partition(split.remainder, {clients, alpha, rng::derive(seed, 2)});
    bundle.server_unlabeled = std::move(split.unlabeled);
    bundle.server_test = std::move(split.test);
    return bundle;
}

void criterion_4_fedavg_reduction() {
    Criterion crit(4, "attention pipeline with forced full selection reproduces plain averaging");
    const DataBundle bundle = bundle_for(5, 8, 80, 10, 1.0, 424242, 40, 80);
    SimulationConfig config;
    config.arch = {8, 5, 0};
    config.policy.kind = PolicyKind::fedavg_all;
    config.hyper = HyperParams{2, 32, 0.02};
    config.rounds = 5;
    config.master_seed = 77;

    // Forced path: run the full scoring pipeline every round, then override
    // the decision with all-selected and uniform weights.
    std::vector<ClientRecord> manual_clients = make_clients(bundle.client_sets);
    ServerState manual = round_zero(manual_clients, config.arch, config.master_seed,
                                    bundle.server_unlabeled, bundle.server_test);
    for (int t = 1; t <= config.rounds; ++t) {
        std::vector<double> values;
        for (auto& client : manual_clients) {
            values.push_back(client_value(client.data, manual.global));
        }
        const Matrix distances = pairwise_distances(manual.registry, manual.unlabeled);
        const std::vector<double> scores =
            attention_scores(compatibility(distances), values);
        (void)scores;
        std::vector<ModelParams> trained;
        for (std::size_t k = 0; k < manual_clients.size(); ++k) {
            trained.push_back(sgd_train(manual.global, manual_clients[k].data,
                                        config.hyper.epochs, config.hyper.batch_size,
                                        config.hyper.lr,
                                        client_train_seed(config.master_seed, t,
                                                          manual_clients[k].id)));
            manual.registry[k] = trained.back();
        }
        manual.global = aggregate(trained, std::vector<double>(manual_clients.size(),
                                                               1.0 / manual_clients.size()));
        manual.round = t + 1;
    }

    std::vector<ClientRecord> policy_clients = make_clients(bundle.client_sets);
    ServerState policy_state = round_zero(policy_clients, config.arch, config.master_seed,
                                          bundle.server_unlabeled, bundle.server_test);
    for (int t = 0; t < config.rounds; ++t) (void)run_round(policy_state, policy_clients, config);

    double worst = 0.0;
    for (std::size_t i = 0; i < manual.global.weights.size(); ++i) {
        worst = std::max(worst,
                         std::abs(manual.global.weights[i] - policy_state.global.weights[i]));
    }
    crit.check(worst <= 1e-12, "max per-coordinate gap " + std::to_string(worst));
    crit.finish(30.0);
}

// Shared setup for the desk-scale comparisons: the default synthetic task
// with 5 local epochs, 3 paired seeds from master seed 42.
ExperimentConfig headline_config(double alpha, PolicyKind policy,
                                 ThresholdSchedule::Shape shape) {
    ExperimentConfig config;
    config.clients = 10;
    config.rounds = 20;
    config.alpha = alpha;
    config.local_epochs = 5;
    config.batch_size = 64;
    config.lr = 0.001;
    config.hidden_dim = 0;
    config.policy = policy;
    config.schedule = shape;
    config.data.num_classes = 10;
    config.data.input_dim = 16;
    config.data.samples_per_class = 300;
    config.data.class_separation = 5.0;
    config.data.server_unlabeled = 300;
    config.data.server_test = 600;
    config.master_seed = 42;
    config.repeats = 3;
    return config;
}

struct RunStats {
    double final_accuracy_mean = 0.0;
    double total_client_rounds_mean = 0.0;
    std::vector<double> final_accuracy;  // per repeat
    std::vector<int> early_selected;     // per repeat, schedule indices t <= 4
};

RunStats run_stats(const ExperimentConfig& config) {
    const std::vector<MetricsRow> rows = run_all_repeats(config);
    RunStats stats;
    for (int run = 0; run < config.repeats; ++run) {
        double total = 0.0;
        int early = 0;
        for (int t = 0; t < config.rounds; ++t) {
            const MetricsRow& row =
                rows[static_cast<std::size_t>(run) * static_cast<std::size_t>(config.rounds) +
                     static_cast<std::size_t>(t)];
            total += row.num_selected;
            if (t <= 4) early += row.num_selected;
            if (t == config.rounds - 1) stats.final_accuracy.push_back(row.test_accuracy);
        }
        stats.total_client_rounds_mean += total;
        stats.early_selected.push_back(early);
    }
    stats.total_client_rounds_mean /= static_cast<double>(config.repeats);
    stats.final_accuracy_mean =
        std::accumulate(stats.final_accuracy.begin(), stats.final_accuracy.end(), 0.0) /
        static_cast<double>(config.repeats);
    return stats;
}

void criterion_5_headline_analogue() {
    Criterion crit(5, "attention selection holds accuracy within 2 points of full "
                      "participation using at most 80% of the client-rounds");
    const RunStats attention = run_stats(headline_config(
        0.5, PolicyKind::fedabc_threshold, ThresholdSchedule::Shape::linear));
    const RunStats averaging = run_stats(headline_config(
        0.5, PolicyKind::fedavg_all, ThresholdSchedule::Shape::linear));

    crit.check(attention.final_accuracy_mean >= averaging.final_accuracy_mean - 0.02,
               "final accuracy " + fmt(attention.final_accuracy_mean) + " vs full participation " +
                   fmt(averaging.final_accuracy_mean) + " (allowed gap 0.02)");
    crit.check(attention.total_client_rounds_mean <= 0.80 * 200.0,
               "client-rounds " + fmt(attention.total_client_rounds_mean) + " > 160");
    crit.finish(120.0);
}

void criterion_6_baseline_ordering() {
    Criterion crit(6, "under high heterogeneity the attention policy beats loss ranking");
    const RunStats attention = run_stats(headline_config(
        0.1, PolicyKind::fedabc_threshold, ThresholdSchedule::Shape::linear));
    const RunStats loss_rank = run_stats(headline_config(
        0.1, PolicyKind::cho_loss_rank, ThresholdSchedule::Shape::linear));
    crit.check(attention.final_accuracy_mean >= loss_rank.final_accuracy_mean,
               "final accuracy " + fmt(attention.final_accuracy_mean) + " < loss-ranked " +
                   fmt(loss_rank.final_accuracy_mean));
    crit.finish(120.0);
}

void criterion_7_schedule_shapes() {
    Criterion crit(7, "with matched mean threshold, convex defers participation and finishes "
                      "at least as well as concave minus one point");
    const RunStats convex = run_stats(headline_config(
        1.0, PolicyKind::fedabc_threshold, ThresholdSchedule::Shape::convex));
    const RunStats concave = run_stats(headline_config(
        1.0, PolicyKind::fedabc_threshold, ThresholdSchedule::Shape::concave));

    crit.check(convex.final_accuracy_mean >= concave.final_accuracy_mean - 0.01,
               "final accuracy convex " + fmt(convex.final_accuracy_mean) + " vs concave " +
                   fmt(concave.final_accuracy_mean) + " (allowed gap 0.01)");
    int convex_early = 0, concave_early = 0;
    for (std::size_t r = 0; r < convex.early_selected.size(); ++r) {
        convex_early += convex.early_selected[r];
        concave_early += concave.early_selected[r];
    }
    crit.check(convex_early < concave_early,
               "early participation convex " + std::to_string(convex_early) +
                   " !< concave " + std::to_string(concave_early));
    crit.finish(120.0);
}

void criterion_8_property_suites() {
    Criterion crit(8, "property suites: distributions, bounds, monotonicity, conservation, "
                      "gradients, byte determinism");
    rng::Engine eng(888);

    // Compatibility rows are distributions; scores stay inside the value range.
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t clients = 2 + eng.uniform_int(7);
        Matrix d(clients, clients);
        std::vector<double> values(clients);
        for (std::size_t k = 0; k < clients; ++k) {
            values[k] = eng.uniform(0.0, 4.0);
            for (std::size_t j = 0; j < clients; ++j) {
                d(k, j) = (k == j) ? 0.0 : eng.uniform(0.0, 6.0);
            }
        }
        const Matrix c = compatibility(d);
        for (std::size_t k = 0; k < clients; ++k) {
            double sum = 0.0;
            for (std::size_t j = 0; j < clients; ++j) {
                if (c(k, j) <= 0.0) crit.check(false, "non-positive compatibility entry");
                sum += c(k, j);
            }
            if (std::abs(sum - 1.0) > 1e-9) crit.check(false, "row sum off by > 1e-9");
        }
        const std::vector<double> scores = attention_scores(c, values);
        const double lo = *std::min_element(values.begin(), values.end());
        const double hi = *std::max_element(values.begin(), values.end());
        for (double s : scores) {
            if (s < lo - 1e-12 || s > hi + 1e-12) {
                crit.check(false, "score escapes [min v, max v]");
            }
        }

        // Threshold masks are nested as tau rises; lambda masks shrink as
        // lambda rises.
        std::vector<int> previous(clients, 0);
        for (double tau : {0.15, 0.35, 0.55, 0.75, 0.95, 1.0}) {
            const SelectionDecision decision = select_by_threshold(scores, tau);
            for (std::size_t k = 0; k < clients; ++k) {
                if (decision.mask[k] < previous[k]) {
                    crit.check(false, "raising tau dropped a selected client");
                }
            }
            previous = decision.mask;
        }
        std::vector<int> prev_lambda(clients, 1);
        for (double lambda : {0.2, 0.8, 1.6, 3.2, 6.4}) {
            const SelectionDecision decision = select_by_lambda(scores, lambda, 1.0);
            for (std::size_t k = 0; k < clients; ++k) {
                if (decision.mask[k] > prev_lambda[k]) {
                    crit.check(false, "raising lambda admitted a new client");
                }
            }
            prev_lambda = decision.mask;
        }
    }

    // Participation conservation on a small run of each policy family.
    {
        const DataBundle bundle = bundle_for(4, 6, 50, 8, 0.7, 99, 20, 40);
        for (PolicyKind kind : {PolicyKind::fedavg_all, PolicyKind::fedabc_threshold}) {
            SimulationConfig config;
            config.arch = {6, 4, 0};
            config.policy.kind = kind;
            config.policy.tau = make_threshold_schedule(ThresholdSchedule::Shape::linear, 6);
            config.hyper = HyperParams{1, 16, 0.02};
            config.rounds = 6;
            config.master_seed = 5;
            const std::vector<RoundMetrics> history = run_experiment(config, bundle);
            int total = 0;
            for (const RoundMetrics& m : history) {
                int popcount = 0;
                for (int bit : m.decision.mask) popcount += bit;
                if (popcount != m.num_selected) crit.check(false, "mask popcount mismatch");
                total += m.num_selected;
            }
            if (kind == PolicyKind::fedavg_all && total != 8 * 6) {
                crit.check(false, "full participation total != K*T");
            }
        }
    }

    // Gradient finite-difference check.
    for (int hidden : {0, 5}) {
        const Architecture arch{4, 3, hidden};
        ModelParams params = init_params(arch, 31);
        LabeledDataset data;
        data.features = Matrix(10, 4);
        for (auto& v : data.features.data) v = eng.normal();
        for (int i = 0; i < 10; ++i) {
            data.labels.push_back(static_cast<int>(eng.uniform_int(3)));
        }
        std::vector<std::size_t> all(data.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const std::vector<double> analytic = ce_gradient(params, data.features, data.labels, all);
        double num_norm = 0.0, ana_norm = 0.0, diff_norm = 0.0;
        const double step = 1e-5;
        for (std::size_t i = 0; i < params.weights.size(); ++i) {
            const double saved = params.weights[i];
            params.weights[i] = saved + step;
            const double up = ce_loss(params, data);
            params.weights[i] = saved - step;
            const double down = ce_loss(params, data);
            params.weights[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            num_norm += numeric * numeric;
            ana_norm += analytic[i] * analytic[i];
            diff_norm += (numeric - analytic[i]) * (numeric - analytic[i]);
        }
        const double rel =
            std::sqrt(diff_norm) / std::max(std::sqrt(num_norm), std::sqrt(ana_norm));
        if (rel >= 1e-4) crit.check(false, "gradient check rel error " + std::to_string(rel));
    }

    // End-to-end byte determinism of the emitted files.
    {
        ExperimentConfig config;
        config.clients = 6;
        config.rounds = 5;
        config.alpha = 0.8;
        config.local_epochs = 1;
        config.batch_size = 16;
        config.lr = 0.01;
        config.data.num_classes = 3;
        config.data.input_dim = 4;
        config.data.samples_per_class = 40;
        config.data.server_unlabeled = 12;
        config.data.server_test = 24;
        config.repeats = 2;
        config.master_seed = 9;

        auto read_file = [](const std::filesystem::path& p) {
            std::ifstream in(p, std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            return ss.str();
        };
        const auto dir_a = std::filesystem::temp_directory_path() / "fedsel_acc_a";
        const auto dir_b = std::filesystem::temp_directory_path() / "fedsel_acc_b";
        config.out_dir = dir_a.string();
        const EmitResult a = run_and_emit(config);
        config.out_dir = dir_b.string();
        const EmitResult b = run_and_emit(config);
        if (read_file(a.csv_path) != read_file(b.csv_path) ||
            read_file(a.summary_path) != read_file(b.summary_path)) {
            crit.check(false, "repeated runs differ byte for byte");
        }
        std::filesystem::remove_all(dir_a);
        std::filesystem::remove_all(dir_b);
    }

    crit.finish(60.0);
}

}  // namespace

int main() {
    criterion_1_oracle_equivalence();
    criterion_2_hand_vectors();
    criterion_3_linear_schedule();
    criterion_4_fedavg_reduction();
    criterion_5_headline_analogue();
    criterion_6_baseline_ordering();
    criterion_7_schedule_shapes();
    criterion_8_property_suites();

    if (g_failures == 0) {
        std::printf("all acceptance criteria passed\n");
    } else {
        std::printf("%d acceptance criteria failed\n", g_failures);
    }
    return g_failures;
}
