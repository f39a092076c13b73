// Experiment front end: key=value config files with command-line overrides,
// repeated runs with derived seeds, metrics.csv / summary.json emission, and
// multi-policy comparison on shared data.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedsel/data.hpp"
#include "fedsel/protocol.hpp"

namespace fedsel {

struct DataSpec {
    enum class Source { synthetic, csv };
    Source source = Source::synthetic;
    int num_classes = 10;
    int input_dim = 16;
    int samples_per_class = 300;
    double class_separation = 5.0;
    std::string csv_path;
    int server_unlabeled = 300;
    int server_test = 600;

    bool operator==(const DataSpec&) const = default;
};

struct ExperimentConfig {
    int clients = 10;
    int rounds = 20;
    double alpha = 0.5;
    int local_epochs = 20;
    int batch_size = 64;
    double lr = 0.001;
    int hidden_dim = 0;
    PolicyKind policy = PolicyKind::fedabc_threshold;
    ThresholdSchedule::Shape schedule = ThresholdSchedule::Shape::linear;
    double lambda = 0.1;
    DataSpec data;
    std::uint64_t master_seed = 42;
    int repeats = 3;
    std::string out_dir = ".";  // set by the CLI (--out / FEDSEL_OUT), not a file key
};

struct MetricsRow {
    int run = 0;
    int round = 0;
    std::string policy;
    double alpha = 0.0;
    double test_accuracy = 0.0;
    double participation_ratio = 0.0;
    int num_selected = 0;
    double threshold = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "run,round,policy,alpha,test_accuracy,participation_ratio,num_selected,threshold";

namespace detail {

constexpr std::uint64_t kDataTag = 0xda7a;
constexpr std::uint64_t kSplitTag = 0x59e1;
constexpr std::uint64_t kPartitionTag = 0x9a47;

// The value a consumer reads back from the 6-decimal CSV cell; summary
// statistics are computed from these so they stay reproducible from the file.
inline double csv_round(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    return std::strtod(buf, nullptr);
}

inline std::string format_fixed(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    return buf;
}

template <typename Getter>
std::pair<double, double> mean_and_sample_std(int n, Getter get) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += get(i);
    mean /= static_cast<double>(n);
    if (n < 2) return {mean, 0.0};
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = get(i) - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss / static_cast<double>(n - 1))};
}

inline std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
}

inline long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected integer, got '" + value + "'");
    }
}

inline double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument("bad real");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected finite real, got '" + value + "'");
    }
}

inline void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw std::invalid_argument("config key '" + key + "': " + what);
}

}  // namespace detail

inline void apply_config_key(ExperimentConfig& config, const std::string& key,
                             const std::string& value) {
    using detail::parse_int;
    using detail::parse_real;
    using detail::require;
    if (key == "clients") {
        config.clients = static_cast<int>(parse_int(key, value));
        require(config.clients >= 1, key, "must be >= 1");
    } else if (key == "rounds") {
        config.rounds = static_cast<int>(parse_int(key, value));
        require(config.rounds >= 1, key, "must be >= 1");
    } else if (key == "alpha") {
        config.alpha = parse_real(key, value);
        require(config.alpha > 0.0, key, "must be positive");
    } else if (key == "local_epochs") {
        config.local_epochs = static_cast<int>(parse_int(key, value));
        require(config.local_epochs >= 1, key, "must be >= 1");
    } else if (key == "batch_size") {
        config.batch_size = static_cast<int>(parse_int(key, value));
        require(config.batch_size >= 1, key, "must be >= 1");
    } else if (key == "lr") {
        config.lr = parse_real(key, value);
        require(config.lr > 0.0, key, "must be positive");
    } else if (key == "hidden_dim") {
        config.hidden_dim = static_cast<int>(parse_int(key, value));
        require(config.hidden_dim >= 0, key, "must be >= 0");
    } else if (key == "policy") {
        try {
            config.policy = parse_policy(value);
        } catch (const std::exception& e) {
            throw std::invalid_argument("config key 'policy': " + std::string(e.what()));
        }
    } else if (key == "schedule") {
        try {
            config.schedule = parse_shape(value);
        } catch (const std::exception& e) {
            throw std::invalid_argument("config key 'schedule': " + std::string(e.what()));
        }
    } else if (key == "lambda") {
        config.lambda = parse_real(key, value);
        require(config.lambda > 0.0, key, "must be positive");
    } else if (key == "seed") {
        try {
            std::size_t used = 0;
            config.master_seed = std::stoull(value, &used);
            if (used != value.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw std::invalid_argument("config key 'seed': expected unsigned integer, got '" +
                                        value + "'");
        }
    } else if (key == "repeats") {
        config.repeats = static_cast<int>(parse_int(key, value));
        require(config.repeats >= 1, key, "must be >= 1");
    } else if (key == "data") {
        if (value == "synthetic") {
            config.data.source = DataSpec::Source::synthetic;
        } else if (value == "csv") {
            config.data.source = DataSpec::Source::csv;
        } else {
            throw std::invalid_argument("config key 'data': expected synthetic or csv, got '" +
                                        value + "'");
        }
    } else if (key == "num_classes") {
        config.data.num_classes = static_cast<int>(parse_int(key, value));
        require(config.data.num_classes >= 2, key, "must be >= 2");
    } else if (key == "input_dim") {
        config.data.input_dim = static_cast<int>(parse_int(key, value));
        require(config.data.input_dim >= 1, key, "must be >= 1");
    } else if (key == "samples_per_class") {
        config.data.samples_per_class = static_cast<int>(parse_int(key, value));
        require(config.data.samples_per_class >= 1, key, "must be >= 1");
    } else if (key == "class_separation") {
        config.data.class_separation = parse_real(key, value);
        require(config.data.class_separation >= 0.0, key, "must be >= 0");
    } else if (key == "csv_path") {
        config.data.csv_path = value;
    } else if (key == "server_unlabeled") {
        config.data.server_unlabeled = static_cast<int>(parse_int(key, value));
        require(config.data.server_unlabeled >= 0, key, "must be >= 0");
    } else if (key == "server_test") {
        config.data.server_test = static_cast<int>(parse_int(key, value));
        require(config.data.server_test >= 1, key, "must be >= 1");
    } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

// `key = value` lines; '#' starts a comment; blank lines ignored.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected key = value");
        }
        entries.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return entries;
}

inline void validate_config(const ExperimentConfig& config) {
    if (config.data.source == DataSpec::Source::csv && config.data.csv_path.empty()) {
        throw std::invalid_argument("config key 'csv_path': required when data = csv");
    }
    const bool needs_probe = config.policy == PolicyKind::fedabc_threshold ||
                             config.policy == PolicyKind::fedabc_lambda;
    if (needs_probe && config.data.server_unlabeled < 1) {
        throw std::invalid_argument(
            "config key 'server_unlabeled': must be >= 1 for attention policies");
    }
}

// File first (when given), then overrides; later entries win.
inline ExperimentConfig parse_config(
    const std::optional<std::string>& path,
    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    ExperimentConfig config;
    if (path) {
        for (const auto& [key, value] : read_config_file(*path)) {
            apply_config_key(config, key, value);
        }
    }
    for (const auto& [key, value] : overrides) apply_config_key(config, key, value);
    validate_config(config);
    return config;
}

struct RunPlan {
    DataBundle bundle;
    SimulationConfig sim;
};

// One repeat's data and simulation settings. Seeds derive from
// master_seed + run_index, so sweeps that share a master seed see identical
// partitions across policies.
inline RunPlan make_run_plan(const ExperimentConfig& config, int run_index) {
    const std::uint64_t run_seed = config.master_seed + static_cast<std::uint64_t>(run_index);

    LabeledDataset pool;
    if (config.data.source == DataSpec::Source::synthetic) {
        pool = make_synthetic(config.data.num_classes, config.data.input_dim,
                              config.data.samples_per_class, config.data.class_separation,
                              rng::derive(run_seed, detail::kDataTag));
    } else {
        pool = load_csv(config.data.csv_path);
    }

    ServerSplit split = split_server(pool, config.data.server_unlabeled, config.data.server_test,
                                     rng::derive(run_seed, detail::kSplitTag));

    PartitionSpec part{config.clients, config.alpha, rng::derive(run_seed, detail::kPartitionTag)};
    RunPlan plan;
    plan.bundle.client_sets = dirichlet_partition(split.remainder, part);
    plan.bundle.server_unlabeled = std::move(split.unlabeled);
    plan.bundle.server_test = std::move(split.test);

    Architecture arch;
    if (config.data.source == DataSpec::Source::synthetic) {
        arch = {config.data.input_dim, config.data.num_classes, config.hidden_dim};
    } else {
        const int classes = *std::max_element(pool.labels.begin(), pool.labels.end()) + 1;
        arch = {static_cast<int>(pool.features.cols), classes, config.hidden_dim};
    }

    SelectionPolicy policy;
    policy.kind = config.policy;
    policy.lambda = config.lambda;
    policy.tau = make_threshold_schedule(config.schedule, config.rounds);

    plan.sim = SimulationConfig{arch, policy,
                                HyperParams{config.local_epochs, config.batch_size, config.lr},
                                config.rounds, run_seed, false};
    return plan;
}

inline std::vector<MetricsRow> run_all_repeats(const ExperimentConfig& config) {
    std::vector<MetricsRow> rows;
    rows.reserve(static_cast<std::size_t>(config.repeats) *
                 static_cast<std::size_t>(config.rounds));
    for (int run = 0; run < config.repeats; ++run) {
        const RunPlan plan = make_run_plan(config, run);
        const std::vector<RoundMetrics> history = run_experiment(plan.sim, plan.bundle);
        for (const RoundMetrics& m : history) {
            MetricsRow row;
            row.run = run;
            row.round = m.round;
            row.policy = to_string(config.policy);
            row.alpha = config.alpha;
            row.test_accuracy = m.test_accuracy;
            row.participation_ratio = m.participation_ratio;
            row.num_selected = m.num_selected;
            row.threshold = m.decision.cutoff;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline std::string render_metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream out;
    out << kMetricsHeader << "\n";
    for (const MetricsRow& row : rows) {
        out << row.run << ',' << row.round << ',' << row.policy << ','
            << detail::format_fixed(row.alpha) << ',' << detail::format_fixed(row.test_accuracy)
            << ',' << detail::format_fixed(row.participation_ratio) << ',' << row.num_selected
            << ',' << detail::format_fixed(row.threshold) << "\n";
    }
    return out.str();
}

// Per-round mean and sample standard deviation across repeats, the final
// accuracy, and total participation. Statistics are taken over the
// 6-decimal values that land in the CSV, so they can be recomputed from it.
inline nlohmann::ordered_json summarize(const ExperimentConfig& config,
                                        const std::vector<MetricsRow>& rows) {
    const int repeats = config.repeats;
    const int rounds = config.rounds;
    auto row_at = [&](int run, int round_index) -> const MetricsRow& {
        return rows[static_cast<std::size_t>(run) * static_cast<std::size_t>(rounds) +
                    static_cast<std::size_t>(round_index)];
    };

    nlohmann::ordered_json summary;
    summary["policy"] = to_string(config.policy);
    summary["schedule"] = to_string(config.schedule);
    summary["alpha"] = config.alpha;
    summary["clients"] = config.clients;
    summary["rounds"] = rounds;
    summary["repeats"] = repeats;

    nlohmann::ordered_json per_round = nlohmann::ordered_json::array();
    for (int t = 0; t < rounds; ++t) {
        const auto [acc_mean, acc_std] = detail::mean_and_sample_std(repeats, [&](int r) {
            return detail::csv_round(row_at(r, t).test_accuracy);
        });
        const auto [part_mean, part_std] = detail::mean_and_sample_std(repeats, [&](int r) {
            return detail::csv_round(row_at(r, t).participation_ratio);
        });
        nlohmann::ordered_json entry;
        entry["round"] = t + 1;
        entry["accuracy_mean"] = acc_mean;
        entry["accuracy_std"] = acc_std;
        entry["participation_mean"] = part_mean;
        entry["participation_std"] = part_std;
        per_round.push_back(std::move(entry));
    }
    summary["per_round"] = std::move(per_round);

    const auto [final_mean, final_std] = detail::mean_and_sample_std(repeats, [&](int r) {
        return detail::csv_round(row_at(r, rounds - 1).test_accuracy);
    });
    summary["final_accuracy_mean"] = final_mean;
    summary["final_accuracy_std"] = final_std;

    const auto [total_mean, total_std] = detail::mean_and_sample_std(repeats, [&](int r) {
        double total = 0.0;
        for (int t = 0; t < rounds; ++t) total += row_at(r, t).num_selected;
        return total;
    });
    summary["total_client_rounds_mean"] = total_mean;
    summary["total_client_rounds_std"] = total_std;
    return summary;
}

struct EmitResult {
    std::vector<MetricsRow> rows;
    std::filesystem::path csv_path;
    std::filesystem::path summary_path;
};

// Runs every repeat and writes metrics.csv + summary.json under out_dir.
// Throws on unwritable destinations; the CLI maps that to a nonzero exit.
inline EmitResult run_and_emit(const ExperimentConfig& config) {
    validate_config(config);
    EmitResult result;
    result.rows = run_all_repeats(config);

    const std::filesystem::path dir(config.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);  // best effort; open errors reported below
    result.csv_path = dir / "metrics.csv";
    result.summary_path = dir / "summary.json";

    {
        std::ofstream out(result.csv_path);
        if (!out) throw std::runtime_error("cannot write " + result.csv_path.string());
        out << render_metrics_csv(result.rows);
        if (!out.good()) throw std::runtime_error("write failed for " + result.csv_path.string());
    }
    {
        std::ofstream out(result.summary_path);
        if (!out) throw std::runtime_error("cannot write " + result.summary_path.string());
        out << summarize(config, result.rows).dump(2) << "\n";
        if (!out.good()) throw std::runtime_error("write failed for " + result.summary_path.string());
    }
    return result;
}

struct PolicyComparison {
    std::string policy;
    double final_accuracy = 0.0;        // mean over repeats
    double mean_participation = 0.0;    // mean ratio over all rounds and repeats
    double total_client_rounds = 0.0;   // mean over repeats
};

// Runs each config on identical data (same seed + data spec enforced) and
// tabulates final accuracy, participation, and client-rounds per policy.
inline std::vector<PolicyComparison> compare_policies(const std::vector<ExperimentConfig>& configs) {
    if (configs.empty()) throw std::invalid_argument("compare_policies: no configs");
    const ExperimentConfig& base = configs.front();
    for (const ExperimentConfig& config : configs) {
        if (!(config.data == base.data) || config.master_seed != base.master_seed ||
            config.clients != base.clients || config.alpha != base.alpha) {
            throw std::invalid_argument("compare_policies: configs must share data spec and seed");
        }
    }

    std::vector<PolicyComparison> table;
    table.reserve(configs.size());
    for (const ExperimentConfig& config : configs) {
        const std::vector<MetricsRow> rows = run_all_repeats(config);
        PolicyComparison entry;
        entry.policy = to_string(config.policy);
        double final_acc = 0.0, part = 0.0, total = 0.0;
        for (int run = 0; run < config.repeats; ++run) {
            for (int t = 0; t < config.rounds; ++t) {
                const MetricsRow& row =
                    rows[static_cast<std::size_t>(run) * static_cast<std::size_t>(config.rounds) +
                         static_cast<std::size_t>(t)];
                part += row.participation_ratio;
                total += row.num_selected;
                if (t == config.rounds - 1) final_acc += row.test_accuracy;
            }
        }
        const double runs = static_cast<double>(config.repeats);
        entry.final_accuracy = final_acc / runs;
        entry.mean_participation = part / (runs * static_cast<double>(config.rounds));
        entry.total_client_rounds = total / runs;
        table.push_back(std::move(entry));
    }
    return table;
}

inline std::string render_comparison_table(const std::vector<PolicyComparison>& table) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-18s %16s %20s %20s\n", "policy", "final_accuracy",
                  "mean_participation", "total_client_rounds");
    out << line;
    for (const PolicyComparison& entry : table) {
        std::snprintf(line, sizeof(line), "%-18s %16.6f %20.6f %20.1f\n", entry.policy.c_str(),
                      entry.final_accuracy, entry.mean_participation, entry.total_client_rounds);
        out << line;
    }
    return out.str();
}

}  // namespace fedsel
