// Synthetic classification data, Dirichlet non-IID partitioning across
// clients, and the server-side unlabeled/test splits.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsel/nn.hpp"
#include "fedsel/rng.hpp"

namespace fedsel {

struct PartitionSpec {
    int num_clients = 1;
    double alpha = 1.0;  // Dirichlet concentration; smaller = more label skew
    std::uint64_t seed = 0;
};

struct DataBundle {
    std::vector<LabeledDataset> client_sets;
    UnlabeledDataset server_unlabeled;
    LabeledDataset server_test;
};

// Gaussian blobs: class n is centered at a seeded random unit direction
// scaled by class_separation, unit covariance. Samples are blocked by class.
inline LabeledDataset make_synthetic(int num_classes, int input_dim, int samples_per_class,
                                     double class_separation, std::uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("make_synthetic: num_classes must be >= 2");
    if (input_dim < 1) throw std::invalid_argument("make_synthetic: input_dim must be >= 1");
    if (samples_per_class < 1) {
        throw std::invalid_argument("make_synthetic: samples_per_class must be >= 1");
    }
    rng::Engine eng(seed);
    const auto d = static_cast<std::size_t>(input_dim);

    std::vector<std::vector<double>> centers(static_cast<std::size_t>(num_classes));
    for (auto& center : centers) {
        center.resize(d);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& v : center) {
                v = eng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-12);
        for (double& v : center) v = v / norm * class_separation;
    }

    const std::size_t total = static_cast<std::size_t>(num_classes) *
                              static_cast<std::size_t>(samples_per_class);
    LabeledDataset out;
    out.features = Matrix(total, d);
    out.labels.resize(total);
    std::size_t row = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (int s = 0; s < samples_per_class; ++s, ++row) {
            auto dst = out.features.row(row);
            const auto& center = centers[static_cast<std::size_t>(c)];
            for (std::size_t j = 0; j < d; ++j) dst[j] = center[j] + eng.normal();
            out.labels[row] = c;
        }
    }
    return out;
}

namespace detail {

inline LabeledDataset take_rows(const LabeledDataset& src, const std::vector<std::size_t>& rows) {
    LabeledDataset out;
    out.features = Matrix(rows.size(), src.features.cols);
    out.labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto from = src.features.row(rows[i]);
        std::copy(from.begin(), from.end(), out.features.row(i).begin());
        out.labels[i] = src.labels[rows[i]];
    }
    return out;
}

}  // namespace detail

// Label-skew partition: for each class independently, proportions are drawn
// from Dir(alpha * 1_K) and the class's samples are split at the rounded
// cumulative boundaries, so per-class counts are conserved exactly.
// Clients that end up empty are repaired by moving one sample from the
// largest client; every client must be able to evaluate a loss.
inline std::vector<LabeledDataset> dirichlet_partition(const LabeledDataset& data,
                                                       const PartitionSpec& spec) {
    if (data.size() == 0) throw std::invalid_argument("dirichlet_partition: empty dataset");
    if (spec.num_clients < 1) throw std::invalid_argument("dirichlet_partition: num_clients must be >= 1");
    if (!(spec.alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be positive");
    const auto K = static_cast<std::size_t>(spec.num_clients);
    if (data.size() < K) {
        throw std::invalid_argument("dirichlet_partition: fewer samples than clients");
    }

    const int num_classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < data.size(); ++i) {
        by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    }

    rng::Engine eng(rng::derive(spec.seed, 0xd121));
    std::vector<std::vector<std::size_t>> assigned(K);
    for (const auto& members : by_class) {
        std::vector<double> proportions(K);
        double sum = 0.0;
        for (double& p : proportions) {
            p = eng.gamma(spec.alpha);
            sum += p;
        }
        if (sum <= 0.0) {
            std::fill(proportions.begin(), proportions.end(), 1.0);
            sum = static_cast<double>(K);
        }
        const auto n = static_cast<double>(members.size());
        double cumulative = 0.0;
        std::size_t prev = 0;
        for (std::size_t k = 0; k < K; ++k) {
            cumulative += proportions[k] / sum;
            std::size_t boundary = (k + 1 == K)
                ? members.size()
                : static_cast<std::size_t>(std::floor(cumulative * n + 0.5));
            boundary = std::min(boundary, members.size());
            for (std::size_t i = prev; i < boundary; ++i) assigned[k].push_back(members[i]);
            prev = boundary;
        }
    }

    // Zero-sample repair: move one sample from the largest client (ties to
    // the lowest index) into each empty client.
    for (std::size_t k = 0; k < K; ++k) {
        while (assigned[k].empty()) {
            std::size_t largest = 0;
            for (std::size_t j = 1; j < K; ++j) {
                if (assigned[j].size() > assigned[largest].size()) largest = j;
            }
            if (assigned[largest].size() < 2) {
                throw std::invalid_argument("dirichlet_partition: cannot give every client a sample");
            }
            assigned[k].push_back(assigned[largest].back());
            assigned[largest].pop_back();
        }
    }

    std::vector<LabeledDataset> clients;
    clients.reserve(K);
    for (const auto& rows : assigned) clients.push_back(detail::take_rows(data, rows));
    return clients;
}

struct ServerSplit {
    UnlabeledDataset unlabeled;
    LabeledDataset test;
    LabeledDataset remainder;  // feeds dirichlet_partition
};

// Seeded shuffle, then [unlabeled | test | remainder]; the unlabeled part
// drops its labels.
inline ServerSplit split_server(const LabeledDataset& data, int n_unlabeled, int n_test,
                                std::uint64_t seed) {
    if (n_unlabeled < 0 || n_test < 0) {
        throw std::invalid_argument("split_server: negative split size");
    }
    const auto nu = static_cast<std::size_t>(n_unlabeled);
    const auto nt = static_cast<std::size_t>(n_test);
    if (nu + nt > data.size()) {
        throw std::invalid_argument("split_server: splits exceed dataset size");
    }
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::Engine eng(seed);
    eng.shuffle(order);

    const std::vector<std::size_t> head(order.begin(), order.begin() + static_cast<long>(nu));
    const std::vector<std::size_t> mid(order.begin() + static_cast<long>(nu),
                                       order.begin() + static_cast<long>(nu + nt));
    const std::vector<std::size_t> tail(order.begin() + static_cast<long>(nu + nt), order.end());

    ServerSplit split;
    split.unlabeled.features = detail::take_rows(data, head).features;
    split.test = detail::take_rows(data, mid);
    split.remainder = detail::take_rows(data, tail);
    return split;
}

// CSV with header `f0,...,fD,label`, one sample per line, integer labels.
// NaN/Inf feature tokens are rejected.
inline LabeledDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path);

    auto split_line = [](const std::string& line) {
        std::vector<std::string> tokens;
        std::string token;
        std::istringstream ss(line);
        while (std::getline(ss, token, ',')) tokens.push_back(token);
        return tokens;
    };

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_line(line);
    if (header.size() < 2 || header.back() != "label") {
        throw std::runtime_error("load_csv: header must be f0,...,fD,label");
    }
    for (std::size_t j = 0; j + 1 < header.size(); ++j) {
        if (header[j] != "f" + std::to_string(j)) {
            throw std::runtime_error("load_csv: unexpected header column '" + header[j] + "'");
        }
    }
    const std::size_t width = header.size() - 1;

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> tokens = split_line(line);
        if (tokens.size() != width + 1) {
            throw std::runtime_error("load_csv: line " + std::to_string(line_no) +
                                     " has " + std::to_string(tokens.size()) + " fields, expected " +
                                     std::to_string(width + 1));
        }
        for (std::size_t j = 0; j < width; ++j) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(tokens[j], &used);
            } catch (const std::exception&) {
                throw std::runtime_error("load_csv: bad number '" + tokens[j] + "' on line " +
                                         std::to_string(line_no));
            }
            if (used != tokens[j].size() || !std::isfinite(v)) {
                throw std::runtime_error("load_csv: rejected token '" + tokens[j] + "' on line " +
                                         std::to_string(line_no));
            }
            values.push_back(v);
        }
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(tokens[width], &used);
            if (used != tokens[width].size()) throw std::invalid_argument("trailing chars");
        } catch (const std::exception&) {
            throw std::runtime_error("load_csv: bad label '" + tokens[width] + "' on line " +
                                     std::to_string(line_no));
        }
        if (label < 0) {
            throw std::runtime_error("load_csv: negative label on line " + std::to_string(line_no));
        }
        labels.push_back(label);
    }
    if (labels.empty()) throw std::runtime_error("load_csv: no samples in " + path);

    LabeledDataset out;
    out.features.data = std::move(values);
    out.features.rows = labels.size();
    out.features.cols = width;
    out.labels = std::move(labels);
    return out;
}

}  // namespace fedsel
