#pragma once

// Shared fixtures for the test suites: temp files, tiny dataset builders,
// and the central-difference gradient oracle.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fairgrad/fairgrad.hpp"

namespace testutil {

inline std::filesystem::path fresh_dir(const std::string& tag) {
    static int counter = 0;
    auto p = std::filesystem::temp_directory_path() /
             ("fairgrad_test_" + tag + "_" + std::to_string(++counter));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string write_file(const std::filesystem::path& path,
                              const std::string& content) {
    std::ofstream out(path);
    out << content;
    return path.string();
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string s((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
    return s;
}

/// Dataset from parallel arrays; feature matrix given row-major.
inline fairgrad::Dataset make_dataset(std::size_t dim, std::vector<double> features,
                                      std::vector<int> labels, std::vector<int> sensitive,
                                      int label_count, int sensitive_count) {
    fairgrad::Dataset ds;
    ds.features.rows = labels.size();
    ds.features.cols = dim;
    ds.features.data = std::move(features);
    ds.labels = std::move(labels);
    ds.sensitive = std::move(sensitive);
    ds.label_count = label_count;
    ds.sensitive_count = sensitive_count;
    ds.validate();
    return ds;
}

/// Central finite differences of the weighted loss, the oracle the analytic
/// gradient must match: (f(x+h) - f(x-h)) / 2h with h = 1e-5.  The relative
/// error uses max(|a|, |b|, 1e-6) in the denominator so near-zero entries
/// compare absolutely.
inline double fd_max_rel_err(const fairgrad::Parameters& params,
                             const fairgrad::WeightedBatch& batch,
                             double dropout_rate = 0.0,
                             std::uint64_t dropout_seed = 0) {
    const double h = 1e-5;
    const auto lg =
        fairgrad::weighted_loss_grad(params, batch, dropout_rate, dropout_seed);
    double worst = 0.0;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        fairgrad::Parameters p = params;
        p.values[i] += h;
        const double up =
            fairgrad::weighted_loss_grad(p, batch, dropout_rate, dropout_seed).loss;
        p.values[i] -= 2 * h;
        const double down =
            fairgrad::weighted_loss_grad(p, batch, dropout_rate, dropout_seed).loss;
        const double fd = (up - down) / (2 * h);
        const double denom =
            std::max({std::abs(fd), std::abs(lg.grad[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - lg.grad[i]) / denom);
    }
    return worst;
}

/// Random dataset with every (label, sensitive) cell occupied, for fairness
/// fuzzing.  Features are irrelevant there and left at zero.
inline fairgrad::Dataset random_full_dataset(fairgrad::SplitMix64& rng, int label_count,
                                             int sensitive_count, std::size_t n) {
    std::vector<int> labels, sensitive;
    // one example per cell up front so no cell is empty
    for (int l = 0; l < label_count; ++l)
        for (int s = 0; s < sensitive_count; ++s) {
            labels.push_back(l);
            sensitive.push_back(s);
        }
    while (labels.size() < n) {
        labels.push_back(static_cast<int>(rng.below(label_count)));
        sensitive.push_back(static_cast<int>(rng.below(sensitive_count)));
    }
    const std::size_t total = labels.size();
    return make_dataset(1, std::vector<double>(total, 0.0), std::move(labels),
                        std::move(sensitive), label_count, sensitive_count);
}

inline std::vector<int> random_predictions(fairgrad::SplitMix64& rng, std::size_t n,
                                           int label_count) {
    std::vector<int> pred(n);
    for (auto& p : pred) p = static_cast<int>(rng.below(label_count));
    return pred;
}

}  // namespace testutil
