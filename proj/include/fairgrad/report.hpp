#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "fairgrad/core.hpp"
#include "fairgrad/dataset.hpp"
#include "fairgrad/fairness.hpp"
#include "fairgrad/model.hpp"
#include "fairgrad/trainer.hpp"

namespace fairgrad {

/// Final evaluation of a model on one dataset under one notion.
struct FairnessReport {
    double accuracy = 0.0;
    std::vector<double> fairness;  // definition-based, one entry per group
    double mean_abs_fairness = 0.0;
    double max_fairness = 0.0;  // signed extremes
    double min_fairness = 0.0;
    std::vector<std::size_t> group_counts;
};

inline FairnessReport evaluate(const Parameters& params, const Dataset& ds,
                               const FairnessNotion& notion) {
    const Prediction pred = predict(params, ds.features);
    FairnessReport rep;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (pred.labels[i] == ds.labels[i]) ++correct;
    rep.accuracy = double(correct) / double(ds.size());
    rep.fairness = direct_fairness(pred.labels, ds.labels, ds.sensitive, notion,
                                   ds.label_count, ds.sensitive_count);
    rep.mean_abs_fairness = mean_abs(rep.fairness);
    rep.max_fairness = *std::max_element(rep.fairness.begin(), rep.fairness.end());
    rep.min_fairness = *std::min_element(rep.fairness.begin(), rep.fairness.end());

    const int K = notion.kind == NotionKind::AccuracyParity
                      ? ds.sensitive_count
                      : ds.label_count * ds.sensitive_count;
    rep.group_counts.assign(K, 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int k = notion.kind == NotionKind::AccuracyParity
                          ? ds.sensitive[i]
                          : ds.labels[i] * ds.sensitive_count + ds.sensitive[i];
        ++rep.group_counts[k];
    }
    return rep;
}

/// Report as JSON with a fixed field order and 17-significant-digit reals,
/// so identical runs emit byte-identical files.
inline std::string report_to_json(const FairnessReport& rep) {
    std::string out = "{\n  \"accuracy\": " + fmt17(rep.accuracy) + ",\n  \"fairness\": [";
    for (std::size_t k = 0; k < rep.fairness.size(); ++k)
        out += (k ? ", " : "") + fmt17(rep.fairness[k]);
    out += "],\n  \"mean_abs_fairness\": " + fmt17(rep.mean_abs_fairness) +
           ",\n  \"max_fairness\": " + fmt17(rep.max_fairness) +
           ",\n  \"min_fairness\": " + fmt17(rep.min_fairness) +
           ",\n  \"group_counts\": [";
    for (std::size_t k = 0; k < rep.group_counts.size(); ++k)
        out += (k ? ", " : "") + std::to_string(rep.group_counts[k]);
    out += "]\n}\n";
    return out;
}

inline void write_report_json(const FairnessReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << report_to_json(rep);
    if (!out) throw DataError("write failed for '" + path + "'");
}

/// Training history as CSV: one row per epoch with the validation metrics
/// and the final per-group multiplier and weight snapshots of that epoch.
inline void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    const std::size_t K = history.empty() ? 0 : history.front().weights.size();
    out << "epoch,val_accuracy,mean_abs_fairness,max_fairness,min_fairness";
    for (std::size_t k = 0; k < K; ++k) out << ",lambda_" << k;
    for (std::size_t k = 0; k < K; ++k) out << ",weight_" << k;
    out << "\n";
    for (const auto& rec : history) {
        const double maxF =
            rec.val_fairness.empty()
                ? 0.0
                : *std::max_element(rec.val_fairness.begin(), rec.val_fairness.end());
        const double minF =
            rec.val_fairness.empty()
                ? 0.0
                : *std::min_element(rec.val_fairness.begin(), rec.val_fairness.end());
        out << rec.epoch << "," << fmt17(rec.val_accuracy) << ","
            << fmt17(rec.mean_abs_fairness) << "," << fmt17(maxF) << "," << fmt17(minF);
        for (std::size_t k = 0; k < K; ++k)
            out << "," << fmt17(k < rec.multiplier.size() ? rec.multiplier[k] : 0.0);
        for (std::size_t k = 0; k < K; ++k) out << "," << fmt17(rec.weights[k]);
        out << "\n";
    }
    if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace fairgrad
