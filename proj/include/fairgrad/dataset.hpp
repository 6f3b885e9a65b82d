#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fairgrad/core.hpp"
#include "fairgrad/rng.hpp"

namespace fairgrad {

/// A classification dataset with one protected attribute.  Labels and
/// sensitive values are dense integer codes in [0, label_count) and
/// [0, sensitive_count).
struct Dataset {
    Matrix features;              // n x d
    std::vector<int> labels;      // n
    std::vector<int> sensitive;   // n
    int label_count = 0;
    int sensitive_count = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols; }

    /// Throws DataError if the structural invariants do not hold.
    void validate() const {
        const std::size_t n = labels.size();
        if (features.rows != n || sensitive.size() != n)
            throw DataError("dataset: features/labels/sensitive lengths differ");
        if (label_count < 2)
            throw DataError("dataset: need at least two label values");
        if (sensitive_count < 1)
            throw DataError("dataset: need at least one sensitive value");
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] < 0 || labels[i] >= label_count)
                throw DataError("dataset: label code out of range at row " +
                                std::to_string(i));
            if (sensitive[i] < 0 || sensitive[i] >= sensitive_count)
                throw DataError("dataset: sensitive code out of range at row " +
                                std::to_string(i));
        }
        if (!all_finite(features.data))
            throw DataError("dataset: non-finite feature value");
    }

    /// New dataset holding the given rows, in the given order.
    Dataset subset(const std::vector<std::size_t>& rows) const {
        Dataset out;
        out.label_count = label_count;
        out.sensitive_count = sensitive_count;
        out.features = Matrix(rows.size(), features.cols);
        out.labels.reserve(rows.size());
        out.sensitive.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto src = features.row(rows[i]);
            std::copy(src.begin(), src.end(), out.features.row(i).begin());
            out.labels.push_back(labels[rows[i]]);
            out.sensitive.push_back(sensitive[rows[i]]);
        }
        return out;
    }
};

/// Result of loading a CSV: the coded dataset plus, for each column, the
/// original string of every code (code -> value, first-appearance order).
struct LoadedCsv {
    Dataset data;
    std::vector<std::string> label_values;
    std::vector<std::string> sensitive_values;
    std::vector<std::string> feature_names;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    cells.push_back(cur);
    return cells;
}

inline int code_of(std::vector<std::string>& seen, const std::string& value) {
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (seen[i] == value) return static_cast<int>(i);
    seen.push_back(value);
    return static_cast<int>(seen.size() - 1);
}

}  // namespace detail

/// Load a comma-separated file with a header row.  label_col and
/// sensitive_col name the class and protected columns; every other column
/// is a numeric feature ('.' decimal separator).  Label and sensitive
/// values are treated as opaque strings and coded densely in order of first
/// appearance.  Malformed or non-finite feature cells raise DataError
/// naming the row and column.
inline LoadedCsv load_csv(const std::string& path, const std::string& label_col,
                          const std::string& sensitive_col) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path + "': empty file");
    const auto header = detail::split_csv_line(line);

    std::size_t label_idx = header.size(), sens_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == label_col) label_idx = i;
        if (header[i] == sensitive_col) sens_idx = i;
    }
    if (label_idx == header.size())
        throw DataError("'" + path + "': no column named '" + label_col + "'");
    if (sens_idx == header.size())
        throw DataError("'" + path + "': no column named '" + sensitive_col + "'");
    if (label_idx == sens_idx)
        throw DataError("'" + path + "': label and sensitive column are the same");

    LoadedCsv out;
    std::vector<std::size_t> feature_idx;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (i != label_idx && i != sens_idx) {
            feature_idx.push_back(i);
            out.feature_names.push_back(header[i]);
        }

    std::vector<double> values;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("'" + path + "': row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(header.size()));
        for (std::size_t f : feature_idx) {
            const std::string& cell = cells[f];
            double v = 0.0;
            auto [end, ec] =
                std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc{} || end != cell.data() + cell.size())
                throw DataError("'" + path + "': row " + std::to_string(row) +
                                ", column '" + header[f] + "': non-numeric value '" +
                                cell + "'");
            if (!std::isfinite(v))
                throw DataError("'" + path + "': row " + std::to_string(row) +
                                ", column '" + header[f] + "': non-finite value '" +
                                cell + "'");
            values.push_back(v);
        }
        out.data.labels.push_back(detail::code_of(out.label_values, cells[label_idx]));
        out.data.sensitive.push_back(detail::code_of(out.sensitive_values, cells[sens_idx]));
    }
    if (row == 0) throw DataError("'" + path + "': no data rows");

    out.data.features.rows = row;
    out.data.features.cols = feature_idx.size();
    out.data.features.data = std::move(values);
    out.data.label_count = static_cast<int>(out.label_values.size());
    out.data.sensitive_count = static_cast<int>(out.sensitive_values.size());
    out.data.validate();
    return out;
}

/// Write a dataset as CSV: features x0..x{d-1}, label column "y", sensitive
/// column "s".  Codes are written as plain integers; reals round-trip.
inline void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    for (std::size_t j = 0; j < ds.dim(); ++j) out << "x" << j << ",";
    out << "y,s\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.features.row(i)) out << fmt17(v) << ",";
        out << ds.labels[i] << "," << ds.sensitive[i] << "\n";
    }
    if (!out) throw DataError("write failed for '" + path + "'");
}

/// Train/validation/test split.
struct Split {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Seeded three-way split: a Fisher-Yates permutation of the rows, then the
/// first 20% of n is the test set, the next 25% of the remainder the
/// validation set, the rest the train set (all sizes floored).  Throws
/// DataError if any part would be empty.
inline Split split(const Dataset& ds, std::uint64_t seed) {
    const std::size_t n = ds.size();
    const std::size_t n_test = n / 5;
    const std::size_t n_val = (n - n_test) / 4;
    const std::size_t n_train = n - n_test - n_val;
    if (n_test == 0 || n_val == 0 || n_train == 0)
        throw DataError("split: dataset of size " + std::to_string(n) +
                        " leaves an empty part");

    const auto idx = shuffled_indices(n, seed);
    std::vector<std::size_t> test_rows(idx.begin(), idx.begin() + n_test);
    std::vector<std::size_t> val_rows(idx.begin() + n_test,
                                      idx.begin() + n_test + n_val);
    std::vector<std::size_t> train_rows(idx.begin() + n_test + n_val, idx.end());

    Split out;
    out.train = ds.subset(train_rows);
    out.val = ds.subset(val_rows);
    out.test = ds.subset(test_rows);
    return out;
}

/// Per-column location/scale fitted on a train split.
struct StandardizeStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // population stddev; 1.0 where variance is 0
};

/// Fit mean and population standard deviation (1/n) per feature column.
/// Zero-variance columns get stddev 1 so they map to zero instead of NaN.
inline StandardizeStats compute_standardize_stats(const Dataset& train) {
    const std::size_t n = train.size(), d = train.dim();
    if (n == 0) throw DataError("standardize: empty train split");
    StandardizeStats st;
    st.mean.assign(d, 0.0);
    st.stddev.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = train.features.row(i);
        for (std::size_t j = 0; j < d; ++j) st.mean[j] += r[j];
    }
    for (std::size_t j = 0; j < d; ++j) st.mean[j] /= double(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = train.features.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double c = r[j] - st.mean[j];
            st.stddev[j] += c * c;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        const double var = st.stddev[j] / double(n);
        st.stddev[j] = var == 0.0 ? 1.0 : std::sqrt(var);
    }
    return st;
}

/// Apply train-split statistics to any dataset (in place).
inline void apply_standardize(Dataset& ds, const StandardizeStats& st) {
    if (st.mean.size() != ds.dim())
        throw DataError("standardize: stats dimension mismatch");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto r = ds.features.row(i);
        for (std::size_t j = 0; j < ds.dim(); ++j)
            r[j] = (r[j] - st.mean[j]) / st.stddev[j];
    }
}

/// Fit on train, transform train and every dataset in rest.
inline StandardizeStats standardize(Dataset& train,
                                    std::vector<Dataset*> rest = {}) {
    StandardizeStats st = compute_standardize_stats(train);
    apply_standardize(train, st);
    for (Dataset* ds : rest) apply_standardize(*ds, st);
    return st;
}

/// One (label, sensitive) cell of a synthetic Gaussian mixture.
struct SyntheticCell {
    int label = 0;
    int sensitive = 0;
    std::size_t count = 0;
    std::vector<double> mean;
};

/// Spec for an exact-count Gaussian mixture dataset: every cell gets
/// exactly `count` examples drawn from N(mean, stddev^2 I).
struct SyntheticSpec {
    std::vector<SyntheticCell> cells;
    double stddev = 1.0;
    std::uint64_t seed = 0;
};

/// Parse a synthetic spec from its JSON form:
///   {"stddev": 1.0, "seed": 7,
///    "cells": [{"label": 0, "sensitive": 0, "count": 100, "mean": [0, 1]}, ...]}
inline SyntheticSpec synthetic_spec_from_json(const std::string& text,
                                              const std::string& origin = "spec") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(origin + ": bad JSON: " + e.what());
    }
    try {
        SyntheticSpec spec;
        spec.stddev = j.at("stddev").get<double>();
        spec.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& jc : j.at("cells")) {
            SyntheticCell c;
            c.label = jc.at("label").get<int>();
            c.sensitive = jc.at("sensitive").get<int>();
            c.count = jc.at("count").get<std::size_t>();
            c.mean = jc.at("mean").get<std::vector<double>>();
            spec.cells.push_back(std::move(c));
        }
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(origin + ": bad synthetic spec: " + e.what());
    }
}

inline SyntheticSpec load_synthetic_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return synthetic_spec_from_json(ss.str(), "'" + path + "'");
}

inline std::string synthetic_spec_to_json(const SyntheticSpec& spec) {
    std::string out = "{\n  \"stddev\": " + fmt17(spec.stddev) +
                      ",\n  \"seed\": " + std::to_string(spec.seed) +
                      ",\n  \"cells\": [";
    for (std::size_t i = 0; i < spec.cells.size(); ++i) {
        const auto& c = spec.cells[i];
        out += i ? ",\n    " : "\n    ";
        out += "{\"label\": " + std::to_string(c.label) +
               ", \"sensitive\": " + std::to_string(c.sensitive) +
               ", \"count\": " + std::to_string(c.count) + ", \"mean\": [";
        for (std::size_t jm = 0; jm < c.mean.size(); ++jm)
            out += (jm ? ", " : "") + fmt17(c.mean[jm]);
        out += "]}";
    }
    out += "\n  ]\n}\n";
    return out;
}

/// Generate the dataset described by the spec.  Cells are materialised in
/// (label, sensitive) row-major order regardless of their order in the
/// spec, consuming one SplitMix64 stream seeded with spec.seed, so output
/// is a pure function of the spec.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
    if (spec.cells.empty()) throw DataError("synthetic spec: no cells");
    if (!(spec.stddev > 0.0)) throw DataError("synthetic spec: stddev must be > 0");
    const std::size_t dim = spec.cells.front().mean.size();
    if (dim == 0) throw DataError("synthetic spec: zero-dimensional mean");

    int max_label = 0, max_sens = 0;
    for (const auto& c : spec.cells) {
        if (c.label < 0 || c.sensitive < 0)
            throw DataError("synthetic spec: negative label or sensitive code");
        if (c.mean.size() != dim)
            throw DataError("synthetic spec: mean dimensions differ across cells");
        max_label = std::max(max_label, c.label);
        max_sens = std::max(max_sens, c.sensitive);
    }

    std::vector<SyntheticCell> ordered = spec.cells;
    std::sort(ordered.begin(), ordered.end(),
              [](const SyntheticCell& a, const SyntheticCell& b) {
                  return std::pair(a.label, a.sensitive) <
                         std::pair(b.label, b.sensitive);
              });
    for (std::size_t i = 1; i < ordered.size(); ++i)
        if (ordered[i].label == ordered[i - 1].label &&
            ordered[i].sensitive == ordered[i - 1].sensitive)
            throw DataError("synthetic spec: duplicate cell");

    std::size_t n = 0;
    for (const auto& c : ordered) n += c.count;
    if (n == 0) throw DataError("synthetic spec: zero total count");

    Dataset ds;
    ds.label_count = max_label + 1;
    ds.sensitive_count = max_sens + 1;
    ds.features = Matrix(n, dim);
    ds.labels.reserve(n);
    ds.sensitive.reserve(n);

    SplitMix64 rng(spec.seed);
    std::size_t row = 0;
    for (const auto& c : ordered) {
        for (std::size_t i = 0; i < c.count; ++i, ++row) {
            auto r = ds.features.row(row);
            for (std::size_t j = 0; j < dim; ++j)
                r[j] = c.mean[j] + spec.stddev * rng.normal();
            ds.labels.push_back(c.label);
            ds.sensitive.push_back(c.sensitive);
        }
    }
    ds.validate();
    return ds;
}

}  // namespace fairgrad
