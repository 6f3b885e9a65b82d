#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fairgrad/core.hpp"
#include "fairgrad/dataset.hpp"

namespace fairgrad {

enum class NotionKind {
    AccuracyParity,           // equal accuracy across sensitive groups
    EqualizedOdds,            // equal per-label recall across sensitive groups
    EqualityOfOpportunity,    // equal recall on desirable labels only
};

struct FairnessNotion {
    NotionKind kind = NotionKind::AccuracyParity;
    std::vector<int> desirable_labels;  // used by EqualityOfOpportunity only

    static FairnessNotion accuracy_parity() { return {NotionKind::AccuracyParity, {}}; }
    static FairnessNotion equalized_odds() { return {NotionKind::EqualizedOdds, {}}; }
    static FairnessNotion equal_opportunity(std::vector<int> desirable) {
        return {NotionKind::EqualityOfOpportunity, std::move(desirable)};
    }

    bool is_desirable(int label) const {
        return std::find(desirable_labels.begin(), desirable_labels.end(), label) !=
               desirable_labels.end();
    }

    void validate(int label_count) const {
        if (kind != NotionKind::EqualityOfOpportunity) return;
        if (desirable_labels.empty())
            throw DataError("equal opportunity needs at least one desirable label");
        for (int l : desirable_labels)
            if (l < 0 || l >= label_count)
                throw DataError("desirable label " + std::to_string(l) +
                                " out of range [0, " + std::to_string(label_count) + ")");
    }
};

/// The group structure a notion induces on a dataset.  Accuracy parity
/// partitions by sensitive value (K = |S|); the recall-based notions
/// partition by (label, sensitive) cell in row-major order
/// (K = |Y| * |S|, group = label * |S| + sensitive).
struct GroupPartition {
    NotionKind kind = NotionKind::AccuracyParity;
    int label_count = 0;
    int sensitive_count = 0;
    int group_count = 0;
    std::vector<double> priors;  // empirical P(T_k) on the defining dataset

    int group_of(int label, int sensitive) const {
        return kind == NotionKind::AccuracyParity
                   ? sensitive
                   : label * sensitive_count + sensitive;
    }
};

/// Build the partition for ds under the notion.  Every group the notion
/// needs must be nonempty (its prior would otherwise be zero and its error
/// rate undefined); violations raise DataError naming the cell.
inline GroupPartition partition(const Dataset& ds, const FairnessNotion& notion) {
    notion.validate(ds.label_count);
    GroupPartition p;
    p.kind = notion.kind;
    p.label_count = ds.label_count;
    p.sensitive_count = ds.sensitive_count;
    p.group_count = notion.kind == NotionKind::AccuracyParity
                        ? ds.sensitive_count
                        : ds.label_count * ds.sensitive_count;

    std::vector<std::size_t> counts(p.group_count, 0);
    for (std::size_t i = 0; i < ds.size(); ++i)
        ++counts[p.group_of(ds.labels[i], ds.sensitive[i])];

    p.priors.resize(p.group_count);
    for (int k = 0; k < p.group_count; ++k) {
        if (counts[k] == 0) {
            if (notion.kind == NotionKind::AccuracyParity)
                throw DataError("empty sensitive group " + std::to_string(k));
            throw DataError("empty (label " + std::to_string(k / ds.sensitive_count) +
                            ", sensitive " + std::to_string(k % ds.sensitive_count) +
                            ") cell");
        }
        p.priors[k] = double(counts[k]) / double(ds.size());
    }
    return p;
}

/// The K x K constant matrix C of the linear fairness decomposition
///   F_k = sum_k' C[k][k'] * err_k'
/// with row k holding the coefficients of group k's fairness level.  All
/// probabilities are estimated on the defining dataset (the train split).
///
/// Accuracy parity:    C[r][r] = P(s=r) - 1,  C[r][r'] = P(s=r').
/// Equalized odds:     within a label block l,
///                     C[(l,r)][(l,r)] = P(s=r | y=l) - 1,
///                     C[(l,r)][(l,r')] = P(s=r' | y=l); zero across labels.
/// Equal opportunity:  as equalized odds, but rows of non-desirable labels
///                     are identically zero.
///
/// Every row sums to zero, which is what makes the group weights conserve
/// total mass under the exact multiplier update.
inline Matrix build_constants(const GroupPartition& p, const FairnessNotion& notion,
                              const Dataset& ds) {
    notion.validate(ds.label_count);
    Matrix C(p.group_count, p.group_count, 0.0);

    if (notion.kind == NotionKind::AccuracyParity) {
        // P(s=r) from group priors (groups are the sensitive values).
        for (int r = 0; r < p.group_count; ++r)
            for (int r2 = 0; r2 < p.group_count; ++r2)
                C.at(r, r2) = r == r2 ? p.priors[r2] - 1.0 : p.priors[r2];
        return C;
    }

    // P(s=r | y=l) from cell counts.
    const int S = ds.sensitive_count, Y = ds.label_count;
    std::vector<double> cell(Y * S, 0.0), label_total(Y, 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        cell[ds.labels[i] * S + ds.sensitive[i]] += 1.0;
        label_total[ds.labels[i]] += 1.0;
    }
    for (int l = 0; l < Y; ++l) {
        if (notion.kind == NotionKind::EqualityOfOpportunity && !notion.is_desirable(l))
            continue;  // row stays zero: this label's recall is unconstrained
        if (label_total[l] == 0.0)
            throw DataError("no examples with label " + std::to_string(l));
        for (int r = 0; r < S; ++r) {
            const int k = l * S + r;
            for (int r2 = 0; r2 < S; ++r2) {
                const double pr = cell[l * S + r2] / label_total[l];
                C.at(k, l * S + r2) = r == r2 ? pr - 1.0 : pr;
            }
        }
    }
    return C;
}

/// Error rates of a prediction vector, per group.  rates[k] is the fraction
/// of group-k examples with pred != label; count[k] == 0 marks groups with
/// no examples, whose rate entry is meaningless.
struct BatchGroupRates {
    std::vector<double> rates;
    std::vector<std::size_t> counts;
};

inline BatchGroupRates group_error_rates(const std::vector<int>& predictions,
                                         const std::vector<int>& labels,
                                         const std::vector<int>& group_of,
                                         int group_count) {
    if (predictions.size() != labels.size() || labels.size() != group_of.size())
        throw DataError("group_error_rates: input lengths differ");
    BatchGroupRates out;
    out.rates.assign(group_count, 0.0);
    out.counts.assign(group_count, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int k = group_of[i];
        ++out.counts[k];
        if (predictions[i] != labels[i]) out.rates[k] += 1.0;
    }
    for (int k = 0; k < group_count; ++k)
        if (out.counts[k] > 0) out.rates[k] /= double(out.counts[k]);
    return out;
}

/// Running per-group error estimates used during training: the latest batch
/// in which the group appeared wins; groups absent so far are flagged
/// unseen and read as rate zero.
struct GroupErrorEstimates {
    std::vector<double> rates;
    std::vector<bool> seen;

    explicit GroupErrorEstimates(int group_count = 0)
        : rates(group_count, 0.0), seen(group_count, false) {}
};

inline GroupErrorEstimates merge_running(GroupErrorEstimates est,
                                         const BatchGroupRates& batch) {
    if (batch.rates.size() != est.rates.size())
        throw DataError("merge_running: group count mismatch");
    for (std::size_t k = 0; k < est.rates.size(); ++k) {
        if (batch.counts[k] > 0) {
            est.rates[k] = batch.rates[k];
            est.seen[k] = true;
        }
    }
    return est;
}

/// Fairness levels F = C * rates.  Positive entries mark advantaged groups
/// (their error sits below their peers'), negative entries disadvantaged
/// ones.
inline std::vector<double> fairness_levels(const Matrix& C,
                                           const std::vector<double>& rates) {
    if (C.cols != rates.size())
        throw DataError("fairness_levels: rate vector does not match matrix");
    std::vector<double> F(C.rows, 0.0);
    for (std::size_t k = 0; k < C.rows; ++k) {
        double s = 0.0;
        auto row = C.row(k);
        for (std::size_t k2 = 0; k2 < C.cols; ++k2) s += row[k2] * rates[k2];
        F[k] = s;
    }
    return F;
}

/// Fairness levels computed straight from the probability definitions on
/// one set of predictions, with all conditionals estimated on that same
/// data.  This is the reference the linear decomposition must reproduce.
///
/// Accuracy parity:    F_r = P(pred=y | s=r) - P(pred=y).
/// Equalized odds:     F_(l,r) = P(pred!=l | y=l) - P(pred!=l | y=l, s=r).
/// Equal opportunity:  as equalized odds for desirable labels, else 0.
///
/// Any conditioning cell the notion needs that is empty raises DataError.
inline std::vector<double> direct_fairness(const std::vector<int>& predictions,
                                           const std::vector<int>& labels,
                                           const std::vector<int>& sensitive,
                                           const FairnessNotion& notion,
                                           int label_count, int sensitive_count) {
    const std::size_t n = labels.size();
    if (predictions.size() != n || sensitive.size() != n)
        throw DataError("direct_fairness: input lengths differ");
    if (n == 0) throw DataError("direct_fairness: empty data");
    notion.validate(label_count);

    if (notion.kind == NotionKind::AccuracyParity) {
        std::vector<double> correct(sensitive_count, 0.0), total(sensitive_count, 0.0);
        double correct_all = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            total[sensitive[i]] += 1.0;
            if (predictions[i] == labels[i]) {
                correct[sensitive[i]] += 1.0;
                correct_all += 1.0;
            }
        }
        std::vector<double> F(sensitive_count, 0.0);
        for (int r = 0; r < sensitive_count; ++r) {
            if (total[r] == 0.0)
                throw DataError("direct_fairness: empty sensitive group " +
                                std::to_string(r));
            F[r] = correct[r] / total[r] - correct_all / double(n);
        }
        return F;
    }

    const int S = sensitive_count;
    std::vector<double> cell_err(label_count * S, 0.0), cell_n(label_count * S, 0.0);
    std::vector<double> label_err(label_count, 0.0), label_n(label_count, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int k = labels[i] * S + sensitive[i];
        cell_n[k] += 1.0;
        label_n[labels[i]] += 1.0;
        if (predictions[i] != labels[i]) {
            cell_err[k] += 1.0;
            label_err[labels[i]] += 1.0;
        }
    }
    std::vector<double> F(label_count * S, 0.0);
    for (int l = 0; l < label_count; ++l) {
        if (notion.kind == NotionKind::EqualityOfOpportunity && !notion.is_desirable(l))
            continue;
        if (label_n[l] == 0.0)
            throw DataError("direct_fairness: no examples with label " +
                            std::to_string(l));
        for (int r = 0; r < S; ++r) {
            const int k = l * S + r;
            if (cell_n[k] == 0.0)
                throw DataError("direct_fairness: empty (label " + std::to_string(l) +
                                ", sensitive " + std::to_string(r) + ") cell");
            F[k] = label_err[l] / label_n[l] - cell_err[k] / cell_n[k];
        }
    }
    return F;
}

inline double mean_abs(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s / double(v.size());
}

}  // namespace fairgrad
