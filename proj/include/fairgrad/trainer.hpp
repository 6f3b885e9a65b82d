#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fairgrad/core.hpp"
#include "fairgrad/dataset.hpp"
#include "fairgrad/fairness.hpp"
#include "fairgrad/model.hpp"
#include "fairgrad/rng.hpp"

namespace fairgrad {

enum class TrainMode { Unconstrained, FairGradExact, FairGradEpsilon };

/// Lagrange multipliers of the fairness constraints.  Exact mode keeps one
/// signed multiplier per group; epsilon mode keeps the two nonnegative
/// multipliers of the interval constraint -eps <= F_k <= eps and exposes
/// their difference.
struct MultiplierState {
    TrainMode mode = TrainMode::FairGradExact;
    double epsilon = 0.0;
    std::vector<double> lambda;  // exact: signed; epsilon: >= 0
    std::vector<double> delta;   // epsilon mode only, >= 0

    MultiplierState() = default;
    MultiplierState(TrainMode m, int group_count, double eps = 0.0)
        : mode(m), epsilon(eps), lambda(group_count, 0.0) {
        if (m == TrainMode::FairGradEpsilon) delta.assign(group_count, 0.0);
    }

    /// The multiplier vector that enters the group weights.
    std::vector<double> effective() const {
        if (mode != TrainMode::FairGradEpsilon) return lambda;
        std::vector<double> out(lambda.size());
        for (std::size_t k = 0; k < lambda.size(); ++k) out[k] = lambda[k] - delta[k];
        return out;
    }
};

/// Exact-fairness ascent step: lambda_k += lr * F_k.
inline void update_multipliers_exact(MultiplierState& st,
                                     const std::vector<double>& F, double lr) {
    if (F.size() != st.lambda.size())
        throw DataError("update_multipliers_exact: group count mismatch");
    for (std::size_t k = 0; k < F.size(); ++k) st.lambda[k] += lr * F[k];
}

/// Epsilon-fairness ascent step with projection onto the nonnegative
/// orthant:
///   lambda_k = max(0, lambda_k + lr * (F_k - eps))
///   delta_k  = max(0, delta_k  - lr * (F_k + eps))
inline void update_multipliers_eps(MultiplierState& st,
                                   const std::vector<double>& F, double lr) {
    if (F.size() != st.lambda.size() || st.delta.size() != st.lambda.size())
        throw DataError("update_multipliers_eps: group count mismatch");
    for (std::size_t k = 0; k < F.size(); ++k) {
        st.lambda[k] = std::max(0.0, st.lambda[k] + lr * (F[k] - st.epsilon));
        st.delta[k] = std::max(0.0, st.delta[k] - lr * (F[k] + st.epsilon));
    }
}

/// Group weights w_k = P(T_k) + sum_k' C[k'][k] * multiplier_k'.  Note the
/// transpose: group k collects column k of the constant matrix.  Weights
/// may be negative; under accuracy parity they always sum to one because
/// every row of C sums to zero.
inline std::vector<double> group_weights(const std::vector<double>& priors,
                                         const Matrix& C,
                                         const std::vector<double>& multiplier) {
    if (C.rows != multiplier.size() || C.cols != priors.size())
        throw DataError("group_weights: shape mismatch");
    std::vector<double> w = priors;
    for (std::size_t k2 = 0; k2 < C.rows; ++k2) {
        const double m = multiplier[k2];
        if (m == 0.0) continue;
        auto row = C.row(k2);
        for (std::size_t k = 0; k < C.cols; ++k) w[k] += row[k] * m;
    }
    return w;
}

struct TrainConfig {
    ModelSpec model;
    TrainMode mode = TrainMode::FairGradExact;
    double epsilon = 0.0;        // FairGradEpsilon only
    double learning_rate = 0.1;  // eta_theta
    double lambda_lr = 0.01;     // eta_lambda
    double clip_norm = 0.05;     // L2 cap on the parameter gradient
    int batch_size = 64;
    int epochs = 100;
    double beta = 0.03;          // accuracy window of the selection rule
    std::uint64_t seed = 1;
    bool clip_weights_nonnegative = false;  // ablation switch for experiments
};

/// One epoch of history: the checkpoint plus validation metrics and a
/// snapshot of the last batch's weights and multipliers.
struct EpochRecord {
    int epoch = 0;  // 1-based
    Parameters params;
    double val_accuracy = 0.0;
    std::vector<double> val_fairness;  // direct, definition-based
    double mean_abs_fairness = 0.0;
    std::vector<double> weights;
    std::vector<double> multiplier;  // lambda, or lambda - delta in eps mode
};

using TrainHistory = std::vector<EpochRecord>;

/// Per-iteration view for tests and tracing.
struct BatchStats {
    int epoch = 0;
    int batch = 0;
    double loss = 0.0;
    std::vector<double> weights;
    std::vector<double> multiplier;
    std::vector<double> fairness;  // estimate-based F; empty when unconstrained
};

using BatchObserver = std::function<void(const BatchStats&)>;

struct TrainResult {
    TrainHistory history;
    std::size_t selected_epoch = 0;  // index into history

    const EpochRecord& selected() const { return history[selected_epoch]; }
};

/// Model selection over a training history: among epochs whose validation
/// accuracy is within beta of the best, pick the smallest mean absolute
/// fairness; ties go to the earliest epoch.  beta = 0 degenerates to the
/// accuracy argmax with fairness breaking exact ties.
inline std::size_t select_model(const TrainHistory& history, double beta) {
    if (history.empty()) throw DataError("select_model: empty history");
    double best_acc = history.front().val_accuracy;
    for (const auto& r : history) best_acc = std::max(best_acc, r.val_accuracy);
    std::size_t pick = history.size();
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (history[i].val_accuracy < best_acc - beta) continue;
        if (pick == history.size() ||
            history[i].mean_abs_fairness < history[pick].mean_abs_fairness)
            pick = i;
    }
    return pick;
}

/// Majority-class constant model: a linear map with zero weights and a bias
/// of one on the most frequent train label (lowest label wins count ties).
inline Parameters constant_baseline(const Dataset& train) {
    std::vector<std::size_t> counts(train.label_count, 0);
    for (int y : train.labels) ++counts[y];
    int majority = 0;
    for (int l = 1; l < train.label_count; ++l)
        if (counts[l] > counts[majority]) majority = l;
    Parameters p;
    p.layer_dims = {static_cast<int>(train.dim()), train.label_count};
    p.values.assign(Parameters::count_for(p.layer_dims), 0.0);
    p.values[train.dim() * train.label_count + majority] = 1.0;  // bias block
    return p;
}

namespace detail {

constexpr std::uint64_t kSaltInit = 1;
constexpr std::uint64_t kSaltShuffle = 2;
constexpr std::uint64_t kSaltDropout = 3;

}  // namespace detail

/// Fairness-aware SGD (or plain weighted SGD when unconstrained).
///
/// Per batch: predict with the current parameters (inference mode, before
/// the step), fold the batch's group error rates into the running
/// estimates, take one multiplier ascent step on the estimated fairness
/// levels, rebuild the group weights, then take one clipped SGD step on the
/// group-mean weighted cross-entropy.  Per epoch: evaluate accuracy and
/// definition-based fairness on the validation split and record a
/// checkpoint.  Everything random derives from config.seed, so a config
/// determines the history bit for bit.
inline TrainResult train(const TrainConfig& config, const Dataset& train_ds,
                         const Dataset& val_ds, const FairnessNotion& notion,
                         const BatchObserver& observer = {}) {
    config.model.validate();
    notion.validate(train_ds.label_count);
    if (config.learning_rate <= 0.0 || config.lambda_lr <= 0.0)
        throw DataError("train: learning rates must be positive");
    if (config.batch_size < 1 || config.epochs < 1)
        throw DataError("train: batch size and epochs must be >= 1");
    if (config.clip_norm <= 0.0) throw DataError("train: clip norm must be positive");
    if (config.model.input_dim != static_cast<int>(train_ds.dim()))
        throw DataError("train: model input_dim does not match data");
    if (config.model.class_count != train_ds.label_count)
        throw DataError("train: model class_count does not match data");
    if (val_ds.label_count != train_ds.label_count ||
        val_ds.sensitive_count != train_ds.sensitive_count ||
        val_ds.dim() != train_ds.dim())
        throw DataError("train: validation split does not match train split");

    const GroupPartition part = partition(train_ds, notion);
    const Matrix C = build_constants(part, notion, train_ds);
    const int K = part.group_count;
    const std::size_t n = train_ds.size();

    std::vector<int> group(n);
    for (std::size_t i = 0; i < n; ++i)
        group[i] = part.group_of(train_ds.labels[i], train_ds.sensitive[i]);

    const bool fair = config.mode != TrainMode::Unconstrained;
    GroupErrorEstimates est(K);
    MultiplierState mult(config.mode, K, config.epsilon);
    Parameters params =
        init_params(config.model, derive_seed(config.seed, detail::kSaltInit));
    const double dropout =
        config.model.arch == Arch::Mlp ? config.model.dropout_rate : 0.0;

    TrainResult result;
    result.history.reserve(config.epochs);
    std::vector<double> weights = part.priors;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto perm = shuffled_indices(
            n, derive_seed(derive_seed(config.seed, detail::kSaltShuffle), epoch));
        const std::size_t B = static_cast<std::size_t>(config.batch_size);

        for (std::size_t start = 0, b = 0; start < n; start += B, ++b) {
            const std::size_t end = std::min(n, start + B);
            WeightedBatch batch;
            batch.X = Matrix(end - start, train_ds.dim());
            batch.labels.resize(end - start);
            batch.groups.resize(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t row = perm[i];
                auto src = train_ds.features.row(row);
                std::copy(src.begin(), src.end(), batch.X.row(i - start).begin());
                batch.labels[i - start] = train_ds.labels[row];
                batch.groups[i - start] = group[row];
            }

            std::vector<double> F;
            if (fair) {
                const Prediction pred = predict(params, batch.X);
                est = merge_running(
                    est, group_error_rates(pred.labels, batch.labels, batch.groups, K));
                F = fairness_levels(C, est.rates);
                if (config.mode == TrainMode::FairGradExact)
                    update_multipliers_exact(mult, F, config.lambda_lr);
                else
                    update_multipliers_eps(mult, F, config.lambda_lr);
                weights = group_weights(part.priors, C, mult.effective());
                if (config.clip_weights_nonnegative)
                    for (double& w : weights) w = std::max(0.0, w);
            } else {
                weights = part.priors;
            }

            batch.weights = weights;
            LossGrad lg;
            try {
                lg = weighted_loss_grad(
                    params, batch, dropout,
                    derive_seed(derive_seed(derive_seed(config.seed, detail::kSaltDropout),
                                            epoch),
                                b));
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b) + ": " + e.what());
            }
            const std::vector<double> grad = clip_gradient(std::move(lg.grad), config.clip_norm);
            for (std::size_t i = 0; i < params.values.size(); ++i)
                params.values[i] -= config.learning_rate * grad[i];

            if (observer) {
                BatchStats stats;
                stats.epoch = epoch;
                stats.batch = static_cast<int>(b);
                stats.loss = lg.loss;
                stats.weights = weights;
                stats.multiplier = mult.effective();
                stats.fairness = F;
                observer(stats);
            }
        }

        const Prediction val_pred = predict(params, val_ds.features);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < val_ds.size(); ++i)
            if (val_pred.labels[i] == val_ds.labels[i]) ++correct;

        EpochRecord rec;
        rec.epoch = epoch;
        rec.params = params;
        rec.val_accuracy = double(correct) / double(val_ds.size());
        rec.val_fairness =
            direct_fairness(val_pred.labels, val_ds.labels, val_ds.sensitive, notion,
                            val_ds.label_count, val_ds.sensitive_count);
        rec.mean_abs_fairness = mean_abs(rec.val_fairness);
        rec.weights = weights;
        rec.multiplier = mult.effective();
        result.history.push_back(std::move(rec));
    }

    result.selected_epoch = select_model(result.history, config.beta);
    return result;
}

}  // namespace fairgrad
