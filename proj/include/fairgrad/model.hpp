#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairgrad/core.hpp"
#include "fairgrad/rng.hpp"

namespace fairgrad {

enum class Arch { Linear, Mlp };

/// Architecture description: a softmax classifier, either a bare linear map
/// or a ReLU net with optional inverted dropout on the hidden activations.
struct ModelSpec {
    Arch arch = Arch::Linear;
    int input_dim = 0;
    int class_count = 0;
    std::vector<int> hidden_sizes;  // empty for Linear
    double dropout_rate = 0.0;

    static ModelSpec linear(int input_dim, int class_count) {
        return {Arch::Linear, input_dim, class_count, {}, 0.0};
    }
    static ModelSpec mlp(int input_dim, int class_count, std::vector<int> hidden,
                         double dropout_rate) {
        return {Arch::Mlp, input_dim, class_count, std::move(hidden), dropout_rate};
    }

    std::vector<int> layer_dims() const {
        std::vector<int> dims;
        dims.push_back(input_dim);
        if (arch == Arch::Mlp)
            dims.insert(dims.end(), hidden_sizes.begin(), hidden_sizes.end());
        dims.push_back(class_count);
        return dims;
    }

    void validate() const {
        if (input_dim <= 0) throw DataError("model: input_dim must be positive");
        if (class_count < 2) throw DataError("model: need at least two classes");
        if (arch == Arch::Linear && !hidden_sizes.empty())
            throw DataError("model: linear model cannot have hidden layers");
        for (int h : hidden_sizes)
            if (h <= 0) throw DataError("model: hidden sizes must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw DataError("model: dropout rate must lie in [0, 1)");
    }
};

/// Flat parameter slab plus the shape needed to interpret it.  Layout, per
/// layer l: weight matrix (in x out, row-major), then bias (out).
struct Parameters {
    std::vector<int> layer_dims;  // [input, hidden..., classes]
    std::vector<double> values;

    std::size_t layer_count() const { return layer_dims.size() - 1; }

    static std::size_t count_for(const std::vector<int>& dims) {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l)
            n += std::size_t(dims[l]) * dims[l + 1] + dims[l + 1];
        return n;
    }

    /// Offset of layer l's weight block; bias follows the weights.
    std::size_t layer_offset(std::size_t l) const {
        std::size_t off = 0;
        for (std::size_t k = 0; k < l; ++k)
            off += std::size_t(layer_dims[k]) * layer_dims[k + 1] + layer_dims[k + 1];
        return off;
    }
};

/// Symmetric uniform initialisation scaled by fan-in: weights drawn from
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.  Draw order is the
/// storage order, from a SplitMix64 stream on `seed`, so initialisation is
/// a pure function of (shape, seed).
inline Parameters init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Parameters p;
    p.layer_dims = spec.layer_dims();
    p.values.assign(Parameters::count_for(p.layer_dims), 0.0);
    SplitMix64 rng(seed);
    for (std::size_t l = 0; l + 1 < p.layer_dims.size(); ++l) {
        const int in = p.layer_dims[l], out = p.layer_dims[l + 1];
        const double bound = 1.0 / std::sqrt(double(in));
        double* w = p.values.data() + p.layer_offset(l);
        for (int i = 0; i < in * out; ++i)
            w[i] = bound * (2.0 * rng.uniform() - 1.0);
        // biases (the next `out` values) stay zero
    }
    return p;
}

/// Softmax probabilities and argmax labels for a feature block.
struct Prediction {
    Matrix probabilities;     // n x classes
    std::vector<int> labels;  // argmax, ties to the lower index
};

namespace detail {

/// Forward one example; fills z (pre-activation) and a (post-activation,
/// post-dropout) per layer.  a[0] is the input.  When dropout is active the
/// mask is drawn from `rng` in unit order, independent of the data, so the
/// same seed reproduces the same mask.
inline void forward_one(const Parameters& p, std::span<const double> x,
                        std::vector<std::vector<double>>& z,
                        std::vector<std::vector<double>>& a, double dropout_rate,
                        SplitMix64* rng) {
    const auto& dims = p.layer_dims;
    const std::size_t L = p.layer_count();
    a[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < L; ++l) {
        const int in = dims[l], out = dims[l + 1];
        const double* w = p.values.data() + p.layer_offset(l);
        const double* b = w + std::size_t(in) * out;
        z[l].assign(out, 0.0);
        for (int i = 0; i < in; ++i) {
            const double ai = a[l][i];
            if (ai == 0.0) continue;
            const double* wrow = w + std::size_t(i) * out;
            for (int o = 0; o < out; ++o) z[l][o] += ai * wrow[o];
        }
        for (int o = 0; o < out; ++o) z[l][o] += b[o];
        if (l + 1 == L) break;  // logits: no activation
        a[l + 1].resize(out);
        for (int o = 0; o < out; ++o) a[l + 1][o] = std::max(0.0, z[l][o]);
        if (rng && dropout_rate > 0.0) {
            const double keep_scale = 1.0 / (1.0 - dropout_rate);
            for (int o = 0; o < out; ++o) {
                const bool keep = rng->uniform() >= dropout_rate;
                a[l + 1][o] = keep ? a[l + 1][o] * keep_scale : 0.0;
            }
        }
    }
}

/// log(sum exp(z)) with max subtraction; also returns the max index with
/// ties resolved to the lower index.
inline double log_sum_exp(const std::vector<double>& logits, int* argmax) {
    int best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j)
        if (logits[j] > logits[best]) best = static_cast<int>(j);
    double s = 0.0;
    for (double v : logits) s += std::exp(v - logits[best]);
    if (argmax) *argmax = best;
    return logits[best] + std::log(s);
}

}  // namespace detail

/// Inference-mode forward pass (no dropout).
inline Prediction predict(const Parameters& p, const Matrix& X) {
    if (X.cols != std::size_t(p.layer_dims.front()))
        throw DataError("predict: feature dimension mismatch");
    const int classes = p.layer_dims.back();
    Prediction out;
    out.probabilities = Matrix(X.rows, classes);
    out.labels.resize(X.rows);

    const std::size_t L = p.layer_count();
    std::vector<std::vector<double>> z(L), a(L);
    for (std::size_t i = 0; i < X.rows; ++i) {
        detail::forward_one(p, X.row(i), z, a, 0.0, nullptr);
        int best = 0;
        const double lse = detail::log_sum_exp(z[L - 1], &best);
        auto prow = out.probabilities.row(i);
        for (int j = 0; j < classes; ++j) prow[j] = std::exp(z[L - 1][j] - lse);
        out.labels[i] = best;
    }
    return out;
}

/// A batch with its group structure and the current per-group weights.
struct WeightedBatch {
    Matrix X;
    std::vector<int> labels;
    std::vector<int> groups;
    std::vector<double> weights;  // one per group, may be negative
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Weighted cross-entropy loss and its analytic gradient:
///   loss = sum_k w_k * mean(CE over the batch's group-k examples),
/// i.e. each example contributes with coefficient w_{g_i} / m_{g_i} where
/// m_k is the group's batch count.  Groups absent from the batch contribute
/// nothing; the loss is linear in the weight vector.  With dropout_rate > 0
/// the dropout mask is drawn deterministically from dropout_seed, shared by
/// the forward and backward passes.  A non-finite loss raises NumericError.
inline LossGrad weighted_loss_grad(const Parameters& p, const WeightedBatch& batch,
                                   double dropout_rate = 0.0,
                                   std::uint64_t dropout_seed = 0) {
    const std::size_t m = batch.labels.size();
    if (batch.X.rows != m || batch.groups.size() != m)
        throw DataError("weighted_loss_grad: batch lengths differ");
    if (m == 0) throw DataError("weighted_loss_grad: empty batch");

    std::vector<std::size_t> group_n(batch.weights.size(), 0);
    for (int g : batch.groups) {
        if (g < 0 || std::size_t(g) >= batch.weights.size())
            throw DataError("weighted_loss_grad: group index out of range");
        ++group_n[g];
    }

    LossGrad out;
    out.grad.assign(p.values.size(), 0.0);
    const std::size_t L = p.layer_count();
    const int classes = p.layer_dims.back();
    std::vector<std::vector<double>> z(L), a(L), delta(L);
    SplitMix64 dropout_rng(dropout_seed);
    SplitMix64* rng = dropout_rate > 0.0 ? &dropout_rng : nullptr;

    for (std::size_t i = 0; i < m; ++i) {
        const double c = batch.weights[batch.groups[i]] / double(group_n[batch.groups[i]]);
        detail::forward_one(p, batch.X.row(i), z, a, dropout_rate, rng);
        const double lse = detail::log_sum_exp(z[L - 1], nullptr);
        out.loss += c * (lse - z[L - 1][batch.labels[i]]);

        // output delta: (softmax - onehot) * c
        delta[L - 1].resize(classes);
        for (int j = 0; j < classes; ++j)
            delta[L - 1][j] = c * std::exp(z[L - 1][j] - lse);
        delta[L - 1][batch.labels[i]] -= c;

        for (std::size_t l = L; l-- > 0;) {
            const int in = p.layer_dims[l], outn = p.layer_dims[l + 1];
            const double* w = p.values.data() + p.layer_offset(l);
            double* gw = out.grad.data() + p.layer_offset(l);
            double* gb = gw + std::size_t(in) * outn;
            const std::vector<double>& al = l == 0 ? a[0] : a[l];
            for (int ii = 0; ii < in; ++ii) {
                const double ai = al[ii];
                if (ai != 0.0) {
                    double* grow = gw + std::size_t(ii) * outn;
                    for (int o = 0; o < outn; ++o) grow[o] += ai * delta[l][o];
                }
            }
            for (int o = 0; o < outn; ++o) gb[o] += delta[l][o];
            if (l == 0) break;
            // propagate: da = W * delta, then undo dropout scale and gate ReLU
            delta[l - 1].assign(in, 0.0);
            for (int ii = 0; ii < in; ++ii) {
                const double* wrow = w + std::size_t(ii) * outn;
                double s = 0.0;
                for (int o = 0; o < outn; ++o) s += wrow[o] * delta[l][o];
                // a[l] already carries mask * keep_scale; a==0 kills the path
                // whether it came from ReLU or the mask, and the kept paths
                // need the same keep_scale the forward applied.
                if (a[l][ii] == 0.0) {
                    delta[l - 1][ii] = 0.0;
                } else {
                    const double scale =
                        dropout_rate > 0.0 ? 1.0 / (1.0 - dropout_rate) : 1.0;
                    delta[l - 1][ii] = s * scale;
                }
            }
        }
    }
    if (!std::isfinite(out.loss))
        throw NumericError("non-finite loss (" + std::to_string(out.loss) + ")");
    return out;
}

/// L2 gradient clipping: rescale to norm max_norm when the norm exceeds it.
inline std::vector<double> clip_gradient(std::vector<double> grad, double max_norm) {
    const double norm = l2_norm(grad);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (double& g : grad) g *= s;
    }
    return grad;
}

/// Checkpoint: shape metadata plus the flat parameter slab, every real with
/// 17 significant digits.
inline void save_checkpoint(const Parameters& p, const ModelSpec& spec,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "{\n  \"arch\": \"" << (spec.arch == Arch::Linear ? "linear" : "mlp")
        << "\",\n  \"dropout_rate\": " << fmt17(spec.dropout_rate)
        << ",\n  \"layer_dims\": [";
    for (std::size_t i = 0; i < p.layer_dims.size(); ++i)
        out << (i ? ", " : "") << p.layer_dims[i];
    out << "],\n  \"values\": [";
    for (std::size_t i = 0; i < p.values.size(); ++i)
        out << (i ? ", " : "") << fmt17(p.values[i]);
    out << "]\n}\n";
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline std::pair<Parameters, ModelSpec> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
        Parameters p;
        p.layer_dims = j.at("layer_dims").get<std::vector<int>>();
        p.values = j.at("values").get<std::vector<double>>();
        if (p.layer_dims.size() < 2)
            throw DataError("'" + path + "': checkpoint needs at least two layer dims");
        if (p.values.size() != Parameters::count_for(p.layer_dims))
            throw DataError("'" + path + "': checkpoint value count does not match shape");
        ModelSpec spec;
        const std::string arch = j.at("arch").get<std::string>();
        if (arch == "linear") spec.arch = Arch::Linear;
        else if (arch == "mlp") spec.arch = Arch::Mlp;
        else throw DataError("'" + path + "': unknown arch '" + arch + "'");
        spec.dropout_rate = j.at("dropout_rate").get<double>();
        spec.input_dim = p.layer_dims.front();
        spec.class_count = p.layer_dims.back();
        spec.hidden_sizes.assign(p.layer_dims.begin() + 1, p.layer_dims.end() - 1);
        spec.validate();
        return {std::move(p), std::move(spec)};
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + path + "': bad checkpoint: " + e.what());
    }
}

}  // namespace fairgrad
