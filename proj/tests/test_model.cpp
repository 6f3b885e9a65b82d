#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "fairgrad/model.hpp"
#include "helpers.hpp"

using namespace fairgrad;
using testutil::fresh_dir;

namespace {

WeightedBatch single_example(std::vector<double> x, int label, double weight) {
    WeightedBatch b;
    b.X.rows = 1;
    b.X.cols = x.size();
    b.X.data = std::move(x);
    b.labels = {label};
    b.groups = {0};
    b.weights = {weight};
    return b;
}

// Nudge every parameter (biases included) off zero.  With zero biases a
// layer whose inputs are all masked or ReLU-dead lands exactly on the ReLU
// kink (z == 0), where one-sided finite differences and the subgradient
// legitimately disagree; jitter makes that a measure-zero event again.
Parameters jittered(const ModelSpec& spec, std::uint64_t seed) {
    Parameters p = init_params(spec, seed);
    SplitMix64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    for (double& v : p.values) v += 0.05 * (2.0 * rng.uniform() - 1.0);
    return p;
}

WeightedBatch random_batch(SplitMix64& rng, std::size_t m, std::size_t dim,
                           int classes, int groups,
                           std::vector<double> weights) {
    WeightedBatch b;
    b.X = Matrix(m, dim);
    for (double& v : b.X.data) v = rng.normal();
    b.labels.resize(m);
    b.groups.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        b.labels[i] = int(rng.below(classes));
        b.groups[i] = int(i < std::size_t(groups) ? i : rng.below(groups));
    }
    b.weights = std::move(weights);
    return b;
}

}  // namespace

TEST_CASE("parameter counts follow the layer shapes") {
    CHECK(Parameters::count_for({3, 2}) == 8);  // 3*2 weights + 2 biases
    // 9 -> 128 -> 64 -> 32 -> 2
    CHECK(Parameters::count_for({9, 128, 64, 32, 2}) ==
          9 * 128 + 128 + 128 * 64 + 64 + 64 * 32 + 32 + 32 * 2 + 2);
    const ModelSpec spec = ModelSpec::mlp(9, 2, {128, 64, 32}, 0.2);
    CHECK(spec.layer_dims() == std::vector<int>{9, 128, 64, 32, 2});
}

TEST_CASE("model spec validation") {
    CHECK_THROWS_AS(ModelSpec::linear(0, 2).validate(), DataError);
    CHECK_THROWS_AS(ModelSpec::linear(3, 1).validate(), DataError);
    CHECK_THROWS_AS(ModelSpec::mlp(3, 2, {8, 0}, 0.0).validate(), DataError);
    CHECK_THROWS_AS(ModelSpec::mlp(3, 2, {8}, 1.0).validate(), DataError);
    CHECK_THROWS_AS(ModelSpec::mlp(3, 2, {8}, -0.1).validate(), DataError);
    CHECK_NOTHROW(ModelSpec::mlp(3, 2, {8}, 0.0).validate());
}

TEST_CASE("init_params: fan-in bounds, zero biases, seed determinism") {
    const ModelSpec spec = ModelSpec::mlp(4, 3, {5}, 0.0);
    const Parameters p = init_params(spec, 7);
    REQUIRE(p.values.size() == Parameters::count_for({4, 5, 3}));

    const double bound1 = 1.0 / std::sqrt(4.0), bound2 = 1.0 / std::sqrt(5.0);
    for (int i = 0; i < 4 * 5; ++i) {
        CHECK(std::abs(p.values[i]) <= bound1);
    }
    for (int i = 0; i < 5; ++i) CHECK(p.values[20 + i] == 0.0);  // layer-0 bias
    const std::size_t l1 = p.layer_offset(1);
    for (int i = 0; i < 5 * 3; ++i) CHECK(std::abs(p.values[l1 + i]) <= bound2);
    for (int i = 0; i < 3; ++i) CHECK(p.values[l1 + 15 + i] == 0.0);

    CHECK(init_params(spec, 7).values == p.values);
    CHECK(init_params(spec, 8).values != p.values);
}

TEST_CASE("predict: hand-computed softmax for a linear model") {
    // weights [[1, 0], [0, 2]], bias [0.5, 0]; x = (1, 1)
    Parameters p;
    p.layer_dims = {2, 2};
    p.values = {1, 0, 0, 2, 0.5, 0};
    Matrix X(1, 2);
    X.at(0, 0) = 1.0;
    X.at(0, 1) = 1.0;
    const Prediction pred = predict(p, X);
    // logits (1.5, 2); softmax = exp(z)/sum
    const double e0 = std::exp(1.5), e1 = std::exp(2.0);
    CHECK_THAT(pred.probabilities.at(0, 0),
               Catch::Matchers::WithinAbs(e0 / (e0 + e1), 1e-12));
    CHECK_THAT(pred.probabilities.at(0, 1),
               Catch::Matchers::WithinAbs(e1 / (e0 + e1), 1e-12));
    CHECK(pred.labels[0] == 1);

    CHECK_THROWS_AS(predict(p, Matrix(1, 3)), DataError);
}

TEST_CASE("predict: argmax ties resolve to the lower index") {
    Parameters p;
    p.layer_dims = {2, 3};
    p.values.assign(Parameters::count_for({2, 3}), 0.0);  // all logits equal
    Matrix X(1, 2);
    const Prediction pred = predict(p, X);
    CHECK(pred.labels[0] == 0);
    for (int j = 0; j < 3; ++j)
        CHECK_THAT(pred.probabilities.at(0, j),
                   Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
}

TEST_CASE("softmax survives extreme logits") {
    Parameters p;
    p.layer_dims = {1, 2};
    p.values = {1000.0, -1000.0, 0.0, 0.0};
    Matrix X(1, 1);
    X.at(0, 0) = 1.0;
    const Prediction pred = predict(p, X);
    CHECK(pred.probabilities.at(0, 0) == 1.0);
    CHECK(pred.probabilities.at(0, 1) == 0.0);
    CHECK(pred.labels[0] == 0);

    const auto lg = weighted_loss_grad(p, single_example({1.0}, 0, 1.0));
    CHECK(std::isfinite(lg.loss));
    CHECK_THAT(lg.loss, Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("cross-entropy of uniform logits is log(classes)") {
    Parameters p;
    p.layer_dims = {1, 2};
    p.values.assign(4, 0.0);
    const auto lg = weighted_loss_grad(p, single_example({0.3}, 0, 1.0));
    CHECK_THAT(lg.loss, Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));

    // loss scales linearly with the group weight, including negative values
    const auto half = weighted_loss_grad(p, single_example({0.3}, 0, 0.5));
    CHECK_THAT(half.loss, Catch::Matchers::WithinAbs(0.5 * std::log(2.0), 1e-15));
    const auto neg = weighted_loss_grad(p, single_example({0.3}, 0, -1.0));
    CHECK_THAT(neg.loss, Catch::Matchers::WithinAbs(-std::log(2.0), 1e-15));
    for (std::size_t i = 0; i < lg.grad.size(); ++i)
        CHECK_THAT(neg.grad[i], Catch::Matchers::WithinAbs(-lg.grad[i], 1e-15));
}

TEST_CASE("group weighting takes the mean within each group") {
    // two groups: group 0 has two examples, group 1 has one; zero params so
    // every example costs log 2.  loss = w0 * log2 + w1 * log2.
    Parameters p;
    p.layer_dims = {1, 2};
    p.values.assign(4, 0.0);
    WeightedBatch b;
    b.X = Matrix(3, 1);
    b.labels = {0, 1, 0};
    b.groups = {0, 0, 1};
    b.weights = {0.25, 2.0};
    const auto lg = weighted_loss_grad(p, b);
    CHECK_THAT(lg.loss, Catch::Matchers::WithinAbs(2.25 * std::log(2.0), 1e-14));
}

TEST_CASE("loss is additive in the weight vector") {
    SplitMix64 rng(19);
    const ModelSpec spec = ModelSpec::mlp(4, 3, {6}, 0.0);
    const Parameters p = init_params(spec, 3);
    for (int trial = 0; trial < 10; ++trial) {
        WeightedBatch b = random_batch(rng, 12, 4, 3, 3, {0, 0, 0});
        std::vector<double> w1(3), w2(3);
        for (int k = 0; k < 3; ++k) {
            w1[k] = rng.normal();
            w2[k] = rng.normal();
        }
        b.weights = w1;
        const auto l1 = weighted_loss_grad(p, b);
        b.weights = w2;
        const auto l2 = weighted_loss_grad(p, b);
        for (int k = 0; k < 3; ++k) b.weights[k] = w1[k] + w2[k];
        const auto lsum = weighted_loss_grad(p, b);
        CHECK_THAT(lsum.loss, Catch::Matchers::WithinAbs(l1.loss + l2.loss, 1e-9));
        for (std::size_t i = 0; i < lsum.grad.size(); ++i)
            CHECK_THAT(lsum.grad[i],
                       Catch::Matchers::WithinAbs(l1.grad[i] + l2.grad[i], 1e-9));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    SplitMix64 rng(23);

    SECTION("linear") {
        const ModelSpec spec = ModelSpec::linear(5, 3);
        for (int trial = 0; trial < 5; ++trial) {
            const Parameters p = jittered(spec, 100 + trial);
            const WeightedBatch b =
                random_batch(rng, 16, 5, 3, 2, {0.7, -0.4});
            CHECK(testutil::fd_max_rel_err(p, b) <= 1e-4);
        }
    }

    SECTION("mlp with hidden layers 8 and 4") {
        const ModelSpec spec = ModelSpec::mlp(5, 3, {8, 4}, 0.0);
        for (int trial = 0; trial < 5; ++trial) {
            const Parameters p = jittered(spec, 200 + trial);
            const WeightedBatch b =
                random_batch(rng, 16, 5, 3, 2, {1.1, -0.6});
            CHECK(testutil::fd_max_rel_err(p, b) <= 1e-4);
        }
    }

    SECTION("mlp with an active dropout mask, fixed by its seed") {
        const ModelSpec spec = ModelSpec::mlp(5, 2, {8, 4}, 0.3);
        const Parameters p = jittered(spec, 300);
        const WeightedBatch b = random_batch(rng, 8, 5, 2, 2, {0.5, 0.5});
        CHECK(testutil::fd_max_rel_err(p, b, 0.3, 99) <= 1e-4);
        // same seed, same loss; different seed, different mask
        const double l1 = weighted_loss_grad(p, b, 0.3, 99).loss;
        const double l2 = weighted_loss_grad(p, b, 0.3, 99).loss;
        const double l3 = weighted_loss_grad(p, b, 0.3, 100).loss;
        CHECK(l1 == l2);
        CHECK(l1 != l3);
    }
}

TEST_CASE("inverted dropout preserves expected activation scale") {
    // with dropout active, the average loss over many masks should sit near
    // the dropout-free loss rather than shrink with the keep rate
    const ModelSpec spec = ModelSpec::mlp(3, 2, {64}, 0.5);
    const Parameters p = init_params(spec, 11);
    SplitMix64 rng(29);
    WeightedBatch b = random_batch(rng, 4, 3, 2, 1, {1.0});
    const double base = weighted_loss_grad(p, b, 0.0, 0).loss;
    double acc = 0.0;
    const int trials = 400;
    for (int t = 0; t < trials; ++t) acc += weighted_loss_grad(p, b, 0.5, t).loss;
    CHECK_THAT(acc / trials, Catch::Matchers::WithinAbs(base, 0.05));
}

TEST_CASE("weighted_loss_grad rejects malformed batches") {
    Parameters p;
    p.layer_dims = {1, 2};
    p.values.assign(4, 0.0);
    WeightedBatch b;
    b.X = Matrix(0, 1);
    b.weights = {1.0};
    CHECK_THROWS_AS(weighted_loss_grad(p, b), DataError);  // empty

    WeightedBatch bad = single_example({0.0}, 0, 1.0);
    bad.groups = {3};  // out of range for one weight
    CHECK_THROWS_AS(weighted_loss_grad(p, bad), DataError);
}

TEST_CASE("non-finite loss raises NumericError") {
    Parameters p;
    p.layer_dims = {1, 2};
    p.values = {std::numeric_limits<double>::infinity(), 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(weighted_loss_grad(p, single_example({1.0}, 0, 1.0)),
                    NumericError);
}

TEST_CASE("clip_gradient rescales to exactly the cap") {
    const auto clipped = clip_gradient({3.0, 4.0}, 0.05);
    CHECK_THAT(clipped[0], Catch::Matchers::WithinAbs(0.03, 1e-15));
    CHECK_THAT(clipped[1], Catch::Matchers::WithinAbs(0.04, 1e-15));
    CHECK_THAT(l2_norm(clipped), Catch::Matchers::WithinAbs(0.05, 1e-15));

    // below the cap the gradient passes through untouched
    const std::vector<double> small = {0.01, -0.02};
    CHECK(clip_gradient(small, 0.05) == small);
    const std::vector<double> zero = {0.0, 0.0};
    CHECK(clip_gradient(zero, 0.05) == zero);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    const ModelSpec spec = ModelSpec::mlp(4, 2, {5}, 0.2);
    const Parameters p = init_params(spec, 55);
    const auto dir = fresh_dir("ckpt");
    const std::string path = (dir / "model.json").string();
    save_checkpoint(p, spec, path);

    const auto [back, back_spec] = load_checkpoint(path);
    CHECK(back.layer_dims == p.layer_dims);
    CHECK(back.values == p.values);
    CHECK(back_spec.arch == Arch::Mlp);
    CHECK(back_spec.hidden_sizes == std::vector<int>{5});
    CHECK(back_spec.dropout_rate == 0.2);

    testutil::write_file(dir / "corrupt.json", "{\"arch\": \"linear\"}");
    CHECK_THROWS_AS(load_checkpoint((dir / "corrupt.json").string()), DataError);
    testutil::write_file(dir / "short.json",
                         "{\"arch\": \"linear\", \"dropout_rate\": 0, "
                         "\"layer_dims\": [2, 2], \"values\": [1, 2]}");
    CHECK_THROWS_AS(load_checkpoint((dir / "short.json").string()), DataError);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.json").string()), DataError);
}
