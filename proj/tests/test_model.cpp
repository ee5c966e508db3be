#include <cmath>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "cpmu/dataset.hpp"
#include "cpmu/model.hpp"
#include "cpmu/splits.hpp"

using namespace cpmu;

namespace {

// single linear layer whose logits equal the bias vector on zero input
ModelParams fixed_logit_model(const std::vector<double>& logits) {
    ModelParams p;
    p.n_dims = 1;
    p.n_classes = static_cast<int>(logits.size());
    p.weights.emplace_back(logits.size(), 1);
    p.biases.push_back(logits);
    return p;
}

Dataset points_with_labels(const std::vector<std::vector<double>>& xs,
                           const std::vector<int>& ys, int n_classes) {
    Dataset d;
    d.n_classes = n_classes;
    d.features = Matrix(xs.size(), xs[0].size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 0; j < xs[i].size(); ++j) d.features(i, j) = xs[i][j];
    d.labels = ys;
    d.ids.resize(xs.size());
    std::iota(d.ids.begin(), d.ids.end(), 0);
    return d;
}

double& param_coord(ModelParams& p, std::size_t flat) {
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        if (flat < p.weights[l].size()) return p.weights[l].data()[flat];
        flat -= p.weights[l].size();
        if (flat < p.biases[l].size()) return p.biases[l][flat];
        flat -= p.biases[l].size();
    }
    throw std::out_of_range("param_coord");
}

double grad_coord(const Gradients& g, std::size_t flat) {
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        if (flat < g.weights[l].size()) return g.weights[l].data()[flat];
        flat -= g.weights[l].size();
        if (flat < g.biases[l].size()) return g.biases[l][flat];
        flat -= g.biases[l].size();
    }
    throw std::out_of_range("grad_coord");
}

std::size_t param_count(const ModelParams& p) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < p.layer_count(); ++l)
        n += p.weights[l].size() + p.biases[l].size();
    return n;
}

// central finite differences against the analytic gradient, worst coordinate
double max_grad_rel_err(const ModelParams& p, const Dataset& batch, const LossTag& tag,
                        double step = 1e-5) {
    const auto [loss, g] = loss_and_grad(p, batch, tag);
    (void)loss;
    double worst = 0.0;
    for (std::size_t i = 0; i < param_count(p); ++i) {
        ModelParams hi = p, lo = p;
        param_coord(hi, i) += step;
        param_coord(lo, i) -= step;
        const double fd =
            (loss_and_grad(hi, batch, tag).first - loss_and_grad(lo, batch, tag).first) /
            (2.0 * step);
        const double an = grad_coord(g, i);
        const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
    const ModelParams p = fixed_logit_model({0.0, 0.0});
    const auto probs = forward_probs(p, std::vector<double>{0.0});
    REQUIRE(probs[0] == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(probs[1] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("softmax matches the reference exponential") {
    const ModelParams p = fixed_logit_model({2.0, 0.0});
    const auto probs = forward_probs(p, std::vector<double>{0.0});
    REQUIRE(probs[0] == Catch::Approx(0.880797).margin(1e-5));
    REQUIRE(probs[1] == Catch::Approx(0.119203).margin(1e-5));
}

TEST_CASE("softmax is shift invariant") {
    const ModelParams a = fixed_logit_model({1.3, -0.4, 0.9});
    const ModelParams b = fixed_logit_model({1.3 + 7.0, -0.4 + 7.0, 0.9 + 7.0});
    const auto pa = forward_probs(a, std::vector<double>{0.0});
    const auto pb = forward_probs(b, std::vector<double>{0.0});
    for (int y = 0; y < 3; ++y) REQUIRE(pa[y] == Catch::Approx(pb[y]).margin(1e-12));
}

TEST_CASE("softmax rows sum to one for random params") {
    Rng rng(55);
    for (int t = 0; t < 50; ++t) {
        const ModelParams p = init_params(4, {6}, 5, rng.next_u64());
        std::vector<double> x(4);
        for (auto& v : x) v = 10.0 * (rng.uniform01() - 0.5);
        const auto probs = forward_probs(p, x);
        double sum = 0.0;
        for (double v : probs) {
            REQUIRE(v > 0.0);
            REQUIRE(v < 1.0);
            sum += v;
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("forward_probs rejects dimension mismatch") {
    const ModelParams p = init_params(3, {4}, 2, 1);
    REQUIRE_THROWS_AS(forward_probs(p, std::vector<double>{1.0, 2.0}), ArgumentError);
}

TEST_CASE("non-finite intermediates raise a numeric error naming the layer") {
    ModelParams p = init_params(2, {3}, 2, 1);
    for (auto& x : p.weights[0].data()) x = 1e308;
    try {
        forward_probs(p, std::vector<double>{1e5, 1e5});
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("cross-entropy of the uniform prediction is ln 2") {
    ModelParams p = fixed_logit_model({0.0, 0.0});
    const Dataset batch = points_with_labels({{0.0}, {0.0}}, {0, 1}, 2);
    const auto [loss, g] = loss_and_grad(p, batch, CrossEntropyLoss{});
    (void)g;
    REQUIRE(loss == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("duplicating every batch point leaves loss and gradient unchanged") {
    const ModelParams p = init_params(3, {4}, 3, 21);
    const Dataset batch =
        points_with_labels({{1, 0, -1}, {0.5, 2, 0}, {-1, 1, 1}}, {0, 2, 1}, 3);
    Dataset doubled = concat(batch, batch);
    doubled.ids = {0, 1, 2, 3, 4, 5};
    const auto [l1, g1] = loss_and_grad(p, batch, CrossEntropyLoss{});
    const auto [l2, g2] = loss_and_grad(p, doubled, CrossEntropyLoss{});
    REQUIRE(l1 == Catch::Approx(l2).margin(1e-12));
    for (std::size_t i = 0; i < param_count(p); ++i)
        REQUIRE(grad_coord(g1, i) == Catch::Approx(grad_coord(g2, i)).margin(1e-12));
}

TEST_CASE("cross-entropy gradient matches finite differences") {
    Rng rng(77);
    const ModelParams p = init_params(3, {5}, 3, 4);
    std::vector<std::vector<double>> xs(5, std::vector<double>(3));
    std::vector<int> ys(5);
    for (auto& x : xs)
        for (auto& v : x) v = 2.0 * (rng.uniform01() - 0.5);
    for (auto& y : ys) y = static_cast<int>(rng.uniform_index(3));
    const Dataset batch = points_with_labels(xs, ys, 3);
    REQUIRE(max_grad_rel_err(p, batch, CrossEntropyLoss{}) <= 1e-4);
}

TEST_CASE("surrogate gradient matches finite differences for both roles") {
    Rng rng(99);
    const ModelParams p = init_params(2, {4}, 3, 8);
    std::vector<std::vector<double>> xs(4, std::vector<double>(2));
    std::vector<int> ys(4);
    for (auto& x : xs)
        for (auto& v : x) v = 3.0 * (rng.uniform01() - 0.5);
    for (auto& y : ys) y = static_cast<int>(rng.uniform_index(3));
    const Dataset batch = points_with_labels(xs, ys, 3);
    for (bool corrected : {true, false}) {
        for (auto role : {SurrogateLoss::Role::forget, SurrogateLoss::Role::retain}) {
            SurrogateLoss tag;
            tag.p_q = 0.4;
            tag.gamma = 10.0;
            tag.corrected = corrected;
            tag.role = role;
            REQUIRE(max_grad_rel_err(p, batch, tag) <= 1e-4);
        }
    }
}

TEST_CASE("zero epochs returns the init exactly") {
    const ModelParams init = init_params(4, {8}, 3, 5);
    const Dataset d = generate_mixture(3, 4, 10, 5.0, 2);
    TrainConfig cfg;
    cfg.epochs = 0;
    REQUIRE(train(init, d, cfg) == init);
}

TEST_CASE("training is deterministic") {
    const ModelParams init = init_params(4, {8}, 3, 5);
    const Dataset d = generate_mixture(3, 4, 30, 5.0, 2);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 77;
    REQUIRE(train(init, d, cfg) == train(init, d, cfg));
}

TEST_CASE("one epoch does not increase the training loss on the mixture fixture") {
    const Dataset d = generate_mixture(5, 4, 40, 6.0, 3);
    const ModelParams init = init_params(4, {16}, 5, 9);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 0.01;
    cfg.momentum = 0.0;
    cfg.seed = 4;
    const double before = mean_cross_entropy(init, d);
    const double after = mean_cross_entropy(train(init, d, cfg), d);
    REQUIRE(after <= before);
}

TEST_CASE("large weight decay shrinks weight norms monotonically on zero-gradient data") {
    // zero features and balanced labels with zero biases keep the data
    // gradient identically zero, so only the decay term moves the weights
    ModelParams p = init_params(2, {4}, 2, 33);
    for (auto& b : p.biases) std::fill(b.begin(), b.end(), 0.0);
    const Dataset d = points_with_labels({{0, 0}, {0, 0}}, {0, 1}, 2);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    cfg.weight_decay = 1.0;
    cfg.batch_size = 2;
    auto weight_norm = [](const ModelParams& m) {
        double s = 0.0;
        for (const auto& w : m.weights)
            for (double x : w.data()) s += x * x;
        return s;
    };
    double prev = weight_norm(p);
    for (int epochs = 1; epochs <= 5; ++epochs) {
        cfg.epochs = epochs;
        const double cur = weight_norm(train(p, d, cfg));
        REQUIRE(cur < prev);
        prev = cur;
    }
}

TEST_CASE("accuracy counts argmax hits with low-index ties") {
    // features are scaled one-hots through an identity layer
    ModelParams p;
    p.n_dims = 3;
    p.n_classes = 3;
    p.weights.emplace_back(3, 3);
    for (int i = 0; i < 3; ++i) p.weights[0](i, i) = 1.0;
    p.biases.emplace_back(3, 0.0);

    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 10; ++i) {
        std::vector<double> x(3, 0.0);
        x[i % 3] = 5.0;
        xs.push_back(x);
        ys.push_back(i % 3);
    }
    Dataset d = points_with_labels(xs, ys, 3);
    REQUIRE(accuracy(p, d) == 1.0);
    for (auto& y : d.labels) y = (y + 1) % 3;  // adversarial permutation
    REQUIRE(accuracy(p, d) == 0.0);
    for (int i = 0; i < 7; ++i) d.labels[i] = (d.labels[i] + 2) % 3;  // restore 7 of 10
    REQUIRE(accuracy(p, d) == Catch::Approx(0.7));
    // all-zero input gives equal logits; the tie resolves to class 0
    const Dataset zero = points_with_labels({{0, 0, 0}}, {0}, 3);
    REQUIRE(accuracy(p, zero) == 1.0);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    const ModelParams p = init_params(5, {7}, 4, 123);
    std::stringstream ss;
    save_params(p, ss);
    const ModelParams q = load_params(ss);
    REQUIRE(p == q);

    std::stringstream bad("not a checkpoint");
    REQUIRE_THROWS_AS(load_params(bad), ArgumentError);
}

TEST_CASE("the well-separated mixture fixture trains past 95 percent held out") {
    const Dataset d = generate_mixture(10, 8, 200, 6.0, 3);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 5;
    const ModelParams m = train(init_params(8, {64}, 10, 9), d, cfg);
    const Dataset held = generate_mixture(10, 8, 200, 6.0, 1003);
    REQUIRE(accuracy(m, held) >= 0.95);
}

TEST_CASE("retrain_from_scratch trains on the retain pool only") {
    const Dataset d = generate_mixture(4, 3, 60, 8.0, 15);
    const Fractions fr = {{"train", 0.5},
                          {"unlearn", 0.15},
                          {"unlearn_calib", 0.15},
                          {"test", 0.1},
                          {"test_calib", 0.1}};
    const SplitBundle b = split_class_wise(d, {3}, fr, 5);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 6;
    const ModelParams rt = retrain_from_scratch(b, 16, cfg);
    // never saw label 3: essentially never predicts it
    REQUIRE(accuracy(rt, b.unlearn_forget) <= 0.02);
    REQUIRE(accuracy(rt, b.unlearn_retain) >= 0.9);
    REQUIRE(retrain_from_scratch(b, 16, cfg) == rt);
    // and it stays within a few points of the full-pool model on retain data
    const ModelParams full =
        train(init_params(3, {16}, 4, mix_seed(cfg.seed, 0x7274)), b.train, cfg);
    REQUIRE(accuracy(rt, b.unlearn_retain) >= accuracy(full, b.unlearn_retain) - 0.05);
}

TEST_CASE("empty inputs are argument errors") {
    const ModelParams p = init_params(2, {3}, 2, 1);
    Dataset empty;
    empty.n_classes = 2;
    empty.features = Matrix(0, 2);
    REQUIRE_THROWS_AS(train(p, empty, TrainConfig{}), ArgumentError);
    REQUIRE_THROWS_AS(accuracy(p, empty), ArgumentError);
    REQUIRE_THROWS_AS(loss_and_grad(p, empty, CrossEntropyLoss{}), ArgumentError);
}
