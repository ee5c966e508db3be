#ifndef CPMU_MODEL_HPP
#define CPMU_MODEL_HPP

#include <algorithm>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "cpmu/dataset.hpp"
#include "cpmu/splits.hpp"

namespace cpmu {

enum class Activation : std::uint32_t { tanh_act = 0 };

/// Weights of a small feed-forward softmax classifier. Layer l maps a vector
/// of size weights[l].cols() to weights[l].rows(); the hidden nonlinearity is
/// applied between layers, softmax after the last.
struct ModelParams {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    Activation activation = Activation::tanh_act;
    int n_classes = 0;
    int n_dims = 0;

    std::size_t layer_count() const { return weights.size(); }
    bool operator==(const ModelParams&) const = default;
};

struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

/// Gradient (or any tensor stack) with the same shapes as a ModelParams.
struct Gradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

inline Gradients zeros_like(const ModelParams& p) {
    Gradients g;
    g.weights.reserve(p.layer_count());
    g.biases.reserve(p.layer_count());
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        g.weights.emplace_back(p.weights[l].rows(), p.weights[l].cols());
        g.biases.emplace_back(p.biases[l].size(), 0.0);
    }
    return g;
}

inline void validate_shapes(const ModelParams& p) {
    if (p.weights.empty() || p.weights.size() != p.biases.size())
        throw ArgumentError("model: empty or inconsistent layer list");
    if (p.weights.front().cols() != static_cast<std::size_t>(p.n_dims))
        throw ArgumentError("model: first layer width != n_dims");
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        if (p.biases[l].size() != p.weights[l].rows())
            throw ArgumentError("model: bias length mismatch at layer " + std::to_string(l));
        if (l + 1 < p.layer_count() && p.weights[l + 1].cols() != p.weights[l].rows())
            throw ArgumentError("model: layer shapes do not compose at layer " + std::to_string(l));
    }
    if (p.weights.back().rows() != static_cast<std::size_t>(p.n_classes))
        throw ArgumentError("model: final layer width != n_classes");
}

/// Symmetric uniform init scaled by fan-in. hidden_widths may be empty for a
/// plain linear softmax model.
inline ModelParams init_params(int n_dims, const std::vector<int>& hidden_widths, int n_classes,
                               std::uint64_t seed) {
    if (n_dims <= 0 || n_classes <= 0) throw ArgumentError("init_params: bad dimensions");
    ModelParams p;
    p.n_dims = n_dims;
    p.n_classes = n_classes;
    Rng rng(seed);
    int in = n_dims;
    std::vector<int> widths = hidden_widths;
    widths.push_back(n_classes);
    for (int out : widths) {
        if (out <= 0) throw ArgumentError("init_params: bad layer width");
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        Matrix w(out, in);
        for (auto& x : w.data()) x = rng.uniform(-scale, scale);
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(out, 0.0);
        in = out;
    }
    return p;
}

namespace detail {

inline void softmax_inplace(std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (auto& x : logits) {
        x = std::exp(x - m);
        sum += x;
    }
    for (auto& x : logits) x /= sum;
}

struct ForwardCache {
    // activations[0] is the input; activations[l+1] the output of layer l
    // (post-tanh for hidden layers, raw logits for the last)
    std::vector<std::vector<double>> activations;
    std::vector<double> probs;
};

inline ForwardCache forward_cached(const ModelParams& p, std::span<const double> x) {
    ForwardCache c;
    c.activations.resize(p.layer_count() + 1);
    c.activations[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        const Matrix& w = p.weights[l];
        const auto& in = c.activations[l];
        std::vector<double> out(w.rows());
        for (std::size_t r = 0; r < w.rows(); ++r) {
            double s = p.biases[l][r];
            const auto row = w.row(r);
            for (std::size_t j = 0; j < row.size(); ++j) s += row[j] * in[j];
            out[r] = s;
        }
        // check pre-activations: tanh would silently saturate an overflow
        if (!all_finite(out))
            throw NumericError("non-finite activation at layer " + std::to_string(l));
        if (l + 1 < p.layer_count())
            for (auto& v : out) v = std::tanh(v);
        c.activations[l + 1] = std::move(out);
    }
    c.probs = c.activations.back();
    softmax_inplace(c.probs);
    return c;
}

// Backward pass for one example given dL/dlogits; accumulates into g.
inline void backward_into(const ModelParams& p, const ForwardCache& c,
                          std::span<const double> dlogits, Gradients& g) {
    std::vector<double> dz(dlogits.begin(), dlogits.end());
    for (std::size_t l = p.layer_count(); l-- > 0;) {
        const auto& in = c.activations[l];
        Matrix& gw = g.weights[l];
        for (std::size_t r = 0; r < gw.rows(); ++r) {
            g.biases[l][r] += dz[r];
            auto grow = gw.row(r);
            for (std::size_t j = 0; j < grow.size(); ++j) grow[j] += dz[r] * in[j];
        }
        if (l == 0) break;
        const Matrix& w = p.weights[l];
        std::vector<double> din(w.cols(), 0.0);
        for (std::size_t r = 0; r < w.rows(); ++r) {
            const auto row = w.row(r);
            for (std::size_t j = 0; j < row.size(); ++j) din[j] += row[j] * dz[r];
        }
        // through tanh
        const auto& act = c.activations[l];
        for (std::size_t j = 0; j < din.size(); ++j) din[j] *= 1.0 - act[j] * act[j];
        dz = std::move(din);
    }
}

// Per-example hook: fill dL/dlogits (unscaled) and return the example loss.
// The engine averages both over the batch.
using ExampleLoss = std::function<double(std::span<const double> probs, int label,
                                         std::vector<double>& dlogits)>;

inline std::pair<double, Gradients> batch_loss_and_grad(const ModelParams& p, const Matrix& feats,
                                                        std::span<const int> labels,
                                                        std::span<const std::size_t> rows,
                                                        const ExampleLoss& fn) {
    if (rows.empty()) throw ArgumentError("loss_and_grad: empty batch");
    Gradients g = zeros_like(p);
    double loss = 0.0;
    std::vector<double> dlogits(p.n_classes);
    for (std::size_t r : rows) {
        const ForwardCache c = forward_cached(p, feats.row(r));
        std::fill(dlogits.begin(), dlogits.end(), 0.0);
        loss += fn(c.probs, labels[r], dlogits);
        backward_into(p, c, dlogits, g);
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    loss *= inv;
    for (auto& w : g.weights)
        for (auto& x : w.data()) x *= inv;
    for (auto& b : g.biases)
        for (auto& x : b) x *= inv;
    if (!std::isfinite(loss)) throw NumericError("non-finite batch loss");
    return {loss, std::move(g)};
}

inline double cross_entropy_example(std::span<const double> probs, int label,
                                    std::vector<double>& dlogits) {
    const double py = std::max(probs[label], 1e-300);
    for (std::size_t j = 0; j < probs.size(); ++j) dlogits[j] = probs[j];
    dlogits[label] -= 1.0;
    return -std::log(py);
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), 0);
    return r;
}

}  // namespace detail

inline std::vector<double> forward_probs(const ModelParams& p, std::span<const double> x) {
    if (x.size() != static_cast<std::size_t>(p.n_dims))
        throw ArgumentError("forward_probs: feature dimension mismatch");
    return detail::forward_cached(p, x).probs;
}

/// Representation just before the classifier head (the input itself for a
/// single-layer model); used as the clustering embedding for group splits.
inline std::vector<double> penultimate(const ModelParams& p, std::span<const double> x) {
    if (x.size() != static_cast<std::size_t>(p.n_dims))
        throw ArgumentError("penultimate: feature dimension mismatch");
    auto cache = detail::forward_cached(p, x);
    return std::move(cache.activations[cache.activations.size() - 2]);
}

inline double accuracy(const ModelParams& p, const Dataset& data) {
    if (data.empty()) throw ArgumentError("accuracy: empty dataset");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto probs = forward_probs(p, data.features.row(i));
        const std::size_t argmax =
            std::max_element(probs.begin(), probs.end()) - probs.begin();  // ties -> lowest index
        if (static_cast<int>(argmax) == data.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Loss tags for the shared backprop engine. SurrogateLoss implements the
// sigmoid relaxation used by the unlearner: per point, loss = -l(gamma * u)
// where u compares the point's true-class probability against the pinned
// quantile-point probability p_q (constant within the batch step).
// ---------------------------------------------------------------------------

struct CrossEntropyLoss {};

struct SurrogateLoss {
    enum class Role { forget, retain };
    double p_q = 0.5;
    double delta = 1e-4;
    double gamma = 10.0;
    bool corrected = true;  // false swaps which side of the margin gets the (1+delta) boost
    Role role = Role::retain;
};

using LossTag = std::variant<CrossEntropyLoss, SurrogateLoss>;

inline double sigmoid_surrogate(double u, double gamma) {
    if (gamma <= 0.0) throw ArgumentError("sigmoid_surrogate: gamma must be positive");
    const double z = gamma * u;
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace detail {

inline ExampleLoss example_loss_for(const LossTag& tag) {
    if (std::holds_alternative<CrossEntropyLoss>(tag)) return cross_entropy_example;
    const SurrogateLoss s = std::get<SurrogateLoss>(tag);
    // margin argument; the (1+delta) factor scales the side that must be beaten
    const bool forget = s.role == SurrogateLoss::Role::forget;
    return [s, forget](std::span<const double> probs, int label,
                       std::vector<double>& dlogits) -> double {
        const double pu = probs[label];
        double u, du_dpu;
        if (s.corrected) {
            u = forget ? s.p_q - (1.0 + s.delta) * pu : pu - (1.0 + s.delta) * s.p_q;
            du_dpu = forget ? -(1.0 + s.delta) : 1.0;
        } else {
            u = forget ? (1.0 + s.delta) * pu - s.p_q : (1.0 + s.delta) * s.p_q - pu;
            du_dpu = forget ? (1.0 + s.delta) : -1.0;
        }
        const double ell = sigmoid_surrogate(u, s.gamma);
        // loss contribution is -ell (risks are maximized); chain through
        // dl/du = gamma*ell*(1-ell) and the softmax jacobian row for `label`
        const double dneg_ell_dpu = -s.gamma * ell * (1.0 - ell) * du_dpu;
        for (std::size_t j = 0; j < probs.size(); ++j) {
            const double jac = probs[label] * ((static_cast<int>(j) == label ? 1.0 : 0.0) - probs[j]);
            dlogits[j] = dneg_ell_dpu * jac;
        }
        return -ell;
    };
}

}  // namespace detail

/// Mean loss and gradient over a batch. The gradient matches central finite
/// differences to ~1e-9 relative error on smooth fixtures.
inline std::pair<double, Gradients> loss_and_grad(const ModelParams& p, const Dataset& batch,
                                                  const LossTag& tag) {
    if (batch.empty()) throw ArgumentError("loss_and_grad: empty batch");
    validate_shapes(p);
    const auto rows = detail::all_rows(batch.size());
    return detail::batch_loss_and_grad(p, batch.features, batch.labels, rows,
                                       detail::example_loss_for(tag));
}

namespace detail {

struct SgdState {
    Gradients velocity;
    explicit SgdState(const ModelParams& p) : velocity(zeros_like(p)) {}
};

inline void sgd_step(ModelParams& p, const Gradients& g, SgdState& st, double lr, double momentum,
                     double weight_decay) {
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        auto& w = p.weights[l].data();
        auto& v = st.velocity.weights[l].data();
        const auto& gw = g.weights[l].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = momentum * v[i] + gw[i] + weight_decay * w[i];
            w[i] -= lr * v[i];
        }
        auto& b = p.biases[l];
        auto& vb = st.velocity.biases[l];
        const auto& gb = g.biases[l];
        for (std::size_t i = 0; i < b.size(); ++i) {
            vb[i] = momentum * vb[i] + gb[i] + weight_decay * b[i];
            b[i] -= lr * vb[i];
        }
    }
}

}  // namespace detail

/// Mini-batch SGD with momentum and weight decay on mean cross-entropy.
/// Deterministic for a fixed (init, data, cfg); the input params are copied.
inline ModelParams train(const ModelParams& init, const Dataset& data, const TrainConfig& cfg) {
    if (data.empty()) throw ArgumentError("train: empty dataset");
    if (cfg.learning_rate <= 0.0) throw ArgumentError("train: learning_rate must be positive");
    if (cfg.batch_size <= 0) throw ArgumentError("train: batch_size must be positive");
    validate_shapes(init);

    ModelParams p = init;
    detail::SgdState st(p);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order = detail::all_rows(data.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> rows(order.data() + start, stop - start);
            auto [loss, g] = detail::batch_loss_and_grad(p, data.features, data.labels, rows,
                                                         detail::cross_entropy_example);
            (void)loss;
            detail::sgd_step(p, g, st, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
        }
    }
    return p;
}

inline double mean_cross_entropy(const ModelParams& p, const Dataset& data) {
    auto [loss, g] = loss_and_grad(p, data, CrossEntropyLoss{});
    (void)g;
    return loss;
}

/// The RT reference baseline: fresh seeded init trained only on the retained
/// part of the training pool.
inline ModelParams retrain_from_scratch(const SplitBundle& bundle, int hidden_width,
                                        const TrainConfig& cfg) {
    if (bundle.train_retain.empty()) throw ArgumentError("retrain_from_scratch: empty train_retain");
    const ModelParams fresh =
        init_params(static_cast<int>(bundle.train_retain.dims()), {hidden_width},
                    bundle.train_retain.n_classes, mix_seed(cfg.seed, 0x7274));
    return train(fresh, bundle.train_retain, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoint: magic line, then u32 activation/n_dims/n_classes, u64 layer
// count, per-layer u64 rows/cols, then row-major float64 weights and biases.
// ---------------------------------------------------------------------------

inline constexpr char kParamsMagic[] = "CPMU-PARAMS-1\n";

inline void save_params(const ModelParams& p, std::ostream& os) {
    os.write(kParamsMagic, sizeof kParamsMagic - 1);
    auto put_u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(static_cast<std::uint32_t>(p.activation));
    put_u32(static_cast<std::uint32_t>(p.n_dims));
    put_u32(static_cast<std::uint32_t>(p.n_classes));
    put_u64(p.layer_count());
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        put_u64(p.weights[l].rows());
        put_u64(p.weights[l].cols());
    }
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        os.write(reinterpret_cast<const char*>(p.weights[l].data().data()),
                 static_cast<std::streamsize>(p.weights[l].size() * sizeof(double)));
        os.write(reinterpret_cast<const char*>(p.biases[l].data()),
                 static_cast<std::streamsize>(p.biases[l].size() * sizeof(double)));
    }
}

inline void save_params(const ModelParams& p, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ArgumentError("save_params: cannot open " + path);
    save_params(p, os);
}

inline ModelParams load_params(std::istream& is) {
    char magic[sizeof kParamsMagic - 1];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kParamsMagic, sizeof magic) != 0)
        throw ArgumentError("load_params: bad magic header");
    auto get_u32 = [&] {
        std::uint32_t v;
        is.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u64 = [&] {
        std::uint64_t v;
        is.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    ModelParams p;
    p.activation = static_cast<Activation>(get_u32());
    p.n_dims = static_cast<int>(get_u32());
    p.n_classes = static_cast<int>(get_u32());
    const std::uint64_t layers = get_u64();
    std::vector<std::pair<std::uint64_t, std::uint64_t>> shapes(layers);
    for (auto& s : shapes) {
        s.first = get_u64();
        s.second = get_u64();
    }
    for (const auto& [rows, cols] : shapes) {
        Matrix w(rows, cols);
        is.read(reinterpret_cast<char*>(w.data().data()),
                static_cast<std::streamsize>(w.size() * sizeof(double)));
        std::vector<double> b(rows);
        is.read(reinterpret_cast<char*>(b.data()),
                static_cast<std::streamsize>(rows * sizeof(double)));
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    if (!is) throw ArgumentError("load_params: truncated checkpoint");
    validate_shapes(p);
    return p;
}

inline ModelParams load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArgumentError("load_params: cannot open " + path);
    return load_params(is);
}

}  // namespace cpmu

#endif  // CPMU_MODEL_HPP
