#ifndef CPMU_UNLEARN_HPP
#define CPMU_UNLEARN_HPP

#include <chrono>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "cpmu/conformal.hpp"
#include "cpmu/model.hpp"
#include "cpmu/splits.hpp"

namespace cpmu {

enum class RegNorm { l2_squared, l1 };
enum class LossDirection { corrected, as_written };

struct CpmuConfig {
    double alpha = 0.1;
    double delta = 1e-4;        // margin buffer
    double gamma = 10.0;        // surrogate steepness
    double lambda_reg = 1e-3;   // anchor weight
    RegNorm reg_norm = RegNorm::l2_squared;
    int epochs = 6;
    double learning_rate = 0.1;
    int batch_size = 32;
    LossDirection loss_direction = LossDirection::corrected;
    double momentum = 0.0;      // vanilla gradient steps by default
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
};

/// Per-epoch constants: the softmax probability of the nearest-quantile
/// calibration point at its own label, and the quantile it stands in for.
struct SurrogateContext {
    double p_q = 0.5;
    double q_hat = 0.0;
    int epoch = 0;
};

struct EpochTrace {
    int epoch = 0;
    double q_hat = 0.0;
    double eps_f = 0.0;  // mean surrogate risk over the forget batches
    double eps_r = 0.0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

namespace detail {

inline SurrogateLoss surrogate_tag(const SurrogateContext& ctx, const CpmuConfig& cfg,
                                   SurrogateLoss::Role role) {
    SurrogateLoss tag;
    tag.p_q = ctx.p_q;
    tag.delta = cfg.delta;
    tag.gamma = cfg.gamma;
    tag.corrected = cfg.loss_direction == LossDirection::corrected;
    tag.role = role;
    return tag;
}

inline double anchor_penalty(const ModelParams& p, const ModelParams& anchor, RegNorm norm) {
    double acc = 0.0;
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        const auto& w = p.weights[l].data();
        const auto& aw = anchor.weights[l].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double d = w[i] - aw[i];
            acc += norm == RegNorm::l2_squared ? d * d : std::abs(d);
        }
        for (std::size_t i = 0; i < p.biases[l].size(); ++i) {
            const double d = p.biases[l][i] - anchor.biases[l][i];
            acc += norm == RegNorm::l2_squared ? d * d : std::abs(d);
        }
    }
    return acc;
}

inline void add_anchor_gradient(const ModelParams& p, const ModelParams& anchor, RegNorm norm,
                                double lambda, Gradients& g) {
    auto dpen = [norm](double d) {
        if (norm == RegNorm::l2_squared) return 2.0 * d;
        return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    };
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        auto& gw = g.weights[l].data();
        const auto& w = p.weights[l].data();
        const auto& aw = anchor.weights[l].data();
        for (std::size_t i = 0; i < w.size(); ++i) gw[i] += lambda * dpen(w[i] - aw[i]);
        for (std::size_t i = 0; i < p.biases[l].size(); ++i)
            g.biases[l][i] += lambda * dpen(p.biases[l][i] - anchor.biases[l][i]);
    }
}

inline void accumulate(Gradients& into, const Gradients& from) {
    for (std::size_t l = 0; l < into.weights.size(); ++l) {
        auto& w = into.weights[l].data();
        const auto& f = from.weights[l].data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += f[i];
        for (std::size_t i = 0; i < into.biases[l].size(); ++i)
            into.biases[l][i] += from.biases[l][i];
    }
}

}  // namespace detail

/// Mean sigmoid risks over the two batches for the current quantile context.
/// The corrected direction rewards retain points for beating (1+delta)*p_q and
/// forget points for falling below it; as_written evaluates the swapped
/// margin arguments for comparison runs.
inline std::pair<double, double> surrogate_risks(const ModelParams& params,
                                                 const Dataset& forget_batch,
                                                 const Dataset& retain_batch,
                                                 const SurrogateContext& ctx,
                                                 const CpmuConfig& cfg) {
    if (forget_batch.empty() || retain_batch.empty())
        throw ArgumentError("surrogate_risks: empty batch");
    auto [neg_f, gf] =
        loss_and_grad(params, forget_batch, detail::surrogate_tag(ctx, cfg, SurrogateLoss::Role::forget));
    auto [neg_r, gr] =
        loss_and_grad(params, retain_batch, detail::surrogate_tag(ctx, cfg, SurrogateLoss::Role::retain));
    (void)gf;
    (void)gr;
    return {-neg_f, -neg_r};
}

struct CpmuLossParts {
    double loss = 0.0;
    double eps_f = 0.0;
    double eps_r = 0.0;
};

/// loss = -eps_f - eps_r + lambda * R(params - anchor); exact gradient with
/// p_q held constant.
inline std::pair<CpmuLossParts, Gradients> cpmu_loss_and_grad(
    const ModelParams& params, const ModelParams& anchor, const Dataset& forget_batch,
    const Dataset& retain_batch, const SurrogateContext& ctx, const CpmuConfig& cfg) {
    if (params.layer_count() != anchor.layer_count())
        throw ArgumentError("cpmu_loss_and_grad: params/anchor shape mismatch");
    for (std::size_t l = 0; l < params.layer_count(); ++l)
        if (params.weights[l].rows() != anchor.weights[l].rows() ||
            params.weights[l].cols() != anchor.weights[l].cols())
            throw ArgumentError("cpmu_loss_and_grad: params/anchor shape mismatch");
    if (forget_batch.empty() || retain_batch.empty())
        throw ArgumentError("cpmu_loss_and_grad: empty batch");

    auto [neg_f, grad] =
        loss_and_grad(params, forget_batch, detail::surrogate_tag(ctx, cfg, SurrogateLoss::Role::forget));
    auto [neg_r, gr] =
        loss_and_grad(params, retain_batch, detail::surrogate_tag(ctx, cfg, SurrogateLoss::Role::retain));
    detail::accumulate(grad, gr);
    detail::add_anchor_gradient(params, anchor, cfg.reg_norm, cfg.lambda_reg, grad);

    CpmuLossParts parts;
    parts.eps_f = -neg_f;
    parts.eps_r = -neg_r;
    parts.loss = neg_f + neg_r + cfg.lambda_reg * detail::anchor_penalty(params, anchor, cfg.reg_norm);
    return {parts, std::move(grad)};
}

/// The unlearning loop: refresh the conformal quantile and its nearest
/// calibration point once per epoch, then take paired forget/retain gradient
/// steps anchored to the original weights. Deterministic per seed.
inline std::pair<ModelParams, std::vector<EpochTrace>> unlearn(const ModelParams& theta_o,
                                                               const SplitBundle& bundle,
                                                               const CpmuConfig& cfg) {
    if (bundle.unlearn_forget.empty()) throw ArgumentError("unlearn: empty unlearn_forget");
    if (bundle.unlearn_retain.empty()) throw ArgumentError("unlearn: empty unlearn_retain");
    if (bundle.unlearn_calib.empty()) throw ArgumentError("unlearn: empty unlearn_calib");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ArgumentError("unlearn: alpha must be in (0,1)");
    if (cfg.gamma <= 0.0) throw ArgumentError("unlearn: gamma must be positive");
    validate_shapes(theta_o);

    ModelParams theta_u = theta_o;
    detail::SgdState st(theta_u);
    Rng rng(cfg.seed);
    std::vector<EpochTrace> trace;
    trace.reserve(cfg.epochs);

    const Dataset& forget = bundle.unlearn_forget;
    const Dataset& retain = bundle.unlearn_retain;
    std::vector<std::size_t> forget_order = detail::all_rows(forget.size());
    std::vector<std::size_t> retain_order = detail::all_rows(retain.size());
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t steps =
        (std::max(forget.size(), retain.size()) + batch - 1) / batch;

    const auto t_start = std::chrono::steady_clock::now();
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const CalibrationResult cal =
            calibrate(theta_u, bundle.unlearn_calib, cfg.alpha,
                      mix_seed(cfg.seed, 0x746965 + static_cast<std::uint64_t>(epoch)));
        SurrogateContext ctx;
        ctx.q_hat = cal.q_hat;
        ctx.p_q = forward_probs(theta_u, cal.nearest_features)[cal.nearest_label];
        ctx.epoch = epoch;

        rng.shuffle(forget_order);
        rng.shuffle(retain_order);
        auto slice = [&](const Dataset& d, const std::vector<std::size_t>& order,
                         std::size_t step) {
            // the shorter loader cycles through its shuffled order
            std::vector<std::size_t> rows;
            rows.reserve(batch);
            for (std::size_t t = 0; t < batch; ++t)
                rows.push_back(order[(step * batch + t) % order.size()]);
            return take_rows(d, rows);
        };

        double sum_f = 0.0, sum_r = 0.0, sum_loss = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            const Dataset fb = slice(forget, forget_order, step);
            const Dataset rb = slice(retain, retain_order, step);
            CpmuLossParts parts;
            Gradients grad;
            try {
                std::tie(parts, grad) = cpmu_loss_and_grad(theta_u, theta_o, fb, rb, ctx, cfg);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(step) + ")");
            }
            detail::sgd_step(theta_u, grad, st, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
            sum_f += parts.eps_f;
            sum_r += parts.eps_r;
            sum_loss += parts.loss;
        }

        EpochTrace t;
        t.epoch = epoch;
        t.q_hat = cal.q_hat;
        t.eps_f = sum_f / static_cast<double>(steps);
        t.eps_r = sum_r / static_cast<double>(steps);
        t.loss = sum_loss / static_cast<double>(steps);
        t.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              t_start)
                        .count();
        trace.push_back(t);
    }
    return {std::move(theta_u), std::move(trace)};
}

/// One line per epoch, tab separated: epoch, q_hat, eps_f, eps_r, loss,
/// wall_ms.
inline void write_trace(std::span<const EpochTrace> trace, std::ostream& os) {
    char buf[160];
    for (const auto& t : trace) {
        if (t.q_hat == kInfinity) {
            std::snprintf(buf, sizeof buf, "%d\tinf\t%.9g\t%.9g\t%.9g\t%.3f", t.epoch, t.eps_f,
                          t.eps_r, t.loss, t.wall_ms);
        } else {
            std::snprintf(buf, sizeof buf, "%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.3f", t.epoch, t.q_hat,
                          t.eps_f, t.eps_r, t.loss, t.wall_ms);
        }
        os << buf << "\n";
    }
}

}  // namespace cpmu

#endif  // CPMU_UNLEARN_HPP
