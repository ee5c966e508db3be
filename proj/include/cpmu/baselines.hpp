#ifndef CPMU_BASELINES_HPP
#define CPMU_BASELINES_HPP

#include <algorithm>
#include <string>
#include <vector>

#include "cpmu/model.hpp"
#include "cpmu/splits.hpp"

namespace cpmu {

enum class BaselineMethod { rt, amn, nabla_tau };

struct BaselineConfig {
    BaselineMethod method = BaselineMethod::amn;
    double alpha_mix = 0.5;  // hinge weight of the loss-gap method
    int epochs = 5;
    double learning_rate = 0.05;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

/// Uniformly random wrong label for every point, seeded.
inline Dataset amn_relabel(const Dataset& forget, int n_classes, std::uint64_t seed) {
    if (n_classes < 2) throw ArgumentError("amn_relabel: need at least two classes");
    Dataset relabeled = forget;
    Rng rng(seed);
    for (auto& label : relabeled.labels) {
        // draw over the other n_classes-1 labels
        int pick = static_cast<int>(rng.uniform_index(n_classes - 1));
        if (pick >= label) ++pick;
        label = pick;
    }
    return relabeled;
}

/// Random-relabeling unlearner: every forget point gets a uniformly random
/// wrong label, then the model is fine-tuned with cross-entropy on the
/// relabeled forget set plus the retain set.
inline ModelParams amn_unlearn(const ModelParams& theta_o, const SplitBundle& bundle,
                               const BaselineConfig& cfg) {
    if (bundle.unlearn_forget.empty() || bundle.unlearn_retain.empty())
        throw ArgumentError("amn_unlearn: empty unlearning subset");

    const Dataset relabeled =
        amn_relabel(bundle.unlearn_forget, theta_o.n_classes, mix_seed(cfg.seed, 0x616d6e));
    TrainConfig ft;
    ft.learning_rate = cfg.learning_rate;
    ft.momentum = 0.0;
    ft.weight_decay = 0.0;
    ft.epochs = cfg.epochs;
    ft.batch_size = cfg.batch_size;
    ft.seed = mix_seed(cfg.seed, 0x6674);
    return train(theta_o, concat(relabeled, bundle.unlearn_retain), ft);
}

/// One step of the loss-gap objective
///   alpha_mix * max(0, L_v - L_f) + (1 - alpha_mix) * L_r
/// over fixed batches; factored out so the gradient can be checked directly.
inline std::pair<double, Gradients> nabla_tau_loss_and_grad(const ModelParams& params,
                                                            const Dataset& validation_batch,
                                                            const Dataset& forget_batch,
                                                            const Dataset& retain_batch,
                                                            double alpha_mix) {
    if (alpha_mix < 0.0 || alpha_mix > 1.0)
        throw ArgumentError("nabla_tau: alpha_mix must be in [0,1]");
    auto [lv, gv] = loss_and_grad(params, validation_batch, CrossEntropyLoss{});
    auto [lf, gf] = loss_and_grad(params, forget_batch, CrossEntropyLoss{});
    auto [lr, gr] = loss_and_grad(params, retain_batch, CrossEntropyLoss{});

    const double hinge = std::max(0.0, lv - lf);
    const double loss = alpha_mix * hinge + (1.0 - alpha_mix) * lr;
    Gradients g = zeros_like(params);
    const double wh = hinge > 0.0 ? alpha_mix : 0.0;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        auto& w = g.weights[l].data();
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] = wh * (gv.weights[l].data()[i] - gf.weights[l].data()[i]) +
                   (1.0 - alpha_mix) * gr.weights[l].data()[i];
        for (std::size_t i = 0; i < g.biases[l].size(); ++i)
            g.biases[l][i] = wh * (gv.biases[l][i] - gf.biases[l][i]) +
                             (1.0 - alpha_mix) * gr.biases[l][i];
    }
    return {loss, std::move(g)};
}

/// Loss-gap unlearner: pushes the forget-set loss above a validation set
/// drawn with the forgotten labels while fine-tuning on the retain set. One
/// batch from each subset per step; shorter loaders cycle.
inline ModelParams nabla_tau_unlearn(const ModelParams& theta_o, const SplitBundle& bundle,
                                     const Dataset& validation, const BaselineConfig& cfg) {
    if (bundle.unlearn_forget.empty() || bundle.unlearn_retain.empty() || validation.empty())
        throw ArgumentError("nabla_tau_unlearn: empty subset");

    ModelParams p = theta_o;
    detail::SgdState st(p);
    Rng rng(cfg.seed);
    const Dataset& forget = bundle.unlearn_forget;
    const Dataset& retain = bundle.unlearn_retain;
    std::vector<std::size_t> vo = detail::all_rows(validation.size());
    std::vector<std::size_t> fo = detail::all_rows(forget.size());
    std::vector<std::size_t> ro = detail::all_rows(retain.size());
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t steps =
        (std::max({validation.size(), forget.size(), retain.size()}) + batch - 1) / batch;

    auto slice = [&](const Dataset& d, const std::vector<std::size_t>& order, std::size_t step) {
        std::vector<std::size_t> rows;
        rows.reserve(batch);
        for (std::size_t t = 0; t < batch; ++t)
            rows.push_back(order[(step * batch + t) % order.size()]);
        return take_rows(d, rows);
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(vo);
        rng.shuffle(fo);
        rng.shuffle(ro);
        for (std::size_t step = 0; step < steps; ++step) {
            auto [loss, g] = nabla_tau_loss_and_grad(p, slice(validation, vo, step),
                                                     slice(forget, fo, step),
                                                     slice(retain, ro, step), cfg.alpha_mix);
            (void)loss;
            detail::sgd_step(p, g, st, cfg.learning_rate, 0.0, 0.0);
        }
    }
    return p;
}

/// Validation set for the loss-gap method: the rows of the unlearning
/// calibration set whose labels occur in the forget set (the baselines only
/// ever see label-based slices of D_calib).
inline Dataset nabla_tau_validation(const SplitBundle& bundle) {
    std::set<int> forget_labels(bundle.unlearn_forget.labels.begin(),
                                bundle.unlearn_forget.labels.end());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < bundle.unlearn_calib.size(); ++i)
        if (forget_labels.count(bundle.unlearn_calib.labels[i])) rows.push_back(i);
    return take_rows(bundle.unlearn_calib, rows);
}

}  // namespace cpmu

#endif  // CPMU_BASELINES_HPP
