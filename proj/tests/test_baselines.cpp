#include <cmath>

#include "catch_amalgamated.hpp"
#include "cpmu/baselines.hpp"
#include "cpmu/metrics.hpp"

using namespace cpmu;

namespace {

const Fractions kFr = {{"train", 0.4},
                       {"unlearn", 0.2},
                       {"unlearn_calib", 0.2},
                       {"test", 0.1},
                       {"test_calib", 0.1}};

struct Fixture {
    SplitBundle bundle;
    ModelParams theta_o;
};

Fixture fixture() {
    Fixture f;
    const Dataset data = generate_mixture(5, 4, 120, 4.0, 51);
    f.bundle = split_class_wise(data, {0}, kFr, 53);
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.seed = 7;
    cfg.weight_decay = 0.003;
    f.theta_o = train(init_params(4, {24}, 5, 6), f.bundle.train, cfg);
    return f;
}

}  // namespace

TEST_CASE("relabeling always picks a different label") {
    const Dataset d = generate_mixture(6, 2, 50, 3.0, 5);
    const Dataset r = amn_relabel(d, 6, 99);
    REQUIRE(r.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        REQUIRE(r.labels[i] != d.labels[i]);
        REQUIRE(r.labels[i] >= 0);
        REQUIRE(r.labels[i] < 6);
    }
    REQUIRE(amn_relabel(d, 6, 99).labels == r.labels);  // seeded
    REQUIRE_THROWS_AS(amn_relabel(d, 1, 1), ArgumentError);
}

TEST_CASE("amn with zero epochs is the identity") {
    const Fixture f = fixture();
    BaselineConfig cfg;
    cfg.epochs = 0;
    REQUIRE(amn_unlearn(f.theta_o, f.bundle, cfg) == f.theta_o);
}

TEST_CASE("amn crushes accuracy on the direct forget set") {
    const Fixture f = fixture();
    BaselineConfig cfg;
    cfg.epochs = 8;
    cfg.learning_rate = 0.1;
    cfg.seed = 3;
    const ModelParams u = amn_unlearn(f.theta_o, f.bundle, cfg);
    const double before = accuracy(f.theta_o, f.bundle.unlearn_forget);
    const double after = accuracy(u, f.bundle.unlearn_forget);
    REQUIRE(before > 0.9);
    REQUIRE(after <= 0.1 * before);
    // retain side survives the fine-tune
    REQUIRE(accuracy(u, f.bundle.unlearn_retain) >= 0.8);
    REQUIRE(amn_unlearn(f.theta_o, f.bundle, cfg) == u);  // deterministic
}

TEST_CASE("loss-gap objective obeys the hinge dead zone") {
    const Fixture f = fixture();
    // validation carries correct labels (small loss), forget points are
    // mislabeled on purpose (large loss): the hinge goes quiet
    Dataset valid = take_rows(f.bundle.unlearn_retain, {0, 1, 2, 3});
    Dataset forget = valid;
    for (auto& l : forget.labels) l = (l + 1) % 5;
    const Dataset retain = take_rows(f.bundle.unlearn_retain, {4, 5, 6, 7});

    const auto [lv, gv] = loss_and_grad(f.theta_o, valid, CrossEntropyLoss{});
    const auto [lf, gf] = loss_and_grad(f.theta_o, forget, CrossEntropyLoss{});
    const auto [lr, gr] = loss_and_grad(f.theta_o, retain, CrossEntropyLoss{});
    REQUIRE(lv < lf);

    const double am = 0.7;
    const auto [loss, g] = nabla_tau_loss_and_grad(f.theta_o, valid, forget, retain, am);
    REQUIRE(loss == Catch::Approx((1.0 - am) * lr).margin(1e-12));
    for (std::size_t l = 0; l < g.weights.size(); ++l)
        for (std::size_t i = 0; i < g.weights[l].size(); ++i)
            REQUIRE(g.weights[l].data()[i] ==
                    Catch::Approx((1.0 - am) * gr.weights[l].data()[i]).margin(1e-12));

    // alpha_mix = 0 collapses to retain fine-tuning whatever the losses are
    const auto [l0, g0] = nabla_tau_loss_and_grad(f.theta_o, forget, valid, retain, 0.0);
    REQUIRE(l0 == Catch::Approx(lr).margin(1e-12));
}

TEST_CASE("loss-gap gradient matches finite differences when the hinge is live") {
    const Fixture f = fixture();
    // swap the roles so L_v > L_f and the hinge branch is active
    Dataset valid = take_rows(f.bundle.unlearn_retain, {0, 1, 2});
    for (auto& l : valid.labels) l = (l + 2) % 5;
    const Dataset forget = take_rows(f.bundle.unlearn_retain, {3, 4, 5});
    const Dataset retain = take_rows(f.bundle.unlearn_retain, {6, 7, 8});
    const auto [lv, gv] = loss_and_grad(f.theta_o, valid, CrossEntropyLoss{});
    const auto [lf, gf] = loss_and_grad(f.theta_o, forget, CrossEntropyLoss{});
    REQUIRE(lv > lf);

    ModelParams p = init_params(4, {5}, 5, 77);
    auto value = [&](const ModelParams& q) {
        return nabla_tau_loss_and_grad(q, valid, forget, retain, 0.6).first;
    };
    const auto [loss, g] = nabla_tau_loss_and_grad(p, valid, forget, retain, 0.6);
    (void)loss;
    const double h = 1e-5;
    std::size_t flat = 0;
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        for (std::size_t i = 0; i < p.weights[l].size(); ++i, ++flat) {
            ModelParams up = p, dn = p;
            up.weights[l].data()[i] += h;
            dn.weights[l].data()[i] -= h;
            const double fd = (value(up) - value(dn)) / (2.0 * h);
            const double an = g.weights[l].data()[i];
            REQUIRE(std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)}) <= 1e-4);
        }
    }
}

TEST_CASE("nabla_tau validation slice carries only forget labels") {
    const Fixture f = fixture();
    const Dataset v = nabla_tau_validation(f.bundle);
    REQUIRE_FALSE(v.empty());
    for (int l : v.labels) REQUIRE(l == 0);
    // and the slice comes from the unlearning calibration set
    std::set<std::int64_t> calib_ids(f.bundle.unlearn_calib.ids.begin(),
                                     f.bundle.unlearn_calib.ids.end());
    for (auto id : v.ids) REQUIRE(calib_ids.count(id) == 1);
}

TEST_CASE("nabla_tau unlearning runs deterministically and degrades the forget set") {
    const Fixture f = fixture();
    BaselineConfig cfg;
    cfg.alpha_mix = 0.6;
    cfg.epochs = 6;
    cfg.learning_rate = 0.05;
    cfg.seed = 9;
    const Dataset v = nabla_tau_validation(f.bundle);
    const ModelParams u = nabla_tau_unlearn(f.theta_o, f.bundle, v, cfg);
    REQUIRE(nabla_tau_unlearn(f.theta_o, f.bundle, v, cfg) == u);
    REQUIRE(accuracy(u, f.bundle.unlearn_forget) <=
            accuracy(f.theta_o, f.bundle.unlearn_forget));
}

TEST_CASE("baselines never read the unseen evaluation subsets") {
    const Fixture f = fixture();
    SplitBundle tampered = f.bundle;
    // wreck V_calib / V_f / V_r; results must not move
    for (Dataset* d : {&tampered.test_calib, &tampered.test_forget, &tampered.test_retain})
        for (auto& x : d->features.data()) x = 1e6;
    BaselineConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 4;
    REQUIRE(amn_unlearn(f.theta_o, f.bundle, cfg) == amn_unlearn(f.theta_o, tampered, cfg));
    const Dataset v = nabla_tau_validation(f.bundle);
    REQUIRE(nabla_tau_unlearn(f.theta_o, f.bundle, v, cfg) ==
            nabla_tau_unlearn(f.theta_o, tampered, v, cfg));
}

TEST_CASE("baseline argument errors") {
    const Fixture f = fixture();
    SplitBundle broken = f.bundle;
    broken.unlearn_forget = Dataset{Matrix(0, 4), {}, {}, 5};
    BaselineConfig cfg;
    REQUIRE_THROWS_AS(amn_unlearn(f.theta_o, broken, cfg), ArgumentError);
    REQUIRE_THROWS_AS(
        nabla_tau_unlearn(f.theta_o, broken, f.bundle.unlearn_calib, cfg), ArgumentError);
    REQUIRE_THROWS_AS(nabla_tau_loss_and_grad(f.theta_o, f.bundle.unlearn_calib,
                                              f.bundle.unlearn_forget,
                                              f.bundle.unlearn_retain, 1.5),
                      ArgumentError);
}
