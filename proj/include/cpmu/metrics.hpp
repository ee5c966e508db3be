#ifndef CPMU_METRICS_HPP
#define CPMU_METRICS_HPP

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cpmu/conformal.hpp"
#include "cpmu/splits.hpp"

namespace cpmu {

using LabeledSet = std::pair<std::vector<int>, int>;  // (prediction set, true label)

inline bool set_contains(const std::vector<int>& set, int label) {
    return std::find(set.begin(), set.end(), label) != set.end();
}

/// Covered fraction among points whose prediction set has size <= c; nullopt
/// when no point qualifies.
inline std::optional<double> ecf_at_c(std::span<const LabeledSet> sets, int c) {
    std::size_t qualifying = 0, covered = 0;
    for (const auto& [set, label] : sets) {
        if (static_cast<int>(set.size()) > c) continue;
        ++qualifying;
        if (set_contains(set, label)) ++covered;
    }
    if (qualifying == 0) return std::nullopt;
    return static_cast<double>(covered) / static_cast<double>(qualifying);
}

/// Uncovered fraction among points whose prediction set has size <= d.
inline std::optional<double> eucf_at_d(std::span<const LabeledSet> sets, int d) {
    std::size_t qualifying = 0, uncovered = 0;
    for (const auto& [set, label] : sets) {
        if (static_cast<int>(set.size()) > d) continue;
        ++qualifying;
        if (!set_contains(set, label)) ++uncovered;
    }
    if (qualifying == 0) return std::nullopt;
    return static_cast<double>(uncovered) / static_cast<double>(qualifying);
}

/// n / sum(1/x_i); zero when any component is zero or undefined.
inline double harmonic_mean(std::span<const std::optional<double>> values) {
    if (values.empty()) throw ArgumentError("harmonic_mean: empty input");
    double inv_sum = 0.0;
    for (const auto& v : values) {
        if (!v.has_value() || *v == 0.0) return 0.0;
        inv_sum += 1.0 / *v;
    }
    return static_cast<double>(values.size()) / inv_sum;
}

/// Fraction of prediction sets larger than the threshold.
inline double inefficiency_rate(std::span<const std::vector<int>> sets, int threshold) {
    if (sets.empty()) return 0.0;
    std::size_t over = 0;
    for (const auto& s : sets)
        if (static_cast<int>(s.size()) > threshold) ++over;
    return static_cast<double>(over) / static_cast<double>(sets.size());
}

struct MetricsReport {
    double alpha_used = 0.0;
    int c = 0;
    int d = 0;
    std::map<std::string, double> accuracy;                 // subset -> accuracy
    std::map<std::string, std::optional<double>> ecf;       // retain-role subsets, at c
    std::map<std::string, std::optional<double>> eucf;      // forget-role subsets, at d
    std::map<std::string, double> inefficiency;             // zeta_c / eta_d estimates
    double h_ce = 0.0;
    double beta_hat = 0.0;  // empirical uncovered rate on the unlearning forget set
    double tt_seconds = 0.0;
};

namespace detail {

struct SubsetEval {
    std::vector<LabeledSet> sets;
    double accuracy = 0.0;
};

// One forward pass per point feeds set membership, coverage, and accuracy.
inline SubsetEval evaluate_subset(const ModelParams& params, const Dataset& data,
                                  const CalibrationResult& calib) {
    SubsetEval out;
    out.sets.reserve(data.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto probs = forward_probs(params, data.features.row(i));
        std::vector<int> set;
        for (int y = 0; y < params.n_classes; ++y)
            if (score_covered(1.0 - probs[y], calib.q_hat)) set.push_back(y);
        const std::size_t argmax = std::max_element(probs.begin(), probs.end()) - probs.begin();
        if (static_cast<int>(argmax) == data.labels[i]) ++hits;
        out.sets.emplace_back(std::move(set), data.labels[i]);
    }
    out.accuracy = data.empty() ? 0.0 : static_cast<double>(hits) / data.size();
    return out;
}

inline std::vector<std::vector<int>> bare_sets(const std::vector<LabeledSet>& sets) {
    std::vector<std::vector<int>> out;
    out.reserve(sets.size());
    for (const auto& [s, y] : sets) out.push_back(s);
    return out;
}

}  // namespace detail

/// The six-subset report: calibrate on the unseen test calibration set, then
/// accuracies everywhere, ECF at c over retain-role subsets and EuCF at d over
/// forget-role ones, their harmonic mean, and the unrestricted uncovered rate
/// on the unlearning forget set (beta_hat). Empty subsets (instance scenario)
/// are skipped.
inline MetricsReport evaluate_all(const ModelParams& params, const SplitBundle& bundle, double alpha,
                                  int c, int d) {
    if (c < 0 || c > params.n_classes || d < 0 || d > params.n_classes)
        throw ArgumentError("evaluate_all: c/d out of [0, n_classes]");
    const CalibrationResult calib = calibrate(params, bundle.test_calib, alpha);

    MetricsReport r;
    r.alpha_used = alpha;
    r.c = c;
    r.d = d;

    const std::vector<std::pair<std::string, const Dataset*>> retain_role = {
        {"Tr", &bundle.train_retain}, {"Dr", &bundle.unlearn_retain}, {"Vr", &bundle.test_retain}};
    const std::vector<std::pair<std::string, const Dataset*>> forget_role = {
        {"Tf", &bundle.train_forget}, {"Df", &bundle.unlearn_forget}, {"Vf", &bundle.test_forget}};

    std::vector<std::optional<double>> components;
    for (const auto& [name, ds] : retain_role) {
        if (ds->empty()) continue;
        auto ev = detail::evaluate_subset(params, *ds, calib);
        r.accuracy[name] = ev.accuracy;
        r.ecf[name] = ecf_at_c(ev.sets, c);
        r.inefficiency[name] = inefficiency_rate(detail::bare_sets(ev.sets), c);
        components.push_back(r.ecf[name]);
    }
    for (const auto& [name, ds] : forget_role) {
        if (ds->empty()) continue;
        auto ev = detail::evaluate_subset(params, *ds, calib);
        r.accuracy[name] = ev.accuracy;
        r.eucf[name] = eucf_at_d(ev.sets, d);
        r.inefficiency[name] = inefficiency_rate(detail::bare_sets(ev.sets), d);
        components.push_back(r.eucf[name]);
        if (name == "Df") {
            std::size_t uncovered = 0;
            for (const auto& [set, label] : ev.sets)
                if (!set_contains(set, label)) ++uncovered;
            r.beta_hat = static_cast<double>(uncovered) / static_cast<double>(ev.sets.size());
        }
    }
    r.h_ce = components.empty() ? 0.0 : harmonic_mean(components);
    return r;
}

// ---------------------------------------------------------------------------
// Definition checks: frequency estimates of the coverage conditions, with and
// without the efficient-set restriction, using the unlearning calibration set
// as the conformal procedure the definitions refer to.
// ---------------------------------------------------------------------------

struct DefinitionCheck {
    bool def1_holds = false;
    bool def2_holds = false;
    double retain_coverage = 0.0;    // P(Y in C | retain)
    double forget_uncoverage = 0.0;  // P(Y notin C | forget)
    std::optional<double> retain_coverage_efficient;    // restricted to |C| <= c
    std::optional<double> forget_uncoverage_efficient;  // restricted to |C| <= d
    double p_forget = 0.0;  // share of forget points in the unlearning pool
};

inline DefinitionCheck check_conformal_definition(const ModelParams& params,
                                                  const SplitBundle& bundle, double alpha,
                                                  double beta, int c, int d) {
    if (!(0.0 <= alpha && alpha <= beta && beta <= 1.0))
        throw ArgumentError("check_conformal_definition: need 0 <= alpha <= beta <= 1");
    if (bundle.unlearn_forget.empty() || bundle.unlearn_retain.empty())
        throw ArgumentError("check_conformal_definition: empty unlearning subset");

    const CalibrationResult calib =
        calibrate(params, bundle.unlearn_calib, alpha == 0.0 ? 1e-12 : alpha);
    const auto retain = detail::evaluate_subset(params, bundle.unlearn_retain, calib);
    const auto forget = detail::evaluate_subset(params, bundle.unlearn_forget, calib);

    DefinitionCheck out;
    std::size_t cov = 0;
    for (const auto& [set, y] : retain.sets) cov += set_contains(set, y);
    out.retain_coverage = static_cast<double>(cov) / retain.sets.size();
    std::size_t unc = 0;
    for (const auto& [set, y] : forget.sets) unc += !set_contains(set, y);
    out.forget_uncoverage = static_cast<double>(unc) / forget.sets.size();
    out.retain_coverage_efficient = ecf_at_c(retain.sets, c);
    out.forget_uncoverage_efficient = eucf_at_d(forget.sets, d);
    out.p_forget = static_cast<double>(forget.sets.size()) /
                   static_cast<double>(forget.sets.size() + retain.sets.size());

    out.def1_holds = out.retain_coverage >= 1.0 - alpha && out.forget_uncoverage >= beta;
    out.def2_holds = out.retain_coverage_efficient.has_value() &&
                     out.forget_uncoverage_efficient.has_value() &&
                     *out.retain_coverage_efficient >= 1.0 - alpha &&
                     *out.forget_uncoverage_efficient >= beta;
    return out;
}

/// Empirical P(score_forget >= score_retain) over cross pairs; exact via a
/// sorted sweep up to the pair cap, seeded subsampling above it.
inline double estimate_proposition1(const ModelParams& params, const Dataset& forget,
                                    const Dataset& retain, std::size_t pair_cap = 1000000,
                                    std::uint64_t seed = 0x70726f70) {
    if (forget.empty() || retain.empty())
        throw ArgumentError("estimate_proposition1: empty input");
    std::vector<double> sf(forget.size()), sr(retain.size());
    for (std::size_t i = 0; i < forget.size(); ++i)
        sf[i] = nonconformity(params, forget.features.row(i), forget.labels[i]);
    for (std::size_t i = 0; i < retain.size(); ++i)
        sr[i] = nonconformity(params, retain.features.row(i), retain.labels[i]);

    const std::size_t pairs = forget.size() * retain.size();
    if (pairs <= pair_cap) {
        std::sort(sr.begin(), sr.end());
        std::size_t wins = 0;
        for (double s : sf)
            wins += std::upper_bound(sr.begin(), sr.end(), s) - sr.begin();
        return static_cast<double>(wins) / static_cast<double>(pairs);
    }
    Rng rng(seed);
    std::size_t wins = 0;
    for (std::size_t t = 0; t < pair_cap; ++t) {
        const double a = sf[rng.uniform_index(sf.size())];
        const double b = sr[rng.uniform_index(sr.size())];
        wins += a >= b;
    }
    return static_cast<double>(wins) / static_cast<double>(pair_cap);
}

// ---------------------------------------------------------------------------
// Flat key,value serialization; undefined metrics render as the literal
// `undefined`.
// ---------------------------------------------------------------------------

inline std::string format_metric(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string format_metric(const std::optional<double>& v) {
    return v ? format_metric(*v) : std::string("undefined");
}

inline void write_report(const MetricsReport& r, std::ostream& os) {
    os << "alpha," << format_metric(r.alpha_used) << "\n";
    os << "c," << r.c << "\n";
    os << "d," << r.d << "\n";
    for (const auto& [k, v] : r.accuracy) os << "acc." << k << "," << format_metric(v) << "\n";
    for (const auto& [k, v] : r.ecf) os << "ecf." << k << ".c," << format_metric(v) << "\n";
    for (const auto& [k, v] : r.eucf) os << "eucf." << k << ".d," << format_metric(v) << "\n";
    for (const auto& [k, v] : r.inefficiency) {
        const char* tag = (k[1] == 'r') ? ".c," : ".d,";
        os << "ineff." << k << tag << format_metric(v) << "\n";
    }
    os << "h_ce," << format_metric(r.h_ce) << "\n";
    os << "beta_hat," << format_metric(r.beta_hat) << "\n";
    os << "tt_s," << format_metric(r.tt_seconds) << "\n";
}

}  // namespace cpmu

#endif  // CPMU_METRICS_HPP
