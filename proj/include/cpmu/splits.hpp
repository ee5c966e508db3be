#ifndef CPMU_SPLITS_HPP
#define CPMU_SPLITS_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cpmu/dataset.hpp"
#include "cpmu/kmeans.hpp"

namespace cpmu {

enum class ScenarioKind { class_wise, group_wise, instance_wise };

inline std::string to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::class_wise: return "class_wise";
        case ScenarioKind::group_wise: return "group_wise";
        case ScenarioKind::instance_wise: return "instance_wise";
    }
    return "?";
}

using Fractions = std::map<std::string, double>;

struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::class_wise;
    std::vector<std::int64_t> forget_values;  // labels, cluster ids, or point ids
    Fractions fractions;
    std::uint64_t seed = 0;
};

/// The named subsets of the evaluation protocol. Auxiliary scenarios carve all
/// nine out of one shuffled pool; the instance scenario reuses training rows
/// for the forget/retain unlearning sets and leaves the unseen forget/retain
/// test sets empty.
struct SplitBundle {
    Dataset train;           // T, the full training pool
    Dataset train_forget;    // T_f
    Dataset train_retain;    // T_r
    Dataset unlearn_forget;  // D_forget
    Dataset unlearn_retain;  // D_retain
    Dataset unlearn_calib;   // D_calib
    Dataset test_calib;      // V_calib
    Dataset test_forget;     // V_f
    Dataset test_retain;     // V_r
    ScenarioSpec scenario;
};

namespace detail {

inline double fraction_at(const Fractions& f, const std::string& key) {
    auto it = f.find(key);
    if (it == f.end()) throw ArgumentError("fractions: missing key '" + key + "'");
    if (it->second < 0.0 || it->second > 1.0)
        throw ArgumentError("fractions: key '" + key + "' out of [0,1]");
    return it->second;
}

inline void check_fraction_sum(const Fractions& f) {
    double s = 0.0;
    for (const auto& [k, v] : f) s += v;
    if (s > 1.0 + 1e-6) throw ArgumentError("fractions: sum exceeds 1");
}

inline void require_nonempty(const Dataset& d, const std::string& name) {
    if (d.empty()) throw SplitError("split would leave subset '" + name + "' empty");
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    return idx;
}

// Consecutive slices of one uniform shuffle keep every carved pool
// exchangeable with every other. Non-train pools get floor(frac*n) rows;
// the train pool absorbs the remainder.
struct AuxPools {
    std::vector<std::size_t> unlearn_calib, unlearn, test_calib, test, train;
};

inline AuxPools carve_aux_pools(std::size_t n, const Fractions& fractions, Rng& rng) {
    check_fraction_sum(fractions);
    const std::size_t n_uc = static_cast<std::size_t>(std::floor(fraction_at(fractions, "unlearn_calib") * n));
    const std::size_t n_u = static_cast<std::size_t>(std::floor(fraction_at(fractions, "unlearn") * n));
    const std::size_t n_tc = static_cast<std::size_t>(std::floor(fraction_at(fractions, "test_calib") * n));
    const std::size_t n_t = static_cast<std::size_t>(std::floor(fraction_at(fractions, "test") * n));
    fraction_at(fractions, "train");  // required key, size comes from the remainder
    if (n_uc + n_u + n_tc + n_t > n) throw SplitError("split: pools exceed dataset size");

    const auto idx = shuffled_indices(n, rng);
    AuxPools p;
    auto cur = idx.begin();
    auto grab = [&](std::size_t count) {
        std::vector<std::size_t> out(cur, cur + count);
        cur += count;
        return out;
    };
    p.unlearn_calib = grab(n_uc);
    p.unlearn = grab(n_u);
    p.test_calib = grab(n_tc);
    p.test = grab(n_t);
    p.train.assign(cur, idx.end());
    return p;
}

inline SplitBundle split_auxiliary(const Dataset& data, const Fractions& fractions,
                                   std::uint64_t seed,
                                   const std::function<bool(std::size_t)>& is_forget,
                                   ScenarioSpec scenario) {
    Rng rng(seed);
    const AuxPools pools = carve_aux_pools(data.size(), fractions, rng);

    auto partition = [&](const std::vector<std::size_t>& pool) {
        std::vector<std::size_t> f, r;
        for (std::size_t i : pool) (is_forget(i) ? f : r).push_back(i);
        return std::pair{f, r};
    };

    SplitBundle b;
    b.scenario = std::move(scenario);
    b.train = take_rows(data, pools.train);
    auto [tf, tr] = partition(pools.train);
    b.train_forget = take_rows(data, tf);
    b.train_retain = take_rows(data, tr);
    auto [uf, ur] = partition(pools.unlearn);
    b.unlearn_forget = take_rows(data, uf);
    b.unlearn_retain = take_rows(data, ur);
    b.unlearn_calib = take_rows(data, pools.unlearn_calib);
    b.test_calib = take_rows(data, pools.test_calib);
    auto [vf, vr] = partition(pools.test);
    b.test_forget = take_rows(data, vf);
    b.test_retain = take_rows(data, vr);

    // the unlearning protocol cannot run without these; the other subsets may
    // legitimately be empty in degenerate scenarios (e.g. a single forgotten
    // point lands in exactly one pool) and evaluation skips them
    require_nonempty(b.train, "train");
    require_nonempty(b.unlearn_forget, "unlearn_forget");
    require_nonempty(b.unlearn_retain, "unlearn_retain");
    require_nonempty(b.unlearn_calib, "unlearn_calib");
    require_nonempty(b.test_calib, "test_calib");
    return b;
}

}  // namespace detail

inline SplitBundle split_class_wise(const Dataset& data, const std::set<int>& forget_labels,
                                    const Fractions& fractions, std::uint64_t seed) {
    if (forget_labels.empty()) throw ArgumentError("split_class_wise: no forget labels");
    std::set<int> present(data.labels.begin(), data.labels.end());
    for (int l : forget_labels) {
        if (l < 0 || l >= data.n_classes)
            throw ArgumentError("split_class_wise: label " + std::to_string(l) + " out of range");
        if (!present.count(l))
            throw ArgumentError("split_class_wise: label " + std::to_string(l) + " absent from data");
    }
    ScenarioSpec spec;
    spec.kind = ScenarioKind::class_wise;
    spec.forget_values.assign(forget_labels.begin(), forget_labels.end());
    spec.fractions = fractions;
    spec.seed = seed;
    return detail::split_auxiliary(
        data, fractions, seed,
        [&](std::size_t i) { return forget_labels.count(data.labels[i]) > 0; }, std::move(spec));
}

inline SplitBundle split_group_wise(const Dataset& data, const Matrix& embeddings, int n_clusters,
                                    const std::set<int>& forget_clusters, const Fractions& fractions,
                                    std::uint64_t seed) {
    if (embeddings.rows() != data.size())
        throw ArgumentError("split_group_wise: embeddings row count mismatch");
    if (forget_clusters.empty()) throw ArgumentError("split_group_wise: no forget clusters");
    for (int c : forget_clusters)
        if (c < 0 || c >= n_clusters)
            throw ArgumentError("split_group_wise: cluster " + std::to_string(c) + " out of range");

    const KmeansResult km = kmeans(embeddings, n_clusters, 100, mix_seed(seed, 0x6b6d));
    std::vector<std::size_t> cluster_count(n_clusters, 0);
    for (int a : km.assignments) cluster_count[a]++;
    for (int c : forget_clusters)
        if (cluster_count[c] == 0)
            throw SplitError("split_group_wise: forget cluster " + std::to_string(c) + " is empty");

    ScenarioSpec spec;
    spec.kind = ScenarioKind::group_wise;
    spec.forget_values.assign(forget_clusters.begin(), forget_clusters.end());
    spec.fractions = fractions;
    spec.seed = seed;
    return detail::split_auxiliary(
        data, fractions, seed,
        [&](std::size_t i) { return forget_clusters.count(km.assignments[i]) > 0; },
        std::move(spec));
}

/// Instance forgetting: the training pool is the disjoint union of forget and
/// retain rows. The unlearning retain set is an equal-size draw from the
/// retained training rows, and the unlearning calibration set is a 50/50
/// mixture of trained and held-out rows so its scores straddle both regimes.
inline SplitBundle split_instance_wise(const Dataset& data,
                                       const std::set<std::int64_t>& forget_ids,
                                       const Fractions& fractions, std::uint64_t seed) {
    detail::check_fraction_sum(fractions);
    std::unordered_set<std::int64_t> known(data.ids.begin(), data.ids.end());
    for (auto id : forget_ids)
        if (!known.count(id))
            throw ArgumentError("split_instance_wise: unknown id " + std::to_string(id));

    Rng rng(seed);
    const std::size_t n = data.size();
    const std::size_t n_tc =
        static_cast<std::size_t>(std::floor(detail::fraction_at(fractions, "test_calib") * n));
    const std::size_t n_uc =
        static_cast<std::size_t>(std::floor(detail::fraction_at(fractions, "unlearn_calib") * n));
    detail::fraction_at(fractions, "train");
    const std::size_t n_uc_unseen = n_uc / 2;
    const std::size_t n_uc_trained = n_uc - n_uc_unseen;
    if (n_tc + n_uc_unseen > n) throw SplitError("split: pools exceed dataset size");

    const auto idx = detail::shuffled_indices(n, rng);
    auto cur = idx.begin();
    std::vector<std::size_t> test_calib(cur, cur + n_tc);
    cur += n_tc;
    std::vector<std::size_t> calib_unseen(cur, cur + n_uc_unseen);
    cur += n_uc_unseen;
    std::vector<std::size_t> train_rows(cur, idx.end());

    std::vector<std::size_t> train_f, train_r;
    for (std::size_t i : train_rows)
        (forget_ids.count(data.ids[i]) ? train_f : train_r).push_back(i);
    if (train_f.size() != forget_ids.size())
        throw ArgumentError("split_instance_wise: forget ids must all land in the train pool");

    // equal-size retain draw, then the trained half of the calibration mixture
    // from what is left of train_retain
    std::vector<std::size_t> retain_shuffled = train_r;
    rng.shuffle(retain_shuffled);
    if (retain_shuffled.size() < train_f.size() + n_uc_trained)
        throw SplitError("split: retained train rows cannot cover unlearn_retain and unlearn_calib");
    std::vector<std::size_t> unlearn_r(retain_shuffled.begin(),
                                       retain_shuffled.begin() + train_f.size());
    std::vector<std::size_t> calib_trained(
        retain_shuffled.begin() + train_f.size(),
        retain_shuffled.begin() + train_f.size() + n_uc_trained);
    std::vector<std::size_t> calib_rows = calib_unseen;
    calib_rows.insert(calib_rows.end(), calib_trained.begin(), calib_trained.end());

    SplitBundle b;
    b.scenario.kind = ScenarioKind::instance_wise;
    b.scenario.forget_values.assign(forget_ids.begin(), forget_ids.end());
    b.scenario.fractions = fractions;
    b.scenario.seed = seed;
    b.train = take_rows(data, train_rows);
    b.train_forget = take_rows(data, train_f);
    b.train_retain = take_rows(data, train_r);
    b.unlearn_forget = b.train_forget;
    b.unlearn_retain = take_rows(data, unlearn_r);
    b.unlearn_calib = take_rows(data, calib_rows);
    b.test_calib = take_rows(data, test_calib);
    b.test_forget = Dataset{Matrix(0, data.dims()), {}, {}, data.n_classes};
    b.test_retain = Dataset{Matrix(0, data.dims()), {}, {}, data.n_classes};

    detail::require_nonempty(b.train, "train");
    detail::require_nonempty(b.unlearn_calib, "unlearn_calib");
    detail::require_nonempty(b.test_calib, "test_calib");
    return b;
}

}  // namespace cpmu

#endif  // CPMU_SPLITS_HPP
