#ifndef CPMU_CONFORMAL_HPP
#define CPMU_CONFORMAL_HPP

#include <algorithm>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cpmu/dataset.hpp"
#include "cpmu/model.hpp"

namespace cpmu {

/// Split-conformal calibration snapshot: the sorted score sequence, the
/// finite-sample quantile (infinite when the rank overshoots n), and the
/// calibration point whose raw score sits closest to the quantile.
struct CalibrationResult {
    std::vector<double> sorted_scores;  // tie-broken copies when noise was requested
    double q_hat = 0.0;
    double alpha = 0.0;
    std::size_t n = 0;
    std::size_t nearest_index = 0;  // row in the calibration dataset
    std::int64_t nearest_id = -1;
    std::vector<double> nearest_features;
    int nearest_label = 0;
};

/// 1 - p(y|x), in [0,1]; smaller means the model conforms better.
inline double nonconformity(const ModelParams& p, std::span<const double> x, int y) {
    if (y < 0 || y >= p.n_classes) throw ArgumentError("nonconformity: label out of range");
    return 1.0 - forward_probs(p, x)[y];
}

/// Rank of the conformal quantile: ceil((1-alpha)(n+1)). Values above n mean
/// the quantile is +infinity; below 1 (alpha = 1) it is -infinity.
inline long quantile_rank(double alpha, std::size_t n) {
    return static_cast<long>(std::ceil((1.0 - alpha) * static_cast<double>(n + 1)));
}

// Membership is one comparison everywhere: covered iff score <= q_hat.
inline bool score_covered(double score, double q_hat) { return score <= q_hat; }

inline CalibrationResult calibrate(const ModelParams& params, const Dataset& calib, double alpha,
                                   std::optional<std::uint64_t> tie_noise_seed = std::nullopt) {
    if (calib.empty()) throw ArgumentError("calibrate: empty calibration set");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("calibrate: alpha must be in (0,1]");

    const std::size_t n = calib.size();
    std::vector<double> raw(n);
    for (std::size_t i = 0; i < n; ++i)
        raw[i] = nonconformity(params, calib.features.row(i), calib.labels[i]);

    std::vector<double> ranked = raw;
    if (tie_noise_seed) {
        Rng rng(*tie_noise_seed);
        for (auto& s : ranked) s += rng.uniform(0.0, 1e-9);
    }
    std::sort(ranked.begin(), ranked.end());

    CalibrationResult r;
    r.alpha = alpha;
    r.n = n;
    const long rank = quantile_rank(alpha, n);
    if (rank > static_cast<long>(n)) {
        r.q_hat = kInfinity;
    } else if (rank < 1) {
        r.q_hat = -kInfinity;
    } else {
        r.q_hat = ranked[static_cast<std::size_t>(rank - 1)];
    }
    r.sorted_scores = std::move(ranked);

    // nearest point by raw score, lowest index on ties; an infinite quantile
    // maps to the extreme-score point
    std::size_t best = 0;
    double best_gap = kInfinity;
    for (std::size_t i = 0; i < n; ++i) {
        double gap;
        if (r.q_hat == kInfinity) {
            gap = -raw[i];
        } else if (r.q_hat == -kInfinity) {
            gap = raw[i];
        } else {
            gap = std::abs(raw[i] - r.q_hat);
        }
        if (gap < best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    r.nearest_index = best;
    r.nearest_id = calib.ids[best];
    const auto row = calib.features.row(best);
    r.nearest_features.assign(row.begin(), row.end());
    r.nearest_label = calib.labels[best];
    return r;
}

/// {y : nonconformity(x,y) <= q_hat}; the full label set when q_hat is
/// infinite.
inline std::vector<int> prediction_set(const ModelParams& params, std::span<const double> x,
                                       const CalibrationResult& calib) {
    const auto probs = forward_probs(params, x);
    std::vector<int> set;
    for (int y = 0; y < params.n_classes; ++y)
        if (score_covered(1.0 - probs[y], calib.q_hat)) set.push_back(y);
    return set;
}

inline double empirical_coverage(const ModelParams& params, const CalibrationResult& calib,
                                 const Dataset& data) {
    if (data.empty()) throw ArgumentError("empirical_coverage: empty dataset");
    std::size_t covered = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double score = nonconformity(params, data.features.row(i), data.labels[i]);
        if (score_covered(score, calib.q_hat)) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(data.size());
}

/// Audit record consumed by the CLI: alpha, n, q_hat (or `inf`), nearest id.
inline void write_calibration_record(const CalibrationResult& r, std::ostream& os) {
    char buf[64];
    os << "alpha=" << r.alpha << "\n";
    os << "n=" << r.n << "\n";
    if (r.q_hat == kInfinity) {
        os << "q_hat=inf\n";
    } else if (r.q_hat == -kInfinity) {
        os << "q_hat=-inf\n";
    } else {
        std::snprintf(buf, sizeof buf, "%.9g", r.q_hat);
        os << "q_hat=" << buf << "\n";
    }
    os << "nearest_id=" << r.nearest_id << "\n";
}

}  // namespace cpmu

#endif  // CPMU_CONFORMAL_HPP
