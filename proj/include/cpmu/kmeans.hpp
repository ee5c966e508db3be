#ifndef CPMU_KMEANS_HPP
#define CPMU_KMEANS_HPP

#include <vector>

#include "cpmu/core.hpp"

namespace cpmu {

struct KmeansResult {
    std::vector<int> assignments;  // per point, nearest centroid (ties -> lowest index)
    Matrix centroids;              // k x dims
};

/// Lloyd iteration with distance-weighted (kmeans++ style) seeding from the
/// given seed. Deterministic; stops when assignments stabilize or after
/// max_iters passes.
inline KmeansResult kmeans(const Matrix& points, int k, int max_iters, std::uint64_t seed) {
    const std::size_t n = points.rows();
    const std::size_t dims = points.cols();
    if (k <= 0) throw ArgumentError("kmeans: k must be positive");
    if (static_cast<std::size_t>(k) > n) throw ArgumentError("kmeans: k exceeds point count");
    if (max_iters <= 0) throw ArgumentError("kmeans: max_iters must be positive");

    Rng rng(seed);
    Matrix centroids(k, dims);

    // seeding: first centroid uniform, then proportional to squared distance
    // from the nearest chosen centroid
    std::vector<double> d2(n, kInfinity);
    std::size_t first = rng.uniform_index(n);
    for (std::size_t j = 0; j < dims; ++j) centroids(0, j) = points(first, j);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = squared_distance(points.row(i), centroids.row(c - 1));
            if (d < d2[i]) d2[i] = d;
            total += d2[i];
        }
        std::size_t pick;
        if (total <= 0.0) {
            pick = rng.uniform_index(n);  // all mass on chosen points already
        } else {
            double target = rng.uniform01() * total;
            pick = n - 1;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        }
        for (std::size_t j = 0; j < dims; ++j) centroids(c, j) = points(pick, j);
    }

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = squared_distance(points.row(i), centroids.row(0));
            for (int c = 1; c < k; ++c) {
                const double d = squared_distance(points.row(i), centroids.row(c));
                if (d < bd) {  // strict: ties stay with the lowest index
                    bd = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed) break;

        Matrix sums(k, dims);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[assign[i]]++;
            for (std::size_t j = 0; j < dims; ++j) sums(assign[i], j) += points(i, j);
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            for (std::size_t j = 0; j < dims; ++j) centroids(c, j) = sums(c, j) / counts[c];
        }
    }
    return {std::move(assign), std::move(centroids)};
}

inline double within_cluster_ss(const Matrix& points, const KmeansResult& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i)
        s += squared_distance(points.row(i), r.centroids.row(r.assignments[i]));
    return s;
}

}  // namespace cpmu

#endif  // CPMU_KMEANS_HPP
