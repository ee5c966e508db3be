#ifndef CPMU_DATASET_HPP
#define CPMU_DATASET_HPP

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cpmu/core.hpp"

namespace cpmu {

/// A labeled point cloud with stable point ids. Immutable by convention once
/// built; all split operations copy rows into fresh Datasets.
struct Dataset {
    Matrix features;                 // n_points x n_dims
    std::vector<int> labels;         // values in [0, n_classes)
    std::vector<std::int64_t> ids;   // unique, non-negative
    int n_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dims() const { return features.cols(); }
    bool empty() const { return labels.empty(); }
};

inline void validate(const Dataset& d) {
    if (d.features.rows() != d.labels.size() || d.labels.size() != d.ids.size())
        throw ArgumentError("dataset: features/labels/ids length mismatch");
    std::unordered_set<std::int64_t> seen;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.labels[i] < 0 || d.labels[i] >= d.n_classes)
            throw ArgumentError("dataset: label out of range at row " + std::to_string(i));
        if (d.ids[i] < 0 || !seen.insert(d.ids[i]).second)
            throw ArgumentError("dataset: duplicate or negative id at row " + std::to_string(i));
    }
}

/// Rows of `d` selected by index, in the given order.
inline Dataset take_rows(const Dataset& d, const std::vector<std::size_t>& rows) {
    Dataset out;
    out.n_classes = d.n_classes;
    out.features = Matrix(rows.size(), d.dims());
    out.labels.reserve(rows.size());
    out.ids.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        for (std::size_t j = 0; j < d.dims(); ++j) out.features(i, j) = d.features(r, j);
        out.labels.push_back(d.labels[r]);
        out.ids.push_back(d.ids[r]);
    }
    return out;
}

inline Dataset concat(const Dataset& a, const Dataset& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.dims() != b.dims() || a.n_classes != b.n_classes)
        throw ArgumentError("concat: incompatible datasets");
    Dataset out;
    out.n_classes = a.n_classes;
    out.features = Matrix(a.size() + b.size(), a.dims());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.dims(); ++j) out.features(i, j) = a.features(i, j);
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = 0; j < b.dims(); ++j) out.features(a.size() + i, j) = b.features(i, j);
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.ids = a.ids;
    out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data. Class k is an isotropic unit-variance Gaussian centered on a
// direction of length `separation`. The first 2*n_dims directions are the
// signed axes (pairwise distance >= separation*sqrt(2)); any further ones are
// random units rejected until their cosine to every placed mean is <= 0.3.
// ---------------------------------------------------------------------------

inline Dataset generate_mixture(int n_classes, int n_dims, int n_per_class,
                                double separation, std::uint64_t seed) {
    if (n_classes <= 0 || n_dims <= 0 || n_per_class <= 0)
        throw ArgumentError("generate_mixture: counts must be positive");
    if (separation <= 0.0) throw ArgumentError("generate_mixture: separation must be positive");

    Rng rng(mix_seed(seed, 0x6d6978));
    Matrix means(n_classes, n_dims);
    for (int k = 0; k < n_classes; ++k) {
        if (k < 2 * n_dims) {
            means(k, k % n_dims) = (k < n_dims ? separation : -separation);
            continue;
        }
        std::vector<double> dir(n_dims);
        for (int attempt = 0; attempt < 200; ++attempt) {
            double norm = 0.0;
            for (auto& x : dir) {
                x = rng.normal();
                norm += x * x;
            }
            norm = std::sqrt(norm);
            for (auto& x : dir) x /= norm;
            bool spread = true;
            for (int p = 0; p < k && spread; ++p) {
                double dot = 0.0;
                for (int j = 0; j < n_dims; ++j) dot += dir[j] * means(p, j) / separation;
                if (dot > 0.3) spread = false;  // signed: antipodal is fine
            }
            if (spread) break;
        }
        for (int j = 0; j < n_dims; ++j) means(k, j) = separation * dir[j];
    }

    const std::size_t n = static_cast<std::size_t>(n_classes) * n_per_class;
    Dataset out;
    out.n_classes = n_classes;
    out.features = Matrix(n, n_dims);
    out.labels.resize(n);
    out.ids.resize(n);
    std::size_t row = 0;
    for (int k = 0; k < n_classes; ++k) {
        for (int i = 0; i < n_per_class; ++i, ++row) {
            for (int j = 0; j < n_dims; ++j) out.features(row, j) = means(k, j) + rng.normal();
            out.labels[row] = k;
            out.ids[row] = static_cast<std::int64_t>(row);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Text format: header `# dims=<d> classes=<k>`, then one row per point,
// `id,label,f0,...`. Integer fields round-trip bit-exactly; features are
// printed with 9 significant digits.
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& d, std::ostream& os) {
    os << "# dims=" << d.dims() << " classes=" << d.n_classes << "\n";
    char buf[64];
    for (std::size_t i = 0; i < d.size(); ++i) {
        os << d.ids[i] << ',' << d.labels[i];
        for (std::size_t j = 0; j < d.dims(); ++j) {
            std::snprintf(buf, sizeof buf, "%.9g", d.features(i, j));
            os << ',' << buf;
        }
        os << '\n';
    }
}

inline void save_dataset(const Dataset& d, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ArgumentError("save_dataset: cannot open " + path);
    save_dataset(d, os);
}

inline Dataset load_dataset(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw ArgumentError("load_dataset: empty input");
    std::size_t dims = 0;
    int classes = 0;
    if (std::sscanf(header.c_str(), "# dims=%zu classes=%d", &dims, &classes) != 2)
        throw ArgumentError("load_dataset: bad header: " + header);

    std::vector<std::int64_t> ids;
    std::vector<int> labels;
    std::vector<double> feats;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        ids.push_back(std::stoll(cell));
        std::getline(ls, cell, ',');
        labels.push_back(std::stoi(cell));
        for (std::size_t j = 0; j < dims; ++j) {
            if (!std::getline(ls, cell, ','))
                throw ArgumentError("load_dataset: short row: " + line);
            feats.push_back(std::stod(cell));
        }
    }
    Dataset d;
    d.n_classes = classes;
    d.labels = std::move(labels);
    d.ids = std::move(ids);
    d.features = Matrix(d.labels.size(), dims);
    d.features.data() = std::move(feats);
    validate(d);
    return d;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ArgumentError("load_dataset: cannot open " + path);
    return load_dataset(is);
}

}  // namespace cpmu

#endif  // CPMU_DATASET_HPP
