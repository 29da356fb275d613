#pragma once

// Independent reference implementations used only by the tests. They follow
// the defining formulas directly and share no code with the library beyond
// the Vec/Mat containers.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <discourse/numerics.hpp>

namespace oracle {

using discourse::Mat;
using discourse::Vec;

/// Valid convolution written in 1-based indices: out_i = sum_j k_j m_{k+i-j}.
inline Vec conv(std::span<const double> k, std::span<const double> m) {
    const std::size_t K = k.size(), n = m.size() - k.size() + 1;
    Vec out(n);
    for (std::size_t i = 1; i <= n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 1; j <= K; ++j) acc += k[j - 1] * m[K + i - j - 1];
        out[i - 1] = acc;
    }
    return out;
}

/// Kernel sizes from t = ceil(sqrt(2l)) - 1 and the recursion k_1 = 2,
/// k_{i+1} = k_i + 1, closed by k_t = l - sum_{j<t} (k_j - 1).
inline std::vector<std::size_t> schedule(std::size_t l) {
    const auto t = static_cast<std::size_t>(std::ceil(std::sqrt(2.0 * static_cast<double>(l)))) - 1;
    std::vector<std::size_t> k;
    for (std::size_t i = 1; i < t; ++i) k.push_back(i == 1 ? 2 : k.back() + 1);
    std::size_t used = 0;
    for (auto v : k) used += v - 1;
    k.push_back(l - used);
    return k;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec softmax(std::span<const double> y) {
    Vec e(y.size());
    double z = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) z += (e[i] = std::exp(y[i]));
    for (auto& v : e) v /= z;
    return e;
}

inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 1.0;
    return 1.0 - ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Full ranking by exhaustive distance computation with a stable index
/// tiebreak, optionally skipping one entry.
template <typename Dist>
std::vector<std::size_t> rank(std::span<const double> q, const std::vector<Vec>& corpus, Dist dist,
                              long skip = -1) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (static_cast<long>(i) != skip) idx.push_back(i);
    std::vector<double> d(corpus.size());
    for (auto i : idx) d[i] = dist(q, corpus[i]);
    for (std::size_t a = 1; a < idx.size(); ++a)
        for (std::size_t b = a; b > 0 && (d[idx[b]] < d[idx[b - 1]]); --b) std::swap(idx[b], idx[b - 1]);
    return idx;
}

/// Forward-only sentence vector by direct evaluation of the layer recursion.
inline Vec hcnn(const Mat& s, const std::vector<std::vector<Vec>>& kernels_by_feature_layer,
                const std::vector<std::vector<double>>& bias_by_feature_layer) {
    Vec out(s.rows());
    const auto sizes = schedule(s.cols());
    for (std::size_t f = 0; f < s.rows(); ++f) {
        Vec row(s.row(f).begin(), s.row(f).end());
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            const Vec& kfull = kernels_by_feature_layer[f][i];
            Vec c = conv(std::span<const double>(kfull).first(sizes[i]), row);
            for (auto& v : c) v = logistic(v + bias_by_feature_layer[f][i]);
            row = std::move(c);
        }
        out[f] = row[0];
    }
    return out;
}

}  // namespace oracle
