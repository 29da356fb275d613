#pragma once

// Dense 64-bit vector/matrix primitives plus the convolution, activation,
// loss and finite-difference routines the sentence and discourse models use.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace discourse {

using Vec = std::vector<double>;

/// Row-major dense matrix.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    Vec column(std::size_t c) const {
        Vec out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }
    void set_column(std::size_t c, std::span<const double> v) {
        for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

enum class Activation { logistic, tanh };

inline const char* to_string(Activation a) { return a == Activation::logistic ? "logistic" : "tanh"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "logistic") return Activation::logistic;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + s + "' (expected logistic|tanh)");
}

inline double logistic(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec logistic(std::span<const double> x) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = logistic(x[i]);
    return out;
}

inline double activate(double x, Activation a) noexcept {
    return a == Activation::logistic ? logistic(x) : std::tanh(x);
}

/// Derivative expressed through the activation's output y = act(x).
inline double activation_slope(double y, Activation a) noexcept {
    return a == Activation::logistic ? y * (1.0 - y) : 1.0 - y * y;
}

inline void activate_inplace(std::span<double> x, Activation a) noexcept {
    for (double& v : x) v = activate(v, a);
}

/// Valid 1-D convolution with the kernel applied reversed:
/// out_i = sum_{j=1..k} kernel_j * signal_{k+i-j} (1-based), |out| = |signal| - k + 1.
inline Vec conv1d_valid(std::span<const double> kernel, std::span<const double> signal) {
    const std::size_t k = kernel.size();
    if (k == 0) throw std::invalid_argument("conv1d_valid: empty kernel");
    if (k > signal.size())
        throw std::invalid_argument("conv1d_valid: kernel of size " + std::to_string(k) +
                                    " longer than signal of size " + std::to_string(signal.size()));
    const std::size_t n = signal.size() - k + 1;
    Vec out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += kernel[j] * signal[i + k - 1 - j];
        out[i] = acc;
    }
    return out;
}

/// Max-subtracted softmax.
inline Vec softmax(std::span<const double> y) {
    if (y.empty()) throw std::invalid_argument("softmax: empty input");
    const double m = *std::max_element(y.begin(), y.end());
    Vec out(y.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        out[i] = std::exp(y[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

inline double cross_entropy(std::span<const double> p, std::size_t target) {
    if (target >= p.size())
        throw std::invalid_argument("cross_entropy: target " + std::to_string(target) +
                                    " out of range for " + std::to_string(p.size()) + " classes");
    return -std::log(std::max(p[target], 1e-300));
}

/// Index of the maximum entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double squared_norm(std::span<const double> a) noexcept { return dot(a, a); }

/// y += A x
inline void gemv_acc(const Mat& a, std::span<const double> x, std::span<double> y) noexcept {
    for (std::size_t r = 0; r < a.rows(); ++r) y[r] += dot(a.row(r), x);
}

/// y += A^T x
inline void gemv_t_acc(const Mat& a, std::span<const double> x, std::span<double> y) noexcept {
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        const auto row = a.row(r);
        for (std::size_t c = 0; c < a.cols(); ++c) y[c] += row[c] * xr;
    }
}

/// A += u v^T
inline void outer_acc(std::span<const double> u, std::span<const double> v, Mat& a) noexcept {
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double ur = u[r];
        if (ur == 0.0) continue;
        auto row = a.row(r);
        for (std::size_t c = 0; c < a.cols(); ++c) row[c] += ur * v[c];
    }
}

/// y += alpha x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(std::span<const double> v) noexcept {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Central-difference gradient of a scalar function of a flat parameter vector.
template <typename F>
Vec fd_gradient(F&& f, std::span<const double> params, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("fd_gradient: eps must be positive");
    Vec theta(params.begin(), params.end());
    Vec grad(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double orig = theta[i];
        theta[i] = orig + eps;
        const double up = f(std::span<const double>(theta));
        theta[i] = orig - eps;
        const double down = f(std::span<const double>(theta));
        theta[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero coordinates from
/// turning round-off into huge ratios.
inline double relative_error(double a, double b, double floor = 1e-4) noexcept {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace discourse
