#pragma once

// Hierarchical convolutional sentence model: a stack of feature-wise valid
// convolutions whose kernel sizes grow by one per layer until the sentence
// matrix collapses to a single column.

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "numerics.hpp"

namespace discourse {

/// Thrown when a sentence needs more layers than the model was built with.
class CapacityError : public std::length_error {
public:
    using std::length_error::length_error;
};

struct KernelSchedule {
    std::size_t length = 0;           // words in the sentence
    std::vector<std::size_t> sizes;   // kernel size per layer

    std::size_t depth() const noexcept { return sizes.size(); }

    /// Row lengths of every layer, input first: l, l - (k_1 - 1), ..., 1.
    std::vector<std::size_t> lengths() const {
        std::vector<std::size_t> out{length};
        for (std::size_t k : sizes) out.push_back(out.back() - (k - 1));
        return out;
    }
};

namespace detail {
inline std::size_t ceil_sqrt(std::size_t x) {
    std::size_t c = 0;
    while (c * c < x) ++c;
    return c;
}
}  // namespace detail

/// Depth t = ceil(sqrt(2l)) - 1; sizes 2, 3, ..., with the last size chosen so
/// that the row length telescopes to exactly one. A one-word sentence gets the
/// single size-1 layer.
inline KernelSchedule schedule_for(std::size_t l) {
    if (l == 0) throw std::invalid_argument("schedule_for: sentence length must be at least 1");
    KernelSchedule s;
    s.length = l;
    const std::size_t t = detail::ceil_sqrt(2 * l) - 1;
    std::size_t consumed = 0;
    for (std::size_t i = 1; i < t; ++i) {
        s.sizes.push_back(i + 1);
        consumed += i;
    }
    s.sizes.push_back(l - consumed);
    return s;
}

/// Largest kernel any length in 1..max_length needs at each layer. The last
/// layer of a schedule can be wider than layer + 1 (l = 8 gives 2 3 5), so the
/// stored widths come from scanning every supported length.
inline std::vector<std::size_t> stored_kernel_sizes(std::size_t max_length) {
    std::vector<std::size_t> widths;
    for (std::size_t l = 1; l <= max_length; ++l) {
        const auto s = schedule_for(l);
        if (widths.size() < s.depth()) widths.resize(s.depth(), 0);
        for (std::size_t i = 0; i < s.depth(); ++i) widths[i] = std::max(widths[i], s.sizes[i]);
    }
    return widths;
}

/// Per-(feature, layer) kernels and scalar biases shared by all sentence
/// lengths. A layer that needs width k uses the first k stored weights.
struct HcnnParams {
    std::size_t n_features = 0;
    std::size_t max_length = 0;
    std::vector<std::size_t> widths;  // stored kernel width per layer
    std::vector<Vec> kernels;         // index f * max_depth() + layer
    Vec biases;                       // index f * max_depth() + layer
    Activation activation = Activation::logistic;

    static HcnnParams zeros(std::size_t n_features, std::size_t max_length,
                            Activation act = Activation::logistic) {
        if (max_length == 0) throw std::invalid_argument("HcnnParams: max_length must be at least 1");
        HcnnParams p;
        p.n_features = n_features;
        p.max_length = max_length;
        p.widths = stored_kernel_sizes(max_length);
        p.activation = act;
        for (std::size_t f = 0; f < n_features; ++f)
            for (std::size_t w : p.widths) p.kernels.emplace_back(w, 0.0);
        p.biases.assign(n_features * p.widths.size(), 0.0);
        return p;
    }

    std::size_t max_depth() const noexcept { return widths.size(); }

    Vec& kernel(std::size_t f, std::size_t layer) { return kernels[f * max_depth() + layer]; }
    const Vec& kernel(std::size_t f, std::size_t layer) const { return kernels[f * max_depth() + layer]; }
    double& bias(std::size_t f, std::size_t layer) { return biases[f * max_depth() + layer]; }
    double bias(std::size_t f, std::size_t layer) const { return biases[f * max_depth() + layer]; }

    std::size_t kernel_weight_count() const {
        std::size_t n = 0;
        for (const auto& k : kernels) n += k.size();
        return n;
    }

    friend bool operator==(const HcnnParams&, const HcnnParams&) = default;
};

/// Activation hierarchy kept for the backward pass. layers[0] is the sentence
/// matrix, layers.back() is the n x 1 sentence vector.
struct HcnnTrace {
    KernelSchedule schedule;
    std::vector<Mat> layers;
    std::vector<std::size_t> tokens;
};

struct HcnnOutput {
    Vec sentence;
    HcnnTrace trace;
};

/// Sentence matrix whose column j is the embedding of token j. `embeddings`
/// is n x V with one column per vocabulary entry.
inline Mat embed_sentence(std::span<const std::size_t> tokens, const Mat& embeddings) {
    if (tokens.empty()) throw std::invalid_argument("embed_sentence: empty token sequence");
    Mat m(embeddings.rows(), tokens.size());
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        if (tokens[j] >= embeddings.cols())
            throw std::invalid_argument("embed_sentence: token id " + std::to_string(tokens[j]) +
                                        " outside vocabulary of size " + std::to_string(embeddings.cols()));
        for (std::size_t r = 0; r < embeddings.rows(); ++r) m(r, j) = embeddings(r, tokens[j]);
    }
    return m;
}

inline HcnnOutput hcnn_forward(const Mat& sentence_matrix, const HcnnParams& params) {
    if (sentence_matrix.rows() != params.n_features)
        throw std::invalid_argument("hcnn_forward: sentence matrix has " + std::to_string(sentence_matrix.rows()) +
                                    " rows, model has " + std::to_string(params.n_features) + " features");
    if (sentence_matrix.cols() > params.max_length)
        throw CapacityError("hcnn_forward: sentence of " + std::to_string(sentence_matrix.cols()) +
                            " words exceeds the maximum supported length of " +
                            std::to_string(params.max_length));
    HcnnOutput out;
    out.trace.schedule = schedule_for(sentence_matrix.cols());
    const auto& sched = out.trace.schedule;
    if (sched.depth() > params.max_depth())
        throw CapacityError("hcnn_forward: schedule depth exceeds model depth (maximum length " +
                            std::to_string(params.max_length) + ")");
    out.trace.layers.reserve(sched.depth() + 1);
    out.trace.layers.push_back(sentence_matrix);
    for (std::size_t i = 0; i < sched.depth(); ++i) {
        const Mat& in = out.trace.layers.back();
        const std::size_t k = sched.sizes[i];
        Mat next(in.rows(), in.cols() - k + 1);
        for (std::size_t f = 0; f < in.rows(); ++f) {
            const auto kern = std::span<const double>(params.kernel(f, i)).first(k);
            const Vec conv = conv1d_valid(kern, in.row(f));
            const double b = params.bias(f, i);
            auto dst = next.row(f);
            for (std::size_t p = 0; p < conv.size(); ++p) dst[p] = activate(conv[p] + b, params.activation);
        }
        out.trace.layers.push_back(std::move(next));
    }
    out.sentence = out.trace.layers.back().column(0);
    return out;
}

inline HcnnOutput encode_sentence(std::span<const std::size_t> tokens, const Mat& embeddings,
                                  const HcnnParams& params) {
    auto out = hcnn_forward(embed_sentence(tokens, embeddings), params);
    out.trace.tokens.assign(tokens.begin(), tokens.end());
    return out;
}

/// Gradient buffers shaped like HcnnParams. `input` holds dL/dM^s for the
/// sentence last passed through hcnn_backward.
struct HcnnGradient {
    std::vector<Vec> kernels;
    Vec biases;
    Mat input;

    static HcnnGradient like(const HcnnParams& p) {
        HcnnGradient g;
        for (const auto& k : p.kernels) g.kernels.emplace_back(k.size(), 0.0);
        g.biases.assign(p.biases.size(), 0.0);
        return g;
    }
};

/// Adds the kernel and bias gradients into `grad` and overwrites grad.input
/// with the gradient for the sentence matrix columns.
inline void hcnn_backward(const HcnnTrace& trace, const HcnnParams& params,
                          std::span<const double> grad_sentence, HcnnGradient& grad) {
    if (trace.layers.empty() || trace.layers.size() != trace.schedule.depth() + 1)
        throw std::invalid_argument("hcnn_backward: malformed trace");
    if (grad_sentence.size() != params.n_features || trace.layers.back().rows() != params.n_features)
        throw std::invalid_argument("hcnn_backward: gradient has " + std::to_string(grad_sentence.size()) +
                                    " entries, expected " + std::to_string(params.n_features));
    if (grad.kernels.size() != params.kernels.size() || grad.biases.size() != params.biases.size())
        throw std::invalid_argument("hcnn_backward: gradient buffers do not match parameters");

    const std::size_t depth = trace.schedule.depth();
    Mat upper(params.n_features, 1);
    upper.set_column(0, grad_sentence);
    for (std::size_t ii = depth; ii-- > 0;) {
        const Mat& in = trace.layers[ii];
        const Mat& out = trace.layers[ii + 1];
        const std::size_t k = trace.schedule.sizes[ii];
        Mat lower(in.rows(), in.cols(), 0.0);
        for (std::size_t f = 0; f < in.rows(); ++f) {
            const Vec& kern = params.kernel(f, ii);
            Vec& gk = grad.kernels[f * params.max_depth() + ii];
            double& gb = grad.biases[f * params.max_depth() + ii];
            const auto x = in.row(f);
            auto gx = lower.row(f);
            const auto y = out.row(f);
            const auto gy = upper.row(f);
            for (std::size_t p = 0; p < y.size(); ++p) {
                const double dz = gy[p] * activation_slope(y[p], params.activation);
                if (dz == 0.0) continue;
                gb += dz;
                for (std::size_t j = 0; j < k; ++j) {
                    gk[j] += dz * x[p + k - 1 - j];
                    gx[p + k - 1 - j] += dz * kern[j];
                }
            }
        }
        upper = std::move(lower);
    }
    grad.input = std::move(upper);
}

inline HcnnGradient hcnn_backward(const HcnnTrace& trace, const HcnnParams& params,
                                  std::span<const double> grad_sentence) {
    auto g = HcnnGradient::like(params);
    hcnn_backward(trace, params, grad_sentence, g);
    return g;
}

}  // namespace discourse
