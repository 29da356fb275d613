#pragma once

// Agent-conditioned recurrent discourse model. The recurrent matrix is picked
// by the previous speaker and the output matrix by the current speaker; each
// step also reads the previous act label and the current sentence vector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcnn.hpp"
#include "numerics.hpp"

namespace discourse {

struct RcnnParams {
    std::size_t hidden_dim = 0;
    std::size_t n_labels = 0;
    std::size_t sentence_dim = 0;
    std::size_t n_agents = 0;
    Mat input;                    // hidden x (labels + 1); last column is the start label
    Mat sentence;                 // hidden x sentence_dim
    std::vector<Mat> recurrent;   // per agent, hidden x hidden
    std::vector<Mat> output;      // per agent, labels x hidden
    Vec bias_h;
    Vec bias_o;
    Activation activation = Activation::logistic;

    static RcnnParams zeros(std::size_t hidden, std::size_t labels, std::size_t sentence_dim,
                            std::size_t agents = 2, Activation act = Activation::logistic) {
        if (hidden == 0 || labels == 0 || sentence_dim == 0 || agents == 0)
            throw std::invalid_argument("RcnnParams: all dimensions must be positive");
        RcnnParams p;
        p.hidden_dim = hidden;
        p.n_labels = labels;
        p.sentence_dim = sentence_dim;
        p.n_agents = agents;
        p.input = Mat(hidden, labels + 1);
        p.sentence = Mat(hidden, sentence_dim);
        p.recurrent.assign(agents, Mat(hidden, hidden));
        p.output.assign(agents, Mat(labels, hidden));
        p.bias_h.assign(hidden, 0.0);
        p.bias_o.assign(labels, 0.0);
        p.activation = act;
        return p;
    }

    std::size_t start_label() const noexcept { return n_labels; }

    friend bool operator==(const RcnnParams&, const RcnnParams&) = default;
};

namespace detail {
inline void check_agent(const RcnnParams& p, std::size_t agent) {
    if (agent >= p.n_agents)
        throw std::invalid_argument("unknown agent id " + std::to_string(agent) + " (model has " +
                                    std::to_string(p.n_agents) + " agents)");
}
}  // namespace detail

/// Pre-activation of one recurrence step. `h_prev` may be empty, meaning the
/// zero state.
inline Vec rcnn_preactivation(const RcnnParams& p, std::span<const double> h_prev, std::size_t prev_label,
                              std::size_t prev_agent, std::span<const double> s) {
    detail::check_agent(p, prev_agent);
    if (prev_label > p.n_labels)
        throw std::invalid_argument("rcnn_step: label " + std::to_string(prev_label) + " out of range");
    if (s.size() != p.sentence_dim)
        throw std::invalid_argument("rcnn_step: sentence vector has " + std::to_string(s.size()) +
                                    " entries, expected " + std::to_string(p.sentence_dim));
    if (!h_prev.empty() && h_prev.size() != p.hidden_dim)
        throw std::invalid_argument("rcnn_step: hidden state dimension mismatch");
    Vec z(p.hidden_dim);
    for (std::size_t r = 0; r < p.hidden_dim; ++r) z[r] = p.input(r, prev_label);
    if (!h_prev.empty()) gemv_acc(p.recurrent[prev_agent], h_prev, z);
    gemv_acc(p.sentence, s, z);
    for (std::size_t r = 0; r < p.hidden_dim; ++r) z[r] += p.bias_h[r];
    return z;
}

/// h_i = act(I x_{i-1} + H^{a_{i-1}} h_{i-1} + S s_i + b_h)
inline Vec rcnn_step(const RcnnParams& p, std::span<const double> h_prev, std::size_t prev_label,
                     std::size_t prev_agent, std::span<const double> s) {
    Vec h = rcnn_preactivation(p, h_prev, prev_label, prev_agent, s);
    activate_inplace(h, p.activation);
    return h;
}

/// Output logits O^{a_i} h_i + b_o.
inline Vec output_logits(const RcnnParams& p, std::span<const double> h, std::size_t agent) {
    detail::check_agent(p, agent);
    if (h.size() != p.hidden_dim) throw std::invalid_argument("predict: hidden state dimension mismatch");
    Vec y = p.bias_o;
    gemv_acc(p.output[agent], h, y);
    return y;
}

inline Vec predict(const RcnnParams& p, std::span<const double> h, std::size_t agent) {
    return softmax(output_logits(p, h, agent));
}

enum class Recurrence {
    windowed,  // hidden state reset to zero `depth` steps before each prediction
    full,      // one pass over the dialogue; truncation applies to gradients only
};

inline const char* to_string(Recurrence r) { return r == Recurrence::windowed ? "windowed" : "full"; }

inline Recurrence recurrence_from_string(const std::string& s) {
    if (s == "windowed") return Recurrence::windowed;
    if (s == "full") return Recurrence::full;
    throw std::invalid_argument("unknown recurrence mode '" + s + "' (expected windowed|full)");
}

/// Inputs at dialogue position j: the previous label (start label at j = 0)
/// and the previous agent (a_0 := a_1, i.e. agents[0] at j = 0).
inline std::size_t previous_label(const RcnnParams& p, std::span<const std::size_t> labels, std::size_t j) {
    return j == 0 ? p.start_label() : labels[j - 1];
}
inline std::size_t previous_agent(std::span<const std::size_t> agents, std::size_t j) {
    return j == 0 ? agents[0] : agents[j - 1];
}

struct WindowResult {
    Vec probs;
    std::size_t first = 0;        // dialogue position of the window's first step
    std::vector<Vec> hidden;      // h_first .. h_i
    const Vec& last_hidden() const { return hidden.back(); }
};

/// Unrolls the recurrence over positions max(0, i - depth + 1) .. i from a
/// zero state and predicts at i. `labels` must cover positions < i.
inline WindowResult forward_window(const RcnnParams& p, std::span<const Vec> sentences,
                                   std::span<const std::size_t> agents, std::span<const std::size_t> labels,
                                   std::size_t i, std::size_t depth) {
    if (sentences.empty() || i >= sentences.size())
        throw std::invalid_argument("forward_window: empty window or position outside the dialogue");
    if (depth == 0) throw std::invalid_argument("forward_window: depth must be at least 1");
    if (agents.size() < sentences.size() || labels.size() < i)
        throw std::invalid_argument("forward_window: agents/labels do not cover the window");
    WindowResult r;
    r.first = i + 1 >= depth ? i + 1 - depth : 0;
    Vec h;
    for (std::size_t j = r.first; j <= i; ++j) {
        h = rcnn_step(p, h, previous_label(p, labels, j), previous_agent(agents, j), sentences[j]);
        r.hidden.push_back(h);
    }
    r.probs = predict(p, h, agents[i]);
    return r;
}

struct DecodeResult {
    std::vector<std::size_t> labels;
    std::vector<Vec> probs;
    std::vector<Vec> hidden;
};

/// Left-to-right greedy tagging that feeds back its own predictions. Ties in
/// the argmax go to the lowest label id.
inline DecodeResult greedy_decode(const RcnnParams& p, std::span<const Vec> sentences,
                                  std::span<const std::size_t> agents, std::size_t depth,
                                  Recurrence mode = Recurrence::windowed) {
    if (agents.size() != sentences.size())
        throw std::invalid_argument("greedy_decode: sentence and agent counts differ");
    DecodeResult out;
    Vec h;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (mode == Recurrence::windowed) {
            auto w = forward_window(p, sentences, agents, out.labels, i, depth);
            h = w.last_hidden();
            out.probs.push_back(std::move(w.probs));
        } else {
            h = rcnn_step(p, h, previous_label(p, out.labels, i), previous_agent(agents, i), sentences[i]);
            out.probs.push_back(predict(p, h, agents[i]));
        }
        out.hidden.push_back(h);
        out.labels.push_back(argmax(out.probs.back()));
    }
    return out;
}

/// Encodes every utterance with the sentence model, then decodes.
inline DecodeResult greedy_decode(const RcnnParams& p, const HcnnParams& hcnn, const Mat& embeddings,
                                  std::span<const std::vector<std::size_t>> utterances,
                                  std::span<const std::size_t> agents, std::size_t depth,
                                  Recurrence mode = Recurrence::windowed) {
    std::vector<Vec> sentences;
    sentences.reserve(utterances.size());
    for (const auto& toks : utterances) sentences.push_back(encode_sentence(toks, embeddings, hcnn).sentence);
    return greedy_decode(p, sentences, agents, depth, mode);
}

struct DiscourseVector {
    Vec values;
    std::size_t step = 0;
};

/// Hidden state at position i given a label history (gold or predicted).
inline DiscourseVector discourse_vector(const RcnnParams& p, std::span<const Vec> sentences,
                                        std::span<const std::size_t> agents, std::span<const std::size_t> labels,
                                        std::size_t i, std::size_t depth, Recurrence mode = Recurrence::windowed) {
    if (i >= sentences.size()) throw std::invalid_argument("discourse_vector: step outside the dialogue");
    if (mode == Recurrence::windowed) return {forward_window(p, sentences, agents, labels, i, depth).last_hidden(), i};
    if (labels.size() < i) throw std::invalid_argument("discourse_vector: labels do not cover the prefix");
    Vec h;
    for (std::size_t j = 0; j <= i; ++j)
        h = rcnn_step(p, h, previous_label(p, labels, j), previous_agent(agents, j), sentences[j]);
    return {std::move(h), i};
}

enum class Metric { cosine, euclidean };

inline const char* to_string(Metric m) { return m == Metric::cosine ? "cosine" : "euclidean"; }

inline Metric metric_from_string(const std::string& s) {
    if (s == "cosine") return Metric::cosine;
    if (s == "euclidean") return Metric::euclidean;
    throw std::invalid_argument("unknown metric '" + s + "' (expected cosine|euclidean)");
}

/// Cosine distance is 1 - cos(a, b); a zero vector has similarity 0 to everything.
inline double vector_distance(std::span<const double> a, std::span<const double> b, Metric m) {
    if (a.size() != b.size()) throw std::invalid_argument("vector_distance: dimension mismatch");
    if (m == Metric::euclidean) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(acc);
    }
    const double na = std::sqrt(squared_norm(a));
    const double nb = std::sqrt(squared_norm(b));
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot(a, b) / (na * nb);
}

struct Neighbour {
    std::size_t index = 0;
    double distance = 0.0;
    friend bool operator==(const Neighbour&, const Neighbour&) = default;
};

/// Exact k-nearest search by full scan. `exclude` drops the query's own entry.
inline std::vector<Neighbour> nearest_neighbours(std::span<const double> query, std::span<const Vec> corpus,
                                                 std::size_t k, Metric metric = Metric::cosine,
                                                 std::optional<std::size_t> exclude = std::nullopt) {
    if (corpus.empty()) throw std::invalid_argument("nearest_neighbours: empty corpus");
    if (k > corpus.size())
        throw std::invalid_argument("nearest_neighbours: k = " + std::to_string(k) + " exceeds corpus size " +
                                    std::to_string(corpus.size()));
    std::vector<Neighbour> all;
    all.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (exclude && *exclude == i) continue;
        all.push_back({i, vector_distance(query, corpus[i], metric)});
    }
    k = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                      [](const Neighbour& a, const Neighbour& b) {
                          return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
                      });
    all.resize(k);
    return all;
}

}  // namespace discourse
