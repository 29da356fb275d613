#pragma once

// Supervised training of the coupled sentence + discourse model: the
// cross-entropy objective with L2 on weights, exact backpropagation through
// the depth-truncated recurrence into the convolution kernels and word
// vectors, mini-batch optimisation, gradient checking and greedy evaluation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "corpus.hpp"
#include "hcnn.hpp"
#include "numerics.hpp"
#include "optim.hpp"
#include "random.hpp"
#include "rcnn.hpp"

namespace discourse {

/// Non-finite loss or gradient during training (CLI exit code 2).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Hyperparams {
    std::size_t embed_dim = 25;
    std::size_t hidden_dim = 100;
    std::size_t depth = 2;
    double l2 = 1e-4;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::size_t lbfgs_history = 10;
    std::size_t lbfgs_iterations = 4;  // quasi-Newton steps per mini-batch
    double learning_rate = 0.05;       // adam / sgd
    std::size_t batch_size = 32;       // dialogues
    std::size_t max_epochs = 150;
    std::size_t patience = 40;         // epochs without held-out improvement
    double heldout_fraction = 0.05;
    std::uint64_t seed = 1;
    std::size_t max_sentence_len = 100;
    std::size_t min_count = 2;
    double init_scale = 0.1;
    Activation sigmoid = Activation::logistic;
    Recurrence recurrence = Recurrence::windowed;
    std::size_t agents = 2;

    void validate() const {
        auto positive = [](std::size_t v, const char* name) {
            if (v == 0) throw std::invalid_argument(std::string("hyperparameter ") + name + " must be positive");
        };
        positive(embed_dim, "embed_dim");
        positive(hidden_dim, "hidden_dim");
        positive(depth, "depth");
        positive(lbfgs_history, "lbfgs_history");
        positive(lbfgs_iterations, "lbfgs_iterations");
        positive(batch_size, "batch_size");
        positive(max_sentence_len, "max_sentence_len");
        positive(min_count, "min_count");
        positive(agents, "agents");
        if (!(l2 >= 0.0)) throw std::invalid_argument("hyperparameter l2 must be non-negative");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("hyperparameter learning_rate must be positive");
        if (!(init_scale > 0.0)) throw std::invalid_argument("hyperparameter init_scale must be positive");
        if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0))
            throw std::invalid_argument("hyperparameter heldout_fraction must lie in [0, 1)");
    }
};

struct TrainingMeta {
    std::size_t epochs = 0;
    double final_loss = 0.0;
    double best_heldout = 0.0;
};

struct Model {
    Lexicon lexicon;
    LabelSet labels;
    HcnnParams hcnn;
    RcnnParams rcnn;
    Hyperparams hp;
    TrainingMeta meta;
};

/// Fresh model around an existing lexicon: weights and kernels uniform in
/// [-init_scale, init_scale], biases zero.
inline Model init_model(const Hyperparams& hp, Lexicon lexicon, LabelSet labels, std::uint64_t seed) {
    hp.validate();
    if (lexicon.dim() != hp.embed_dim)
        throw std::invalid_argument("init_model: lexicon dimension " + std::to_string(lexicon.dim()) +
                                    " differs from embed_dim " + std::to_string(hp.embed_dim));
    if (labels.size() == 0) throw std::invalid_argument("init_model: empty label set");
    Model m;
    m.hp = hp;
    m.lexicon = std::move(lexicon);
    m.labels = std::move(labels);
    m.hcnn = HcnnParams::zeros(hp.embed_dim, hp.max_sentence_len, hp.sigmoid);
    m.rcnn = RcnnParams::zeros(hp.hidden_dim, m.labels.size(), hp.embed_dim, hp.agents, hp.sigmoid);
    Rng rng(seed);
    const double a = hp.init_scale;
    for (auto& k : m.hcnn.kernels) rng.fill_uniform(k, -a, a);
    rng.fill_uniform(m.rcnn.input.data(), -a, a);
    rng.fill_uniform(m.rcnn.sentence.data(), -a, a);
    for (auto& h : m.rcnn.recurrent) rng.fill_uniform(h.data(), -a, a);
    for (auto& o : m.rcnn.output) rng.fill_uniform(o.data(), -a, a);
    return m;
}

// ---------------------------------------------------------------------------
// Flat parameter layout
//
// Order: embeddings (dim x V, row-major), HCNN kernels by (feature, layer),
// HCNN biases, I, S, H per agent, O per agent, b_h, b_o. The model file
// payload uses the same order.

struct ParamGroup {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
    bool regularized = false;
};

/// Calls fn(group_name, span, regularized) for every contiguous parameter
/// block in layout order. Works for const and mutable models.
template <typename M, typename F>
void visit_params(M& m, F&& fn) {
    fn("embeddings", m.lexicon.embeddings.data(), false);
    for (auto& k : m.hcnn.kernels) fn("hcnn_kernels", std::span(k), true);
    fn("hcnn_biases", std::span(m.hcnn.biases), false);
    fn("I", m.rcnn.input.data(), true);
    fn("S", m.rcnn.sentence.data(), true);
    for (auto& h : m.rcnn.recurrent) fn("H", h.data(), true);
    for (auto& o : m.rcnn.output) fn("O", o.data(), true);
    fn("b_h", std::span(m.rcnn.bias_h), false);
    fn("b_o", std::span(m.rcnn.bias_o), false);
}

inline std::vector<ParamGroup> param_groups(const Model& m) {
    std::vector<ParamGroup> groups;
    std::size_t offset = 0;
    visit_params(m, [&](const char* name, auto span, bool reg) {
        if (groups.empty() || groups.back().name != name) groups.push_back({name, offset, 0, reg});
        groups.back().size += span.size();
        offset += span.size();
    });
    return groups;
}

inline std::size_t param_count(const Model& m) {
    std::size_t n = 0;
    visit_params(m, [&](const char*, auto span, bool) { n += span.size(); });
    return n;
}

inline Vec flatten(const Model& m) {
    Vec out;
    out.reserve(param_count(m));
    visit_params(m, [&](const char*, auto span, bool) { out.insert(out.end(), span.begin(), span.end()); });
    return out;
}

inline void unflatten(Model& m, std::span<const double> flat) {
    if (flat.size() != param_count(m)) throw std::invalid_argument("unflatten: parameter count mismatch");
    std::size_t at = 0;
    visit_params(m, [&](const char*, std::span<double> span, bool) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), span.size(), span.begin());
        at += span.size();
    });
}

/// (1/2) sum of squared regularized weights.
inline double half_weight_norm(const Model& m) {
    double acc = 0.0;
    visit_params(m, [&](const char*, auto span, bool reg) {
        if (reg) acc += 0.5 * squared_norm(span);
    });
    return acc;
}

namespace detail {

/// Offsets of every parameter block inside the flat vector.
struct Layout {
    std::size_t embeddings = 0;
    std::vector<std::size_t> kernels;
    std::size_t hcnn_biases = 0;
    std::size_t input = 0;
    std::size_t sentence = 0;
    std::vector<std::size_t> recurrent;
    std::vector<std::size_t> output;
    std::size_t bias_h = 0;
    std::size_t bias_o = 0;
    std::size_t total = 0;

    explicit Layout(const Model& m) {
        std::size_t at = 0;
        auto take = [&](std::size_t n) {
            const std::size_t o = at;
            at += n;
            return o;
        };
        embeddings = take(m.lexicon.embeddings.size());
        for (const auto& k : m.hcnn.kernels) kernels.push_back(take(k.size()));
        hcnn_biases = take(m.hcnn.biases.size());
        input = take(m.rcnn.input.size());
        sentence = take(m.rcnn.sentence.size());
        for (const auto& h : m.rcnn.recurrent) recurrent.push_back(take(h.size()));
        for (const auto& o : m.rcnn.output) output.push_back(take(o.size()));
        bias_h = take(m.rcnn.bias_h.size());
        bias_o = take(m.rcnn.bias_o.size());
        total = at;
    }
};

/// dst (rows x cols, row-major) += u v^T
inline void outer_acc_flat(std::span<const double> u, std::span<const double> v, double* dst, std::size_t cols) {
    for (std::size_t r = 0; r < u.size(); ++r) {
        const double ur = u[r];
        if (ur == 0.0) continue;
        double* row = dst + r * cols;
        for (std::size_t c = 0; c < v.size(); ++c) row[c] += ur * v[c];
    }
}

/// Runs fn(index, slot) for index in [0, n) in waves of `threads` concurrent
/// calls; slot identifies the worker's scratch buffer. `after_wave(begin, end)`
/// runs on the calling thread once each wave finishes.
template <typename Fn, typename After>
void in_waves(std::size_t n, std::size_t threads, Fn&& fn, After&& after_wave) {
    threads = std::max<std::size_t>(1, threads);
    for (std::size_t begin = 0; begin < n; begin += threads) {
        const std::size_t end = std::min(n, begin + threads);
        if (end - begin == 1) {
            fn(begin, 0);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(end - begin);
            for (std::size_t i = begin; i < end; ++i)
                pool.emplace_back([&, i] {
                    try {
                        fn(i, i - begin);
                    } catch (...) {
                        errors[i - begin] = std::current_exception();
                    }
                });
            for (auto& t : pool) t.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }
        after_wave(begin, end);
    }
}

}  // namespace detail

inline std::size_t default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

/// A dialogue mapped onto model ids.
struct EncodedDialogue {
    std::string id;
    std::vector<std::vector<std::size_t>> tokens;
    std::vector<std::size_t> agents;
    std::vector<std::size_t> labels;
};

inline EncodedDialogue encode_dialogue(const Model& m, const Dialogue& d) {
    EncodedDialogue e;
    e.id = d.id;
    for (const auto& u : d.utterances) {
        if (u.act >= m.labels.size())
            throw DataError("dialogue " + d.id + " utterance " + std::to_string(u.position) + ": label id " +
                            std::to_string(u.act) + " outside the model's " + std::to_string(m.labels.size()) +
                            " labels");
        if (u.agent >= m.rcnn.n_agents)
            throw DataError("dialogue " + d.id + " utterance " + std::to_string(u.position) + ": unknown agent");
        auto ids = m.lexicon.ids(u.tokens);
        if (ids.empty()) ids.push_back(Lexicon::unk_id);
        if (ids.size() > m.hp.max_sentence_len) ids.resize(m.hp.max_sentence_len);
        e.tokens.push_back(std::move(ids));
        e.agents.push_back(u.agent);
        e.labels.push_back(u.act);
    }
    return e;
}

inline std::vector<EncodedDialogue> encode_dialogues(const Model& m, std::span<const Dialogue> ds) {
    std::vector<EncodedDialogue> out;
    out.reserve(ds.size());
    for (const auto& d : ds) out.push_back(encode_dialogue(m, d));
    return out;
}

namespace detail {

/// Hidden states for every prediction of a teacher-forced dialogue.
struct Unrolled {
    std::size_t first = 0;
    std::vector<Vec> hidden;  // positions first..i
    Vec before;               // h_{first-1} when the recurrence is not reset, else empty
};

inline std::vector<Unrolled> unroll(const Model& m, const std::vector<Vec>& sentences, const EncodedDialogue& d) {
    const auto& p = m.rcnn;
    const std::size_t depth = m.hp.depth;
    std::vector<Unrolled> out(sentences.size());
    if (m.hp.recurrence == Recurrence::windowed) {
        for (std::size_t i = 0; i < sentences.size(); ++i) {
            auto w = forward_window(p, sentences, d.agents, d.labels, i, depth);
            out[i].first = w.first;
            out[i].hidden = std::move(w.hidden);
        }
        return out;
    }
    std::vector<Vec> h(sentences.size());
    for (std::size_t j = 0; j < sentences.size(); ++j)
        h[j] = rcnn_step(p, j == 0 ? Vec{} : h[j - 1], previous_label(p, d.labels, j), previous_agent(d.agents, j),
                         sentences[j]);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        auto& u = out[i];
        u.first = i + 1 >= depth ? i + 1 - depth : 0;
        u.hidden.assign(h.begin() + static_cast<std::ptrdiff_t>(u.first), h.begin() + static_cast<std::ptrdiff_t>(i + 1));
        if (u.first > 0) u.before = h[u.first - 1];
    }
    return out;
}

/// Summed cross-entropy of one dialogue; adds its unscaled gradient into
/// `grad` (full flat layout) when grad is non-empty.
inline double dialogue_loss(const Model& m, const Layout& lay, const EncodedDialogue& d, std::span<double> grad,
                            HcnnGradient* hscratch) {
    const auto& p = m.rcnn;
    const std::size_t n_utt = d.tokens.size();
    std::vector<HcnnOutput> enc;
    enc.reserve(n_utt);
    std::vector<Vec> sentences;
    for (const auto& toks : d.tokens) {
        enc.push_back(encode_sentence(toks, m.lexicon.embeddings, m.hcnn));
        sentences.push_back(enc.back().sentence);
    }
    const auto unrolled = unroll(m, sentences, d);
    const bool want_grad = !grad.empty();
    std::vector<Vec> ds(want_grad ? n_utt : 0, Vec(p.sentence_dim, 0.0));
    const std::size_t h = p.hidden_dim;
    const std::size_t L = p.n_labels;
    double loss = 0.0;
    Vec dy(L), dh(h), dz(h);

    for (std::size_t i = 0; i < n_utt; ++i) {
        const auto& u = unrolled[i];
        const Vec& hi = u.hidden.back();
        const std::size_t agent = d.agents[i];
        Vec probs = predict(p, hi, agent);
        loss += cross_entropy(probs, d.labels[i]);
        if (!want_grad) continue;

        dy = probs;
        dy[d.labels[i]] -= 1.0;
        outer_acc_flat(dy, hi, grad.data() + lay.output[agent], h);
        axpy(1.0, dy, grad.subspan(lay.bias_o, L));
        std::fill(dh.begin(), dh.end(), 0.0);
        gemv_t_acc(p.output[agent], dy, dh);

        for (std::size_t k = u.hidden.size(); k-- > 0;) {
            const std::size_t j = u.first + k;
            const Vec& hj = u.hidden[k];
            for (std::size_t r = 0; r < h; ++r) dz[r] = dh[r] * activation_slope(hj[r], p.activation);
            const std::size_t prev_label = previous_label(p, d.labels, j);
            const std::size_t prev_agent = previous_agent(d.agents, j);
            for (std::size_t r = 0; r < h; ++r) grad[lay.input + r * (L + 1) + prev_label] += dz[r];
            axpy(1.0, dz, grad.subspan(lay.bias_h, h));
            outer_acc_flat(dz, sentences[j], grad.data() + lay.sentence, p.sentence_dim);
            gemv_t_acc(p.sentence, dz, ds[j]);
            const Vec& hprev = k > 0 ? u.hidden[k - 1] : u.before;
            if (!hprev.empty()) outer_acc_flat(dz, hprev, grad.data() + lay.recurrent[prev_agent], h);
            if (k > 0) {
                std::fill(dh.begin(), dh.end(), 0.0);
                gemv_t_acc(p.recurrent[prev_agent], dz, dh);
            }
        }
    }
    if (!want_grad) return loss;

    HcnnGradient& hg = *hscratch;
    const std::size_t V = m.lexicon.size();
    for (std::size_t j = 0; j < n_utt; ++j) {
        hcnn_backward(enc[j].trace, m.hcnn, ds[j], hg);
        for (std::size_t c = 0; c < d.tokens[j].size(); ++c) {
            const std::size_t tok = d.tokens[j][c];
            for (std::size_t r = 0; r < m.hcnn.n_features; ++r) grad[lay.embeddings + r * V + tok] += hg.input(r, c);
        }
    }
    for (std::size_t q = 0; q < hg.kernels.size(); ++q) {
        axpy(1.0, hg.kernels[q], grad.subspan(lay.kernels[q], hg.kernels[q].size()));
        std::fill(hg.kernels[q].begin(), hg.kernels[q].end(), 0.0);
    }
    axpy(1.0, hg.biases, grad.subspan(lay.hcnn_biases, hg.biases.size()));
    std::fill(hg.biases.begin(), hg.biases.end(), 0.0);
    return loss;
}

}  // namespace detail

struct LossGrad {
    double loss = 0.0;
    Vec grad;
    std::size_t utterances = 0;
};

struct LossOptions {
    std::size_t threads = 1;
    bool with_grad = true;
    bool with_l2 = true;
};

/// Mean teacher-forced cross-entropy per utterance plus (l2/2)||W||^2 over
/// weight matrices and kernels, with its exact gradient in layout order.
/// Per-dialogue results are reduced in batch order, so the output does not
/// depend on the thread count.
inline LossGrad loss_and_grad(const Model& m, std::span<const EncodedDialogue> batch, const LossOptions& opt = {}) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
    const detail::Layout lay(m);
    const std::size_t threads = std::min(std::max<std::size_t>(1, opt.threads), batch.size());
    LossGrad out;
    if (opt.with_grad) out.grad.assign(lay.total, 0.0);
    std::vector<Vec> scratch(opt.with_grad ? threads : 0);
    std::vector<HcnnGradient> hscratch;
    for (std::size_t t = 0; t < (opt.with_grad ? threads : 0); ++t) hscratch.push_back(HcnnGradient::like(m.hcnn));
    std::vector<double> losses(batch.size());
    double total = 0.0;
    detail::in_waves(
        batch.size(), threads,
        [&](std::size_t i, std::size_t slot) {
            if (opt.with_grad) scratch[slot].assign(lay.total, 0.0);
            losses[i] = detail::dialogue_loss(m, lay, batch[i], opt.with_grad ? std::span<double>(scratch[slot]) : std::span<double>{},
                                              opt.with_grad ? &hscratch[slot] : nullptr);
        },
        [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                total += losses[i];
                if (opt.with_grad) axpy(1.0, scratch[i - begin], out.grad);
            }
        });
    out.utterances = 0;
    for (const auto& d : batch) out.utterances += d.tokens.size();
    if (out.utterances == 0) throw std::invalid_argument("loss_and_grad: batch has no utterances");
    const double inv = 1.0 / static_cast<double>(out.utterances);
    out.loss = total * inv;
    if (opt.with_grad)
        for (double& g : out.grad) g *= inv;
    if (opt.with_l2 && m.hp.l2 > 0.0) {
        out.loss += m.hp.l2 * half_weight_norm(m);
        if (opt.with_grad) {
            std::size_t at = 0;
            visit_params(m, [&](const char*, auto span, bool reg) {
                if (reg)
                    for (std::size_t k = 0; k < span.size(); ++k) out.grad[at + k] += m.hp.l2 * span[k];
                at += span.size();
            });
        }
    }
    return out;
}

inline LossGrad loss_and_grad(const Model& m, std::span<const Dialogue> batch, const LossOptions& opt = {}) {
    const auto enc = encode_dialogues(m, batch);
    return loss_and_grad(m, std::span<const EncodedDialogue>(enc), opt);
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GroupCheck {
    std::string group;
    std::size_t size = 0;
    double max_rel_error = 0.0;
    std::size_t worst = 0;  // index within the group
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GroupCheck> groups;
    double worst() const {
        double w = 0.0;
        for (const auto& g : groups) w = std::max(w, g.max_rel_error);
        return w;
    }
    bool passed(double tol) const { return worst() < tol; }
};

inline constexpr std::size_t grad_check_param_limit = 20000;

/// Relative error floor used by grad_check; below it errors are absolute.
inline constexpr double grad_check_floor = 1e-4;

/// Compares loss_and_grad against central differences of the same loss.
inline GradCheckReport grad_check(const Model& model, std::span<const EncodedDialogue> sample, double eps = 1e-5) {
    const std::size_t n = param_count(model);
    if (n > grad_check_param_limit)
        throw std::invalid_argument("grad_check: model has " + std::to_string(n) + " parameters; finite differences are limited to " +
                                    std::to_string(grad_check_param_limit));
    const auto analytic = loss_and_grad(model, sample).grad;
    Model probe = model;
    auto f = [&](std::span<const double> theta) {
        unflatten(probe, theta);
        return loss_and_grad(probe, sample, {.threads = 1, .with_grad = false}).loss;
    };
    const auto numeric = fd_gradient(f, flatten(model), eps);
    GradCheckReport rep;
    for (const auto& g : param_groups(model)) {
        GroupCheck c;
        c.group = g.name;
        c.size = g.size;
        for (std::size_t k = 0; k < g.size; ++k) {
            const double a = analytic[g.offset + k], b = numeric[g.offset + k];
            const double e = relative_error(a, b, grad_check_floor);
            if (e > c.max_rel_error || k == 0) {
                c.max_rel_error = std::max(c.max_rel_error, e);
                c.worst = k;
                c.analytic = a;
                c.numeric = b;
            }
        }
        rep.groups.push_back(c);
    }
    return rep;
}

inline std::string format_grad_check(const GradCheckReport& rep) {
    std::ostringstream out;
    out << "group\tsize\tmax_rel_error\tanalytic\tnumeric\n";
    out << std::scientific << std::setprecision(6);
    for (const auto& g : rep.groups)
        out << g.group << '\t' << g.size << '\t' << g.max_rel_error << '\t' << g.analytic << '\t' << g.numeric << '\n';
    return out.str();
}

struct MicroProblem {
    Model model;
    std::vector<EncodedDialogue> dialogues;
};

/// Tiny model (3-d words, 4 hidden units, 3 labels, 2 agents) with two random
/// dialogues of at most 3 utterances of at most 7 words. Weights and biases
/// are drawn from [-1, 1] so every gradient coordinate carries signal.
inline MicroProblem make_micro_problem(std::uint64_t seed, std::size_t depth = 2, double l2 = 0.0,
                                       Recurrence recurrence = Recurrence::windowed) {
    Rng rng(seed);
    Hyperparams hp;
    hp.embed_dim = 3;
    hp.hidden_dim = 4;
    hp.depth = depth;
    hp.l2 = l2;
    hp.max_sentence_len = 7;
    hp.min_count = 1;
    hp.init_scale = 1.0;
    hp.recurrence = recurrence;
    std::vector<std::string> toks{std::string(unk_token)};
    for (int w = 0; w < 5; ++w) toks.push_back("w" + std::to_string(w));
    Mat emb(hp.embed_dim, toks.size());
    rng.fill_uniform(emb.data(), -1.0, 1.0);
    MicroProblem mp;
    mp.model = init_model(hp, Lexicon::from_tokens(toks, 1, emb), LabelSet({"x", "y", "z"}), seed ^ 0x9e3779b97f4a7c15ULL);
    rng.fill_uniform(mp.model.hcnn.biases, -1.0, 1.0);
    rng.fill_uniform(mp.model.rcnn.bias_h, -1.0, 1.0);
    rng.fill_uniform(mp.model.rcnn.bias_o, -1.0, 1.0);
    for (int d = 0; d < 2; ++d) {
        EncodedDialogue e;
        e.id = "micro" + std::to_string(d);
        const std::size_t utts = 1 + rng.below(3);
        for (std::size_t i = 0; i < utts; ++i) {
            std::vector<std::size_t> ids(1 + rng.below(7));
            for (auto& t : ids) t = rng.below(toks.size());
            e.tokens.push_back(std::move(ids));
            e.agents.push_back(rng.below(2));
            e.labels.push_back(rng.below(3));
        }
        mp.dialogues.push_back(std::move(e));
    }
    return mp;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
    std::size_t threads = 1;
    std::ostream* progress = nullptr;  // one tab-separated line per epoch
    std::function<void(const Model&)> on_checkpoint;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double heldout_loss = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    std::size_t heldout_dialogues = 0;
};

inline double mean_cross_entropy(const Model& m, std::span<const EncodedDialogue> ds, std::size_t threads = 1) {
    return loss_and_grad(m, ds, {.threads = threads, .with_grad = false, .with_l2 = false}).loss;
}

/// Mini-batch optimisation over seeded shuffles of the training dialogues.
/// The last `heldout_fraction` of the dialogues is held out for early
/// stopping; the best held-out model is kept (and checkpointed).
inline TrainReport train(Model& model, std::span<const Dialogue> dialogues, const TrainOptions& opt = {}) {
    const Hyperparams& hp = model.hp;
    hp.validate();
    if (dialogues.empty()) throw DataError("train: no training dialogues");
    auto all = encode_dialogues(model, dialogues);
    std::erase_if(all, [](const EncodedDialogue& d) { return d.tokens.empty(); });
    if (all.empty()) throw DataError("train: training dialogues contain no utterances");

    TrainReport rep;
    std::size_t n_held = static_cast<std::size_t>(std::floor(hp.heldout_fraction * static_cast<double>(all.size())));
    if (n_held >= all.size()) n_held = 0;
    rep.heldout_dialogues = n_held;
    const std::vector<EncodedDialogue> held(all.end() - static_cast<std::ptrdiff_t>(n_held), all.end());
    all.resize(all.size() - n_held);

    Rng rng(hp.seed);
    Vec x = flatten(model);
    Model work = model;
    Lbfgs lbfgs(LbfgsOptions{hp.lbfgs_history, {}});
    Adam adam(AdamOptions{.learning_rate = hp.learning_rate});
    Sgd sgd(hp.learning_rate);

    std::size_t batch_no = 0;
    std::size_t epoch_no = 0;
    std::vector<EncodedDialogue> batch;
    auto objective = [&](std::span<const double> theta, std::span<double> g) {
        unflatten(work, theta);
        auto lg = loss_and_grad(work, std::span<const EncodedDialogue>(batch), {.threads = opt.threads});
        if (!std::isfinite(lg.loss) || !all_finite(lg.grad)) {
            std::ostringstream msg;
            msg << "non-finite loss in epoch " << epoch_no << ", batch " << batch_no << " (dialogues";
            for (const auto& d : batch) msg << ' ' << d.id;
            msg << ")";
            throw NumericalError(msg.str());
        }
        std::copy(lg.grad.begin(), lg.grad.end(), g.begin());
        return lg.loss;
    };

    double best = std::numeric_limits<double>::infinity();
    Vec best_x = x;
    std::size_t stale = 0;
    std::vector<std::size_t> order(all.size());
    const auto t0 = std::chrono::steady_clock::now();

    for (epoch_no = 1; epoch_no <= hp.max_epochs; ++epoch_no) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(std::span(order));
        double loss_sum = 0.0;
        std::size_t utt_sum = 0;
        for (std::size_t b = 0; b < order.size(); b += hp.batch_size) {
            batch_no = b / hp.batch_size;
            batch.clear();
            std::size_t utts = 0;
            for (std::size_t k = b; k < std::min(order.size(), b + hp.batch_size); ++k) {
                batch.push_back(all[order[k]]);
                utts += all[order[k]].tokens.size();
            }
            Vec g(x.size());
            double fx = objective(x, g);
            loss_sum += fx * static_cast<double>(utts);
            utt_sum += utts;
            switch (hp.optimizer) {
                case OptimizerKind::lbfgs:
                    for (std::size_t it = 0; it < hp.lbfgs_iterations; ++it)
                        if (!lbfgs.iterate(objective, x, fx, g)) break;
                    break;
                case OptimizerKind::adam: adam.step(x, g); break;
                case OptimizerKind::sgd: sgd.step(x, g); break;
            }
        }
        unflatten(work, x);
        EpochStats st;
        st.epoch = epoch_no;
        st.train_loss = loss_sum / static_cast<double>(utt_sum);
        st.heldout_loss = held.empty() ? st.train_loss : mean_cross_entropy(work, held, opt.threads);
        if (!std::isfinite(st.heldout_loss)) throw NumericalError("non-finite held-out loss after epoch " + std::to_string(epoch_no));
        rep.epochs.push_back(st);
        if (opt.progress) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            *opt.progress << std::fixed << std::setprecision(6) << st.epoch << '\t' << st.train_loss << '\t'
                          << st.heldout_loss << '\t' << secs << std::endl;
        }
        if (st.heldout_loss < best) {
            best = st.heldout_loss;
            best_x = x;
            rep.best_epoch = epoch_no;
            stale = 0;
            if (opt.on_checkpoint) {
                Model snap = work;
                snap.meta = {epoch_no, st.train_loss, best};
                opt.on_checkpoint(snap);
            }
        } else if (++stale >= hp.patience && !held.empty()) {
            break;
        }
    }
    unflatten(model, best_x);
    model.meta.epochs = rep.epochs.size();
    model.meta.final_loss = rep.epochs.empty() ? 0.0 : rep.epochs.back().train_loss;
    model.meta.best_heldout = best;
    return rep;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class EvalMode {
    model,     // greedy decoding with the trained model
    majority,  // always the test set's most frequent label
    oracle,    // gold labels (upper-bound self test)
};

inline EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "model") return EvalMode::model;
    if (s == "majority") return EvalMode::majority;
    if (s == "oracle") return EvalMode::oracle;
    throw std::invalid_argument("unknown evaluation mode '" + s + "' (expected model|majority|oracle)");
}

struct EvalReport {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy = 0.0;           // percent
    double majority_baseline = 0.0;  // percent, from the test set itself
    double random_baseline = 0.0;    // percent, uniform guessing over the label set
    std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
};

inline DecodeResult decode_dialogue(const Model& m, const EncodedDialogue& d) {
    return greedy_decode(m.rcnn, m.hcnn, m.lexicon.embeddings, d.tokens, d.agents, m.hp.depth, m.hp.recurrence);
}

inline EvalReport evaluate(const Model& m, std::span<const Dialogue> test, EvalMode mode = EvalMode::model,
                           std::size_t threads = 1) {
    const std::size_t L = m.labels.size();
    EvalReport rep;
    rep.confusion.assign(L, std::vector<std::size_t>(L, 0));
    const auto enc = encode_dialogues(m, test);
    std::vector<std::size_t> gold_counts(L, 0);
    for (const auto& d : enc)
        for (auto l : d.labels) ++gold_counts[l];
    const std::size_t majority = argmax(std::vector<double>(gold_counts.begin(), gold_counts.end()));

    std::vector<std::vector<std::size_t>> predicted(enc.size());
    detail::in_waves(
        enc.size(), threads,
        [&](std::size_t i, std::size_t) {
            if (mode == EvalMode::model) predicted[i] = decode_dialogue(m, enc[i]).labels;
            else if (mode == EvalMode::oracle) predicted[i] = enc[i].labels;
            else predicted[i].assign(enc[i].labels.size(), majority);
        },
        [](std::size_t, std::size_t) {});
    for (std::size_t i = 0; i < enc.size(); ++i)
        for (std::size_t j = 0; j < enc[i].labels.size(); ++j) {
            const auto g = enc[i].labels[j], p = predicted[i][j];
            ++rep.confusion[g][p];
            ++rep.total;
            if (g == p) ++rep.correct;
        }
    auto pct = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : 100.0 * static_cast<double>(a) / static_cast<double>(b); };
    rep.accuracy = pct(rep.correct, rep.total);
    rep.majority_baseline = pct(rep.total == 0 ? 0 : gold_counts[majority], rep.total);
    rep.random_baseline = 100.0 / static_cast<double>(L);
    return rep;
}

/// Accuracy, baselines and a per-label table of gold frequency and recall.
inline std::string format_eval(const EvalReport& rep, const LabelSet& labels) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(6);
    out << "accuracy\t" << rep.accuracy << "\n";
    out << "majority_baseline\t" << rep.majority_baseline << "\n";
    out << "random_baseline\t" << rep.random_baseline << "\n";
    out << "utterances\t" << rep.total << "\n";
    out << "label\ttest_percent\trecall_percent\n";
    for (std::size_t g = 0; g < labels.size(); ++g) {
        std::size_t n = 0;
        for (auto c : rep.confusion[g]) n += c;
        if (n == 0) continue;
        const double share = 100.0 * static_cast<double>(n) / static_cast<double>(rep.total);
        const double recall = 100.0 * static_cast<double>(rep.confusion[g][g]) / static_cast<double>(n);
        out << labels.name(g) << '\t' << share << '\t' << recall << "\n";
    }
    return out.str();
}

}  // namespace discourse
