#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include <discourse/training.hpp>

using namespace discourse;

namespace {

Model small_model(std::uint64_t seed, const std::vector<Dialogue>& train, const LabelSet& labels,
                  std::size_t hidden = 8, std::size_t dim = 5) {
    Hyperparams hp;
    hp.embed_dim = dim;
    hp.hidden_dim = hidden;
    hp.max_sentence_len = 20;
    hp.min_count = 1;
    hp.seed = seed;
    return init_model(hp, build_lexicon(train, dim, 1, seed), labels, seed);
}

SynthCorpus tiny_synth(std::size_t dialogues = 12, std::uint64_t seed = 3) {
    SynthOptions o;
    o.n_dialogues = dialogues;
    o.mean_length = 5;
    o.length_spread = 2;
    o.seed = seed;
    return synth_corpus(o);
}

std::size_t index_of(const Model& m, const std::string& group) {
    for (const auto& g : param_groups(m))
        if (g.name == group) return g.offset;
    throw std::logic_error("no group " + group);
}

}  // namespace

TEST(Init, SeededRangesAndZeroBiases) {
    const auto sc = tiny_synth();
    const Model a = small_model(5, sc.train, sc.labels), b = small_model(5, sc.train, sc.labels);
    EXPECT_EQ(flatten(a), flatten(b));
    EXPECT_NE(flatten(a), flatten(small_model(6, sc.train, sc.labels)));
    for (double v : a.hcnn.biases) EXPECT_EQ(v, 0.0);
    for (double v : a.rcnn.bias_h) EXPECT_EQ(v, 0.0);
    for (double v : a.rcnn.bias_o) EXPECT_EQ(v, 0.0);
    visit_params(a, [](const char*, auto span, bool) {
        for (double v : span) {
            EXPECT_GE(v, -0.1);
            EXPECT_LE(v, 0.1);
        }
    });
    EXPECT_EQ(Hyperparams{}.embed_dim, 25u);
    EXPECT_EQ(Hyperparams{}.depth, 2u);
}

TEST(Init, RejectsInconsistentDimensions) {
    const auto sc = tiny_synth();
    Hyperparams hp;
    hp.embed_dim = 7;
    EXPECT_THROW(init_model(hp, build_lexicon(sc.train, 5, 1), sc.labels, 1), std::invalid_argument);
    hp.depth = 0;
    EXPECT_THROW(hp.validate(), std::invalid_argument);
}

TEST(Layout, FlattenRoundTripAndGroupOrder) {
    const auto sc = tiny_synth();
    Model m = small_model(1, sc.train, sc.labels);
    const auto groups = param_groups(m);
    std::vector<std::string> names;
    for (const auto& g : groups) names.push_back(g.name);
    EXPECT_EQ(names, (std::vector<std::string>{"embeddings", "hcnn_kernels", "hcnn_biases", "I", "S", "H", "O", "b_h",
                                               "b_o"}));
    EXPECT_EQ(groups.back().offset + groups.back().size, param_count(m));
    Vec x = flatten(m);
    for (auto& v : x) v *= 2.0;
    unflatten(m, x);
    EXPECT_EQ(flatten(m), x);
    EXPECT_THROW(unflatten(m, Vec(3)), std::invalid_argument);
}

TEST(Loss, ZeroModelGivesLogL) {
    const auto sc = tiny_synth();
    Model m = small_model(1, sc.train, sc.labels);
    unflatten(m, Vec(param_count(m), 0.0));
    const auto lg = loss_and_grad(m, std::span<const Dialogue>(sc.train));
    EXPECT_NEAR(lg.loss, std::log(5.0), 1e-12);
    EXPECT_EQ(lg.utterances, count_utterances(sc.train));
}

TEST(Loss, L2TermIsExactlyAdditive) {
    const auto sc = tiny_synth();
    Model m = small_model(2, sc.train, sc.labels);
    m.hp.l2 = 0.0;
    const double plain = loss_and_grad(m, std::span<const Dialogue>(sc.train)).loss;
    m.hp.l2 = 0.37;
    const double reg = loss_and_grad(m, std::span<const Dialogue>(sc.train)).loss;
    EXPECT_EQ(reg, plain + 0.37 * half_weight_norm(m));
    // biases and embeddings carry no penalty
    double expect = 0.0;
    for (const auto& k : m.hcnn.kernels) expect += 0.5 * squared_norm(k);
    expect += 0.5 * squared_norm(m.rcnn.input.data()) + 0.5 * squared_norm(m.rcnn.sentence.data());
    for (const auto& h : m.rcnn.recurrent) expect += 0.5 * squared_norm(h.data());
    for (const auto& o : m.rcnn.output) expect += 0.5 * squared_norm(o.data());
    EXPECT_NEAR(half_weight_norm(m), expect, 1e-12);
}

TEST(Loss, DeterministicAndThreadInvariant) {
    const auto sc = tiny_synth(16);
    const Model m = small_model(3, sc.train, sc.labels);
    const auto enc = encode_dialogues(m, sc.train);
    const auto a = loss_and_grad(m, std::span<const EncodedDialogue>(enc), {.threads = 1});
    const auto b = loss_and_grad(m, std::span<const EncodedDialogue>(enc), {.threads = 1});
    const auto c = loss_and_grad(m, std::span<const EncodedDialogue>(enc), {.threads = 3});
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.grad, b.grad);
    EXPECT_EQ(a.loss, c.loss);
    EXPECT_EQ(a.grad, c.grad);
}

TEST(Loss, AbsentWordsGetZeroEmbeddingGradient) {
    const auto sc = tiny_synth(20);
    const Model m = small_model(4, sc.train, sc.labels);
    const std::vector<Dialogue> batch(sc.train.begin(), sc.train.begin() + 2);
    const auto enc = encode_dialogues(m, batch);
    std::vector<bool> present(m.lexicon.size(), false);
    for (const auto& d : enc)
        for (const auto& u : d.tokens)
            for (auto t : u) present[t] = true;
    const auto g = loss_and_grad(m, std::span<const EncodedDialogue>(enc)).grad;
    const std::size_t V = m.lexicon.size(), base = index_of(m, "embeddings");
    std::size_t absent = 0;
    for (std::size_t t = 0; t < V; ++t) {
        bool any = false;
        for (std::size_t r = 0; r < m.lexicon.dim(); ++r) any = any || g[base + r * V + t] != 0.0;
        EXPECT_EQ(any, present[t]) << m.lexicon.tokens[t];
        absent += !present[t];
    }
    EXPECT_GT(absent, 0u);
}

TEST(Loss, UnknownLabelIsAnError) {
    auto sc = tiny_synth();
    const Model m = small_model(1, sc.train, sc.labels);
    sc.train[0].utterances[0].act = 9;
    EXPECT_THROW(loss_and_grad(m, std::span<const Dialogue>(sc.train)), DataError);
    EXPECT_THROW(loss_and_grad(m, std::span<const Dialogue>{}), std::invalid_argument);
}

TEST(GradCheck, MicroModelsAllGroups) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const std::size_t depth = seed % 2 ? 1 : 2;
        const auto mp = make_micro_problem(seed, depth);
        ASSERT_LE(mp.dialogues.size(), 2u);
        for (const auto& d : mp.dialogues) {
            ASSERT_LE(d.tokens.size(), 3u);
            for (const auto& u : d.tokens) ASSERT_LE(u.size(), 7u);
        }
        const auto rep = grad_check(mp.model, mp.dialogues, 1e-5);
        ASSERT_EQ(rep.groups.size(), 9u);
        for (const auto& g : rep.groups) EXPECT_LT(g.max_rel_error, 1e-6) << "seed " << seed << " group " << g.group;
    }
}

TEST(GradCheck, WithL2AndFullRecurrence) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto reg = make_micro_problem(seed, 2, 0.3);
        EXPECT_TRUE(grad_check(reg.model, reg.dialogues).passed(1e-6)) << format_grad_check(grad_check(reg.model, reg.dialogues));
        // micro dialogues are at most 3 long, so depth 3 leaves nothing truncated
        const auto full = make_micro_problem(seed, 3, 0.0, Recurrence::full);
        EXPECT_TRUE(grad_check(full.model, full.dialogues).passed(1e-6));
        const auto deep = make_micro_problem(seed, 3);
        EXPECT_TRUE(grad_check(deep.model, deep.dialogues).passed(1e-6));
    }
}

TEST(GradCheck, FullRecurrenceTruncatesTheGradientOnly) {
    const auto mp = make_micro_problem(1, 1, 0.0, Recurrence::full);
    EXPECT_GT(grad_check(mp.model, mp.dialogues).worst(), 1e-3);
}

TEST(GradCheck, CoarseStepShowsDiscretisationError) {
    const auto mp = make_micro_problem(1, 2);
    EXPECT_GT(grad_check(mp.model, mp.dialogues, 1e-1).worst(), grad_check(mp.model, mp.dialogues, 1e-5).worst());
}

TEST(GradCheck, ZeroPerturbationOracle) {
    const auto mp = make_micro_problem(2, 2);
    const double a = loss_and_grad(mp.model, std::span<const EncodedDialogue>(mp.dialogues)).loss;
    Model probe = mp.model;
    unflatten(probe, flatten(mp.model));
    EXPECT_EQ(loss_and_grad(probe, std::span<const EncodedDialogue>(mp.dialogues)).loss, a);
}

TEST(GradCheck, RefusesLargeModels) {
    const auto sc = tiny_synth();
    const Model m = small_model(1, sc.train, sc.labels, 200);
    ASSERT_GT(param_count(m), grad_check_param_limit);
    const auto enc = encode_dialogues(m, sc.train);
    EXPECT_THROW(grad_check(m, enc), std::invalid_argument);
}

TEST(Train, OverfitsOneDialogue) {
    const auto sc = tiny_synth(4, 9);
    const std::vector<Dialogue> one{sc.train[0]};
    for (auto kind : {OptimizerKind::lbfgs, OptimizerKind::adam}) {
        Model m = small_model(1, one, sc.labels);
        m.hp.optimizer = kind;
        m.hp.heldout_fraction = 0.0;
        m.hp.max_epochs = kind == OptimizerKind::lbfgs ? 30 : 300;
        m.hp.lbfgs_iterations = 10;
        m.hp.learning_rate = 0.05;
        const auto rep = train(m, one);
        ASSERT_FALSE(rep.epochs.empty());
        const double final_loss = loss_and_grad(m, std::span<const Dialogue>(one)).loss;
        EXPECT_LT(final_loss, 0.1 * std::log(5.0)) << to_string(kind);
        EXPECT_LT(rep.epochs.back().train_loss, rep.epochs.front().train_loss);
    }
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
    const auto sc = tiny_synth(24);
    auto run = [&](std::size_t threads) {
        Model m = small_model(8, sc.train, sc.labels);
        m.hp.max_epochs = 3;
        m.hp.batch_size = 5;
        std::ostringstream progress;
        train(m, sc.train, {.threads = threads, .progress = &progress});
        const std::string log = progress.str();
        EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
        return flatten(m);
    };
    const Vec a = run(1);
    EXPECT_EQ(a, run(1));
    EXPECT_EQ(a, run(4));
}

TEST(Train, ProgressLinesAreTabSeparated) {
    const auto sc = tiny_synth(20);
    Model m = small_model(1, sc.train, sc.labels);
    m.hp.max_epochs = 2;
    std::ostringstream progress;
    std::size_t checkpoints = 0;
    train(m, sc.train, {.progress = &progress, .on_checkpoint = [&](const Model&) { ++checkpoints; }});
    std::istringstream lines(progress.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        ++n;
        EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 3) << line;
        EXPECT_EQ(line.substr(0, line.find('\t')), std::to_string(n));
    }
    EXPECT_EQ(n, 2u);
    EXPECT_GE(checkpoints, 1u);
}

TEST(Train, NonFiniteLossNamesTheBatch) {
    const auto sc = tiny_synth();
    Model m = small_model(1, sc.train, sc.labels);
    m.rcnn.bias_o[0] = std::numeric_limits<double>::infinity();
    try {
        train(m, sc.train);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
    }
}

TEST(Evaluate, OracleMajorityAndRandom) {
    const auto sc = tiny_synth(20);
    const Model m = small_model(1, sc.train, sc.labels);
    const auto oracle = evaluate(m, sc.test, EvalMode::oracle);
    EXPECT_EQ(oracle.accuracy, 100.0);
    EXPECT_EQ(oracle.correct, oracle.total);
    const auto maj = evaluate(m, sc.test, EvalMode::majority);
    EXPECT_EQ(maj.accuracy, maj.majority_baseline);
    EXPECT_EQ(maj.random_baseline, 20.0);
    std::vector<std::size_t> counts(5, 0);
    for (const auto& d : sc.test)
        for (const auto& u : d.utterances) ++counts[u.act];
    EXPECT_NEAR(maj.majority_baseline,
                100.0 * static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                    static_cast<double>(count_utterances(sc.test)),
                1e-12);
    const auto model = evaluate(m, sc.test);
    std::size_t total = 0;
    for (const auto& row : model.confusion)
        for (auto c : row) total += c;
    EXPECT_EQ(total, count_utterances(sc.test));
    EXPECT_EQ(evaluate(m, sc.test, EvalMode::model, 3).confusion, model.confusion);
    EXPECT_NE(format_eval(model, m.labels).find("accuracy\t"), std::string::npos);
    EXPECT_THROW(eval_mode_from_string("best"), std::invalid_argument);
}
