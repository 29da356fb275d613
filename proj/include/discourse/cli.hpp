#pragma once

// The `discourse` command-line tool: train, eval, tag, nn, gradcheck and
// schedule subcommands. run_cli is the whole program minus main(), so tests
// can drive it with in-memory streams.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "hcnn.hpp"
#include "model_io.hpp"
#include "rcnn.hpp"
#include "training.hpp"

namespace discourse {

enum ExitCode : int {
    exit_ok = 0,
    exit_data_error = 1,
    exit_numerical_failure = 2,
    exit_gradcheck_failure = 3,
};

inline constexpr double gradcheck_tolerance = 1e-6;

inline constexpr const char* transcript_help =
    "Transcripts are UTF-8 text with one utterance per line: the speaker tag A or B, "
    "a TAB, then the utterance text. The lines form a single dialogue in order.";

/// Parses the agent<TAB>text transcript format into one unlabelled dialogue.
inline Dialogue read_transcript(std::istream& in, const std::string& id = "transcript") {
    Dialogue d;
    d.id = id;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(id + ": line " + std::to_string(lineno) + ": expected 'A<TAB>text' or 'B<TAB>text'");
        const auto agent = agent_from_string(line.substr(0, tab));
        if (!agent)
            throw DataError(id + ": line " + std::to_string(lineno) + ": unknown speaker tag '" + line.substr(0, tab) +
                            "' (expected A or B)");
        Utterance u;
        u.tokens = tokenize(line.substr(tab + 1));
        u.agent = *agent;
        u.dialogue_id = id;
        u.position = lineno;
        d.utterances.push_back(std::move(u));
    }
    return d;
}

/// Hidden state after greedily decoding a whole dialogue: its discourse vector.
inline Vec dialogue_vector(const Model& m, const EncodedDialogue& d) {
    if (d.tokens.empty()) throw DataError("dialogue " + d.id + " has no utterances");
    return decode_dialogue(m, d).hidden.back();
}

namespace detail {

struct CorpusFlags {
    std::string corpus;
    bool synthetic = false;
    std::string manifest;
    std::string columns;
    std::string log;
    std::size_t synth_dialogues = 200;
    std::size_t synth_acts = 5;
    std::size_t synth_vocab = 60;
    std::uint64_t synth_seed = 7;

    void attach(CLI::App& app) {
        app.add_option("--corpus", corpus, "SwDA directory of per-conversation CSV files");
        app.add_flag("--synthetic", synthetic, "use the built-in synthetic corpus instead of SwDA");
        app.add_option("--manifest", manifest, "split manifest (one test conversation id per line)");
        app.add_option("--columns", columns, "column map file (conversation=, caller=, act=, text=)");
        app.add_option("--log", log, "file for ingestion warnings (default: stderr)");
        app.add_option("--synth-dialogues", synth_dialogues, "synthetic dialogues")->capture_default_str();
        app.add_option("--synth-acts", synth_acts, "synthetic act count")->capture_default_str();
        app.add_option("--synth-vocab", synth_vocab, "synthetic vocabulary size")->capture_default_str();
        app.add_option("--synth-seed", synth_seed, "synthetic corpus seed")->capture_default_str();
    }
};

struct LoadedCorpus {
    std::vector<Dialogue> train;
    std::vector<Dialogue> test;
    LabelSet labels;
};

inline LoadedCorpus load_corpus(const CorpusFlags& f, std::size_t max_sentence_len, std::ostream& err) {
    if (f.synthetic == !f.corpus.empty()) throw DataError("give exactly one of --corpus DIR or --synthetic");
    if (f.synthetic) {
        SynthOptions o;
        o.n_dialogues = f.synth_dialogues;
        o.n_acts = f.synth_acts;
        o.vocab = f.synth_vocab;
        o.seed = f.synth_seed;
        auto sc = synth_corpus(o);
        return {std::move(sc.train), std::move(sc.test), std::move(sc.labels)};
    }
    if (!std::filesystem::is_directory(f.corpus)) throw DataError("corpus directory not found: " + f.corpus);
    if (f.manifest.empty()) throw DataError("--manifest is required with --corpus");
    SwdaOptions opt;
    opt.max_sentence_len = max_sentence_len;
    if (!f.columns.empty()) opt.columns = load_column_map(f.columns);
    std::ofstream log_file;
    if (!f.log.empty()) {
        log_file.open(f.log);
        if (!log_file) throw DataError("cannot open log file " + f.log);
        opt.log = &log_file;
    } else {
        opt.log = &err;
    }
    auto pc = parse_swda(f.corpus, load_manifest(f.manifest), opt);
    if (pc.skipped_rows > 0 || pc.unknown_tags > 0)
        err << "ingestion: skipped " << pc.skipped_rows << " rows, " << pc.unknown_tags << " unknown act tags\n";
    return {std::move(pc.train), std::move(pc.test), std::move(pc.labels)};
}

inline void require_same_labels(const Model& m, const LabelSet& data) {
    if (!(m.labels == data))
        throw DataError("label set of the data (" + std::to_string(data.size()) +
                        " labels) does not match the model's (" + std::to_string(m.labels.size()) + " labels)");
}

inline std::string joined_tokens(const Utterance& u) {
    std::string s;
    for (const auto& t : u.tokens) {
        if (!s.empty()) s += ' ';
        s += t;
    }
    return s;
}

}  // namespace detail

/// Runs the tool on `args` (without the program name). Returns the exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                   std::istream& in = std::cin) {
    CLI::App app{"Convolutional sentence and recurrent discourse models for dialogue-act tagging", "discourse"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer(transcript_help);
    std::size_t threads = default_threads();
    app.add_option("--threads", threads, "worker threads (results do not depend on this)")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model and write it to --out");
    detail::CorpusFlags train_data;
    train_data.attach(*train_cmd);
    Hyperparams hp;
    std::string optimizer = to_string(hp.optimizer), sigmoid = to_string(hp.sigmoid),
                recurrence = to_string(hp.recurrence);
    std::string model_out = "model.rcnn", progress_path, checkpoint_path;
    train_cmd->add_option("--out", model_out, "output model file")->capture_default_str();
    train_cmd->add_option("--progress", progress_path, "TSV progress file: epoch, loss, held-out loss, seconds (default: stderr)");
    train_cmd->add_option("--checkpoint", checkpoint_path, "rewrite this model file whenever held-out loss improves");
    train_cmd->add_option("--seed", hp.seed, "model initialisation and batch-order seed")->capture_default_str();
    train_cmd->add_option("--embed-dim", hp.embed_dim, "word and sentence vector length")->capture_default_str();
    train_cmd->add_option("--hidden-dim", hp.hidden_dim, "discourse hidden layer size")->capture_default_str();
    train_cmd->add_option("--depth", hp.depth, "recurrence truncation depth")->capture_default_str();
    train_cmd->add_option("--l2", hp.l2, "L2 weight on weight matrices and kernels")->capture_default_str();
    train_cmd->add_option("--optimizer", optimizer, "lbfgs | adam | sgd")->capture_default_str();
    train_cmd->add_option("--lbfgs-history", hp.lbfgs_history, "L-BFGS curvature pairs")->capture_default_str();
    train_cmd->add_option("--lbfgs-iterations", hp.lbfgs_iterations, "L-BFGS steps per mini-batch")->capture_default_str();
    train_cmd->add_option("--learning-rate", hp.learning_rate, "adam / sgd step size")->capture_default_str();
    train_cmd->add_option("--batch-size", hp.batch_size, "dialogues per mini-batch")->capture_default_str();
    train_cmd->add_option("--max-epochs", hp.max_epochs, "epoch limit")->capture_default_str();
    train_cmd->add_option("--patience", hp.patience, "epochs without held-out improvement before stopping")->capture_default_str();
    train_cmd->add_option("--heldout-fraction", hp.heldout_fraction, "trailing share of training dialogues held out")->capture_default_str();
    train_cmd->add_option("--max-sentence-len", hp.max_sentence_len, "longest supported utterance")->capture_default_str();
    train_cmd->add_option("--min-count", hp.min_count, "minimum training count for a vocabulary word")->capture_default_str();
    train_cmd->add_option("--init-scale", hp.init_scale, "uniform initialisation half-width")->capture_default_str();
    train_cmd->add_option("--sigmoid", sigmoid, "logistic | tanh")->capture_default_str();
    train_cmd->add_option("--recurrence", recurrence, "windowed | full")->capture_default_str();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "greedy-decode a test split and report accuracy");
    detail::CorpusFlags eval_data;
    eval_data.attach(*eval_cmd);
    std::string eval_model, eval_mode = "model", eval_split = "test";
    eval_cmd->add_option("--model", eval_model, "model file")->required();
    eval_cmd->add_option("--mode", eval_mode, "model | majority | oracle")->capture_default_str();
    eval_cmd->add_option("--split", eval_split, "test | train")->capture_default_str();

    // tag
    auto* tag_cmd = app.add_subcommand("tag", "tag a transcript, one act name per input line");
    std::string tag_model, tag_input = "-";
    tag_cmd->add_option("--model", tag_model, "model file")->required();
    tag_cmd->add_option("--input", tag_input, "transcript file, - for stdin")->capture_default_str();
    tag_cmd->footer(transcript_help);

    // nn
    auto* nn_cmd = app.add_subcommand("nn", "nearest dialogues by discourse vector");
    detail::CorpusFlags nn_data;
    nn_data.attach(*nn_cmd);
    std::string nn_model, nn_query, nn_query_file, nn_metric = "cosine";
    std::size_t nn_k = 4;
    nn_cmd->add_option("--model", nn_model, "model file")->required();
    auto* q_id = nn_cmd->add_option("--query", nn_query, "dialogue id from the corpus");
    auto* q_file = nn_cmd->add_option("--query-file", nn_query_file, "transcript file used as the query");
    q_id->excludes(q_file);
    nn_cmd->add_option("-k,--k", nn_k, "neighbours to report")->capture_default_str();
    nn_cmd->add_option("--metric", nn_metric, "cosine | euclidean")->capture_default_str();
    nn_cmd->footer(transcript_help);

    // gradcheck
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradient on a micro model");
    std::uint64_t gc_seed = 1;
    double gc_eps = 1e-5, gc_l2 = 0.0;
    std::size_t gc_depth = 2;
    std::string gc_recurrence = "windowed";
    gc_cmd->add_option("--seed", gc_seed, "micro model seed")->capture_default_str();
    gc_cmd->add_option("--eps", gc_eps, "central-difference step")->capture_default_str();
    gc_cmd->add_option("--depth", gc_depth, "truncation depth")->capture_default_str();
    gc_cmd->add_option("--l2", gc_l2, "L2 weight")->capture_default_str();
    gc_cmd->add_option("--recurrence", gc_recurrence, "windowed | full")->capture_default_str();

    // schedule
    auto* sch_cmd = app.add_subcommand("schedule", "print kernel sizes and layer lengths for sentence lengths");
    std::size_t sch_length = 0, sch_table = 0;
    auto* o_len = sch_cmd->add_option("--length", sch_length, "sentence length");
    auto* o_tab = sch_cmd->add_option("--table", sch_table, "print every length from 1 to this value");
    o_len->excludes(o_tab);

    std::vector<std::string> argv_store{"discourse"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_data_error;
    }

    try {
        if (train_cmd->parsed()) {
            hp.optimizer = optimizer_from_string(optimizer);
            hp.sigmoid = activation_from_string(sigmoid);
            hp.recurrence = recurrence_from_string(recurrence);
            hp.validate();
            auto data = detail::load_corpus(train_data, hp.max_sentence_len, err);
            auto lex = build_lexicon(data.train, hp.embed_dim, hp.min_count, hp.seed);
            Model model = init_model(hp, std::move(lex), data.labels, hp.seed);

            std::ofstream progress_file;
            std::ostream* progress = &err;
            if (!progress_path.empty()) {
                progress_file.open(progress_path);
                if (!progress_file) throw DataError("cannot open progress file " + progress_path);
                progress = &progress_file;
            }
            TrainOptions topt;
            topt.threads = threads;
            topt.progress = progress;
            if (!checkpoint_path.empty())
                topt.on_checkpoint = [&](const Model& m) { save_model(m, std::filesystem::path(checkpoint_path)); };

            out << corpus_report(data.train, data.test, data.labels);
            out << "vocabulary\t" << model.lexicon.size() << "\n";
            out << "parameters\t" << param_count(model) << "\n";
            const auto rep = train(model, data.train, topt);
            save_model(model, std::filesystem::path(model_out));
            out << std::fixed << std::setprecision(6);
            out << "epochs\t" << rep.epochs.size() << "\n";
            out << "best_epoch\t" << rep.best_epoch << "\n";
            out << "final_train_loss\t" << model.meta.final_loss << "\n";
            out << "best_heldout_loss\t" << model.meta.best_heldout << "\n";
            if (!data.test.empty()) out << format_eval(evaluate(model, data.test, EvalMode::model, threads), model.labels);
            out << "model\t" << model_out << "\n";
            return exit_ok;
        }
        if (eval_cmd->parsed()) {
            const Model model = load_model(std::filesystem::path(eval_model));
            const auto mode = eval_mode_from_string(eval_mode);
            if (eval_split != "test" && eval_split != "train") throw DataError("--split must be test or train");
            auto data = detail::load_corpus(eval_data, model.hp.max_sentence_len, err);
            detail::require_same_labels(model, data.labels);
            const auto& split = eval_split == "test" ? data.test : data.train;
            if (split.empty()) throw DataError("the " + eval_split + " split is empty");
            out << format_eval(evaluate(model, split, mode, threads), model.labels);
            return exit_ok;
        }
        if (tag_cmd->parsed()) {
            const Model model = load_model(std::filesystem::path(tag_model));
            Dialogue d;
            if (tag_input == "-") {
                d = read_transcript(in, "stdin");
            } else {
                std::ifstream f(tag_input);
                if (!f) throw DataError("cannot open transcript " + tag_input);
                d = read_transcript(f, tag_input);
            }
            if (d.utterances.empty()) return exit_ok;
            for (auto& u : d.utterances) u.act = 0;
            const auto enc = encode_dialogue(model, d);
            for (auto label : decode_dialogue(model, enc).labels) out << model.labels.name(label) << "\n";
            return exit_ok;
        }
        if (nn_cmd->parsed()) {
            const Model model = load_model(std::filesystem::path(nn_model));
            const auto metric = metric_from_string(nn_metric);
            if (nn_query.empty() == nn_query_file.empty()) throw DataError("give exactly one of --query or --query-file");
            auto data = detail::load_corpus(nn_data, model.hp.max_sentence_len, err);
            detail::require_same_labels(model, data.labels);
            std::vector<Dialogue> all = std::move(data.train);
            for (auto& d : data.test) all.push_back(std::move(d));
            std::erase_if(all, [](const Dialogue& d) { return d.utterances.empty(); });
            std::vector<Vec> vectors;
            vectors.reserve(all.size());
            for (const auto& d : all) vectors.push_back(dialogue_vector(model, encode_dialogue(model, d)));

            std::optional<std::size_t> self;
            Vec query;
            std::string query_name;
            if (!nn_query.empty()) {
                for (std::size_t i = 0; i < all.size() && !self; ++i)
                    if (all[i].id == nn_query || all[i].id == detail::normalize_conversation_id(nn_query)) self = i;
                if (!self) throw DataError("unknown dialogue id " + nn_query);
                query = vectors[*self];
                query_name = all[*self].id;
            } else {
                std::ifstream f(nn_query_file);
                if (!f) throw DataError("cannot open transcript " + nn_query_file);
                Dialogue d = read_transcript(f, nn_query_file);
                for (auto& u : d.utterances) u.act = 0;
                query = dialogue_vector(model, encode_dialogue(model, d));
                query_name = nn_query_file;
            }
            const std::size_t available = all.size() - (self ? 1 : 0);
            if (nn_k == 0 || nn_k > available)
                throw DataError("k must lie in 1.." + std::to_string(available) + " for this corpus");
            const auto hits = nearest_neighbours(query, vectors, nn_k, metric, self);
            out << std::fixed << std::setprecision(6);
            out << "query\t" << query_name << "\n";
            out << "rank\tdialogue\tdistance\n";
            for (std::size_t r = 0; r < hits.size(); ++r) {
                const auto& d = all[hits[r].index];
                out << (r + 1) << '\t' << d.id << '\t' << hits[r].distance << "\n";
                for (const auto& u : d.utterances)
                    out << "\t" << agent_name(u.agent) << ": " << detail::joined_tokens(u) << "\n";
            }
            return exit_ok;
        }
        if (gc_cmd->parsed()) {
            const auto mp = make_micro_problem(gc_seed, gc_depth, gc_l2, recurrence_from_string(gc_recurrence));
            const auto rep = grad_check(mp.model, mp.dialogues, gc_eps);
            out << format_grad_check(rep);
            out << std::scientific << std::setprecision(6) << "worst\t" << rep.worst() << "\n";
            const bool ok = rep.passed(gradcheck_tolerance);
            out << (ok ? "PASS" : "FAIL") << "\n";
            return ok ? exit_ok : exit_gradcheck_failure;
        }
        if (sch_cmd->parsed()) {
            if (sch_length == 0 && sch_table == 0) throw DataError("give --length L (L >= 1) or --table L");
            const std::size_t lo = sch_table ? 1 : sch_length, hi = sch_table ? sch_table : sch_length;
            out << "length\tkernels\tlengths\n";
            for (std::size_t l = lo; l <= hi; ++l) {
                const auto s = schedule_for(l);
                out << l << '\t';
                for (std::size_t i = 0; i < s.sizes.size(); ++i) out << (i ? " " : "") << s.sizes[i];
                out << '\t';
                const auto lens = s.lengths();
                for (std::size_t i = 0; i < lens.size(); ++i) out << (i ? " " : "") << lens[i];
                out << "\n";
            }
            return exit_ok;
        }
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << "\n";
        return exit_numerical_failure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_data_error;
    }
    return exit_ok;
}

inline int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr, std::cin);
}

}  // namespace discourse
