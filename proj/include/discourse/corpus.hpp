#pragma once

// Dialogue data: act label sets, transcript tokenization, the vocabulary with
// its randomly initialised word vectors, SwDA CSV ingestion and a seeded
// synthetic corpus for desk-scale runs.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "numerics.hpp"
#include "random.hpp"

namespace discourse {

/// Bad or missing input data (maps to CLI exit code 1).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::string_view unk_token = "<unk>";

class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (!index_.emplace(names_[i], i).second) throw std::invalid_argument("duplicate label '" + names_[i] + "'");
    }

    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::string& name(std::size_t id) const { return names_.at(id); }

    std::optional<std::size_t> find(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    std::size_t id(std::string_view name) const {
        if (auto i = find(name)) return *i;
        throw std::invalid_argument("unknown label '" + std::string(name) + "'");
    }

    friend bool operator==(const LabelSet& a, const LabelSet& b) { return a.names_ == b.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Utterance {
    std::vector<std::string> tokens;
    std::size_t agent = 0;  // 0 = caller A, 1 = caller B
    std::size_t act = 0;
    std::string dialogue_id;
    std::size_t position = 0;  // 1-based within the dialogue
};

struct Dialogue {
    std::string id;
    std::vector<Utterance> utterances;
};

inline std::size_t count_utterances(std::span<const Dialogue> ds) {
    std::size_t n = 0;
    for (const auto& d : ds) n += d.utterances.size();
    return n;
}

inline char agent_name(std::size_t agent) { return agent == 0 ? 'A' : 'B'; }

inline std::optional<std::size_t> agent_from_string(std::string_view s) {
    if (s == "A" || s == "a") return 0;
    if (s == "B" || s == "b") return 1;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// SwDA act clustering

struct SwdaClass {
    std::string_view name;
    std::string_view tag;  // clustered SWBD-DAMSL tag
};

/// The 42 clustered classes, most frequent first.
inline constexpr SwdaClass swda_classes[] = {
    {"Statement", "sd"},
    {"Backchannel/Acknowledge", "b"},
    {"Opinion", "sv"},
    {"Abandoned/Uninterpretable", "%"},
    {"Agreement/Accept", "aa"},
    {"Appreciation", "ba"},
    {"Yes-No-Question", "qy"},
    {"Non-verbal", "x"},
    {"Yes-Answers", "ny"},
    {"Conventional-closing", "fc"},
    {"Wh-Question", "qw"},
    {"No-Answers", "nn"},
    {"Response-Acknowledgement", "bk"},
    {"Hedge", "h"},
    {"Declarative-Yes-No-Question", "qy^d"},
    {"Other", "fo_o_fw_\"_by_bc"},
    {"Backchannel-in-question-form", "bh"},
    {"Quotation", "^q"},
    {"Summarize/Reformulate", "bf"},
    {"Affirmative-non-yes-answers", "na"},
    {"Action-directive", "ad"},
    {"Collaborative-Completion", "^2"},
    {"Repeat-phrase", "b^m"},
    {"Open-Question", "qo"},
    {"Rhetorical-Questions", "qh"},
    {"Hold-before-answer/agreement", "^h"},
    {"Reject", "ar"},
    {"Negative-non-no-answers", "ng"},
    {"Signal-non-understanding", "br"},
    {"Other-answers", "no"},
    {"Conventional-opening", "fp"},
    {"Or-Clause", "qrr"},
    {"Dispreferred-answers", "arp_nd"},
    {"3rd-party-talk", "t3"},
    {"Offers/Options/Commits", "oo_co_cc"},
    {"Self-talk", "t1"},
    {"Downplayer", "bd"},
    {"Maybe/Accept-part", "aap_am"},
    {"Tag-Question", "^g"},
    {"Declarative-Wh-Question", "qw^d"},
    {"Apology", "fa"},
    {"Thanking", "ft"},
};

inline LabelSet swda_labels() {
    std::vector<std::string> names;
    for (const auto& c : swda_classes) names.emplace_back(c.name);
    return LabelSet(std::move(names));
}

/// Continuation marker: the utterance resumes the same caller's previous one.
inline constexpr std::string_view swda_continuation_tag = "+";

/// Maps a raw SwDA act tag onto its clustered tag ("+" passes through).
/// Only the first of several comma/semicolon-separated tags is used.
inline std::string cluster_swda_tag(std::string_view raw) {
    std::string tag(raw);
    auto cut = tag.find_first_of(",;");
    if (cut != std::string::npos) tag.resize(cut);
    while (!tag.empty() && std::isspace(static_cast<unsigned char>(tag.back()))) tag.pop_back();
    while (!tag.empty() && std::isspace(static_cast<unsigned char>(tag.front()))) tag.erase(tag.begin());

    if (tag == "qy^d" || tag == "qw^d" || tag == "b^m") return tag;
    if (tag == "nn^e") return "ng";
    if (tag == "ny^e") return "na";
    // drop everything after a caret that follows the base tag
    if (tag.size() > 1) {
        auto caret = tag.find('^', 1);
        if (caret != std::string::npos) tag.resize(caret);
    }
    std::erase_if(tag, [](char c) { return c == '(' || c == ')' || c == '@' || c == '*'; });
    if (tag == "qr" || tag == "qy") return "qy";
    if (tag == "fe" || tag == "ba") return "ba";
    if (tag == "oo" || tag == "co" || tag == "cc") return "oo_co_cc";
    if (tag == "fx" || tag == "sv") return "sv";
    if (tag == "aap" || tag == "am") return "aap_am";
    if (tag == "arp" || tag == "nd") return "arp_nd";
    if (tag == "fo" || tag == "o" || tag == "fw" || tag == "\"" || tag == "by" || tag == "bc")
        return "fo_o_fw_\"_by_bc";
    return tag;
}

/// Class index for a raw tag, or nullopt for continuations and unknown tags.
inline std::optional<std::size_t> swda_class_of(std::string_view raw) {
    const std::string tag = cluster_swda_tag(raw);
    for (std::size_t i = 0; i < std::size(swda_classes); ++i)
        if (swda_classes[i].tag == tag) return i;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {
inline std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

inline void tokenize_plain(std::string piece, std::vector<std::string>& out) {
    std::erase_if(piece, [](char c) {
        return c == '{' || c == '}' || c == '[' || c == ']' || c == '"' || c == '#' || c == '(' || c == ')';
    });
    std::size_t end = piece.size();
    while (end > 0 && std::string_view(",;:.?!").find(piece[end - 1]) != std::string_view::npos) --end;
    std::string word = piece.substr(0, end);
    if (!word.empty() && word != "+" && word != "/") out.push_back(lowercase(word));
    for (std::size_t i = end; i < piece.size(); ++i)
        if (piece[i] == '.' || piece[i] == '?' || piece[i] == '!') out.emplace_back(1, piece[i]);
}
}  // namespace detail

/// Lowercased word tokens. Non-verbal markers ("[laughter]", "<breathing>")
/// stay single tokens, sentence-final . ? ! become their own tokens, commas and
/// transcription markup ({F ...}, +, /, #) are dropped. Never returns an empty
/// list: a blank transcript becomes the UNK marker.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> pieces;
    {
        std::istringstream in{std::string(text)};
        std::string p;
        while (in >> p) pieces.push_back(p);
    }
    std::vector<std::string> out;
    for (std::size_t idx = 0; idx < pieces.size(); ++idx) {
        const std::string& p = pieces[idx];
        if (p[0] == '{' && (p.size() == 1 || (p.size() == 2 && detail::is_alpha(p[1])))) continue;
        if ((p[0] == '[' || p[0] == '<') && p.size() > 1 && detail::is_alpha(p[1])) {
            const char close = p[0] == '[' ? ']' : '>';
            std::string marker = p;
            std::size_t last = idx;
            while (marker.find(close) == std::string::npos && last + 1 < pieces.size())
                marker += "_" + pieces[++last];
            const auto pos = marker.find(close);
            if (pos != std::string::npos) {
                out.push_back(detail::lowercase(marker.substr(0, pos + 1)));
                if (pos + 1 < marker.size()) detail::tokenize_plain(marker.substr(pos + 1), out);
                idx = last;
                continue;
            }
        }
        detail::tokenize_plain(p, out);
    }
    if (out.empty()) out.emplace_back(unk_token);
    return out;
}

// ---------------------------------------------------------------------------
// Lexicon

struct Lexicon {
    std::vector<std::string> tokens;  // id order; tokens[0] is UNK
    std::unordered_map<std::string, std::size_t> index;
    std::size_t min_count = 1;
    Mat embeddings;  // dim x size()

    static constexpr std::size_t unk_id = 0;

    std::size_t size() const noexcept { return tokens.size(); }
    std::size_t dim() const noexcept { return embeddings.rows(); }

    std::size_t id(std::string_view tok) const {
        auto it = index.find(std::string(tok));
        return it == index.end() ? unk_id : it->second;
    }
    std::vector<std::size_t> ids(std::span<const std::string> toks) const {
        std::vector<std::size_t> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(id(t));
        return out;
    }

    /// Token list with UNK first; rebuilds the index.
    static Lexicon from_tokens(std::vector<std::string> toks, std::size_t min_count, Mat embeddings) {
        if (toks.empty() || toks[0] != unk_token) throw std::invalid_argument("lexicon must start with the UNK token");
        if (embeddings.cols() != toks.size()) throw std::invalid_argument("lexicon: embedding/vocabulary size mismatch");
        Lexicon lex;
        lex.tokens = std::move(toks);
        lex.min_count = min_count;
        lex.embeddings = std::move(embeddings);
        for (std::size_t i = 0; i < lex.tokens.size(); ++i)
            if (!lex.index.emplace(lex.tokens[i], i).second)
                throw std::invalid_argument("lexicon: duplicate token '" + lex.tokens[i] + "'");
        return lex;
    }
};

/// Vocabulary of training tokens seen at least `min_count` times, sorted
/// lexicographically after UNK. Word vectors are uniform in [-0.1, 0.1].
inline Lexicon build_lexicon(std::span<const Dialogue> train, std::size_t dim = 25, std::size_t min_count = 2,
                             std::uint64_t seed = 1) {
    if (min_count == 0) throw std::invalid_argument("build_lexicon: min_count must be at least 1");
    if (dim == 0) throw std::invalid_argument("build_lexicon: embedding dimension must be positive");
    std::map<std::string, std::size_t> counts;
    for (const auto& d : train)
        for (const auto& u : d.utterances)
            for (const auto& t : u.tokens) ++counts[t];
    if (counts.empty()) throw DataError("build_lexicon: empty training set");
    std::vector<std::string> toks{std::string(unk_token)};
    for (const auto& [tok, c] : counts)
        if (c >= min_count && tok != unk_token) toks.push_back(tok);
    Mat emb(dim, toks.size());
    Rng rng(seed);
    rng.fill_uniform(emb.data(), -0.1, 0.1);
    return Lexicon::from_tokens(std::move(toks), min_count, std::move(emb));
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {
/// Reads one RFC 4180 record. Returns false at end of input; sets `ok` to
/// false for an unterminated quoted field.
inline bool read_csv_record(std::istream& in, std::vector<std::string>& fields, bool& ok) {
    fields.clear();
    ok = true;
    if (in.peek() == std::char_traits<char>::eof()) return false;
    std::string field;
    bool quoted = false;
    bool after_quote = false;
    char c;
    while (in.get(c)) {
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field += '"';
                } else {
                    quoted = false;
                    after_quote = true;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"' && field.empty() && !after_quote) {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
            after_quote = false;
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            fields.push_back(std::move(field));
            return true;
        } else {
            field += c;
        }
    }
    if (quoted) ok = false;
    if (!field.empty() && field.back() == '\r') field.pop_back();
    fields.push_back(std::move(field));
    return true;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

/// "sw4325", "sw04325" and "4325" all name conversation 4325.
inline std::string normalize_conversation_id(std::string_view raw) {
    std::string s = lowercase(trim(raw));
    if (s.rfind("sw", 0) == 0) s.erase(0, 2);
    while (s.size() > 1 && s[0] == '0') s.erase(s.begin());
    return s;
}

/// Numeric ids order numerically, everything else lexicographically after.
inline bool conversation_less(const std::string& a, const std::string& b) {
    auto numeric = [](const std::string& s) {
        return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
    };
    const bool na = numeric(a), nb = numeric(b);
    if (na != nb) return na;
    if (na && a.size() != b.size()) return a.size() < b.size();
    return a < b;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// SwDA ingestion

struct SwdaColumns {
    std::string conversation = "conversation_no";
    std::string caller = "caller";
    std::string act = "act_tag";
    std::string text = "text";
};

/// key=value lines (keys: conversation, caller, act, text); '#' starts a comment.
inline SwdaColumns load_column_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open column map " + path.string());
    SwdaColumns cols;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key == "conversation") cols.conversation = value;
        else if (key == "caller") cols.caller = value;
        else if (key == "act") cols.act = value;
        else if (key == "text") cols.text = value;
        else throw DataError(path.string() + ":" + std::to_string(lineno) + ": unknown column key '" + key + "'");
    }
    return cols;
}

/// Test-split manifest. A bare id marks a test conversation; "train <id>" and
/// "dev <id>" lines are also accepted. When any train line is present only the
/// listed train ids are used for training; dev ids are held out of both sides.
struct SplitManifest {
    std::vector<std::string> test;
    std::vector<std::string> train;
    std::vector<std::string> dev;
};

inline SplitManifest parse_manifest(std::istream& in, const std::string& origin = "manifest") {
    SplitManifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        std::istringstream fields(line);
        std::string a, b, extra;
        if (!(fields >> a)) continue;
        if (fields >> b) {
            if (fields >> extra) throw DataError(origin + ":" + std::to_string(lineno) + ": too many fields");
            const std::string kind = detail::lowercase(a);
            auto id = detail::normalize_conversation_id(b);
            if (kind == "test") m.test.push_back(id);
            else if (kind == "train") m.train.push_back(id);
            else if (kind == "dev") m.dev.push_back(id);
            else throw DataError(origin + ":" + std::to_string(lineno) + ": unknown split '" + a + "'");
        } else {
            m.test.push_back(detail::normalize_conversation_id(a));
        }
    }
    return m;
}

inline SplitManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open split manifest " + path.string());
    return parse_manifest(in, path.string());
}

struct SwdaOptions {
    SwdaColumns columns;
    std::size_t max_sentence_len = 100;
    std::ostream* log = nullptr;
};

struct ParsedCorpus {
    std::vector<Dialogue> train;
    std::vector<Dialogue> test;
    LabelSet labels;
    std::size_t files = 0;
    std::size_t skipped_rows = 0;
    std::size_t unknown_tags = 0;
    std::size_t merged_continuations = 0;
    std::size_t truncated = 0;
};

namespace detail {
inline std::size_t truncate_utterance(Utterance& u, std::size_t max_len, std::ostream* log) {
    if (max_len == 0 || u.tokens.size() <= max_len) return 0;
    if (log)
        *log << "warning: utterance " << u.position << " of dialogue " << u.dialogue_id << " has "
             << u.tokens.size() << " tokens; truncated to " << max_len << "\n";
    u.tokens.resize(max_len);
    return 1;
}

inline void log_skip(std::ostream* log, const std::filesystem::path& file, std::size_t row, const std::string& why) {
    if (log) *log << "warning: " << file.string() << " row " << row << ": " << why << "; skipped\n";
}
}  // namespace detail

/// Reads one CSV per conversation (searched recursively under `corpus_dir`),
/// clusters act tags to the 42 classes, folds "+" continuations into the same
/// caller's previous utterance and partitions dialogues by the manifest.
inline ParsedCorpus parse_swda(const std::filesystem::path& corpus_dir, const SplitManifest& manifest,
                               const SwdaOptions& opt = {}) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(corpus_dir)) throw DataError("corpus directory not found: " + corpus_dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(corpus_dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .csv files under " + corpus_dir.string());

    ParsedCorpus pc;
    pc.labels = swda_labels();
    pc.files = files.size();
    std::map<std::string, Dialogue, decltype(&detail::conversation_less)> dialogues(&detail::conversation_less);

    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw DataError("cannot open " + file.string());
        std::vector<std::string> header, row;
        bool ok = true;
        if (!detail::read_csv_record(in, header, ok) || !ok) throw DataError("empty or malformed CSV header in " + file.string());
        auto column = [&](const std::string& name) {
            auto it = std::find(header.begin(), header.end(), name);
            if (it == header.end()) throw DataError(file.string() + ": missing column '" + name + "'");
            return static_cast<std::size_t>(it - header.begin());
        };
        const std::size_t c_conv = column(opt.columns.conversation);
        const std::size_t c_caller = column(opt.columns.caller);
        const std::size_t c_act = column(opt.columns.act);
        const std::size_t c_text = column(opt.columns.text);

        std::size_t rowno = 1;
        std::vector<std::optional<std::size_t>> last_by_agent;  // per dialogue, reset per file
        std::string current_id;
        while (detail::read_csv_record(in, row, ok)) {
            ++rowno;
            if (row.size() == 1 && row[0].empty()) continue;
            if (!ok || row.size() != header.size()) {
                ++pc.skipped_rows;
                detail::log_skip(opt.log, file, rowno, "malformed CSV row");
                continue;
            }
            const auto agent = agent_from_string(detail::trim(row[c_caller]));
            if (!agent) {
                ++pc.skipped_rows;
                detail::log_skip(opt.log, file, rowno, "caller '" + row[c_caller] + "' is not A or B");
                continue;
            }
            const std::string id = detail::normalize_conversation_id(row[c_conv]);
            if (id.empty()) {
                ++pc.skipped_rows;
                detail::log_skip(opt.log, file, rowno, "empty conversation id");
                continue;
            }
            Dialogue& dlg = dialogues[id];
            dlg.id = id;
            if (id != current_id) {
                current_id = id;
                last_by_agent.assign(2, std::nullopt);
                for (std::size_t k = 0; k < dlg.utterances.size(); ++k) last_by_agent[dlg.utterances[k].agent] = k;
            }
            const std::string raw_tag = detail::trim(row[c_act]);
            std::vector<std::string> toks = tokenize(row[c_text]);
            if (cluster_swda_tag(raw_tag) == swda_continuation_tag) {
                if (auto prev = last_by_agent[*agent]) {
                    auto& target = dlg.utterances[*prev].tokens;
                    if (target.size() == 1 && target[0] == unk_token) target.clear();
                    if (!(toks.size() == 1 && toks[0] == unk_token)) target.insert(target.end(), toks.begin(), toks.end());
                    if (target.empty()) target.emplace_back(unk_token);
                    ++pc.merged_continuations;
                } else {
                    ++pc.skipped_rows;
                    detail::log_skip(opt.log, file, rowno, "continuation without a previous utterance");
                }
                continue;
            }
            const auto act = swda_class_of(raw_tag);
            if (!act) {
                ++pc.skipped_rows;
                ++pc.unknown_tags;
                detail::log_skip(opt.log, file, rowno, "unrecognised act tag '" + raw_tag + "'");
                continue;
            }
            Utterance u;
            u.tokens = std::move(toks);
            u.agent = *agent;
            u.act = *act;
            u.dialogue_id = id;
            u.position = dlg.utterances.size() + 1;
            last_by_agent[*agent] = dlg.utterances.size();
            dlg.utterances.push_back(std::move(u));
        }
    }

    for (auto& [id, d] : dialogues)
        for (auto& u : d.utterances) pc.truncated += detail::truncate_utterance(u, opt.max_sentence_len, opt.log);

    auto require_known = [&](const std::vector<std::string>& ids, const char* what) {
        for (const auto& id : ids)
            if (!dialogues.contains(id)) throw DataError(std::string("manifest names unknown ") + what + " conversation " + id);
    };
    require_known(manifest.test, "test");
    require_known(manifest.train, "train");
    require_known(manifest.dev, "dev");
    const std::set<std::string> test(manifest.test.begin(), manifest.test.end());
    const std::set<std::string> train(manifest.train.begin(), manifest.train.end());
    const std::set<std::string> dev(manifest.dev.begin(), manifest.dev.end());
    for (auto& [id, d] : dialogues) {
        if (d.utterances.empty()) continue;
        if (test.contains(id)) pc.test.push_back(std::move(d));
        else if (dev.contains(id)) continue;
        else if (train.empty() || train.contains(id)) pc.train.push_back(std::move(d));
    }
    return pc;
}

/// Per-label train/test percentages, most frequent training labels first,
/// with the remaining labels folded into one "Other labels" row.
inline std::string corpus_report(std::span<const Dialogue> train, std::span<const Dialogue> test,
                                 const LabelSet& labels, std::size_t top = 8) {
    std::vector<std::size_t> tr(labels.size(), 0), te(labels.size(), 0);
    for (const auto& d : train)
        for (const auto& u : d.utterances) ++tr.at(u.act);
    for (const auto& d : test)
        for (const auto& u : d.utterances) ++te.at(u.act);
    const double ntr = static_cast<double>(count_utterances(train));
    const double nte = static_cast<double>(count_utterances(test));
    auto pct = [](std::size_t c, double n) { return n > 0 ? 100.0 * static_cast<double>(c) / n : 0.0; };

    std::vector<std::size_t> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return tr[a] > tr[b]; });

    std::ostringstream out;
    out << std::fixed << std::setprecision(1);
    out << std::left << std::setw(32) << "Dialogue Act Label" << std::right << std::setw(10) << "Train (%)"
        << std::setw(10) << "Test (%)" << "\n";
    std::size_t other_tr = 0, other_te = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        const std::size_t l = order[r];
        if (r < top) {
            out << std::left << std::setw(32) << labels.name(l) << std::right << std::setw(10) << pct(tr[l], ntr)
                << std::setw(10) << pct(te[l], nte) << "\n";
        } else {
            other_tr += tr[l];
            other_te += te[l];
        }
    }
    if (order.size() > top)
        out << std::left << std::setw(32) << ("Other labels (" + std::to_string(order.size() - top) + ")") << std::right
            << std::setw(10) << pct(other_tr, ntr) << std::setw(10) << pct(other_te, nte) << "\n";
    out << std::left << std::setw(32) << "Total number of utterances" << std::right << std::setw(10)
        << count_utterances(train) << std::setw(10) << count_utterances(test) << "\n";
    out << std::left << std::setw(32) << "Total number of dialogues" << std::right << std::setw(10) << train.size()
        << std::setw(10) << test.size() << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthOptions {
    std::size_t n_dialogues = 200;
    std::size_t n_acts = 5;
    std::size_t vocab = 60;
    std::uint64_t seed = 7;
    std::size_t mean_length = 12;
    std::size_t length_spread = 4;  // dialogue lengths uniform in mean +- spread
    std::size_t min_words = 3;
    std::size_t max_words = 8;
    std::size_t reply_words = 2;
    double reply_prob = 0.3;
    double switch_prob = 0.8;  // probability the next utterance changes speaker
};

struct SynthCorpus {
    std::vector<Dialogue> train;
    std::vector<Dialogue> test;
    LabelSet labels;
};

inline std::string synth_act_keyword(std::size_t act) { return "kw" + std::to_string(act); }
inline std::string synth_reply_keyword(std::size_t j) { return "re" + std::to_string(j); }

/// The generating rule. An act keyword kwK fixes the act to K; a reply keyword
/// reJ gives (previous act + J + 1) mod n_acts. Returns nullopt when the
/// utterance carries no keyword, or a reply keyword opens the dialogue.
inline std::optional<std::size_t> synth_rule(std::span<const std::string> tokens, std::optional<std::size_t> prev_act,
                                             std::size_t n_acts) {
    for (const auto& t : tokens) {
        if (t.size() < 3) continue;
        const std::string_view prefix(t.data(), 2);
        if (prefix != "kw" && prefix != "re") continue;
        const std::string digits = t.substr(2);
        if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
            continue;
        const std::size_t v = std::stoul(digits);
        if (prefix == "kw") return v < n_acts ? std::optional<std::size_t>(v) : std::nullopt;
        if (!prev_act) return std::nullopt;
        return (*prev_act + v + 1) % n_acts;
    }
    return std::nullopt;
}

/// Two-speaker dialogues labelled by synth_rule, so a model that sees the
/// current utterance and the previous act can label them exactly. The first
/// 90% of dialogues are training data.
inline SynthCorpus synth_corpus(const SynthOptions& o) {
    if (o.n_acts < 2) throw std::invalid_argument("synth_corpus: need at least 2 acts");
    if (o.min_words == 0 || o.min_words > o.max_words) throw std::invalid_argument("synth_corpus: bad word-count range");
    Rng rng(o.seed);
    const std::size_t keywords = o.n_acts + o.reply_words;
    const std::size_t fillers = o.vocab > keywords ? o.vocab - keywords : 1;

    std::vector<std::string> names;
    for (std::size_t a = 0; a < o.n_acts; ++a) names.push_back("act" + std::to_string(a));
    SynthCorpus sc;
    sc.labels = LabelSet(std::move(names));

    std::vector<Dialogue> all;
    const std::size_t lo = o.mean_length > o.length_spread ? o.mean_length - o.length_spread : 1;
    const std::size_t hi = o.mean_length + o.length_spread;
    for (std::size_t d = 0; d < o.n_dialogues; ++d) {
        Dialogue dlg;
        std::ostringstream id;
        id << "synth" << std::setw(4) << std::setfill('0') << d;
        dlg.id = id.str();
        const std::size_t len = lo + rng.below(hi - lo + 1);
        std::size_t agent = rng.below(2);
        std::optional<std::size_t> prev;
        for (std::size_t i = 0; i < len; ++i) {
            if (i > 0 && rng.chance(o.switch_prob)) agent = 1 - agent;
            const std::size_t words = o.min_words + rng.below(o.max_words - o.min_words + 1);
            std::vector<std::string> toks;
            for (std::size_t w = 0; w + 1 < words; ++w) toks.push_back("w" + std::to_string(rng.below(fillers)));
            std::string keyword;
            if (prev && o.reply_words > 0 && rng.chance(o.reply_prob))
                keyword = synth_reply_keyword(rng.below(o.reply_words));
            else
                keyword = synth_act_keyword(rng.below(o.n_acts));
            toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(rng.below(toks.size() + 1)), keyword);
            Utterance u;
            u.act = *synth_rule(toks, prev, o.n_acts);
            u.tokens = std::move(toks);
            u.agent = agent;
            u.dialogue_id = dlg.id;
            u.position = i + 1;
            prev = u.act;
            dlg.utterances.push_back(std::move(u));
        }
        all.push_back(std::move(dlg));
    }
    const std::size_t n_train = (all.size() * 9 + 9) / 10;
    for (std::size_t i = 0; i < all.size(); ++i) (i < n_train ? sc.train : sc.test).push_back(std::move(all[i]));
    return sc;
}

}  // namespace discourse
