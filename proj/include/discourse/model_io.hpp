#pragma once

// Versioned binary model file.
//
//   bytes 0..3   "RCNN"
//   u32          format version
//   u64          header length in bytes
//   header       UTF-8 text: key=value lines, then "labels N" followed by N
//                label names, then "vocab V" followed by V tokens in id order,
//                one per line
//   u64          payload count
//   payload      little-endian IEEE-754 doubles in the flat parameter order
//                (embeddings, HCNN kernels by (feature, layer), HCNN biases,
//                I, S, H per agent, O per agent, b_h, b_o)
//
// Reals in the header use the shortest representation that round-trips.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "corpus.hpp"
#include "training.hpp"

namespace discourse {

inline constexpr std::array<char, 4> model_magic{'R', 'C', 'N', 'N'};
inline constexpr std::uint32_t model_format_version = 1;

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

inline std::uint64_t get_uint(std::istream& in, int bytes, const char* what) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), bytes)) throw DataError(std::string("model file truncated in ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline std::string format_real(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_real(const std::string& s, const std::string& key) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw DataError("model header: bad real for " + key + ": '" + s + "'");
    return v;
}

inline std::uint64_t parse_count(const std::string& s, const std::string& key) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw DataError("model header: bad integer for " + key + ": '" + s + "'");
    return v;
}

inline void check_line_safe(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of("\r\n") != std::string::npos)
        throw std::invalid_argument(std::string("cannot store ") + what + " '" + s + "' in a model file");
}

}  // namespace detail

inline std::string model_header(const Model& m) {
    const auto& hp = m.hp;
    std::ostringstream h;
    h << "embed_dim=" << hp.embed_dim << "\n"
      << "hidden_dim=" << hp.hidden_dim << "\n"
      << "depth=" << hp.depth << "\n"
      << "l2=" << detail::format_real(hp.l2) << "\n"
      << "optimizer=" << to_string(hp.optimizer) << "\n"
      << "lbfgs_history=" << hp.lbfgs_history << "\n"
      << "lbfgs_iterations=" << hp.lbfgs_iterations << "\n"
      << "learning_rate=" << detail::format_real(hp.learning_rate) << "\n"
      << "batch_size=" << hp.batch_size << "\n"
      << "max_epochs=" << hp.max_epochs << "\n"
      << "patience=" << hp.patience << "\n"
      << "heldout_fraction=" << detail::format_real(hp.heldout_fraction) << "\n"
      << "seed=" << hp.seed << "\n"
      << "max_sentence_len=" << hp.max_sentence_len << "\n"
      << "min_count=" << hp.min_count << "\n"
      << "init_scale=" << detail::format_real(hp.init_scale) << "\n"
      << "sigmoid=" << to_string(hp.sigmoid) << "\n"
      << "recurrence=" << to_string(hp.recurrence) << "\n"
      << "agents=" << hp.agents << "\n"
      << "lexicon_min_count=" << m.lexicon.min_count << "\n"
      << "epochs=" << m.meta.epochs << "\n"
      << "final_loss=" << detail::format_real(m.meta.final_loss) << "\n"
      << "best_heldout=" << detail::format_real(m.meta.best_heldout) << "\n"
      << "parameters=" << param_count(m) << "\n";
    h << "labels " << m.labels.size() << "\n";
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        detail::check_line_safe(m.labels.name(i), "label");
        h << m.labels.name(i) << "\n";
    }
    h << "vocab " << m.lexicon.size() << "\n";
    for (const auto& t : m.lexicon.tokens) {
        detail::check_line_safe(t, "token");
        h << t << "\n";
    }
    return h.str();
}

inline void save_model(const Model& m, std::ostream& out) {
    const std::string header = model_header(m);
    out.write(model_magic.data(), model_magic.size());
    detail::put_u32(out, model_format_version);
    detail::put_u64(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    const Vec flat = flatten(m);
    detail::put_u64(out, flat.size());
    for (double v : flat) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw DataError("failed to write model");
}

inline void save_model(const Model& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    save_model(m, out);
    out.close();
    if (!out) throw DataError("failed to write " + path.string());
}

inline Model load_model(std::istream& in, const std::string& origin = "model") {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != model_magic)
        throw DataError(origin + ": not a model file (bad magic)");
    const auto version = detail::get_uint(in, 4, "version");
    if (version != model_format_version)
        throw DataError(origin + ": unsupported model format version " + std::to_string(version));
    const auto header_len = detail::get_uint(in, 8, "header length");
    if (header_len > (std::uint64_t{1} << 32)) throw DataError(origin + ": implausible header length");
    std::string header(header_len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) throw DataError(origin + ": truncated header");

    std::istringstream hs(header);
    std::map<std::string, std::string> kv;
    std::string line;
    std::vector<std::string> labels, vocab;
    auto read_block = [&](const std::string& count, std::vector<std::string>& dst, const char* what) {
        const auto n = detail::parse_count(count, what);
        for (std::uint64_t i = 0; i < n; ++i) {
            if (!std::getline(hs, line)) throw DataError(origin + ": header ends inside the " + what + " list");
            dst.push_back(line);
        }
    };
    while (std::getline(hs, line)) {
        if (line.starts_with("labels ")) read_block(line.substr(7), labels, "labels");
        else if (line.starts_with("vocab ")) read_block(line.substr(6), vocab, "vocab");
        else {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw DataError(origin + ": malformed header line '" + line + "'");
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw DataError(origin + ": header lacks " + key);
        return it->second;
    };
    auto count = [&](const std::string& key) { return static_cast<std::size_t>(detail::parse_count(get(key), key)); };
    auto real = [&](const std::string& key) { return detail::parse_real(get(key), key); };

    Hyperparams hp;
    try {
        hp.embed_dim = count("embed_dim");
        hp.hidden_dim = count("hidden_dim");
        hp.depth = count("depth");
        hp.l2 = real("l2");
        hp.optimizer = optimizer_from_string(get("optimizer"));
        hp.lbfgs_history = count("lbfgs_history");
        hp.lbfgs_iterations = count("lbfgs_iterations");
        hp.learning_rate = real("learning_rate");
        hp.batch_size = count("batch_size");
        hp.max_epochs = count("max_epochs");
        hp.patience = count("patience");
        hp.heldout_fraction = real("heldout_fraction");
        hp.seed = detail::parse_count(get("seed"), "seed");
        hp.max_sentence_len = count("max_sentence_len");
        hp.min_count = count("min_count");
        hp.init_scale = real("init_scale");
        hp.sigmoid = activation_from_string(get("sigmoid"));
        hp.recurrence = recurrence_from_string(get("recurrence"));
        hp.agents = count("agents");
        hp.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(origin + ": " + e.what());
    }
    if (labels.empty() || vocab.empty()) throw DataError(origin + ": header lacks labels or vocabulary");

    Model m;
    try {
        m = init_model(hp, Lexicon::from_tokens(vocab, count("lexicon_min_count"), Mat(hp.embed_dim, vocab.size())),
                       LabelSet(labels), 0);
    } catch (const std::invalid_argument& e) {
        throw DataError(origin + ": " + e.what());
    }
    m.meta.epochs = count("epochs");
    m.meta.final_loss = real("final_loss");
    m.meta.best_heldout = real("best_heldout");

    const auto n = detail::get_uint(in, 8, "payload count");
    if (n != param_count(m) || n != count("parameters"))
        throw DataError(origin + ": payload has " + std::to_string(n) + " reals, header dimensions need " +
                        std::to_string(param_count(m)));
    Vec flat(n);
    for (auto& v : flat) v = std::bit_cast<double>(detail::get_uint(in, 8, "payload"));
    if (in.peek() != std::char_traits<char>::eof()) throw DataError(origin + ": trailing bytes after payload");
    unflatten(m, flat);
    return m;
}

inline Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file " + path.string());
    return load_model(in, path.string());
}

}  // namespace discourse
