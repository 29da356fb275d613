#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <sstream>

#include <discourse/model_io.hpp>

using namespace discourse;

namespace {

Model random_model(std::uint64_t seed) {
    Rng rng(seed);
    Hyperparams hp;
    hp.embed_dim = 1 + rng.below(4);
    hp.hidden_dim = 1 + rng.below(6);
    hp.depth = 1 + rng.below(3);
    hp.max_sentence_len = 1 + rng.below(30);
    hp.l2 = rng.uniform();
    hp.learning_rate = rng.uniform(0.001, 0.1);
    hp.seed = rng.below(1000000);
    hp.sigmoid = rng.chance(0.5) ? Activation::logistic : Activation::tanh;
    hp.recurrence = rng.chance(0.5) ? Recurrence::windowed : Recurrence::full;
    hp.agents = 1 + rng.below(3);
    std::vector<std::string> toks{"<unk>"};
    for (std::size_t i = 0, n = rng.below(20); i < n; ++i) toks.push_back("tok" + std::to_string(i) + "'s");
    std::vector<std::string> labels;
    for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i) labels.push_back("Label " + std::to_string(i) + "/x");
    Model m = init_model(hp, Lexicon::from_tokens(toks, 2, Mat(hp.embed_dim, toks.size())), LabelSet(labels), seed);
    Vec x = flatten(m);
    for (auto& v : x) v = rng.uniform(-1e3, 1e3) * std::pow(10.0, rng.uniform(-300, 300) / 10.0);
    x[0] = -0.0;
    unflatten(m, x);
    m.meta = {rng.below(50), rng.uniform(), rng.uniform()};
    return m;
}

std::string bytes_of(const Model& m) {
    std::ostringstream out(std::ios::binary);
    save_model(m, out);
    return out.str();
}

}  // namespace

TEST(ModelFile, RoundTripIsBitwise) {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        const Model m = random_model(seed);
        const std::string bytes = bytes_of(m);
        std::istringstream in(bytes, std::ios::binary);
        const Model r = load_model(in);
        const Vec a = flatten(m), b = flatten(r);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            ASSERT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
        EXPECT_EQ(r.lexicon.tokens, m.lexicon.tokens);
        EXPECT_EQ(r.lexicon.min_count, m.lexicon.min_count);
        EXPECT_EQ(r.labels, m.labels);
        EXPECT_EQ(r.hcnn, m.hcnn);
        EXPECT_EQ(r.rcnn, m.rcnn);
        EXPECT_EQ(std::bit_cast<std::uint64_t>(r.hp.l2), std::bit_cast<std::uint64_t>(m.hp.l2));
        EXPECT_EQ(r.hp.sigmoid, m.hp.sigmoid);
        EXPECT_EQ(r.hp.recurrence, m.hp.recurrence);
        EXPECT_EQ(r.hp.seed, m.hp.seed);
        EXPECT_EQ(r.meta.epochs, m.meta.epochs);
        EXPECT_EQ(r.meta.final_loss, m.meta.final_loss);
        EXPECT_EQ(bytes_of(r), bytes);
    }
}

TEST(ModelFile, LayoutPrefix) {
    const std::string bytes = bytes_of(random_model(3));
    EXPECT_EQ(bytes.substr(0, 4), "RCNN");
    std::uint32_t version = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
    EXPECT_EQ(version, model_format_version);
    std::uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    const std::string header = bytes.substr(16, hlen);
    EXPECT_NE(header.find("embed_dim="), std::string::npos);
    EXPECT_NE(header.find("\nvocab "), std::string::npos);
    EXPECT_NE(header.find("\nlabels "), std::string::npos);
    const Model m = random_model(3);
    const std::size_t payload = bytes.size() - 16 - hlen - 8;
    EXPECT_EQ(payload, 8 * param_count(m));
    // first payload value is embeddings(0,0), stored little-endian
    std::uint64_t first = 0;
    for (int i = 0; i < 8; ++i)
        first |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[16 + hlen + 8 + i])) << (8 * i);
    EXPECT_EQ(first, std::bit_cast<std::uint64_t>(m.lexicon.embeddings(0, 0)));
}

TEST(ModelFile, RejectsCorruptInput) {
    const std::string good = bytes_of(random_model(5));
    auto load = [](std::string s) {
        std::istringstream in(s, std::ios::binary);
        return load_model(in);
    };
    EXPECT_THROW(load("XXXX" + good.substr(4)), DataError);
    EXPECT_THROW(load(good.substr(0, good.size() - 3)), DataError);
    EXPECT_THROW(load(good + "x"), DataError);
    std::string bad_version = good;
    bad_version[4] = 9;
    EXPECT_THROW(load(bad_version), DataError);
    EXPECT_THROW(load(""), DataError);
    std::string bad_header = good;
    const auto pos = bad_header.find("hidden_dim=");
    bad_header[pos + 11] = 'z';
    EXPECT_THROW(load(bad_header), DataError);
    EXPECT_THROW(load_model(std::filesystem::path("/nonexistent/model.rcnn")), DataError);
}
