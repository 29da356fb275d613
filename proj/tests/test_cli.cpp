#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <discourse/cli.hpp>

#include "oracles.hpp"

using namespace discourse;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args, const std::string& stdin_text = "") {
    std::ostringstream out, err;
    std::istringstream in(stdin_text);
    const int code = run_cli(args, out, err, in);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string without_model_line(const std::string& report) {
    return report.substr(0, report.rfind("model\t"));
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string l;
    while (std::getline(in, l)) out.push_back(l);
    return out;
}

class CliTest : public ::testing::Test {
protected:
    static fs::path dir;
    static fs::path model;
    static std::vector<std::string> small;

    static void SetUpTestSuite() {
        dir = fs::temp_directory_path() / "discourse_cli_tests";
        fs::remove_all(dir);
        fs::create_directories(dir);
        model = dir / "small.rcnn";
        const auto r = cli(train_args(model));
        ASSERT_EQ(r.code, 0) << r.err;
    }
    static void TearDownTestSuite() { fs::remove_all(dir); }

    static std::vector<std::string> train_args(const fs::path& out, const std::string& threads = "1") {
        std::vector<std::string> a{"--threads", threads, "train", "--synthetic", "--out", out.string(),
                                   "--progress", (dir / "progress.tsv").string()};
        a.insert(a.end(), small.begin(), small.end());
        return a;
    }
};

fs::path CliTest::dir;
fs::path CliTest::model;
std::vector<std::string> CliTest::small{"--synth-dialogues", "30", "--hidden-dim", "8", "--embed-dim", "5",
                                        "--max-epochs", "3", "--seed", "7"};

}  // namespace

TEST(CliSchedule, Examples) {
    auto r = cli({"schedule", "--length", "7"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(lines(r.out).at(1), "7\t2 3 4\t7 6 4 1");
    EXPECT_EQ(lines(cli({"schedule", "--length", "1"}).out).at(1), "1\t1\t1 1");
    EXPECT_EQ(lines(cli({"schedule", "--length", "10"}).out).at(1), "10\t2 3 4 4\t10 9 7 4 1");
    const auto t = lines(cli({"schedule", "--table", "12"}).out);
    EXPECT_EQ(t.size(), 13u);
    EXPECT_EQ(t[8], "8\t2 3 5\t8 7 5 1");
    EXPECT_EQ(cli({"schedule"}).code, 1);
    EXPECT_EQ(cli({"schedule", "--length", "0"}).code, 1);
}

TEST(CliGradcheck, PassesAndIsDeterministic) {
    const auto a = cli({"gradcheck"});
    EXPECT_EQ(a.code, 0) << a.out;
    EXPECT_NE(a.out.find("PASS"), std::string::npos);
    EXPECT_EQ(lines(a.out).size(), 12u);
    EXPECT_EQ(cli({"gradcheck"}).out, a.out);
    const auto coarse = cli({"gradcheck", "--eps", "1e-1"});
    EXPECT_TRUE(coarse.code == 0 || coarse.code == 3);
    EXPECT_NE(coarse.out, a.out);
    EXPECT_EQ(cli({"gradcheck", "--seed", "5", "--depth", "1"}).code, 0);
}

TEST(CliUsage, HelpAndErrors) {
    EXPECT_EQ(cli({"--help"}).code, 0);
    EXPECT_NE(cli({"tag", "--help"}).out.find("TAB"), std::string::npos);
    EXPECT_EQ(cli({}).code, 1);
    EXPECT_EQ(cli({"frobnicate"}).code, 1);
    const auto missing = cli({"train", "--corpus", "/no/such/swda", "--manifest", "m.txt"});
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.err.find("/no/such/swda"), std::string::npos);
    EXPECT_EQ(cli({"train", "--synthetic", "--optimizer", "newton"}).code, 1);
    EXPECT_EQ(cli({"train"}).code, 1);
}

TEST_F(CliTest, TrainWritesAReportAndProgress) {
    const std::string bytes = slurp(model);
    EXPECT_EQ(bytes.substr(0, 4), "RCNN");
    const auto progress = lines(slurp(dir / "progress.tsv"));
    EXPECT_EQ(progress.size(), 3u);
    const Model m = load_model(model);
    EXPECT_EQ(m.hp.hidden_dim, 8u);
    EXPECT_EQ(m.labels.size(), 5u);
}

TEST_F(CliTest, TrainingIsByteReproducible) {
    const auto again = dir / "again.rcnn", threaded = dir / "threaded.rcnn";
    const auto r1 = cli(train_args(again));
    const auto r2 = cli(train_args(threaded, "3"));
    ASSERT_EQ(r1.code, 0);
    ASSERT_EQ(r2.code, 0);
    EXPECT_EQ(slurp(again), slurp(model));
    EXPECT_EQ(slurp(threaded), slurp(model));
    EXPECT_EQ(without_model_line(r1.out), without_model_line(r2.out));
}

TEST_F(CliTest, EvalModes) {
    const auto oracle = cli({"eval", "--model", model.string(), "--synthetic", "--synth-dialogues", "30", "--mode", "oracle"});
    ASSERT_EQ(oracle.code, 0) << oracle.err;
    EXPECT_EQ(lines(oracle.out).at(0), "accuracy\t100.000000");
    const auto maj = cli({"eval", "--model", model.string(), "--synthetic", "--synth-dialogues", "30", "--mode", "majority"});
    const auto l = lines(maj.out);
    EXPECT_EQ(l.at(0).substr(9), l.at(1).substr(18));
    EXPECT_EQ(l.at(2), "random_baseline\t20.000000");
    const auto a = cli({"--threads", "1", "eval", "--model", model.string(), "--synthetic", "--synth-dialogues", "30"});
    const auto b = cli({"--threads", "2", "eval", "--model", model.string(), "--synthetic", "--synth-dialogues", "30"});
    EXPECT_EQ(a.code, 0);
    EXPECT_EQ(a.out, b.out);
    const auto mismatch = cli({"eval", "--model", model.string(), "--synthetic", "--synth-acts", "4"});
    EXPECT_EQ(mismatch.code, 1);
    EXPECT_NE(mismatch.err.find("label set"), std::string::npos);
    EXPECT_EQ(cli({"eval", "--model", (dir / "nope.rcnn").string(), "--synthetic"}).code, 1);
}

TEST_F(CliTest, Tag) {
    const auto empty = cli({"tag", "--model", model.string()}, "");
    EXPECT_EQ(empty.code, 0);
    EXPECT_EQ(empty.out, "");
    const Model m = load_model(model);
    const auto one = cli({"tag", "--model", model.string()}, "A\tyeah .\n");
    ASSERT_EQ(one.code, 0) << one.err;
    ASSERT_EQ(lines(one.out).size(), 1u);
    EXPECT_TRUE(m.labels.find(lines(one.out)[0]).has_value());
    const std::string transcript = "A\tkw1 w3 w4\nB\tre0 w2\nB\tunseen words here\nA\tkw4\n";
    const auto t1 = cli({"tag", "--model", model.string()}, transcript);
    EXPECT_EQ(lines(t1.out).size(), 4u);
    EXPECT_EQ(cli({"tag", "--model", model.string()}, transcript).out, t1.out);
    std::ofstream(dir / "t.txt") << transcript;
    EXPECT_EQ(cli({"tag", "--model", model.string(), "--input", (dir / "t.txt").string()}).out, t1.out);
    const auto bad = cli({"tag", "--model", model.string()}, "A\tfine\nno tab here\n");
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("line 2"), std::string::npos);
    EXPECT_EQ(cli({"tag", "--model", model.string()}, "C\twho\n").code, 1);
}

TEST_F(CliTest, NearestNeighbours) {
    const std::vector<std::string> data{"--synthetic", "--synth-dialogues", "30"};
    auto nn = [&](std::vector<std::string> extra) {
        std::vector<std::string> a{"nn", "--model", model.string()};
        a.insert(a.end(), data.begin(), data.end());
        a.insert(a.end(), extra.begin(), extra.end());
        return cli(a);
    };
    const auto def = nn({"--query", "synth0003"});
    ASSERT_EQ(def.code, 0) << def.err;
    std::size_t rows = 0;
    for (const auto& l : lines(def.out))
        if (!l.empty() && l[0] != '\t' && l.find("synth") != std::string::npos && l.rfind("query", 0) != 0) ++rows;
    EXPECT_EQ(rows, 4u);

    const auto k1 = nn({"--query", "synth0003", "-k", "1"});
    const auto row = lines(k1.out).at(2);
    EXPECT_EQ(row.rfind("1\t", 0), 0u);
    EXPECT_EQ(row.find("synth0003"), std::string::npos);

    EXPECT_EQ(nn({"--query", "nosuch"}).code, 1);
    EXPECT_EQ(nn({}).code, 1);
    std::ofstream(dir / "q.txt") << "A\tkw2 w1\nB\tre1 w5\n";
    EXPECT_EQ(nn({"--query-file", (dir / "q.txt").string(), "--metric", "euclidean"}).code, 0);
}

TEST_F(CliTest, NearestNeighbourRankingMatchesBruteForce) {
    const Model m = load_model(model);
    SynthOptions o;
    o.n_dialogues = 3;
    auto sc = synth_corpus(o);
    std::vector<Dialogue> all = sc.train;
    all.insert(all.end(), sc.test.begin(), sc.test.end());
    std::vector<Vec> vecs;
    for (const auto& d : all) vecs.push_back(dialogue_vector(m, encode_dialogue(m, d)));
    for (const std::string metric : {"cosine", "euclidean"}) {
        for (std::size_t q = 0; q < all.size(); ++q) {
            const auto r = cli({"nn", "--model", model.string(), "--synthetic", "--synth-dialogues", "3", "--query",
                                all[q].id, "-k", "2", "--metric", metric});
            ASSERT_EQ(r.code, 0) << r.err;
            const auto want = metric == "cosine" ? oracle::rank(vecs[q], vecs, oracle::cosine_distance, long(q))
                                                 : oracle::rank(vecs[q], vecs, oracle::euclidean, long(q));
            std::vector<std::string> got;
            for (const auto& l : lines(r.out))
                if (!l.empty() && std::isdigit(static_cast<unsigned char>(l[0]))) got.push_back(l.substr(l.find('\t') + 1, 9));
            ASSERT_EQ(got.size(), 2u);
            EXPECT_EQ(got[0], all[want[0]].id);
            EXPECT_EQ(got[1], all[want[1]].id);
        }
    }
}

TEST(Transcript, Parsing) {
    std::istringstream in("A\tHello there.\r\nB\t\n");
    const auto d = read_transcript(in);
    ASSERT_EQ(d.utterances.size(), 2u);
    EXPECT_EQ(d.utterances[0].tokens, (std::vector<std::string>{"hello", "there", "."}));
    EXPECT_EQ(d.utterances[1].agent, 1u);
    EXPECT_EQ(d.utterances[1].tokens, (std::vector<std::string>{"<unk>"}));
}
