#include <doctest.h>

#include <set>

#include "groundrl/errors.hpp"
#include "groundrl/lang.hpp"

using namespace groundrl;
using namespace groundrl::lang;

namespace {

std::vector<std::vector<int>> tokenize_all(const std::vector<std::string>& lines, const Vocabulary& vocab) {
    std::vector<std::vector<int>> out;
    for (const auto& l : lines) out.push_back(tokenize(l, vocab));
    return out;
}

std::vector<double> row(const ad::Tensor& t, int r) {
    const int d = t.dim(1);
    return {t.data() + r * d, t.data() + (r + 1) * d};
}

}  // namespace

TEST_CASE("tokenizer contract") {
    const Vocabulary vocab = standard_vocabulary();
    CHECK(split_words("Build a supply depot") == std::vector<std::string>{"build", "a", "supply", "depot"});
    CHECK(split_words("BUILD   a Barracks!") == std::vector<std::string>{"build", "a", "barracks"});
    const auto ids = tokenize("Build a supply depot", vocab);
    REQUIRE(ids.size() == 4);
    CHECK(vocab.token(ids[0]) == "build");
    CHECK(vocab.token(ids[3]) == "depot");
    CHECK(tokenize("flibbertigibbet", vocab) == std::vector<int>{Vocabulary::kUnk});
    CHECK_THROWS_AS(tokenize("", vocab), UsageError);
    CHECK_THROWS_AS(tokenize("?!", vocab), UsageError);
}

TEST_CASE("vocabulary ids are dense and round-trip") {
    const Vocabulary vocab = standard_vocabulary();
    CHECK(vocab.token(Vocabulary::kUnk) == "<unk>");
    CHECK(vocab.size() < 300);
    for (int i = 0; i < vocab.size(); ++i) CHECK(vocab.id(vocab.token(i)) == i);
    const Vocabulary back = Vocabulary::deserialize(vocab.serialize());
    CHECK(back.tokens() == vocab.tokens());
}

TEST_CASE("commands longer than sixteen tokens are rejected") {
    const Vocabulary vocab = standard_vocabulary();
    std::string text;
    for (int i = 0; i < 17; ++i) text += "build ";
    CHECK_THROWS_AS(make_command(text, vocab), UsageError);
    CHECK(make_command("Train a marine", vocab).goal == kMarine);
}

TEST_CASE("held-out paraphrases are unseen wordings over known words") {
    const Vocabulary vocab = standard_vocabulary();
    const auto corpus = paraphrase_corpus(1, 1);
    const std::set<std::string> lines(corpus.begin(), corpus.end());
    for (int goal = 0; goal < kNumGoals; ++goal) {
        CHECK_FALSE(heldout_paraphrases(goal).empty());
        for (const auto& h : heldout_paraphrases(goal)) {
            CHECK(lines.count(h) == 0);
            for (const auto& p : paraphrases(goal)) CHECK(p != h);
            for (int id : tokenize(h, vocab)) CHECK(id != Vocabulary::kUnk);
            CHECK(goal_of(h) == goal);
        }
        CHECK(goal_of(canonical_command(goal)) == goal);
    }
}

TEST_CASE("word2vec groups interchangeable verbs") {
    const Vocabulary vocab = standard_vocabulary();
    Word2VecConfig cfg;
    cfg.dim = 32;
    cfg.epochs = 3;
    const auto table = train_word2vec(tokenize_all(paraphrase_corpus(3, 10), vocab), vocab.size(), cfg);
    CHECK(cosine(table, vocab.id("build"), vocab.id("construct")) >
          cosine(table, vocab.id("build"), vocab.id("marine")));
}

TEST_CASE("word2vec is deterministic per seed") {
    const Vocabulary vocab = standard_vocabulary();
    Word2VecConfig cfg;
    cfg.dim = 16;
    cfg.epochs = 1;
    const auto corpus = tokenize_all(paraphrase_corpus(1, 2), vocab);
    CHECK(train_word2vec(corpus, vocab.size(), cfg) == train_word2vec(corpus, vocab.size(), cfg));
}

TEST_CASE("alternating corpus pulls its two words together") {
    Vocabulary vocab;
    const int a = vocab.add("a"), b = vocab.add("b");
    std::vector<int> sentence;
    for (int i = 0; i < 200; ++i) sentence.push_back(i % 2 ? b : a);
    const std::vector<std::vector<int>> corpus{sentence};
    Word2VecConfig cfg;
    cfg.dim = 16;
    cfg.epochs = 0;
    const double before = cosine(train_word2vec(corpus, vocab.size(), cfg), a, b);
    cfg.epochs = 20;
    const double after = cosine(train_word2vec(corpus, vocab.size(), cfg), a, b);
    CHECK(after > before);
}

TEST_CASE("degenerate corpus is a configuration error") {
    const std::vector<std::vector<int>> corpus{{2, 2, 2}};
    CHECK_THROWS_AS(train_word2vec(corpus, 3, {}), ConfigError);
}

TEST_CASE("command encoder shape, determinism and order sensitivity") {
    const Vocabulary vocab = standard_vocabulary();
    std::mt19937_64 rng(4);
    ad::ParamStore store;
    CommandEncoder enc(store, "cmd", vocab.size(), 128, 256, rng);
    const std::vector<std::vector<int>> seqs{tokenize("build depot", vocab), tokenize("depot build", vocab),
                                             tokenize("build a supply depot now please", vocab),
                                             tokenize("build depot", vocab)};
    ad::Graph g;
    const auto& out = enc(store, g, seqs).value();
    REQUIRE(out.shape() == ad::Shape{4, 256});
    CHECK(row(out, 0) == row(out, 3));
    double diff = 0.0;
    for (int j = 0; j < 256; ++j) diff += std::abs(out[static_cast<std::size_t>(j)] - out[static_cast<std::size_t>(256 + j)]);
    CHECK(diff > 1e-6);
    CHECK_THROWS_AS(enc(store, g, std::vector<std::vector<int>>{{}}), UsageError);
}

TEST_CASE("ragged batches match per-command encoding") {
    const Vocabulary vocab = standard_vocabulary();
    std::mt19937_64 rng(5);
    ad::ParamStore store;
    CommandEncoder enc(store, "cmd", vocab.size(), 8, 12, rng);
    const std::vector<std::vector<int>> seqs{tokenize("train a marine", vocab), tokenize("mine", vocab)};
    ad::Graph g;
    const auto both = enc(store, g, seqs).value();
    for (int i = 0; i < 2; ++i) {
        ad::Graph gi;
        const auto single = enc(store, gi, std::span(seqs).subspan(static_cast<std::size_t>(i), 1)).value();
        const auto r = row(both, i), s = row(single, 0);
        for (std::size_t j = 0; j < r.size(); ++j) CHECK(r[j] == doctest::Approx(s[j]).epsilon(1e-12));
    }
}

TEST_CASE("zero LSTM weights give a zero command embedding") {
    std::mt19937_64 rng(0);
    ad::ParamStore store;
    CommandEncoder enc(store, "cmd", 10, 8, 16, rng);
    for (auto& p : store.params())
        if (p.name.find("lstm") != std::string::npos) p.value.fill(0.0);
    ad::Graph g;
    for (double v : enc(store, g, std::vector<std::vector<int>>{{2, 3, 4}}).value().values()) CHECK(v == 0.0);
}

TEST_CASE("gradients reach only the word rows used") {
    std::mt19937_64 rng(1);
    ad::ParamStore store;
    CommandEncoder enc(store, "cmd", 12, 6, 8, rng);
    ad::Graph g;
    const std::vector<std::vector<int>> seqs{{3, 5, 7}, {4}};
    g.backward(ad::sum_squares(enc(store, g, seqs)));
    const auto& grad = store["cmd.embed.table"].grad;
    for (int r = 0; r < 12; ++r) {
        double mag = 0.0;
        for (int j = 0; j < 6; ++j) mag += std::abs(grad[static_cast<std::size_t>(r * 6 + j)]);
        const bool used = r == 3 || r == 4 || r == 5 || r == 7;
        INFO("row " << r);
        CHECK((mag > 0.0) == used);
    }
}

TEST_CASE("word table loading and freezing") {
    std::mt19937_64 rng(1);
    ad::ParamStore store;
    CommandEncoder enc(store, "cmd", 5, 4, 4, rng);
    ad::Tensor table(ad::Shape{5, 4}, 0.5);
    enc.load_word_table(store, table);
    CHECK(store["cmd.embed.table"].value == table);
    CHECK_THROWS_AS(enc.load_word_table(store, ad::Tensor(ad::Shape{4, 4})), DimensionError);
    enc.freeze_words(store, true);
    CHECK_FALSE(store["cmd.embed.table"].trainable);
}
