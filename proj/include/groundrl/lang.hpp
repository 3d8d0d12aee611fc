#pragma once

// Commands in natural language: vocabulary, tokenizer, the synthetic
// paraphrase corpus, skip-gram word vectors and the recurrent command encoder.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "groundrl/layers.hpp"

namespace groundrl::lang {

// The five goals, in the order a narrator would give them.
enum Goal : int { kWorker = 0, kCollect, kDepot, kBarracks, kMarine };
inline constexpr int kNumGoals = 5;

std::string_view goal_name(int goal);
std::string_view canonical_command(int goal);

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr std::size_t kMaxSize = 50000;

    Vocabulary();
    // Tokens are added in the given order; duplicates are ignored.
    explicit Vocabulary(std::span<const std::string> tokens);

    int add(const std::string& token);
    int id(std::string_view token) const;  // kUnk when unknown
    bool contains(std::string_view token) const;
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::string serialize() const;  // one token per line
    static Vocabulary deserialize(std::string_view text);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Lowercases and splits on anything that is not a letter or digit.
std::vector<std::string> split_words(std::string_view text);
// Throws UsageError on empty text or text without a single word.
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);

inline constexpr int kMaxCommandLength = 16;

struct Command {
    std::string text;
    std::vector<int> ids;
    std::optional<int> goal;
};

// Throws UsageError for empty or over-long commands.
Command make_command(std::string_view text, const Vocabulary& vocab, std::optional<int> goal = std::nullopt);

// Paraphrases used for dataset commands, and a disjoint held-out set of other
// wordings built from the same words.
const std::vector<std::string>& paraphrases(int goal);
const std::vector<std::string>& heldout_paraphrases(int goal);
// Goal of a known paraphrase (training or held-out), if any.
std::optional<int> goal_of(std::string_view text);

// Training paraphrases plus filler sentences, shuffled deterministically.
// Held-out wordings never appear verbatim.
std::vector<std::string> paraphrase_corpus(std::uint64_t seed, int repeats = 20);
// Vocabulary of every word the corpus generator can emit, in sorted order.
Vocabulary standard_vocabulary();

struct Word2VecConfig {
    int dim = 128;
    int window = 2;
    int negatives = 5;
    int epochs = 5;
    double lr = 0.025;
    std::uint64_t seed = 1;
};

// Skip-gram with negative sampling. Returns the input-vector table
// [vocab_size x dim]. Throws ConfigError when the corpus has fewer than two
// distinct tokens.
ad::Tensor train_word2vec(const std::vector<std::vector<int>>& corpus, int vocab_size, const Word2VecConfig& config);

double cosine(const ad::Tensor& table, int a, int b);

// Embedding lookup followed by a single left-to-right LSTM; the final hidden
// state is the command embedding.
class CommandEncoder {
public:
    CommandEncoder() = default;
    CommandEncoder(ad::ParamStore& store, const std::string& prefix, int vocab_size, int word_dim, int hidden,
                   std::mt19937_64& rng);

    // One row per sequence. Sequences of different lengths are padded and the
    // state of finished rows is carried through unchanged.
    ad::Var operator()(ad::ParamStore& store, ad::Graph& g, std::span<const std::vector<int>> sequences) const;

    void load_word_table(ad::ParamStore& store, const ad::Tensor& table) const;
    void freeze_words(ad::ParamStore& store, bool frozen) const;
    int hidden() const { return lstm_.hidden(); }
    int word_dim() const { return embed_.dim(); }
    int vocab_size() const { return vocab_size_; }

private:
    ad::Embedding embed_;
    ad::LstmCell lstm_;
    int vocab_size_ = 0;
};

}  // namespace groundrl::lang
